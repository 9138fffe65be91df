#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"
#include "lorakit/penalty.hpp"
#include "oracles.hpp"

using namespace lorakit;

namespace {

AdapterPair adapter(std::uint32_t seed, std::size_t d, std::size_t k, std::size_t r,
                    double alpha = 16.0) {
    AdapterPair pair;
    pair.target = "w";
    pair.b = oracles::random_matrix(d, r, seed);
    pair.a = oracles::random_matrix(r, k, seed + 1);
    pair.rank = r;
    pair.alpha = alpha;
    return pair;
}

PenaltyConfig config(PenaltyVariant variant, double beta = 1.0) {
    PenaltyConfig cfg;
    cfg.variant = variant;
    cfg.beta = beta;
    cfg.base_approx_rank = std::nullopt;  // exact base in unit tests
    return cfg;
}

// Direct evaluation of both squared ratios from scratch.
double dense_value(const Matrix& base, const AdapterPair& pair, PenaltyVariant variant,
                   double beta) {
    const Matrix dw = (pair.alpha / static_cast<double>(pair.rank)) * matmul(pair.b, pair.a);
    const double nb = frobenius_norm(base);
    const double nd = frobenius_norm(dw);
    const double col = frobenius_norm(matmul(transpose(base), dw)) / (nb * nd);
    double value = beta * col * col;
    if (variant == PenaltyVariant::both) {
        const double row = frobenius_norm(matmul(base, transpose(dw))) / (nb * nd);
        value += beta * row * row;
    }
    return value;
}

// Central finite differences of the penalty with respect to one factor.
Matrix fd_grad(const Matrix& base, const AdapterPair& pair, const PenaltyConfig& cfg,
               bool wrt_b, double h = 1e-5) {
    Matrix grad(wrt_b ? pair.b.rows() : pair.a.rows(),
                wrt_b ? pair.b.cols() : pair.a.cols());
    for (std::size_t i = 0; i < grad.rows(); ++i) {
        for (std::size_t j = 0; j < grad.cols(); ++j) {
            AdapterPair plus = pair;
            AdapterPair minus = pair;
            Matrix& p = wrt_b ? plus.b : plus.a;
            Matrix& m = wrt_b ? minus.b : minus.a;
            p(i, j) += h;
            m(i, j) -= h;
            grad(i, j) =
                (penalty_value(base, plus, cfg) - penalty_value(base, minus, cfg)) / (2 * h);
        }
    }
    return grad;
}

double rel_err(const Matrix& got, const Matrix& want) {
    return oracles::max_abs_diff(got, want) /
           std::max(1e-300, frobenius_norm(want));
}

}  // namespace

TEST_CASE("exactly orthogonal configurations have zero col penalty") {
    const Matrix base{{1}, {0}};
    AdapterPair pair;
    pair.target = "w";
    pair.b = Matrix{{0}, {1}};
    pair.a = Matrix{{1}};
    pair.rank = 1;
    pair.alpha = 1.0;
    CHECK(penalty_value(base, pair, config(PenaltyVariant::col)) <= 1e-20);
}

TEST_CASE("identity base gives beta/n") {
    const Matrix base = Matrix::identity(6);
    const AdapterPair pair = adapter(1, 6, 6, 2);
    CHECK(penalty_value(base, pair, config(PenaltyVariant::col)) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-10));
    CHECK(penalty_value(base, pair, config(PenaltyVariant::col, 3.0)) ==
          doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("penalty matches the dense-formula oracle") {
    const Matrix base = oracles::random_matrix(10, 8, 2);
    const AdapterPair pair = adapter(3, 10, 8, 2);
    for (PenaltyVariant v : {PenaltyVariant::col, PenaltyVariant::both}) {
        CHECK(std::abs(penalty_value(base, pair, config(v)) -
                       dense_value(base, pair, v, 1.0)) <= 1e-10);
    }
}

TEST_CASE("variant consistency: both = col + independent row term") {
    const Matrix base = oracles::random_matrix(9, 7, 4);
    const AdapterPair pair = adapter(5, 9, 7, 3);
    const double both = penalty_value(base, pair, config(PenaltyVariant::both));
    const double col = penalty_value(base, pair, config(PenaltyVariant::col));
    const Matrix dw = (pair.alpha / 3.0) * matmul(pair.b, pair.a);
    const double row = frobenius_norm(matmul_nt(base, dw)) /
                       (frobenius_norm(base) * frobenius_norm(dw));
    CHECK(std::abs(both - (col + row * row)) <= 1e-12);
}

TEST_CASE("penalty bounds and beta linearity") {
    for (std::uint32_t seed = 10; seed < 20; ++seed) {
        const Matrix base = oracles::random_matrix(8, 6, seed);
        const AdapterPair pair = adapter(seed + 100, 8, 6, 2);
        const double col = penalty_value(base, pair, config(PenaltyVariant::col));
        const double both = penalty_value(base, pair, config(PenaltyVariant::both));
        CHECK(col >= 0.0);
        CHECK(col <= 1.0 + 1e-12);
        CHECK(both >= 0.0);
        CHECK(both <= 2.0 + 1e-12);
        CHECK(penalty_value(base, pair, config(PenaltyVariant::both, 2.0)) ==
              2.0 * both);
    }
}

TEST_CASE("penalty is invariant to rescaling the adapter") {
    const Matrix base = oracles::random_matrix(7, 6, 30);
    AdapterPair pair = adapter(31, 7, 6, 2);
    const double value = penalty_value(base, pair, config(PenaltyVariant::both));
    for (double c : {-4.0, 0.01, 250.0}) {
        AdapterPair scaled = pair;
        scaled.b *= c;
        CHECK(std::abs(penalty_value(base, scaled, config(PenaltyVariant::both)) - value) <=
              1e-10);
    }
}

TEST_CASE("zero adapters and degenerate bases are rejected") {
    const Matrix base = oracles::random_matrix(5, 4, 40);
    AdapterPair zero;
    zero.target = "w";
    zero.b = Matrix(5, 2);
    zero.a = oracles::random_matrix(2, 4, 41);
    zero.rank = 2;
    zero.alpha = 16.0;
    CHECK_THROWS_AS(penalty_value(base, zero, config(PenaltyVariant::col)), InvalidInput);
    CHECK_THROWS_AS(penalty_value(Matrix(5, 4), adapter(42, 5, 4, 2),
                                  config(PenaltyVariant::col)),
                    InvalidInput);
}

TEST_CASE("col-term gradient vanishes at an orthogonal configuration") {
    // base spans e1/e2; adapter update lives in e3/e4: WᵀΔW = 0.
    Matrix base(4, 3);
    base(0, 0) = 1.0;
    base(1, 1) = 2.0;
    AdapterPair pair;
    pair.target = "w";
    pair.b = Matrix(4, 1);
    pair.b(2, 0) = 1.0;
    pair.b(3, 0) = -0.5;
    pair.a = Matrix{{0.3, -1.0, 0.8}};
    pair.rank = 1;
    pair.alpha = 1.0;

    const PenaltyResult r = penalty_grads(base, pair, config(PenaltyVariant::col));
    CHECK(r.value <= 1e-20);
    CHECK(frobenius_norm(r.grad_b) <= 1e-12);
    CHECK(frobenius_norm(r.grad_a) <= 1e-12);
}

TEST_CASE("radial gradient component is zero by scale invariance") {
    const Matrix base = oracles::random_matrix(12, 9, 50);
    const AdapterPair pair = adapter(51, 12, 9, 3);
    for (PenaltyVariant v : {PenaltyVariant::col, PenaltyVariant::both}) {
        const PenaltyResult r = penalty_grads(base, pair, config(v));
        // <G, ΔW> through the factors: <grad_B, B> + <grad_A, A> equals twice
        // the ΔW-radial derivative... both must vanish only along ΔW itself.
        // Check the ΔW-level inner product directly.
        const Matrix dw = (pair.alpha / 3.0) * matmul(pair.b, pair.a);
        // Reconstruct G from grad_B = s·G·Aᵀ is overdetermined; instead verify
        // via the directional derivative: value((1+h)·B) == value(B).
        AdapterPair bumped = pair;
        bumped.b *= 1.0 + 1e-7;
        const double dv = penalty_value(base, bumped, config(v)) -
                          penalty_value(base, pair, config(v));
        CHECK(std::abs(dv) <= 1e-10 * std::max(1.0, r.value));
        (void)dw;
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    for (std::uint32_t seed : {60u, 61u, 62u}) {
        const Matrix base = oracles::random_matrix(12, 9, seed);
        const AdapterPair pair = adapter(seed + 5, 12, 9, 3);
        for (PenaltyVariant v : {PenaltyVariant::col, PenaltyVariant::both}) {
            const PenaltyConfig cfg = config(v);
            const PenaltyResult r = penalty_grads(base, pair, cfg);
            CHECK(rel_err(r.grad_b, fd_grad(base, pair, cfg, true)) <= 1e-5);
            CHECK(rel_err(r.grad_a, fd_grad(base, pair, cfg, false)) <= 1e-5);
        }
    }
}

TEST_CASE("low_rank_base reconstructs exactly at full rank") {
    const Matrix base = oracles::random_matrix(7, 5, 70);
    const Matrix rebuilt = low_rank_base(base, 5);
    CHECK(frobenius_norm(rebuilt - base) <= 1e-8 * frobenius_norm(base));
}

TEST_CASE("low_rank_base is exact for matrices already of that rank") {
    const Matrix lhs = oracles::random_matrix(8, 1, 71);
    const Matrix rhs = oracles::random_matrix(1, 6, 72);
    const Matrix rank1 = matmul(lhs, rhs);
    const Matrix rebuilt = low_rank_base(rank1, 1);
    CHECK(frobenius_norm(rebuilt - rank1) <= 1e-10 * frobenius_norm(rank1));
}

TEST_CASE("low_rank_base residual matches the Eckart-Young tail") {
    const Matrix base = oracles::random_matrix(20, 16, 73);
    const auto oracle = oracles::svd_via_gram(base);
    const Matrix approx = low_rank_base(base, 4);
    double tail = 0.0;
    for (std::size_t i = 4; i < oracle.sigma.size(); ++i)
        tail += oracle.sigma[i] * oracle.sigma[i];
    const double residual = frobenius_norm(base - approx);
    CHECK(std::abs(residual - std::sqrt(tail)) <= 1e-8 * std::sqrt(tail));

    CHECK_THROWS_AS(low_rank_base(base, 0), InvalidInput);
    CHECK_THROWS_AS(low_rank_base(base, 17), InvalidInput);
}
