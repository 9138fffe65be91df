#include "lorakit/penalty.hpp"

#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"

namespace lorakit {

const char* penalty_variant_name(PenaltyVariant v) {
    return v == PenaltyVariant::col ? "col" : "both";
}

std::optional<PenaltyVariant> parse_penalty_variant(const std::string& name) {
    if (name == "col") return PenaltyVariant::col;
    if (name == "both") return PenaltyVariant::both;
    return std::nullopt;
}

namespace {

struct PenaltyTerms {
    Matrix dw;
    double base_norm2 = 0.0;   // ‖W̃‖²
    double delta_norm2 = 0.0;  // ‖ΔW‖²
    double col_num = 0.0;      // ‖W̃ᵀΔW‖²
    double row_num = 0.0;      // ‖W̃ΔWᵀ‖² (both variant only)
};

PenaltyTerms evaluate_terms(const Matrix& base, const AdapterPair& pair,
                            const PenaltyConfig& cfg) {
    if (cfg.beta <= 0.0) {
        throw InvalidInput("penalty: beta must be positive");
    }
    PenaltyTerms t;
    t.dw = materialize_delta(DeltaSource::low_rank(pair));
    if (!same_shape(base, t.dw)) {
        throw ShapeError("penalty: adapter update is " + std::to_string(t.dw.rows()) + "x" +
                         std::to_string(t.dw.cols()) + " but the base is " +
                         std::to_string(base.rows()) + "x" + std::to_string(base.cols()));
    }

    const double base_norm = frobenius_norm(base);
    const double delta_norm = frobenius_norm(t.dw);
    if (delta_norm <= cfg.epsilon) {
        throw InvalidInput("penalty: adapter update norm below epsilon (all-zero adapter?)");
    }
    if (base_norm <= cfg.epsilon) {
        throw InvalidInput("penalty: base norm below epsilon");
    }
    t.base_norm2 = base_norm * base_norm;
    t.delta_norm2 = delta_norm * delta_norm;

    const double col = frobenius_norm(matmul_tn(base, t.dw));
    t.col_num = col * col;
    if (cfg.variant == PenaltyVariant::both) {
        const double row = frobenius_norm(matmul_nt(base, t.dw));
        t.row_num = row * row;
    }
    return t;
}

double value_from_terms(const PenaltyTerms& t, const PenaltyConfig& cfg) {
    const double denom = t.base_norm2 * t.delta_norm2;
    double value = cfg.beta * t.col_num / denom;
    if (cfg.variant == PenaltyVariant::both) {
        value += cfg.beta * t.row_num / denom;
    }
    return value;
}

}  // namespace

double penalty_value(const Matrix& base_approx, const AdapterPair& pair,
                     const PenaltyConfig& cfg) {
    return value_from_terms(evaluate_terms(base_approx, pair, cfg), cfg);
}

PenaltyResult penalty_grads(const Matrix& base_approx, const AdapterPair& pair,
                            const PenaltyConfig& cfg) {
    const PenaltyTerms t = evaluate_terms(base_approx, pair, cfg);
    const double scale = 2.0 * cfg.beta / (t.base_norm2 * t.delta_norm2);

    // d/dΔ of ‖W̃ᵀΔ‖²/‖Δ‖² is (2·W̃W̃ᵀΔ − 2·(‖W̃ᵀΔ‖²/‖Δ‖²)·Δ)/‖Δ‖².
    Matrix g = matmul(base_approx, matmul_tn(base_approx, t.dw));
    g -= (t.col_num / t.delta_norm2) * t.dw;

    if (cfg.variant == PenaltyVariant::both) {
        // Row term: d/dΔ of ‖W̃Δᵀ‖² is 2·Δ·(W̃ᵀW̃).
        Matrix row_g = matmul(t.dw, matmul_tn(base_approx, base_approx));
        row_g -= (t.row_num / t.delta_norm2) * t.dw;
        g += row_g;
    }
    g *= scale;

    PenaltyResult result;
    result.value = value_from_terms(t, cfg);
    result.grad_b = pair.scaling() * matmul_nt(g, pair.a);  // G·Aᵀ
    result.grad_a = pair.scaling() * matmul_tn(pair.b, g);  // Bᵀ·G
    return result;
}

Matrix low_rank_base(const Matrix& base, std::size_t m) {
    const TruncatedSVD svd = truncated_svd(base, m);  // validates the range of m
    Matrix us = svd.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= svd.s[j];
    return matmul_nt(us, svd.v);
}

}  // namespace lorakit
