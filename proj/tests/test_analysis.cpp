#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lorakit/analysis.hpp"
#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"
#include "oracles.hpp"

using namespace lorakit;

namespace {

// Direct dense evaluation of the four ratios from a Jacobi-oracle SVD,
// materializing the projectors.
AlignmentMetrics dense_metrics(const Matrix& base, const Matrix& delta, std::size_t t) {
    const double nb = frobenius_norm(base);
    const double nd = frobenius_norm(delta);
    const auto svd = oracles::svd_via_gram(base);
    const Matrix pu = oracles::dense_projector(oracles::head_columns(svd.u, t));
    const Matrix pv = oracles::dense_projector(oracles::head_columns(svd.v, t));

    AlignmentMetrics m;
    m.m1 = frobenius_norm(matmul(transpose(base), delta)) / (nb * nd);
    m.m2 = frobenius_norm(matmul(pu, delta)) / nd;
    m.m3 = frobenius_norm(matmul(base, transpose(delta))) / (nb * nd);
    m.m4 = frobenius_norm(matmul(pv, transpose(delta))) / nd;
    return m;
}

}  // namespace

TEST_CASE("identity base gives m1 = 1/sqrt(n)") {
    const Matrix base = Matrix::identity(4);
    const Matrix delta = oracles::random_matrix(4, 4, 1);
    const auto m = alignment_metrics(base, delta, 4);
    CHECK(m.m1 == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("column-orthogonal vectors give zero m1") {
    const Matrix base{{1}, {0}};
    const Matrix delta{{0}, {1}};
    const auto m = alignment_metrics(base, delta, 1);
    CHECK(m.m1 <= 1e-12);
    // Column vectors always share their one-dimensional row space.
    CHECK(m.m3 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("disjoint supports give zero overlap in both spaces") {
    const Matrix base{{1, 0}, {0, 0}};
    const Matrix delta{{0, 0}, {0, 1}};
    const auto m = alignment_metrics(base, delta, 1);
    CHECK(m.m1 <= 1e-12);
    CHECK(m.m3 <= 1e-12);
}

TEST_CASE("update inside the top subspace gives m2 = 1") {
    const Matrix base = oracles::random_matrix(12, 10, 5);
    const auto svd = truncated_svd(base, 4);
    const Matrix c = oracles::random_matrix(4, 10, 6);
    const Matrix delta = matmul(svd.u, c);  // columns in span(U4)
    const auto m = alignment_metrics(base, delta, 4);
    CHECK(m.m2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("metrics match the dense-formula oracle") {
    const Matrix base = oracles::random_matrix(24, 20, 7);
    const Matrix delta = oracles::random_matrix(24, 20, 8);
    const auto fast = alignment_metrics(base, delta, 4);
    const auto dense = dense_metrics(base, delta, 4);
    CHECK(std::abs(fast.m1 - dense.m1) <= 1e-9);
    CHECK(std::abs(fast.m2 - dense.m2) <= 1e-9);
    CHECK(std::abs(fast.m3 - dense.m3) <= 1e-9);
    CHECK(std::abs(fast.m4 - dense.m4) <= 1e-9);
}

TEST_CASE("metrics are scale invariant and bounded") {
    const Matrix base = oracles::random_matrix(10, 8, 9);
    const Matrix delta = oracles::random_matrix(10, 8, 10);
    const auto m = alignment_metrics(base, delta, 5);
    for (double c : {-2.0, 0.5, 1e4}) {
        const auto scaled = alignment_metrics(base, c * delta, 5);
        CHECK(std::abs(scaled.m1 - m.m1) <= 1e-10);
        CHECK(std::abs(scaled.m2 - m.m2) <= 1e-10);
        CHECK(std::abs(scaled.m3 - m.m3) <= 1e-10);
        CHECK(std::abs(scaled.m4 - m.m4) <= 1e-10);
    }
    for (double v : {m.m1, m.m2, m.m3, m.m4}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-9);
    }
}

TEST_CASE("m2 is monotone in top_t and m3/m4 are transpose duals of m1/m2") {
    const Matrix base = oracles::random_matrix(14, 11, 11);
    const Matrix delta = oracles::random_matrix(14, 11, 12);
    double prev = 0.0;
    for (std::size_t t = 1; t <= 11; ++t) {
        const auto m = alignment_metrics(base, delta, t);
        CHECK(m.m2 >= prev - 1e-10);
        prev = m.m2;
    }
    const auto m = alignment_metrics(base, delta, 6);
    const auto dual = alignment_metrics(transpose(base), transpose(delta), 6);
    CHECK(std::abs(m.m3 - dual.m1) <= 1e-12);
    CHECK(std::abs(m.m4 - dual.m2) <= 1e-12);
}

TEST_CASE("degenerate inputs are rejected") {
    const Matrix base = oracles::random_matrix(4, 4, 13);
    CHECK_THROWS_AS(alignment_metrics(base, Matrix(4, 4), 2), InvalidInput);
    CHECK_THROWS_AS(alignment_metrics(Matrix(4, 4), base, 2), InvalidInput);
    CHECK_THROWS_AS(alignment_metrics(base, base, 5), InvalidInput);
    CHECK_THROWS_AS(alignment_metrics(base, oracles::random_matrix(4, 3, 14), 2),
                    ShapeError);
}

TEST_CASE("analyze_layer flags zero updates instead of erroring") {
    const Matrix base = oracles::random_matrix(6, 5, 15);
    const auto report =
        analyze_layer("model.layers.3.mlp.down_proj.weight", base,
                      DeltaSource::dense("w", Matrix(6, 5)), 16);
    CHECK(report.module_type == "down_proj");
    CHECK(report.layer_index == 3);
    CHECK(!report.stable_rank.has_value());
    CHECK(!report.metrics.has_value());
    CHECK(report.delta_fro_norm == 0.0);
}

TEST_CASE("analyze_layer reports rank-1 adapters and clamps top_t") {
    const Matrix base = oracles::random_matrix(8, 6, 16);
    AdapterPair pair;
    pair.target = "w";
    pair.b = oracles::random_matrix(8, 1, 17);
    pair.a = oracles::random_matrix(1, 6, 18);
    pair.rank = 1;
    pair.alpha = 16.0;

    std::vector<std::string> warnings;
    const auto report = analyze_layer("enc.q_proj.weight", base,
                                      DeltaSource::low_rank(pair), 16, &warnings);
    REQUIRE(report.stable_rank.has_value());
    CHECK(*report.stable_rank == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(report.module_type == "q_proj");
    REQUIRE(warnings.size() == 1);  // top_t 16 > min(8,6)
}

TEST_CASE("analyze_layer analytic stable rank") {
    // Update with singular values (10, 1): stable rank 101/100.
    Matrix delta(5, 4);
    delta(0, 0) = 10.0;
    delta(1, 1) = 1.0;
    const Matrix base = oracles::random_matrix(5, 4, 19);
    const auto report = analyze_layer("w", base, DeltaSource::dense("w", delta), 4);
    REQUIRE(report.stable_rank.has_value());
    CHECK(*report.stable_rank == doctest::Approx(1.01).epsilon(1e-9));
    CHECK(report.module_type == "other");
    CHECK(report.layer_index == -1);
}

TEST_CASE("aggregate_reports averages per module type") {
    auto mk = [](const char* path, const char* type, double m1, double sr) {
        LayerReport r;
        r.path = path;
        r.module_type = type;
        r.stable_rank = sr;
        r.metrics = AlignmentMetrics{m1, 0.5, 0.5, 0.5};
        return r;
    };
    std::vector<LayerReport> reports = {
        mk("l0.down_proj.weight", "down_proj", 0.2, 2.0),
        mk("l1.down_proj.weight", "down_proj", 0.4, 4.0),
        mk("l0.q_proj.weight", "q_proj", 0.9, 1.0),
    };
    const auto agg = aggregate_reports(reports);
    REQUIRE(agg.by_module.size() == 2);
    CHECK(agg.by_module.at("down_proj").mean_metrics->m1 ==
          doctest::Approx(0.3).epsilon(1e-12));
    CHECK(*agg.by_module.at("down_proj").mean_stable_rank ==
          doctest::Approx(3.0).epsilon(1e-12));
    CHECK(agg.by_module.at("down_proj").layer_count == 2);
    CHECK(agg.by_module.at("q_proj").mean_metrics->m1 ==
          doctest::Approx(0.9).epsilon(1e-12));

    CHECK_THROWS_AS(aggregate_reports({}), InvalidInput);
}

TEST_CASE("aggregate means match a hand-computed six-report fixture") {
    std::vector<LayerReport> reports;
    const char* types[6] = {"q_proj", "q_proj", "q_proj", "down_proj", "down_proj", "other"};
    const double m1[6] = {0.1, 0.2, 0.6, 0.3, 0.5, 0.25};
    const double sr[6] = {1.0, 2.0, 3.0, 8.0, 2.0, 5.0};
    for (int i = 0; i < 6; ++i) {
        LayerReport r;
        r.path = "t" + std::to_string(i);
        r.module_type = types[i];
        r.stable_rank = sr[i];
        r.metrics = AlignmentMetrics{m1[i], 0.0, 0.0, 0.0};
        reports.push_back(r);
    }
    const auto agg = aggregate_reports(reports);
    CHECK(agg.by_module.at("q_proj").mean_metrics->m1 ==
          doctest::Approx((0.1 + 0.2 + 0.6) / 3.0).epsilon(1e-12));
    CHECK(*agg.by_module.at("q_proj").mean_stable_rank ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(agg.by_module.at("down_proj").mean_metrics->m1 ==
          doctest::Approx(0.4).epsilon(1e-12));
    CHECK(agg.by_module.at("other").mean_metrics->m1 ==
          doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("singleton aggregation passes values through") {
    LayerReport r;
    r.path = "w";
    r.module_type = "up_proj";
    r.stable_rank = 7.5;
    r.metrics = AlignmentMetrics{0.11, 0.22, 0.33, 0.44};
    const auto agg = aggregate_reports({r});
    CHECK(*agg.by_module.at("up_proj").mean_stable_rank == 7.5);
    CHECK(agg.by_module.at("up_proj").mean_metrics->m4 == 0.44);
}

TEST_CASE("emission is deterministic and handles empty/absent fields") {
    CHECK(emit_layers_csv({}) ==
          "path,layer_index,module_type,d,k,stable_rank,m1,m2,m3,m4,base_fro_norm,"
          "delta_fro_norm\n");

    LayerReport zero;
    zero.path = "model.layers.0.mlp.up_proj.weight";
    zero.module_type = "up_proj";
    zero.layer_index = 0;
    zero.d = 4;
    zero.k = 3;
    zero.base_fro_norm = 1.25;

    LayerReport live = zero;
    live.path = "model.layers.1.mlp.up_proj.weight";
    live.layer_index = 1;
    live.stable_rank = 2.0;
    live.metrics = AlignmentMetrics{0.1, 0.2, 0.3, 0.4};
    live.delta_fro_norm = 0.5;

    const auto agg = aggregate_reports({zero, live});
    const std::string csv = emit_layers_csv({live, zero});
    const std::string json = emit_report_json({live, zero}, agg, 16);

    // Sorted by path, absent fields empty/null.
    CHECK(csv.find("layers.0") < csv.find("layers.1"));
    CHECK(csv.find(",,,,,") != std::string::npos);
    CHECK(json.find("\"stable_rank\": null") != std::string::npos);

    CHECK(emit_layers_csv({live, zero}) == csv);
    CHECK(emit_report_json({live, zero}, agg, 16) == json);
    // Emission order of the input list must not matter.
    CHECK(emit_layers_csv({zero, live}) == csv);
}

TEST_CASE("module type and layer index parsing") {
    CHECK(parse_module_type("model.layers.12.mlp.down_proj.weight") == "down_proj");
    CHECK(parse_module_type("model.layers.2.self_attn.q_proj.weight") == "q_proj");
    CHECK(parse_module_type("model.layers.2.custom.weight") == "other");
    CHECK(parse_module_type("w") == "other");
    CHECK(parse_layer_index("model.layers.12.mlp.down_proj.weight") == 12);
    CHECK(parse_layer_index("no.digits.here") == -1);
}
