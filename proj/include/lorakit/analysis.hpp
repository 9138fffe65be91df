#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorakit/checkpoint.hpp"
#include "lorakit/matrix.hpp"

namespace lorakit {

/// The four subspace-overlap ratios between a base weight matrix W and an
/// update ΔW, all in [0, 1]:
///   m1 = ‖WᵀΔW‖_F / (‖W‖_F·‖ΔW‖_F)   column-space cosine analogue
///   m2 = ‖U_tU_tᵀΔW‖_F / ‖ΔW‖_F      projection onto W's top-t left vectors
///   m3 = ‖W·ΔWᵀ‖_F / (‖W‖_F·‖ΔW‖_F)  row-space cosine analogue
///   m4 = ‖V_tV_tᵀΔWᵀ‖_F / ‖ΔW‖_F     projection onto W's top-t right vectors
struct AlignmentMetrics {
    double m1 = 0.0;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
};

AlignmentMetrics alignment_metrics(const Matrix& base, const Matrix& delta,
                                   std::size_t top_t = 16);

struct LayerReport {
    std::string path;
    int layer_index = -1;           // first all-digit path segment, -1 if none
    std::string module_type;        // penultimate path segment or "other"
    std::size_t d = 0;
    std::size_t k = 0;
    std::optional<double> stable_rank;        // absent for a zero update
    std::optional<AlignmentMetrics> metrics;  // absent for a zero update
    double base_fro_norm = 0.0;
    double delta_fro_norm = 0.0;
};

/// Stable rank + alignment metrics of one layer's update. A zero update
/// yields a report with absent metric fields rather than an error; top_t is
/// clamped to min(d,k) with a note pushed to `warnings` when given.
LayerReport analyze_layer(const std::string& path, const Matrix& base,
                          const DeltaSource& delta, std::size_t top_t = 16,
                          std::vector<std::string>* warnings = nullptr);

struct ModuleAggregate {
    std::optional<AlignmentMetrics> mean_metrics;
    std::optional<double> mean_stable_rank;
    std::size_t layer_count = 0;        // all layers of this module type
    std::size_t layers_with_update = 0; // layers contributing to the means
};

struct AggregateReport {
    std::map<std::string, ModuleAggregate> by_module;
};

AggregateReport aggregate_reports(const std::vector<LayerReport>& reports);

/// CSV with columns path, layer_index, module_type, d, k, stable_rank,
/// m1..m4, base_fro_norm, delta_fro_norm. Rows sorted by path; numbers at
/// 9 significant digits; absent metrics are empty cells.
std::string emit_layers_csv(std::vector<LayerReport> reports);

/// JSON document {"layers": [...], "aggregates": {...}, "config": {"top_t": n}}
/// with sorted keys and 9-significant-digit numbers; absent metrics are null.
std::string emit_report_json(std::vector<LayerReport> reports, const AggregateReport& aggregates,
                             std::size_t top_t);

/// Penultimate dot-separated segment when it is a known projection/MLP
/// module name, else "other".
std::string parse_module_type(const std::string& path);

/// First all-digit dot-separated segment, or -1.
int parse_layer_index(const std::string& path);

}  // namespace lorakit
