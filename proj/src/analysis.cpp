#include "lorakit/analysis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"

namespace lorakit {

namespace {

const std::array<const char*, 7> kKnownModules = {
    "q_proj", "k_proj", "v_proj", "o_proj", "gate_proj", "up_proj", "down_proj"};

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    return parts;
}

// Fixed 9-significant-digit formatting keeps golden files stable.
std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

void sort_by_path(std::vector<LayerReport>& reports) {
    std::sort(reports.begin(), reports.end(),
              [](const LayerReport& a, const LayerReport& b) { return a.path < b.path; });
}

}  // namespace

std::string parse_module_type(const std::string& path) {
    const auto parts = split_path(path);
    if (parts.size() < 2) return "other";
    const std::string& candidate = parts[parts.size() - 2];
    for (const char* known : kKnownModules) {
        if (candidate == known) return candidate;
    }
    return "other";
}

int parse_layer_index(const std::string& path) {
    for (const auto& part : split_path(path)) {
        if (part.empty()) continue;
        if (std::all_of(part.begin(), part.end(),
                        [](unsigned char c) { return std::isdigit(c); })) {
            return std::stoi(part);
        }
    }
    return -1;
}

AlignmentMetrics alignment_metrics(const Matrix& base, const Matrix& delta, std::size_t top_t) {
    if (!same_shape(base, delta)) {
        throw ShapeError("alignment_metrics: base is " + std::to_string(base.rows()) + "x" +
                         std::to_string(base.cols()) + " but delta is " +
                         std::to_string(delta.rows()) + "x" + std::to_string(delta.cols()));
    }
    const double base_norm = frobenius_norm(base);
    const double delta_norm = frobenius_norm(delta);
    if (base_norm == 0.0 || delta_norm == 0.0) {
        throw InvalidInput("alignment_metrics: undefined for a zero base or zero update");
    }
    const std::size_t min_dim = std::min(base.rows(), base.cols());
    if (top_t < 1 || top_t > min_dim) {
        throw InvalidInput("alignment_metrics: top_t " + std::to_string(top_t) +
                           " out of range [1, " + std::to_string(min_dim) + "]");
    }

    const TruncatedSVD svd = truncated_svd(base, top_t);

    AlignmentMetrics m;
    m.m1 = frobenius_norm(matmul_tn(base, delta)) / (base_norm * delta_norm);
    // ‖U_tU_tᵀΔ‖_F = ‖U_tᵀΔ‖_F for orthonormal U_t.
    m.m2 = frobenius_norm(matmul_tn(svd.u, delta)) / delta_norm;
    m.m3 = frobenius_norm(matmul_nt(base, delta)) / (base_norm * delta_norm);
    // ‖V_tV_tᵀΔᵀ‖_F = ‖ΔV_t‖_F likewise.
    m.m4 = frobenius_norm(matmul(delta, svd.v)) / delta_norm;
    return m;
}

LayerReport analyze_layer(const std::string& path, const Matrix& base, const DeltaSource& delta,
                          std::size_t top_t, std::vector<std::string>* warnings) {
    const Matrix dw = materialize_delta(delta);
    if (!same_shape(base, dw)) {
        throw ShapeError("analyze_layer: update for '" + path + "' is " +
                         std::to_string(dw.rows()) + "x" + std::to_string(dw.cols()) +
                         " but the base tensor is " + std::to_string(base.rows()) + "x" +
                         std::to_string(base.cols()));
    }

    LayerReport report;
    report.path = path;
    report.layer_index = parse_layer_index(path);
    report.module_type = parse_module_type(path);
    report.d = base.rows();
    report.k = base.cols();
    report.base_fro_norm = frobenius_norm(base);
    report.delta_fro_norm = frobenius_norm(dw);

    if (dw.all_zero()) {
        return report;  // metric fields stay absent
    }

    std::size_t effective_t = top_t;
    const std::size_t min_dim = std::min(base.rows(), base.cols());
    if (effective_t > min_dim) {
        effective_t = min_dim;
        if (warnings) {
            warnings->push_back("'" + path + "': top_t clamped to " +
                                std::to_string(min_dim));
        }
    }

    report.stable_rank = stable_rank(dw);
    report.metrics = alignment_metrics(base, dw, effective_t);
    return report;
}

AggregateReport aggregate_reports(const std::vector<LayerReport>& reports) {
    if (reports.empty()) {
        throw InvalidInput("aggregate_reports: empty report list");
    }

    std::vector<LayerReport> sorted = reports;
    sort_by_path(sorted);

    AggregateReport out;
    for (const auto& r : sorted) {
        ModuleAggregate& agg = out.by_module[r.module_type];
        agg.layer_count += 1;
        if (!r.metrics) continue;
        agg.layers_with_update += 1;
        if (!agg.mean_metrics) {
            agg.mean_metrics = AlignmentMetrics{};
            agg.mean_stable_rank = 0.0;
        }
        agg.mean_metrics->m1 += r.metrics->m1;
        agg.mean_metrics->m2 += r.metrics->m2;
        agg.mean_metrics->m3 += r.metrics->m3;
        agg.mean_metrics->m4 += r.metrics->m4;
        *agg.mean_stable_rank += *r.stable_rank;
    }
    for (auto& [type, agg] : out.by_module) {
        if (!agg.mean_metrics) continue;
        const auto n = static_cast<double>(agg.layers_with_update);
        agg.mean_metrics->m1 /= n;
        agg.mean_metrics->m2 /= n;
        agg.mean_metrics->m3 /= n;
        agg.mean_metrics->m4 /= n;
        *agg.mean_stable_rank /= n;
    }
    return out;
}

std::string emit_layers_csv(std::vector<LayerReport> reports) {
    sort_by_path(reports);
    std::string out =
        "path,layer_index,module_type,d,k,stable_rank,m1,m2,m3,m4,base_fro_norm,"
        "delta_fro_norm\n";
    for (const auto& r : reports) {
        out += r.path;
        out += ',' + std::to_string(r.layer_index);
        out += ',' + r.module_type;
        out += ',' + std::to_string(r.d);
        out += ',' + std::to_string(r.k);
        out += ',';
        if (r.stable_rank) out += fmt9(*r.stable_rank);
        for (const double* v : {r.metrics ? &r.metrics->m1 : nullptr,
                                r.metrics ? &r.metrics->m2 : nullptr,
                                r.metrics ? &r.metrics->m3 : nullptr,
                                r.metrics ? &r.metrics->m4 : nullptr}) {
            out += ',';
            if (v) out += fmt9(*v);
        }
        out += ',' + fmt9(r.base_fro_norm);
        out += ',' + fmt9(r.delta_fro_norm);
        out += '\n';
    }
    return out;
}

std::string emit_report_json(std::vector<LayerReport> reports, const AggregateReport& aggregates,
                             std::size_t top_t) {
    sort_by_path(reports);

    std::string out = "{\n  \"config\": {\"top_t\": " + std::to_string(top_t) + "},\n";
    out += "  \"layers\": [\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        out += "    {\"path\": \"" + json_escape(r.path) + "\"";
        out += ", \"layer_index\": " + std::to_string(r.layer_index);
        out += ", \"module_type\": \"" + json_escape(r.module_type) + "\"";
        out += ", \"d\": " + std::to_string(r.d);
        out += ", \"k\": " + std::to_string(r.k);
        out += ", \"stable_rank\": " + (r.stable_rank ? fmt9(*r.stable_rank) : "null");
        if (r.metrics) {
            out += ", \"m1\": " + fmt9(r.metrics->m1);
            out += ", \"m2\": " + fmt9(r.metrics->m2);
            out += ", \"m3\": " + fmt9(r.metrics->m3);
            out += ", \"m4\": " + fmt9(r.metrics->m4);
        } else {
            out += ", \"m1\": null, \"m2\": null, \"m3\": null, \"m4\": null";
        }
        out += ", \"base_fro_norm\": " + fmt9(r.base_fro_norm);
        out += ", \"delta_fro_norm\": " + fmt9(r.delta_fro_norm);
        out += i + 1 < reports.size() ? "},\n" : "}\n";
    }
    out += "  ],\n  \"aggregates\": {\n";
    std::size_t idx = 0;
    for (const auto& [type, agg] : aggregates.by_module) {
        out += "    \"" + json_escape(type) + "\": {";
        out += "\"layer_count\": " + std::to_string(agg.layer_count);
        out += ", \"layers_with_update\": " + std::to_string(agg.layers_with_update);
        out += ", \"stable_rank\": " +
               (agg.mean_stable_rank ? fmt9(*agg.mean_stable_rank) : std::string("null"));
        if (agg.mean_metrics) {
            out += ", \"m1\": " + fmt9(agg.mean_metrics->m1);
            out += ", \"m2\": " + fmt9(agg.mean_metrics->m2);
            out += ", \"m3\": " + fmt9(agg.mean_metrics->m3);
            out += ", \"m4\": " + fmt9(agg.mean_metrics->m4);
        } else {
            out += ", \"m1\": null, \"m2\": null, \"m3\": null, \"m4\": null";
        }
        out += ++idx < aggregates.by_module.size() ? "},\n" : "}\n";
    }
    out += "  }\n}\n";
    return out;
}

}  // namespace lorakit
