#include "lorakit/merge.hpp"

#include <cstdio>

#include "lorakit/errors.hpp"

namespace lorakit {

const char* merge_mode_name(MergeMode m) {
    switch (m) {
        case MergeMode::vanilla: return "vanilla";
        case MergeMode::ortho_col: return "ortho_col";
        case MergeMode::ortho_both: return "ortho_both";
    }
    return "vanilla";
}

std::optional<MergeMode> parse_merge_mode(const std::string& name) {
    if (name == "vanilla") return MergeMode::vanilla;
    if (name == "ortho_col") return MergeMode::ortho_col;
    if (name == "ortho_both") return MergeMode::ortho_both;
    return std::nullopt;
}

const TruncatedSVD& BaseSvdCache::get(const std::string& path, const Matrix& base,
                                      std::size_t k) {
    const auto key = std::make_pair(path, k);
    {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    TruncatedSVD svd = truncated_svd(base, k);
    std::lock_guard lock(mutex_);
    return entries_.emplace(key, std::move(svd)).first->second;
}

namespace {

void check_merge_shapes(const Matrix& base, const Matrix& dw, const std::string& target) {
    if (!same_shape(base, dw)) {
        throw ShapeError("merge: update for '" + target + "' is " + std::to_string(dw.rows()) +
                         "x" + std::to_string(dw.cols()) + " but the base tensor is " +
                         std::to_string(base.rows()) + "x" + std::to_string(base.cols()));
    }
}

std::size_t clamp_rank(const Matrix& base, std::size_t k, bool* clamped) {
    const std::size_t min_dim = std::min(base.rows(), base.cols());
    if (k > min_dim) {
        if (clamped) *clamped = true;
        return min_dim;
    }
    return k;
}

}  // namespace

Matrix merge_vanilla(const Matrix& base, const DeltaSource& delta) {
    const Matrix dw = materialize_delta(delta);
    check_merge_shapes(base, dw, delta.target);
    return base + dw;
}

Matrix ortho_merge_col(const Matrix& base, const DeltaSource& delta, std::size_t k,
                       bool* clamped) {
    if (k == 0) return merge_vanilla(base, delta);
    const Matrix dw = materialize_delta(delta);
    check_merge_shapes(base, dw, delta.target);
    const std::size_t k_eff = clamp_rank(base, k, clamped);
    const TruncatedSVD svd = truncated_svd(base, k_eff);
    return base + project_col_complement(dw, svd.u);
}

Matrix ortho_merge_both(const Matrix& base, const DeltaSource& delta, std::size_t k,
                        double lambda, bool* clamped) {
    if (lambda <= 0.0) {
        throw InvalidInput("ortho_merge_both: lambda must be positive");
    }
    if (k == 0) return merge_vanilla(base, delta);
    const Matrix dw = materialize_delta(delta);
    check_merge_shapes(base, dw, delta.target);
    const std::size_t k_eff = clamp_rank(base, k, clamped);
    const TruncatedSVD svd = truncated_svd(base, k_eff);
    Matrix projected = project_row_complement(project_col_complement(dw, svd.u), svd.v);
    projected *= lambda;
    return base + projected;
}

namespace {

Matrix merge_one(const Matrix& base, const DeltaSource& delta, const MergeConfig& cfg,
                 const std::string& path, BaseSvdCache* cache, bool* clamped) {
    if (cfg.mode == MergeMode::vanilla || cfg.k == 0) {
        return merge_vanilla(base, delta);
    }

    const Matrix dw = materialize_delta(delta);
    check_merge_shapes(base, dw, path);
    const std::size_t k_eff = clamp_rank(base, cfg.k, clamped);

    // Within a run the base SVDs are reused across layers and λ values.
    const TruncatedSVD* svd = nullptr;
    TruncatedSVD local;
    if (cache) {
        svd = &cache->get(path, base, k_eff);
    } else {
        local = truncated_svd(base, k_eff);
        svd = &local;
    }

    if (cfg.mode == MergeMode::ortho_col) {
        return base + project_col_complement(dw, svd->u);
    }
    Matrix projected = project_row_complement(project_col_complement(dw, svd->u), svd->v);
    projected *= cfg.lambda;
    return base + projected;
}

}  // namespace

MergeResult merge_checkpoint(const NamedTensorMap& base,
                             const std::map<std::string, DeltaSource>& deltas,
                             const MergeConfig& cfg, BaseSvdCache* cache) {
    if (cfg.mode == MergeMode::ortho_both && cfg.lambda <= 0.0) {
        throw InvalidInput("merge_checkpoint: lambda must be positive");
    }

    MergeResult result;
    result.manifest.mode = cfg.mode;
    result.manifest.k = cfg.k;
    result.manifest.lambda = cfg.lambda;

    for (const auto& [path, delta] : deltas) {
        if (!base.contains(path)) {
            throw InvalidInput("merge_checkpoint: update targets missing tensor '" + path +
                               "'");
        }
        const TensorEntry& entry = base.at(path);
        if (entry.vector_shaped) {
            throw ShapeError("merge_checkpoint: cannot merge into 1-D tensor '" + path + "'");
        }
        bool clamped = false;
        Matrix merged = merge_one(entry.values, delta, cfg, path, cache, &clamped);
        if (clamped) result.manifest.clamped_layers.push_back(path);
        result.merged.insert(path, std::move(merged));
        result.manifest.layers_merged.push_back(path);
    }

    for (const auto& [path, entry] : base) {
        if (deltas.contains(path)) continue;
        if (cfg.passthrough_missing) {
            result.merged.insert(path, entry.values, entry.vector_shaped);
        } else {
            result.manifest.layers_skipped.push_back(path);
        }
    }
    result.merged.metadata() = base.metadata();
    return result;
}

std::string MergeManifest::to_json() const {
    auto string_list = [](const std::vector<std::string>& items) {
        std::string out = "[";
        for (std::size_t i = 0; i < items.size(); ++i) {
            out += '"' + items[i] + '"';
            if (i + 1 < items.size()) out += ", ";
        }
        return out + "]";
    };
    char lambda_buf[32];
    std::snprintf(lambda_buf, sizeof(lambda_buf), "%.9g", lambda);

    std::string out = "{\n";
    out += "  \"mode\": \"" + std::string(merge_mode_name(mode)) + "\",\n";
    out += "  \"k\": " + std::to_string(k) + ",\n";
    out += "  \"lambda\": " + std::string(lambda_buf) + ",\n";
    out += "  \"layers_merged\": " + string_list(layers_merged) + ",\n";
    out += "  \"layers_skipped\": " + string_list(layers_skipped) + ",\n";
    out += "  \"clamped_layers\": " + string_list(clamped_layers) + "\n";
    out += "}\n";
    return out;
}

}  // namespace lorakit
