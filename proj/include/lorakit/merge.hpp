#pragma once

#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "lorakit/checkpoint.hpp"
#include "lorakit/linalg.hpp"
#include "lorakit/matrix.hpp"

namespace lorakit {

enum class MergeMode { vanilla, ortho_col, ortho_both };

const char* merge_mode_name(MergeMode m);
std::optional<MergeMode> parse_merge_mode(const std::string& name);

struct MergeConfig {
    MergeMode mode = MergeMode::vanilla;
    std::size_t k = 64;       // projector rank for the ortho modes; 0 degenerates to vanilla
    double lambda = 1.0;      // rescaling for ortho_both
    bool passthrough_missing = true;
};

/// The λ sweep exposed by the CLI, reproduced verbatim including its odd
/// ordering.
inline constexpr double kLambdaSweep[] = {1.0, 1.15, 1.75, 1.2, 1.25};

/// Thread-safe cache of per-layer truncated SVDs of base weights, shared
/// across the merges of one run (e.g. a λ sweep).
class BaseSvdCache {
public:
    const TruncatedSVD& get(const std::string& path, const Matrix& base, std::size_t k);

private:
    std::map<std::pair<std::string, std::size_t>, TruncatedSVD> entries_;
    std::mutex mutex_;
};

/// W + ΔW.
Matrix merge_vanilla(const Matrix& base, const DeltaSource& delta);

/// W + (I − U_kU_kᵀ)ΔW with U_k from the base's truncated SVD. k larger than
/// min(d,k_cols) is clamped; `clamped` reports that when given. k = 0 is the
/// vanilla merge.
Matrix ortho_merge_col(const Matrix& base, const DeltaSource& delta, std::size_t k,
                       bool* clamped = nullptr);

/// W + λ·(I − U_kU_kᵀ)ΔW(I − V_kV_kᵀ).
Matrix ortho_merge_both(const Matrix& base, const DeltaSource& delta, std::size_t k,
                        double lambda, bool* clamped = nullptr);

struct MergeManifest {
    MergeMode mode = MergeMode::vanilla;
    std::size_t k = 0;
    double lambda = 1.0;
    std::vector<std::string> layers_merged;
    std::vector<std::string> layers_skipped;
    std::vector<std::string> clamped_layers;

    std::string to_json() const;
};

struct MergeResult {
    NamedTensorMap merged;
    MergeManifest manifest;
};

/// Applies cfg.mode to every delta'd layer of `base`. With
/// cfg.passthrough_missing, untargeted tensors are copied through unchanged;
/// otherwise they are dropped and listed in the manifest's skip report.
MergeResult merge_checkpoint(const NamedTensorMap& base,
                             const std::map<std::string, DeltaSource>& deltas,
                             const MergeConfig& cfg, BaseSvdCache* cache = nullptr);

}  // namespace lorakit
