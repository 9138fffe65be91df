#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lorakit/matrix.hpp"

namespace lorakit {

/// On-disk element types of the tensor container.
enum class Precision { fp64, fp32, fp16, bf16 };

const char* precision_name(Precision p);            // "F64", "F32", "F16", "BF16"
std::optional<Precision> parse_precision(const std::string& name);

/// One stored tensor: values as an fp64 matrix, plus whether the tensor was
/// 1-D on disk (biases, norms). 1-D tensors are carried as 1×n matrices and
/// excluded from analysis/merging.
struct TensorEntry {
    Matrix values;
    bool vector_shaped = false;
};

/// Ordered collection of named tensors. Iteration is lexicographic by path,
/// so every downstream traversal is deterministic.
class NamedTensorMap {
public:
    using Storage = std::map<std::string, TensorEntry>;

    void insert(std::string path, Matrix values, bool vector_shaped = false);
    bool contains(const std::string& path) const;
    const TensorEntry& at(const std::string& path) const;
    std::size_t size() const noexcept { return tensors_.size(); }
    bool empty() const noexcept { return tensors_.empty(); }

    Storage::const_iterator begin() const { return tensors_.begin(); }
    Storage::const_iterator end() const { return tensors_.end(); }

    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

private:
    Storage tensors_;
    std::map<std::string, std::string> metadata_;
};

/// Low-rank adapter factors targeting one named weight matrix:
/// ΔW = (α/r)·B·A with B (d × r) and A (r × k).
struct AdapterPair {
    std::string target;
    Matrix b;
    Matrix a;
    std::size_t rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

/// An update for one tensor: either a dense ΔW or an adapter pair.
struct DeltaSource {
    std::string target;
    std::variant<Matrix, AdapterPair> payload;

    static DeltaSource dense(std::string target, Matrix delta);
    static DeltaSource low_rank(AdapterPair pair);

    bool is_dense() const { return std::holds_alternative<Matrix>(payload); }
};

/// ΔW as a dense matrix: the stored matrix itself, or (α/r)·B·A.
Matrix materialize_delta(const DeltaSource& src);

// ---------------------------------------------------------------------------
// Container IO (safetensors layout: u64-LE header length, JSON header with
// per-tensor dtype/shape/offsets, contiguous little-endian payload).
// ---------------------------------------------------------------------------

NamedTensorMap load_tensor_map(const std::filesystem::path& path);

void save_tensor_map(const NamedTensorMap& map, const std::filesystem::path& path,
                     Precision precision = Precision::fp64);

/// Header-only view of a container, for `inspect`.
struct TensorInfo {
    std::string name;
    std::string dtype;
    std::vector<std::size_t> shape;
};
std::vector<TensorInfo> inspect_container(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Adapter loading (PEFT-style naming + JSON sidecar).
// ---------------------------------------------------------------------------

struct AdapterNamingConvention {
    std::string a_suffix = ".lora_A.weight";  // shape (r, k)
    std::string b_suffix = ".lora_B.weight";  // shape (d, r)
};

/// Sidecar schema: {"alpha": number, "r": integer, "target_modules": [string]}.
/// "r" and "target_modules" are optional; when "r" is present it must agree
/// with the factor shapes.
struct AdapterSet {
    std::vector<AdapterPair> pairs;          // sorted by target path
    std::vector<std::string> unpaired;       // tensors matching neither suffix
    std::vector<std::string> target_modules; // echo of the sidecar list
    double alpha = 0.0;
};

/// Loads adapter factors from `container`. `sidecar` defaults to
/// "adapter_config.json" next to the container.
AdapterSet load_adapters(const std::filesystem::path& container,
                         const std::filesystem::path& sidecar = {},
                         const AdapterNamingConvention& convention = {});

// ---------------------------------------------------------------------------
// Checkpoint diffing.
// ---------------------------------------------------------------------------

struct CheckpointDiff {
    std::map<std::string, DeltaSource> deltas;  // dense, one per shared 2-D path
    std::vector<std::string> only_in_base;
    std::vector<std::string> only_in_tuned;
    std::vector<std::string> skipped_vectors;   // shared 1-D tensors, not diffed
};

/// Per-path dense deltas tuned − base over the shared 2-D tensor paths.
CheckpointDiff diff_checkpoints(const NamedTensorMap& base, const NamedTensorMap& tuned);

/// Writes `bytes` to `path` through a sibling temp file and an atomic rename;
/// the temp file is removed on failure.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);

// fp16/bf16 scalar codecs (exposed for tests).
double f16_to_f64(std::uint16_t h);
std::uint16_t f64_to_f16(double x);
double bf16_to_f64(std::uint16_t h);
std::uint16_t f64_to_bf16(double x);

}  // namespace lorakit
