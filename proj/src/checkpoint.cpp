#include "lorakit/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

namespace lorakit {

using nlohmann::json;
namespace fs = std::filesystem;

const char* precision_name(Precision p) {
    switch (p) {
        case Precision::fp64: return "F64";
        case Precision::fp32: return "F32";
        case Precision::fp16: return "F16";
        case Precision::bf16: return "BF16";
    }
    return "F64";
}

std::optional<Precision> parse_precision(const std::string& name) {
    if (name == "F64" || name == "fp64") return Precision::fp64;
    if (name == "F32" || name == "fp32") return Precision::fp32;
    if (name == "F16" || name == "fp16") return Precision::fp16;
    if (name == "BF16" || name == "bf16") return Precision::bf16;
    return std::nullopt;
}

namespace {

std::size_t element_size(Precision p) {
    switch (p) {
        case Precision::fp64: return 8;
        case Precision::fp32: return 4;
        case Precision::fp16: return 2;
        case Precision::bf16: return 2;
    }
    return 8;
}

}  // namespace

// ---------------------------------------------------------------------------
// Half-precision codecs.
// ---------------------------------------------------------------------------

double f16_to_f64(std::uint16_t h) {
    const std::uint32_t sign = (h >> 15) & 0x1;
    const std::uint32_t exp = (h >> 10) & 0x1f;
    const std::uint32_t man = h & 0x3ff;
    double v;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(man), -24);
    } else if (exp == 31) {
        v = man ? std::numeric_limits<double>::quiet_NaN()
                : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(man | 0x400), static_cast<int>(exp) - 25);
    }
    return sign ? -v : v;
}

std::uint16_t f64_to_f16(double x) {
    if (std::isnan(x)) return 0x7e00;
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    double a = std::abs(x);
    if (std::isinf(a)) return sign | 0x7c00;
    if (a == 0.0) return sign;
    if (a >= 65520.0) return sign | 0x7c00;  // rounds past the largest finite half

    int e;
    const double f = std::frexp(a, &e);  // a = f·2^e, f in [0.5, 1)
    if (e >= -13) {                      // normal range
        const double scaled = std::ldexp(f, 11);  // in [1024, 2048)
        auto man = static_cast<std::uint32_t>(std::nearbyint(scaled));
        std::uint32_t biased = static_cast<std::uint32_t>(e) + 14;
        if (man == 2048) {  // mantissa rounded up into the next binade
            man = 1024;
            ++biased;
            if (biased > 30) return sign | 0x7c00;
        }
        return static_cast<std::uint16_t>(sign | (biased << 10) | (man - 1024));
    }
    // subnormal
    const auto man = static_cast<std::uint32_t>(std::nearbyint(std::ldexp(a, 24)));
    if (man >= 1024) return sign | (1u << 10);  // rounded up to the smallest normal
    return static_cast<std::uint16_t>(sign | man);
}

double bf16_to_f64(std::uint16_t h) {
    const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return static_cast<double>(f);
}

std::uint16_t f64_to_bf16(double x) {
    if (std::isnan(x)) return 0x7fc0;
    const auto f = static_cast<float>(x);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    const std::uint32_t lsb = (bits >> 16) & 1;
    bits += 0x7fffu + lsb;  // round to nearest even on bit 16
    return static_cast<std::uint16_t>(bits >> 16);
}

// ---------------------------------------------------------------------------
// NamedTensorMap.
// ---------------------------------------------------------------------------

void NamedTensorMap::insert(std::string path, Matrix values, bool vector_shaped) {
    if (tensors_.contains(path)) {
        throw FormatError("duplicate tensor name '" + path + "'");
    }
    if (vector_shaped && values.rows() != 1) {
        throw ShapeError("vector-shaped tensor '" + path + "' must be stored as 1×n");
    }
    tensors_.emplace(std::move(path), TensorEntry{std::move(values), vector_shaped});
}

bool NamedTensorMap::contains(const std::string& path) const {
    return tensors_.contains(path);
}

const TensorEntry& NamedTensorMap::at(const std::string& path) const {
    auto it = tensors_.find(path);
    if (it == tensors_.end()) {
        throw InvalidInput("no tensor named '" + path + "'");
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// DeltaSource.
// ---------------------------------------------------------------------------

DeltaSource DeltaSource::dense(std::string target, Matrix delta) {
    return DeltaSource{std::move(target), std::move(delta)};
}

DeltaSource DeltaSource::low_rank(AdapterPair pair) {
    std::string target = pair.target;
    return DeltaSource{std::move(target), std::move(pair)};
}

Matrix materialize_delta(const DeltaSource& src) {
    if (src.is_dense()) {
        return std::get<Matrix>(src.payload);
    }
    const auto& pair = std::get<AdapterPair>(src.payload);
    if (pair.b.cols() != pair.a.rows()) {
        throw ShapeError("adapter '" + pair.target + "': B is " +
                         std::to_string(pair.b.rows()) + "x" + std::to_string(pair.b.cols()) +
                         " but A is " + std::to_string(pair.a.rows()) + "x" +
                         std::to_string(pair.a.cols()));
    }
    Matrix delta = matmul(pair.b, pair.a);
    delta *= pair.scaling();
    return delta;
}

// ---------------------------------------------------------------------------
// Container reading.
// ---------------------------------------------------------------------------

namespace {

struct RawContainer {
    json header;
    std::string payload;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) {
        throw IoError("read failure on '" + path.string() + "'");
    }
    return bytes;
}

// Parses the container and validates the frame: header length, JSON
// well-formedness (duplicate keys rejected), payload bounds.
RawContainer read_container(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8) {
        throw FormatError("'" + path.string() + "': file too short for a header");
    }
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) {
        throw FormatError("'" + path.string() + "': header length " +
                          std::to_string(header_len) + " exceeds file size");
    }

    std::vector<std::set<std::string>> key_stack;
    bool duplicate = false;
    std::string duplicate_key;
    auto cb = [&](int, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::object_start) {
            key_stack.emplace_back();
        } else if (event == json::parse_event_t::object_end) {
            key_stack.pop_back();
        } else if (event == json::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (!key_stack.back().insert(key).second) {
                duplicate = true;
                duplicate_key = key;
            }
        }
        return true;
    };

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len, cb);
    } catch (const json::exception& e) {
        throw FormatError("'" + path.string() + "': malformed header JSON: " + e.what());
    }
    if (duplicate) {
        throw FormatError("'" + path.string() + "': duplicate tensor name '" + duplicate_key +
                          "'");
    }
    if (!header.is_object()) {
        throw FormatError("'" + path.string() + "': header is not a JSON object");
    }
    return RawContainer{std::move(header), bytes.substr(8 + header_len)};
}

struct HeaderEntry {
    std::string name;
    Precision precision;
    std::string dtype;
    std::vector<std::size_t> shape;
    std::size_t begin = 0;
    std::size_t end = 0;
};

std::vector<HeaderEntry> parse_header_entries(const json& header, std::size_t payload_size,
                                              const std::string& file) {
    std::vector<HeaderEntry> entries;
    for (const auto& [name, desc] : header.items()) {
        if (name == "__metadata__") continue;
        if (!desc.is_object() || !desc.contains("dtype") || !desc.contains("shape") ||
            !desc.contains("data_offsets")) {
            throw FormatError(file + ": tensor '" + name + "' missing dtype/shape/offsets");
        }
        HeaderEntry e;
        e.name = name;
        e.dtype = desc["dtype"].get<std::string>();
        const auto prec = parse_precision(e.dtype);
        if (!prec) {
            throw FormatError(file + ": tensor '" + name + "' has unsupported element type " +
                              e.dtype);
        }
        e.precision = *prec;

        for (const auto& dim : desc["shape"]) {
            const auto v = dim.get<std::int64_t>();
            if (v <= 0) {
                throw FormatError(file + ": tensor '" + name + "' has non-positive dimension");
            }
            e.shape.push_back(static_cast<std::size_t>(v));
        }
        if (e.shape.empty() || e.shape.size() > 2) {
            throw FormatError(file + ": tensor '" + name + "' has rank " +
                              std::to_string(e.shape.size()) +
                              "; only 1-D and 2-D tensors are supported");
        }

        const auto& off = desc["data_offsets"];
        if (!off.is_array() || off.size() != 2) {
            throw FormatError(file + ": tensor '" + name + "' has malformed data_offsets");
        }
        e.begin = off[0].get<std::uint64_t>();
        e.end = off[1].get<std::uint64_t>();

        std::size_t numel = 1;
        for (std::size_t d : e.shape) numel *= d;
        if (e.begin > e.end || e.end > payload_size ||
            e.end - e.begin != numel * element_size(e.precision)) {
            throw FormatError(file + ": tensor '" + name +
                              "' has offsets inconsistent with its shape (truncated payload?)");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

Matrix decode_tensor(const HeaderEntry& e, const std::string& payload, const std::string& file) {
    const std::size_t rows = e.shape.size() == 1 ? 1 : e.shape[0];
    const std::size_t cols = e.shape.size() == 1 ? e.shape[0] : e.shape[1];
    Matrix m(rows, cols);
    auto out = m.data();
    const char* src = payload.data() + e.begin;
    const std::size_t n = rows * cols;

    switch (e.precision) {
        case Precision::fp64: {
            std::memcpy(out.data(), src, n * 8);
            break;
        }
        case Precision::fp32: {
            for (std::size_t i = 0; i < n; ++i) {
                float f;
                std::memcpy(&f, src + i * 4, 4);
                out[i] = static_cast<double>(f);
            }
            break;
        }
        case Precision::fp16:
        case Precision::bf16: {
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + i * 2, 2);
                out[i] = e.precision == Precision::fp16 ? f16_to_f64(h) : bf16_to_f64(h);
            }
            break;
        }
    }
    if (!m.all_finite()) {
        throw FormatError(file + ": tensor '" + e.name + "' contains non-finite values");
    }
    return m;
}

}  // namespace

NamedTensorMap load_tensor_map(const fs::path& path) {
    RawContainer raw = read_container(path);
    const std::string file = "'" + path.string() + "'";

    NamedTensorMap map;
    if (raw.header.contains("__metadata__")) {
        for (const auto& [k, v] : raw.header["__metadata__"].items()) {
            map.metadata()[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
    }
    for (const auto& e : parse_header_entries(raw.header, raw.payload.size(), file)) {
        map.insert(e.name, decode_tensor(e, raw.payload, file), e.shape.size() == 1);
    }
    return map;
}

std::vector<TensorInfo> inspect_container(const fs::path& path) {
    RawContainer raw = read_container(path);
    std::vector<TensorInfo> out;
    for (const auto& e :
         parse_header_entries(raw.header, raw.payload.size(), "'" + path.string() + "'")) {
        out.push_back(TensorInfo{e.name, e.dtype, e.shape});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Container writing.
// ---------------------------------------------------------------------------

namespace {

void encode_tensor(const Matrix& m, Precision precision, std::string& out) {
    const auto src = m.data();
    switch (precision) {
        case Precision::fp64: {
            const std::size_t at = out.size();
            out.resize(at + src.size() * 8);
            std::memcpy(out.data() + at, src.data(), src.size() * 8);
            break;
        }
        case Precision::fp32: {
            for (double v : src) {
                const auto f = static_cast<float>(v);
                char buf[4];
                std::memcpy(buf, &f, 4);
                out.append(buf, 4);
            }
            break;
        }
        case Precision::fp16:
        case Precision::bf16: {
            for (double v : src) {
                const std::uint16_t h =
                    precision == Precision::fp16 ? f64_to_f16(v) : f64_to_bf16(v);
                char buf[2];
                std::memcpy(buf, &h, 2);
                out.append(buf, 2);
            }
            break;
        }
    }
}

}  // namespace

void atomic_write_file(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out.good()) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("write failure on '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        std::error_code ec2;
        fs::remove(tmp, ec2);
        throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() +
                      "': " + ec.message());
    }
}

void save_tensor_map(const NamedTensorMap& map, const fs::path& path, Precision precision) {
    for (const auto& [name, entry] : map) {
        if (name.find('\0') != std::string::npos) {
            throw FormatError("tensor name contains an illegal NUL byte");
        }
        ensure_finite(entry.values, "save_tensor_map: '" + name + "'");
    }

    json header = json::object();
    std::string payload;
    for (const auto& [name, entry] : map) {
        const std::size_t begin = payload.size();
        encode_tensor(entry.values, precision, payload);
        json desc;
        desc["dtype"] = precision_name(precision);
        if (entry.vector_shaped) {
            desc["shape"] = {entry.values.cols()};
        } else {
            desc["shape"] = {entry.values.rows(), entry.values.cols()};
        }
        desc["data_offsets"] = {begin, payload.size()};
        header[name] = std::move(desc);
    }
    if (!map.metadata().empty()) {
        header["__metadata__"] = map.metadata();
    }

    std::string header_text = header.dump();
    // Pad the header with spaces so the payload starts 8-byte aligned.
    while ((8 + header_text.size()) % 8 != 0) header_text.push_back(' ');

    std::string bytes;
    bytes.reserve(8 + header_text.size() + payload.size());
    const std::uint64_t header_len = header_text.size();
    bytes.resize(8);
    std::memcpy(bytes.data(), &header_len, 8);
    bytes += header_text;
    bytes += payload;

    atomic_write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Adapter loading.
// ---------------------------------------------------------------------------

namespace {

bool strip_suffix(const std::string& name, const std::string& suffix, std::string& stem) {
    if (name.size() <= suffix.size()) return false;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
    stem = name.substr(0, name.size() - suffix.size());
    return true;
}

}  // namespace

AdapterSet load_adapters(const fs::path& container, const fs::path& sidecar,
                         const AdapterNamingConvention& convention) {
    const fs::path sidecar_path =
        sidecar.empty() ? container.parent_path() / "adapter_config.json" : sidecar;
    if (!fs::exists(sidecar_path)) {
        throw IoError("missing adapter sidecar '" + sidecar_path.string() + "'");
    }

    json config;
    try {
        config = json::parse(read_file(sidecar_path));
    } catch (const json::exception& e) {
        throw FormatError("'" + sidecar_path.string() + "': malformed sidecar JSON: " +
                          e.what());
    }
    if (!config.is_object() || !config.contains("alpha") || !config["alpha"].is_number()) {
        throw FormatError("'" + sidecar_path.string() + "': sidecar must carry a numeric "
                          "\"alpha\"");
    }

    AdapterSet set;
    set.alpha = config["alpha"].get<double>();
    if (set.alpha <= 0.0) {
        throw FormatError("'" + sidecar_path.string() + "': alpha must be positive");
    }
    std::optional<std::size_t> sidecar_rank;
    if (config.contains("r")) {
        const auto r = config["r"].get<std::int64_t>();
        if (r < 1) {
            throw FormatError("'" + sidecar_path.string() + "': r must be >= 1");
        }
        sidecar_rank = static_cast<std::size_t>(r);
    }
    if (config.contains("target_modules")) {
        for (const auto& t : config["target_modules"]) {
            set.target_modules.push_back(t.get<std::string>());
        }
    }

    const NamedTensorMap tensors = load_tensor_map(container);
    std::map<std::string, const Matrix*> a_parts;
    std::map<std::string, const Matrix*> b_parts;
    for (const auto& [name, entry] : tensors) {
        std::string stem;
        if (strip_suffix(name, convention.a_suffix, stem)) {
            a_parts[stem] = &entry.values;
        } else if (strip_suffix(name, convention.b_suffix, stem)) {
            b_parts[stem] = &entry.values;
        } else {
            set.unpaired.push_back(name);
        }
    }

    for (const auto& [stem, a] : a_parts) {
        auto bit = b_parts.find(stem);
        if (bit == b_parts.end()) {
            throw FormatError("adapter '" + stem + "' has " + convention.a_suffix +
                              " but no matching " + convention.b_suffix);
        }
        const Matrix& b = *bit->second;
        if (a->rows() != b.cols()) {
            throw FormatError("adapter '" + stem + "': rank mismatch, A is " +
                              std::to_string(a->rows()) + "x" + std::to_string(a->cols()) +
                              " but B is " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
        }
        const std::size_t rank = a->rows();
        if (sidecar_rank && *sidecar_rank != rank) {
            throw FormatError("adapter '" + stem + "': factor rank " + std::to_string(rank) +
                              " does not match sidecar r=" + std::to_string(*sidecar_rank));
        }
        set.pairs.push_back(AdapterPair{stem, b, *a, rank, set.alpha});
    }
    for (const auto& [stem, b] : b_parts) {
        (void)b;
        if (!a_parts.contains(stem)) {
            throw FormatError("adapter '" + stem + "' has " + convention.b_suffix +
                              " but no matching " + convention.a_suffix);
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Checkpoint diffing.
// ---------------------------------------------------------------------------

CheckpointDiff diff_checkpoints(const NamedTensorMap& base, const NamedTensorMap& tuned) {
    CheckpointDiff diff;
    for (const auto& [path, entry] : base) {
        if (!tuned.contains(path)) diff.only_in_base.push_back(path);
    }
    for (const auto& [path, entry] : tuned) {
        if (!base.contains(path)) {
            diff.only_in_tuned.push_back(path);
            continue;
        }
        const TensorEntry& b = base.at(path);
        if (!same_shape(b.values, entry.values) || b.vector_shaped != entry.vector_shaped) {
            throw ShapeError("checkpoint diff: shape mismatch at '" + path + "' (" +
                             std::to_string(b.values.rows()) + "x" +
                             std::to_string(b.values.cols()) + " vs " +
                             std::to_string(entry.values.rows()) + "x" +
                             std::to_string(entry.values.cols()) + ")");
        }
        if (entry.vector_shaped) {
            diff.skipped_vectors.push_back(path);
            continue;
        }
        diff.deltas.emplace(path, DeltaSource::dense(path, entry.values - b.values));
    }
    return diff;
}

}  // namespace lorakit
