// lorakit — analyze, merge, and score low-rank fine-tuning updates.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "lorakit/analysis.hpp"
#include "lorakit/checkpoint.hpp"
#include "lorakit/errors.hpp"
#include "lorakit/merge.hpp"
#include "lorakit/scoring.hpp"
#include "lorakit/toy.hpp"

namespace fs = std::filesystem;
using namespace lorakit;

namespace {

unsigned default_threads() {
    if (const char* env = std::getenv("LORAKIT_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

bool is_embedding_path(const std::string& path) {
    return path.find("embed_tokens") != std::string::npos ||
           path.find("lm_head") != std::string::npos;
}

// Adapter stems name the module ("...mlp.down_proj"); base tensors usually
// carry a trailing ".weight".
std::string resolve_target(const NamedTensorMap& base, const std::string& stem) {
    if (base.contains(stem)) return stem;
    const std::string with_weight = stem + ".weight";
    if (base.contains(with_weight)) return with_weight;
    throw InvalidInput("adapter targets '" + stem + "' but the base checkpoint has no such "
                       "tensor (tried '" + with_weight + "' too)");
}

std::map<std::string, DeltaSource> deltas_from_adapters(const NamedTensorMap& base,
                                                        const AdapterSet& adapters) {
    std::map<std::string, DeltaSource> deltas;
    for (const AdapterPair& pair : adapters.pairs) {
        const std::string target = resolve_target(base, pair.target);
        DeltaSource src = DeltaSource::low_rank(pair);
        src.target = target;
        deltas.emplace(target, std::move(src));
    }
    return deltas;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string base;
    std::string tuned;
    std::string adapters;
    std::string sidecar;
    std::string out_json;
    std::string out_csv;
    std::size_t top_t = 16;
    bool include_embeddings = false;
    unsigned threads = default_threads();
};

int run_analyze(const AnalyzeArgs& args) {
    const NamedTensorMap base = load_tensor_map(args.base);

    std::map<std::string, DeltaSource> deltas;
    if (!args.tuned.empty()) {
        const NamedTensorMap tuned = load_tensor_map(args.tuned);
        CheckpointDiff diff = diff_checkpoints(base, tuned);
        for (const auto& p : diff.only_in_base)
            std::cerr << "note: '" << p << "' only in base, skipped\n";
        for (const auto& p : diff.only_in_tuned)
            std::cerr << "note: '" << p << "' only in tuned, skipped\n";
        deltas = std::move(diff.deltas);
    } else {
        const AdapterSet adapters =
            load_adapters(args.adapters, args.sidecar.empty() ? fs::path{} : fs::path(args.sidecar));
        for (const auto& name : adapters.unpaired)
            std::cerr << "note: '" << name << "' matches no adapter suffix, skipped\n";
        deltas = deltas_from_adapters(base, adapters);
    }

    if (!args.include_embeddings) {
        for (auto it = deltas.begin(); it != deltas.end();) {
            if (is_embedding_path(it->first)) {
                std::cerr << "note: embedding tensor '" << it->first << "' excluded\n";
                it = deltas.erase(it);
            } else {
                ++it;
            }
        }
    }

    std::vector<std::pair<std::string, const DeltaSource*>> work;
    work.reserve(deltas.size());
    for (const auto& [path, delta] : deltas) work.emplace_back(path, &delta);

    std::vector<LayerReport> reports(work.size());
    std::vector<std::vector<std::string>> warnings(work.size());
    parallel_for(work.size(), args.threads, [&](std::size_t i) {
        const auto& [path, delta] = work[i];
        reports[i] = analyze_layer(path, base.at(path).values, *delta, args.top_t,
                                   &warnings[i]);
    });
    for (const auto& w : warnings)
        for (const auto& msg : w) std::cerr << "warning: " << msg << '\n';

    const AggregateReport aggregates = aggregate_reports(reports);
    const std::string json = emit_report_json(reports, aggregates, args.top_t);
    if (!args.out_json.empty()) atomic_write_file(args.out_json, json);
    if (!args.out_csv.empty()) atomic_write_file(args.out_csv, emit_layers_csv(reports));
    if (args.out_json.empty() && args.out_csv.empty()) std::cout << json;
    return 0;
}

// ---------------------------------------------------------------------------
// merge
// ---------------------------------------------------------------------------

struct MergeArgs {
    std::string base;
    std::string adapters;
    std::string sidecar;
    std::string mode = "vanilla";
    std::size_t k = 64;
    double lambda = 1.0;
    bool lambda_sweep = false;
    std::string precision = "fp64";
    std::string out;
    std::string manifest;
    bool drop_missing = false;
};

fs::path sweep_path(const fs::path& out, double lambda) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_lambda%.2f", lambda);
    fs::path p = out;
    const std::string ext = p.extension().string();
    p.replace_extension();
    p += suffix;
    p += ext;
    return p;
}

int run_merge(const MergeArgs& args) {
    const auto mode = parse_merge_mode(args.mode);
    if (!mode) {
        throw InvalidInput("unknown merge mode '" + args.mode + "'");
    }
    const auto precision = parse_precision(args.precision);
    if (!precision) {
        throw InvalidInput("unknown precision '" + args.precision + "'");
    }
    if (args.lambda_sweep && *mode != MergeMode::ortho_both) {
        throw InvalidInput("--lambda-sweep applies to mode ortho_both only");
    }

    const NamedTensorMap base = load_tensor_map(args.base);
    const AdapterSet adapters =
        load_adapters(args.adapters, args.sidecar.empty() ? fs::path{} : fs::path(args.sidecar));
    const std::map<std::string, DeltaSource> deltas = deltas_from_adapters(base, adapters);

    MergeConfig cfg;
    cfg.mode = *mode;
    cfg.k = args.k;
    cfg.passthrough_missing = !args.drop_missing;

    BaseSvdCache cache;
    auto emit = [&](double lambda, const fs::path& out_path, const fs::path& manifest_path) {
        cfg.lambda = lambda;
        MergeResult result = merge_checkpoint(base, deltas, cfg, &cache);
        for (const auto& layer : result.manifest.clamped_layers)
            std::cerr << "warning: projector rank clamped for '" << layer << "'\n";
        save_tensor_map(result.merged, out_path, *precision);
        atomic_write_file(manifest_path, result.manifest.to_json());
        std::cerr << "wrote " << out_path.string() << '\n';
    };

    if (args.lambda_sweep) {
        for (double lambda : kLambdaSweep) {
            const fs::path out_path = sweep_path(args.out, lambda);
            emit(lambda, out_path, out_path.string() + ".manifest.json");
        }
    } else {
        const fs::path manifest_path =
            args.manifest.empty() ? fs::path(args.out + ".manifest.json")
                                  : fs::path(args.manifest);
        emit(args.lambda, args.out, manifest_path);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// inspect / score / toytrain
// ---------------------------------------------------------------------------

int run_inspect(const std::string& path) {
    for (const TensorInfo& info : inspect_container(path)) {
        std::string shape;
        for (std::size_t i = 0; i < info.shape.size(); ++i) {
            if (i) shape += 'x';
            shape += std::to_string(info.shape[i]);
        }
        std::cout << info.name << '\t' << info.dtype << '\t' << shape << '\n';
    }
    return 0;
}

int run_score(const std::string& log_path, const std::string& metric,
              const std::string& polarity) {
    const EvalLog log = load_eval_log(log_path);
    double value = 0.0;
    if (metric == "pass_at_1") {
        value = pass_at_1(log);
    } else if (metric == "safety") {
        if (polarity != "safe_fraction" && polarity != "harmful_fraction") {
            throw InvalidInput("unknown polarity '" + polarity + "'");
        }
        value = safety_score(log, polarity == "safe_fraction"
                                      ? SafetyPolarity::safe_fraction
                                      : SafetyPolarity::harmful_fraction);
    } else {
        throw InvalidInput("unknown metric '" + metric + "'");
    }
    std::printf("%.6f\n", value);
    return 0;
}

struct ToytrainArgs {
    std::string scenario;
    std::string out;
    std::string mode;
    std::string penalty;
    int epochs = -1;
    long seed = -1;
    long rank = -1;
    double alpha = -1.0;
    double beta = -1.0;
};

int run_toytrain(const ToytrainArgs& args) {
    ToyScenario scenario;
    if (!args.scenario.empty()) {
        scenario = scenario_from_json(read_text_file(args.scenario));
    }
    if (!args.mode.empty()) {
        if (args.mode == "full") {
            scenario.run.mode = TrainMode::full;
        } else if (args.mode == "lora") {
            scenario.run.mode = TrainMode::lora;
        } else {
            throw InvalidInput("unknown mode '" + args.mode + "'");
        }
    }
    if (args.epochs >= 0) scenario.run.epochs = args.epochs;
    if (args.seed >= 0) scenario.run.seed = static_cast<std::uint32_t>(args.seed);
    if (args.rank >= 1) scenario.run.rank = static_cast<std::size_t>(args.rank);
    if (args.alpha > 0.0) scenario.run.alpha = args.alpha;
    if (!args.penalty.empty()) {
        if (args.penalty == "none") {
            scenario.run.penalty.reset();
        } else {
            const auto variant = parse_penalty_variant(args.penalty);
            if (!variant) {
                throw InvalidInput("unknown penalty variant '" + args.penalty + "'");
            }
            PenaltyConfig cfg = scenario.run.penalty.value_or(PenaltyConfig{});
            cfg.variant = *variant;
            scenario.run.penalty = cfg;
        }
    }
    if (args.beta > 0.0) {
        PenaltyConfig cfg = scenario.run.penalty.value_or(PenaltyConfig{});
        cfg.beta = args.beta;
        scenario.run.penalty = cfg;
    }

    const RetentionReport report = run_scenario(scenario);
    atomic_write_file(args.out, report.to_json());
    std::cerr << "wrote " << args.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weight-space analysis and orthogonality-aware merging of low-rank "
                 "fine-tuning updates"};
    app.require_subcommand(1);

    AnalyzeArgs analyze_args;
    CLI::App* analyze = app.add_subcommand(
        "analyze", "Per-layer stable rank and alignment metrics of an update");
    analyze->add_option("--base", analyze_args.base, "Base checkpoint (safetensors)")
        ->required();
    auto* tuned_opt =
        analyze->add_option("--tuned", analyze_args.tuned, "Fine-tuned checkpoint to diff");
    auto* adapters_opt = analyze->add_option("--adapters", analyze_args.adapters,
                                             "Adapter container (safetensors)");
    analyze->add_option("--sidecar", analyze_args.sidecar,
                        "Adapter sidecar JSON (default: adapter_config.json next to the "
                        "container)");
    analyze->add_option("--top-t", analyze_args.top_t,
                        "Singular vectors per side for m2/m4 (default 16)");
    analyze->add_option("--out-json", analyze_args.out_json, "JSON report path");
    analyze->add_option("--out-csv", analyze_args.out_csv, "CSV report path");
    analyze->add_flag("--include-embeddings", analyze_args.include_embeddings,
                      "Also analyze embedding/lm_head tensors");
    analyze->add_option("--threads", analyze_args.threads,
                        "Worker threads (default: cores, or LORAKIT_THREADS)");
    tuned_opt->excludes(adapters_opt);
    adapters_opt->excludes(tuned_opt);

    MergeArgs merge_args;
    CLI::App* merge = app.add_subcommand("merge", "Merge adapters into base weights");
    merge->add_option("--base", merge_args.base, "Base checkpoint (safetensors)")->required();
    merge->add_option("--adapters", merge_args.adapters, "Adapter container (safetensors)")
        ->required();
    merge->add_option("--sidecar", merge_args.sidecar, "Adapter sidecar JSON");
    merge->add_option("--mode", merge_args.mode,
                      "vanilla | ortho_col | ortho_both (default vanilla)");
    merge->add_option("--k", merge_args.k, "Projector rank for ortho modes (default 64)");
    auto* lambda_opt = merge->add_option("--lambda", merge_args.lambda,
                                         "Rescaling for ortho_both (default 1.0)");
    auto* sweep_opt = merge->add_flag("--lambda-sweep", merge_args.lambda_sweep,
                                      "Emit one output per lambda in {1, 1.15, 1.75, 1.2, "
                                      "1.25}");
    merge->add_option("--precision", merge_args.precision,
                      "Output precision: fp64 | fp32 | fp16 | bf16 (default fp64)");
    merge->add_option("--out", merge_args.out, "Merged checkpoint path")->required();
    merge->add_option("--manifest", merge_args.manifest,
                      "Manifest path (default: <out>.manifest.json)");
    merge->add_flag("--drop-missing", merge_args.drop_missing,
                    "Emit only merged layers; list untargeted tensors in the manifest");
    sweep_opt->excludes(lambda_opt);

    std::string inspect_path;
    CLI::App* inspect =
        app.add_subcommand("inspect", "List tensor names, dtypes, and shapes");
    inspect->add_option("container", inspect_path, "Tensor container (safetensors)")
        ->required();

    std::string score_log, score_metric = "pass_at_1", score_polarity = "safe_fraction";
    CLI::App* score = app.add_subcommand(
        "score", "Pass@1 or safety score from a JSONL results log (n outcomes per question; "
                 "the reference setup uses n=8)");
    score->add_option("--log", score_log, "JSONL log: {\"id\", \"outcomes\": [bool...]}")
        ->required();
    score->add_option("--metric", score_metric, "pass_at_1 | safety (default pass_at_1)");
    score->add_option("--polarity", score_polarity,
                      "safe_fraction | harmful_fraction (default safe_fraction)");

    ToytrainArgs toy_args;
    CLI::App* toytrain = app.add_subcommand(
        "toytrain", "Seeded two-task interference experiment (full vs rank-r fine-tune)");
    toytrain->add_option("--scenario", toy_args.scenario,
                         "Scenario JSON (omit for the default scenario)");
    toytrain->add_option("--out", toy_args.out, "Retention report path")->required();
    toytrain->add_option("--mode", toy_args.mode, "Override: full | lora");
    toytrain->add_option("--epochs", toy_args.epochs, "Override: epoch count");
    toytrain->add_option("--seed", toy_args.seed, "Override: scenario seed");
    toytrain->add_option("--rank", toy_args.rank, "Override: lora rank r (default 4)");
    toytrain->add_option("--alpha", toy_args.alpha, "Override: lora alpha (default 16)");
    toytrain->add_option("--penalty", toy_args.penalty,
                         "Override: col | both | none (default none)");
    toytrain->add_option("--beta", toy_args.beta,
                         "Override: penalty weight beta (default 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (analyze->parsed()) {
            if (analyze_args.tuned.empty() == analyze_args.adapters.empty()) {
                std::cerr << "error: exactly one of --tuned / --adapters is required\n";
                return 2;
            }
            return run_analyze(analyze_args);
        }
        if (merge->parsed()) return run_merge(merge_args);
        if (inspect->parsed()) return run_inspect(inspect_path);
        if (score->parsed()) return run_score(score_log, score_metric, score_polarity);
        if (toytrain->parsed()) return run_toytrain(toy_args);
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const Error& e) {  // IoError, FormatError, InvalidInput
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
