#include "lorakit/toy.hpp"

#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"

namespace lorakit {

using nlohmann::json;

namespace {

constexpr double kPerturbationScale = 0.25;

// Init gain sized so plain GD at the default toy learning rate reaches the
// tanh approximation floor within the default epoch budget.
constexpr double kInitGain = 3.0;

// Scale of the random A factors at lora init. Chosen so the adapter's
// effective step size on ΔW = (α/r)BA matches full fine-tuning's step size
// on W: the B-factor growth rate carries (α/r)²·‖A‖² ≈ 16·scale²/3.
constexpr double kLoraInitScale = 0.43;

// A finite loss this large is a blown-up run in all but name.
constexpr double kDivergenceLossCap = 1e100;

// The orthogonality penalty engages once ‖ΔW‖ exceeds this fraction of the
// base norm; below that the scale-invariant ratio is ill-conditioned.
constexpr double kPenaltyEngageScale = 1e-3;

Matrix random_uniform(std::mt19937& gen, std::size_t rows, std::size_t cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(gen);
    return m;
}

Matrix tanh_elementwise(const Matrix& z) {
    Matrix h = z;
    for (double& v : h.data()) v = std::tanh(v);
    return h;
}

void validate_dims(const ToyDims& dims) {
    if (dims.d_in == 0 || dims.hidden == 0 || dims.d_out == 0) {
        throw InvalidInput("toy dims must be positive");
    }
}

struct Forward {
    Matrix hidden;     // tanh(X·W1ᵀ), n × h
    Matrix residual;   // Ŷ − Y, n × d_out
    double loss = 0.0; // ‖residual‖² / (2n)
};

Forward forward_pass(const Matrix& w1, const Matrix& w2, const Dataset& data) {
    Forward f;
    f.hidden = tanh_elementwise(matmul_nt(data.inputs, w1));
    f.residual = matmul_nt(f.hidden, w2) - data.targets;
    const double r = frobenius_norm(f.residual);
    f.loss = r * r / (2.0 * static_cast<double>(data.inputs.rows()));
    return f;
}

// Gradients of the data loss with respect to the (effective) weights.
void backward_pass(const Forward& f, const Matrix& w2, const Dataset& data, Matrix& grad_w1,
                   Matrix& grad_w2) {
    const double inv_n = 1.0 / static_cast<double>(data.inputs.rows());
    grad_w2 = inv_n * matmul_tn(f.residual, f.hidden);  // d_out × h

    Matrix grad_z = matmul(f.residual, w2);  // n × h, then through tanh'
    for (std::size_t i = 0; i < grad_z.rows(); ++i) {
        for (std::size_t j = 0; j < grad_z.cols(); ++j) {
            const double h = f.hidden(i, j);
            grad_z(i, j) *= 1.0 - h * h;
        }
    }
    grad_w1 = inv_n * matmul_tn(grad_z, data.inputs);  // h × d_in
}

PenaltyConfig clamped_penalty(const PenaltyConfig& cfg, const Matrix& base) {
    PenaltyConfig out = cfg;
    if (out.base_approx_rank) {
        const std::size_t min_dim = std::min(base.rows(), base.cols());
        out.base_approx_rank = std::min(*out.base_approx_rank, min_dim);
    }
    return out;
}

// Solves (G + ridge·I)·X = rhs for symmetric positive definite G by Cholesky.
Matrix cholesky_solve(Matrix g, Matrix rhs, double ridge) {
    const std::size_t n = g.rows();
    for (std::size_t i = 0; i < n; ++i) g(i, i) += ridge;

    // G = L·Lᵀ, in place on the lower triangle.
    for (std::size_t j = 0; j < n; ++j) {
        double d = g(j, j);
        for (std::size_t l = 0; l < j; ++l) d -= g(j, l) * g(j, l);
        if (d <= 0.0) {
            throw InvalidInput("cholesky_solve: matrix not positive definite");
        }
        g(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = g(i, j);
            for (std::size_t l = 0; l < j; ++l) s -= g(i, l) * g(j, l);
            g(i, j) = s / g(j, j);
        }
    }
    // Forward then backward substitution, column by column of the RHS.
    for (std::size_t c = 0; c < rhs.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = rhs(i, c);
            for (std::size_t l = 0; l < i; ++l) s -= g(i, l) * rhs(l, c);
            rhs(i, c) = s / g(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = rhs(i, c);
            for (std::size_t l = i + 1; l < n; ++l) s -= g(l, i) * rhs(l, c);
            rhs(i, c) = s / g(i, i);
        }
    }
    return rhs;
}

}  // namespace

TaskPair gen_interference_tasks(std::uint32_t seed, const ToyDims& dims,
                                std::size_t n_samples) {
    validate_dims(dims);
    if (n_samples < 1) {
        throw InvalidInput("gen_interference_tasks: n_samples must be >= 1");
    }

    std::mt19937 gen(seed);
    TaskPair tasks;
    tasks.teacher_a = random_uniform(gen, dims.d_out, dims.d_in,
                                     1.0 / std::sqrt(static_cast<double>(dims.d_in)));

    // Rank-1 bump with Frobenius norm pinned to a fraction of the teacher's.
    const Matrix u = random_uniform(gen, dims.d_out, 1, 1.0);
    const Matrix v = random_uniform(gen, 1, dims.d_in, 1.0);
    Matrix bump = matmul(u, v);
    const double bump_norm = frobenius_norm(bump);
    if (bump_norm > 0.0) {
        bump *= kPerturbationScale * frobenius_norm(tasks.teacher_a) / bump_norm;
    }
    tasks.teacher_b = tasks.teacher_a + bump;

    tasks.task_a.inputs = random_uniform(gen, n_samples, dims.d_in, 1.0);
    tasks.task_a.targets = matmul_nt(tasks.task_a.inputs, tasks.teacher_a);
    tasks.task_b.inputs = random_uniform(gen, n_samples, dims.d_in, 1.0);
    tasks.task_b.targets = matmul_nt(tasks.task_b.inputs, tasks.teacher_b);
    return tasks;
}

ToyModel init_model(std::uint32_t seed, const ToyDims& dims) {
    validate_dims(dims);
    std::mt19937 gen(seed ^ 0x9e3779b9u);
    ToyModel model;
    model.w1 = random_uniform(gen, dims.hidden, dims.d_in,
                              kInitGain / std::sqrt(static_cast<double>(dims.d_in)));
    model.w2 = random_uniform(gen, dims.d_out, dims.hidden,
                              kInitGain / std::sqrt(static_cast<double>(dims.hidden)));
    return model;
}

ToyModel fit_base_model(std::uint32_t seed, const ToyDims& dims, const Dataset& task) {
    ToyModel model = init_model(seed, dims);
    const Matrix features = tanh_elementwise(matmul_nt(task.inputs, model.w1));  // n × h
    Matrix gram = matmul_tn(features, features);
    double trace = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) trace += gram(i, i);
    const double ridge = 1e-9 * trace / static_cast<double>(gram.rows());
    const Matrix readout =
        cholesky_solve(std::move(gram), matmul_tn(features, task.targets), ridge);
    model.w2 = transpose(readout);
    return model;
}

double mse_loss(const ToyModel& model, const Dataset& data) {
    return forward_pass(model.w1, model.w2, data).loss;
}

ToyTrainResult train(const ToyModel& model, const Dataset& data, const ToyRunConfig& cfg) {
    if (data.inputs.cols() != model.w1.cols()) {
        throw ShapeError("train: input width " + std::to_string(data.inputs.cols()) +
                         " does not match W1 columns " + std::to_string(model.w1.cols()));
    }
    if (data.targets.cols() != model.w2.rows()) {
        throw ShapeError("train: target width " + std::to_string(data.targets.cols()) +
                         " does not match W2 rows " + std::to_string(model.w2.rows()));
    }
    if (data.inputs.rows() != data.targets.rows()) {
        throw ShapeError("train: input/target sample counts differ");
    }
    if (cfg.epochs < 0) {
        throw InvalidInput("train: epochs must be >= 0");
    }
    if (cfg.learning_rate < 0.0) {
        throw InvalidInput("train: learning rate must be >= 0");
    }

    ToyTrainResult out;
    out.model = model;

    const bool lora = cfg.mode == TrainMode::lora;
    Matrix b1, a1, b2, a2;
    double scaling = 1.0;
    std::optional<PenaltyConfig> pcfg1, pcfg2;
    Matrix base1_approx, base2_approx;

    if (lora) {
        const std::size_t max_rank = std::min({model.w1.rows(), model.w1.cols(),
                                               model.w2.rows(), model.w2.cols()});
        if (cfg.rank < 1 || cfg.rank > max_rank) {
            throw InvalidInput("train: lora rank " + std::to_string(cfg.rank) +
                               " out of range [1, " + std::to_string(max_rank) + "]");
        }
        if (cfg.alpha <= 0.0) {
            throw InvalidInput("train: alpha must be positive");
        }
        scaling = cfg.alpha / static_cast<double>(cfg.rank);

        // B = 0 and A small keeps the merged model equal to the base at step 0.
        std::mt19937 gen(cfg.seed ^ 0x85ebca6bu);
        b1 = Matrix(model.w1.rows(), cfg.rank);
        a1 = random_uniform(gen, cfg.rank, model.w1.cols(),
                            kLoraInitScale / std::sqrt(static_cast<double>(model.w1.cols())));
        b2 = Matrix(model.w2.rows(), cfg.rank);
        a2 = random_uniform(gen, cfg.rank, model.w2.cols(),
                            kLoraInitScale / std::sqrt(static_cast<double>(model.w2.cols())));

        if (cfg.penalty) {
            pcfg1 = clamped_penalty(*cfg.penalty, model.w1);
            pcfg2 = clamped_penalty(*cfg.penalty, model.w2);
            base1_approx = pcfg1->base_approx_rank
                               ? low_rank_base(model.w1, *pcfg1->base_approx_rank)
                               : model.w1;
            base2_approx = pcfg2->base_approx_rank
                               ? low_rank_base(model.w2, *pcfg2->base_approx_rank)
                               : model.w2;
        }
    } else if (cfg.penalty) {
        throw InvalidInput("train: the orthogonality penalty applies to lora mode only");
    }

    auto adapter_for = [&](const Matrix& b, const Matrix& a, const char* name) {
        return AdapterPair{name, b, a, cfg.rank, cfg.alpha};
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Matrix w1_eff = out.model.w1;
        Matrix w2_eff = out.model.w2;
        if (lora) {
            Matrix d1 = matmul(b1, a1);
            d1 *= scaling;
            w1_eff += d1;
            Matrix d2 = matmul(b2, a2);
            d2 *= scaling;
            w2_eff += d2;
        }

        const Forward f = forward_pass(w1_eff, w2_eff, data);
        double objective = f.loss;

        Matrix grad_w1, grad_w2;
        backward_pass(f, w2_eff, data, grad_w1, grad_w2);

        if (!lora) {
            if (!std::isfinite(objective) || objective > kDivergenceLossCap) {
                throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch),
                                      epoch);
            }
            out.loss_trace.push_back(objective);
            for (std::size_t i = 0; i < out.model.w1.size(); ++i) {
                out.model.w1.data()[i] -= cfg.learning_rate *
                    (grad_w1.data()[i] + cfg.weight_decay * out.model.w1.data()[i]);
            }
            for (std::size_t i = 0; i < out.model.w2.size(); ++i) {
                out.model.w2.data()[i] -= cfg.learning_rate *
                    (grad_w2.data()[i] + cfg.weight_decay * out.model.w2.data()[i]);
            }
            if (!out.model.w1.all_finite() || !out.model.w2.all_finite()) {
                throw DivergenceError(
                    "train: weights diverged at epoch " + std::to_string(epoch), epoch);
            }
            continue;
        }

        // Chain the data gradient through ΔW = (α/r)·B·A.
        Matrix gb1 = scaling * matmul_nt(grad_w1, a1);
        Matrix ga1 = scaling * matmul_tn(b1, grad_w1);
        Matrix gb2 = scaling * matmul_nt(grad_w2, a2);
        Matrix ga2 = scaling * matmul_tn(b2, grad_w2);

        if (pcfg1) {
            // The penalty ratio is 0/0 at ΔW = 0 and its gradient grows like
            // 1/‖ΔW‖, so it joins the objective only once the update has
            // left the ill-conditioned neighborhood of zero.
            const double gate1 = kPenaltyEngageScale * frobenius_norm(out.model.w1);
            const Matrix d1 = scaling * matmul(b1, a1);
            if (frobenius_norm(d1) > std::max(pcfg1->epsilon, gate1)) {
                const PenaltyResult p = penalty_grads(base1_approx, adapter_for(b1, a1, "w1"),
                                                      *pcfg1);
                objective += p.value;
                gb1 += p.grad_b;
                ga1 += p.grad_a;
            }
            const double gate2 = kPenaltyEngageScale * frobenius_norm(out.model.w2);
            const Matrix d2 = scaling * matmul(b2, a2);
            if (frobenius_norm(d2) > std::max(pcfg2->epsilon, gate2)) {
                const PenaltyResult p = penalty_grads(base2_approx, adapter_for(b2, a2, "w2"),
                                                      *pcfg2);
                objective += p.value;
                gb2 += p.grad_b;
                ga2 += p.grad_a;
            }
        }

        if (!std::isfinite(objective) || objective > kDivergenceLossCap) {
            throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch),
                                  epoch);
        }
        out.loss_trace.push_back(objective);

        auto step = [&](Matrix& param, const Matrix& grad) {
            for (std::size_t i = 0; i < param.size(); ++i) {
                param.data()[i] -= cfg.learning_rate *
                    (grad.data()[i] + cfg.weight_decay * param.data()[i]);
            }
        };
        step(b1, gb1);
        step(a1, ga1);
        step(b2, gb2);
        step(a2, ga2);
        if (!b1.all_finite() || !a1.all_finite() || !b2.all_finite() || !a2.all_finite()) {
            throw DivergenceError("train: adapter factors diverged at epoch " +
                                      std::to_string(epoch),
                                  epoch);
        }
    }

    if (lora) {
        out.adapters = {adapter_for(b1, a1, "w1"), adapter_for(b2, a2, "w2")};
    }
    return out;
}

ToyModel merged_model(const ToyModel& base, const ToyTrainResult& result) {
    if (!result.adapters) {
        return result.model;
    }
    ToyModel merged = base;
    merged.w1 += materialize_delta(DeltaSource::low_rank((*result.adapters)[0]));
    merged.w2 += materialize_delta(DeltaSource::low_rank((*result.adapters)[1]));
    return merged;
}

namespace {

MatrixUpdateStats update_stats(const Matrix& base, const Matrix& update, std::size_t top_t) {
    MatrixUpdateStats stats;
    stats.update_fro_norm = frobenius_norm(update);
    if (update.all_zero()) {
        return stats;
    }
    stats.stable_rank = stable_rank(update);
    const std::size_t t = std::min(top_t, std::min(base.rows(), base.cols()));
    stats.metrics = alignment_metrics(base, update, t);
    return stats;
}

}  // namespace

RetentionReport evaluate_retention(const ToyModel& base, const ToyTrainResult& result,
                                   const TaskPair& tasks, std::size_t top_t) {
    const ToyModel merged = merged_model(base, result);

    RetentionReport report;
    report.task_a_loss_before = mse_loss(base, tasks.task_a);
    report.task_a_loss_after = mse_loss(merged, tasks.task_a);
    report.task_b_loss_after = mse_loss(merged, tasks.task_b);
    report.w1 = update_stats(base.w1, merged.w1 - base.w1, top_t);
    report.w2 = update_stats(base.w2, merged.w2 - base.w2, top_t);
    return report;
}

// ---------------------------------------------------------------------------
// Scenario IO.
// ---------------------------------------------------------------------------

namespace {

json stats_to_json(const MatrixUpdateStats& s) {
    json out;
    out["fro_norm"] = s.update_fro_norm;
    out["stable_rank"] = s.stable_rank ? json(*s.stable_rank) : json(nullptr);
    if (s.metrics) {
        out["m1"] = s.metrics->m1;
        out["m2"] = s.metrics->m2;
        out["m3"] = s.metrics->m3;
        out["m4"] = s.metrics->m4;
    } else {
        out["m1"] = nullptr;
        out["m2"] = nullptr;
        out["m3"] = nullptr;
        out["m4"] = nullptr;
    }
    return out;
}

}  // namespace

std::string RetentionReport::to_json() const {
    json doc;
    doc["task_a_loss_before"] = task_a_loss_before;
    doc["task_a_loss_after"] = task_a_loss_after;
    doc["task_b_loss_after"] = task_b_loss_after;
    doc["updates"]["w1"] = stats_to_json(w1);
    doc["updates"]["w2"] = stats_to_json(w2);

    json cfg;
    cfg["seed"] = config.seed;
    cfg["epochs"] = config.epochs;
    cfg["learning_rate"] = config.learning_rate;
    cfg["reference_learning_rate"] = kReferenceLearningRate;
    cfg["weight_decay"] = config.weight_decay;
    cfg["mode"] = config.mode == TrainMode::full ? "full" : "lora";
    cfg["r"] = config.rank;
    cfg["alpha"] = config.alpha;
    if (config.penalty) {
        json p;
        p["variant"] = penalty_variant_name(config.penalty->variant);
        p["beta"] = config.penalty->beta;
        p["base_approx_rank"] = config.penalty->base_approx_rank
                                    ? json(*config.penalty->base_approx_rank)
                                    : json("exact");
        p["epsilon"] = config.penalty->epsilon;
        cfg["penalty"] = p;
    } else {
        cfg["penalty"] = nullptr;
    }
    doc["config"] = cfg;
    doc["dims"] = {dims.d_in, dims.hidden, dims.d_out};
    doc["n_samples"] = n_samples;
    return doc.dump(2) + "\n";
}

ToyScenario scenario_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("scenario: malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw FormatError("scenario: expected a JSON object");
    }

    static const std::set<std::string> known = {
        "seed",  "epochs", "learning_rate", "weight_decay", "mode",
        "r",     "alpha",  "penalty",       "dims",         "n_samples"};
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (!known.contains(key)) {
            throw FormatError("scenario: unknown field '" + key + "'");
        }
    }

    ToyScenario s;
    try {
        if (doc.contains("seed")) s.run.seed = doc["seed"].get<std::uint32_t>();
        if (doc.contains("epochs")) s.run.epochs = doc["epochs"].get<int>();
        if (doc.contains("learning_rate"))
            s.run.learning_rate = doc["learning_rate"].get<double>();
        if (doc.contains("weight_decay")) s.run.weight_decay = doc["weight_decay"].get<double>();
        if (doc.contains("mode")) {
            const auto mode = doc["mode"].get<std::string>();
            if (mode == "full") {
                s.run.mode = TrainMode::full;
            } else if (mode == "lora") {
                s.run.mode = TrainMode::lora;
            } else {
                throw FormatError("scenario: mode must be \"full\" or \"lora\"");
            }
        }
        if (doc.contains("r")) s.run.rank = doc["r"].get<std::size_t>();
        if (doc.contains("alpha")) s.run.alpha = doc["alpha"].get<double>();
        if (doc.contains("penalty") && !doc["penalty"].is_null()) {
            const json& p = doc["penalty"];
            PenaltyConfig cfg;
            if (p.contains("variant")) {
                const auto variant = parse_penalty_variant(p["variant"].get<std::string>());
                if (!variant) {
                    throw FormatError("scenario: penalty variant must be \"col\" or \"both\"");
                }
                cfg.variant = *variant;
            }
            if (p.contains("beta")) cfg.beta = p["beta"].get<double>();
            if (p.contains("base_approx_rank")) {
                const json& m = p["base_approx_rank"];
                if (m.is_string() && m.get<std::string>() == "exact") {
                    cfg.base_approx_rank = std::nullopt;
                } else if (m.is_number_unsigned() || m.is_number_integer()) {
                    cfg.base_approx_rank = m.get<std::size_t>();
                } else {
                    throw FormatError(
                        "scenario: base_approx_rank must be an integer or \"exact\"");
                }
            }
            if (p.contains("epsilon")) cfg.epsilon = p["epsilon"].get<double>();
            s.run.penalty = cfg;
        }
        if (doc.contains("dims")) {
            const json& d = doc["dims"];
            if (!d.is_array() || d.size() != 3) {
                throw FormatError("scenario: dims must be [d_in, hidden, d_out]");
            }
            s.dims.d_in = d[0].get<std::size_t>();
            s.dims.hidden = d[1].get<std::size_t>();
            s.dims.d_out = d[2].get<std::size_t>();
        }
        if (doc.contains("n_samples")) s.n_samples = doc["n_samples"].get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("scenario: bad field value: ") + e.what());
    }
    return s;
}

RetentionReport run_scenario(const ToyScenario& scenario) {
    const TaskPair tasks =
        gen_interference_tasks(scenario.run.seed, scenario.dims, scenario.n_samples);

    // The base model already carries the task-A skill: random hidden features
    // plus the exact ridge readout. The scenario's epoch budget is spent
    // entirely on the task-B fine-tune.
    const ToyModel base = fit_base_model(scenario.run.seed, scenario.dims, tasks.task_a);
    const ToyTrainResult result = train(base, tasks.task_b, scenario.run);

    RetentionReport report = evaluate_retention(base, result, tasks);
    report.config = scenario.run;
    report.dims = scenario.dims;
    report.n_samples = scenario.n_samples;
    return report;
}

}  // namespace lorakit
