#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lorakit/analysis.hpp"
#include "lorakit/checkpoint.hpp"
#include "lorakit/matrix.hpp"
#include "lorakit/penalty.hpp"

namespace lorakit {

// Two-layer tanh regression network: y = W2·tanh(W1·x).
struct ToyModel {
    Matrix w1;  // hidden × d_in
    Matrix w2;  // d_out × hidden
};

struct ToyDims {
    std::size_t d_in = 32;
    std::size_t hidden = 48;
    std::size_t d_out = 32;
};

struct Dataset {
    Matrix inputs;   // n × d_in
    Matrix targets;  // n × d_out
};

/// Task A regresses a random full-rank linear teacher; task B's teacher
/// differs from A's by a rank-1 perturbation, mimicking a narrow skill
/// grafted onto a broad one.
struct TaskPair {
    Dataset task_a;
    Dataset task_b;
    Matrix teacher_a;  // d_out × d_in
    Matrix teacher_b;
};

enum class TrainMode { full, lora };

/// Reference learning rate of the fine-tuning setup this harness mimics;
/// toy magnitudes run 100× higher by default.
inline constexpr double kReferenceLearningRate = 5e-5;
inline constexpr double kDefaultToyLearningRate = kReferenceLearningRate * 100.0;

struct ToyRunConfig {
    std::uint32_t seed = 17;
    int epochs = 200;
    double learning_rate = kDefaultToyLearningRate;
    double weight_decay = 1e-4;
    TrainMode mode = TrainMode::full;
    std::size_t rank = 4;
    double alpha = 16.0;
    std::optional<PenaltyConfig> penalty;  // lora mode only
};

TaskPair gen_interference_tasks(std::uint32_t seed, const ToyDims& dims,
                                std::size_t n_samples);

ToyModel init_model(std::uint32_t seed, const ToyDims& dims);

/// A base model that already performs `task`: the seed's random hidden layer
/// plus the exact ridge-regression readout for the task's data. This is the
/// stand-in for an already fine-tuned network.
ToyModel fit_base_model(std::uint32_t seed, const ToyDims& dims, const Dataset& task);

double mse_loss(const ToyModel& model, const Dataset& data);

struct ToyTrainResult {
    ToyModel model;  // full mode: trained copy; lora mode: the frozen base
    // lora mode: adapters for w1 and w2 (B zero-initialized, A small random).
    std::optional<std::array<AdapterPair, 2>> adapters;
    std::vector<double> loss_trace;  // objective value per epoch, pre-update
};

/// Full-batch gradient descent with weight decay. In lora mode the base is
/// frozen and the factor pairs are trained; an attached penalty config adds
/// its value to the objective and its analytic gradients to the factor
/// updates (skipped while ΔW is still exactly zero). A non-finite loss
/// raises DivergenceError carrying the epoch index.
ToyTrainResult train(const ToyModel& model, const Dataset& data, const ToyRunConfig& cfg);

/// The trained weights as a plain model; lora results are merged vanilla.
ToyModel merged_model(const ToyModel& base, const ToyTrainResult& result);

struct MatrixUpdateStats {
    std::optional<double> stable_rank;
    std::optional<AlignmentMetrics> metrics;
    double update_fro_norm = 0.0;
};

struct RetentionReport {
    double task_a_loss_before = 0.0;
    double task_a_loss_after = 0.0;
    double task_b_loss_after = 0.0;
    MatrixUpdateStats w1;
    MatrixUpdateStats w2;
    ToyRunConfig config;
    ToyDims dims;
    std::size_t n_samples = 0;

    std::string to_json() const;
};

RetentionReport evaluate_retention(const ToyModel& base, const ToyTrainResult& result,
                                   const TaskPair& tasks, std::size_t top_t = 16);

struct ToyScenario {
    ToyDims dims;
    std::size_t n_samples = 512;
    ToyRunConfig run;
};

/// Parses a scenario JSON document (all ToyRunConfig fields plus "dims" and
/// "n_samples"; every field optional, defaults = the standard scenario).
ToyScenario scenario_from_json(const std::string& text);

/// Pretrains a fresh model on task A (full mode, same budget), fine-tunes on
/// task B per the run config, and evaluates retention. Deterministic in the
/// scenario, bit for bit.
RetentionReport run_scenario(const ToyScenario& scenario);

}  // namespace lorakit
