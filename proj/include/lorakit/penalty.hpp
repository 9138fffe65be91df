#pragma once

#include <optional>
#include <string>

#include "lorakit/checkpoint.hpp"
#include "lorakit/matrix.hpp"

namespace lorakit {

enum class PenaltyVariant { col, both };

const char* penalty_variant_name(PenaltyVariant v);
std::optional<PenaltyVariant> parse_penalty_variant(const std::string& name);

struct PenaltyConfig {
    PenaltyVariant variant = PenaltyVariant::both;
    double beta = 1.0;
    // Rank of the base approximation handed to the penalty; nullopt = exact.
    std::optional<std::size_t> base_approx_rank = 64;
    double epsilon = 1e-12;  // degenerate-norm guard
};

struct PenaltyResult {
    double value = 0.0;
    Matrix grad_b;  // d × r
    Matrix grad_a;  // r × k
};

/// Orthogonality penalty between the (already approximated) base W̃ and the
/// adapter update ΔW = (α/r)BA:
///   col:  β·(‖W̃ᵀΔW‖_F / (‖W̃‖_F·‖ΔW‖_F))²
///   both: the col term plus β·(‖W̃·ΔWᵀ‖_F / (‖W̃‖_F·‖ΔW‖_F))²
/// Norms at or below cfg.epsilon signal an all-zero adapter and throw.
double penalty_value(const Matrix& base_approx, const AdapterPair& pair,
                     const PenaltyConfig& cfg);

/// Penalty value plus closed-form gradients with respect to B and A. The
/// ΔW-gradient of each squared ratio is the quotient-rule expression
///   (2β/‖W̃‖²)·(W̃W̃ᵀΔW·‖ΔW‖² − ‖W̃ᵀΔW‖²·ΔW)/‖ΔW‖⁴
/// (mirrored for the row term), chained through ΔW = (α/r)BA.
PenaltyResult penalty_grads(const Matrix& base_approx, const AdapterPair& pair,
                            const PenaltyConfig& cfg);

/// Best rank-m Frobenius approximation U_m·diag(S_m)·V_mᵀ of the base;
/// callers hand the result to the penalty ops as W̃.
Matrix low_rank_base(const Matrix& base, std::size_t m);

}  // namespace lorakit
