#pragma once

#include <cstddef>
#include <vector>

#include "lorakit/matrix.hpp"

namespace lorakit {

/// Top-t singular triplets of a matrix: columns of `u` and `v` are
/// orthonormal, `s` is non-increasing and nonnegative.
struct TruncatedSVD {
    Matrix u;               // d × t
    std::vector<double> s;  // t entries
    Matrix v;               // k × t

    std::size_t rank() const noexcept { return s.size(); }
};

double frobenius_norm(const Matrix& m);

/// Largest singular value via power iteration on the smaller Gram matrix.
/// `tol` is the relative change between consecutive estimates; exceeding
/// `max_iter` throws ConvergenceError carrying the last estimate.
double spectral_norm(const Matrix& m, double tol = 1e-10, int max_iter = 1000);

/// ‖M‖_F² / ‖M‖₂², in [1, min(d,k)]. Undefined (throws) for the zero matrix.
double stable_rank(const Matrix& m);

/// Top-t singular triplets. Uses a full dense decomposition when
/// min(d,k) <= 512 and randomized subspace iteration (oversampling 8,
/// 4 power steps) above that. Output is deterministic: each left singular
/// vector's first nonzero component is made nonnegative.
TruncatedSVD truncated_svd(const Matrix& m, std::size_t t);

/// (I − UUᵀ)·M computed as M − U(UᵀM). U must have orthonormal columns
/// (checked to 1e-6) and as many rows as M.
Matrix project_col_complement(const Matrix& m, const Matrix& u);

/// M·(I − VVᵀ) computed as M − (MV)Vᵀ. V must have orthonormal columns
/// (checked to 1e-6) and as many rows as M has columns.
Matrix project_row_complement(const Matrix& m, const Matrix& v);

/// Max |AᵀA − I| entry; convenience for orthonormality checks.
double orthonormality_defect(const Matrix& a);

}  // namespace lorakit
