#pragma once

// Test-only reference implementations. Deliberately independent of the
// library's decomposition code paths: the SVD here goes through a cyclic
// Jacobi eigendecomposition of the Gram matrix, not bidiagonalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "lorakit/matrix.hpp"

namespace oracles {

using lorakit::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint32_t seed,
                            double scale = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * unit(gen);
    return m;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// Returns eigenvalues in descending order; columns of `vecs` are the
// matching eigenvectors.
inline void jacobi_eigh(const Matrix& sym, std::vector<double>& vals, Matrix& vecs) {
    const std::size_t n = sym.rows();
    Matrix a = sym;
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) diag += a(i, i) * a(i, i);
        if (std::sqrt(off) <= 1e-15 * (std::sqrt(diag) + 1e-300)) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    vals.resize(n);
    vecs = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        vals[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) vecs(i, j) = v(i, order[j]);
    }
}

struct SvdOracle {
    Matrix u;                    // d × min(d,k)
    std::vector<double> sigma;   // descending
    Matrix v;                    // k × min(d,k)
};

// Full SVD through the eigendecomposition of the smaller Gram matrix.
// The short-side factor is recovered as M·v/σ (or Mᵀ·u/σ); columns past the
// numerical rank are left as zero and callers should not rely on them.
inline SvdOracle svd_via_gram(const Matrix& m) {
    const std::size_t d = m.rows();
    const std::size_t k = m.cols();
    const std::size_t r = std::min(d, k);
    SvdOracle out;
    out.sigma.resize(r);

    std::vector<double> vals;
    Matrix vecs;
    if (k <= d) {
        jacobi_eigh(lorakit::matmul_tn(m, m), vals, vecs);  // k × k
        out.v = vecs;
        out.u = Matrix(d, r);
        for (std::size_t j = 0; j < r; ++j) {
            out.sigma[j] = std::sqrt(std::max(vals[j], 0.0));
            if (out.sigma[j] <= 0.0) continue;
            for (std::size_t i = 0; i < d; ++i) {
                double s = 0.0;
                for (std::size_t l = 0; l < k; ++l) s += m(i, l) * vecs(l, j);
                out.u(i, j) = s / out.sigma[j];
            }
        }
    } else {
        jacobi_eigh(lorakit::matmul_nt(m, m), vals, vecs);  // d × d
        out.u = vecs;
        out.v = Matrix(k, r);
        for (std::size_t j = 0; j < r; ++j) {
            out.sigma[j] = std::sqrt(std::max(vals[j], 0.0));
            if (out.sigma[j] <= 0.0) continue;
            for (std::size_t i = 0; i < k; ++i) {
                double s = 0.0;
                for (std::size_t l = 0; l < d; ++l) s += m(l, i) * vecs(l, j);
                out.v(i, j) = s / out.sigma[j];
            }
        }
    }
    return out;
}

// First t columns of a factor.
inline Matrix head_columns(const Matrix& m, std::size_t t) {
    Matrix out(m.rows(), t);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < t; ++j) out(i, j) = m(i, j);
    return out;
}

// Dense projector B·Bᵀ for a basis with orthonormal columns.
inline Matrix dense_projector(const Matrix& basis) {
    return lorakit::matmul_nt(basis, basis);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    return worst;
}

}  // namespace oracles
