#include "lorakit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "lorakit/errors.hpp"

namespace lorakit {

namespace {

// Shapes below this use the exact dense decomposition; larger ones go
// through randomized subspace iteration.
constexpr std::size_t kDenseSvdCutoff = 512;
constexpr std::size_t kOversampling = 8;
constexpr int kPowerSteps = 4;
constexpr int kMaxQrSweeps = 500;
constexpr std::uint32_t kRangeFinderSeed = 0x5eedbeefu;

struct FullSvd {
    Matrix u;               // m × n (thin)
    std::vector<double> s;  // n
    Matrix v;               // n × n
};

// Thin SVD of a tall matrix (m >= n): A = U·diag(s)·Vᵀ. Householder
// bidiagonalization followed by implicit-shift QR on the bidiagonal,
// rotations accumulated into U and V.
FullSvd svd_tall(Matrix a) {
    const int m = static_cast<int>(a.rows());
    const int n = static_cast<int>(a.cols());

    std::vector<double> s(static_cast<std::size_t>(n), 0.0);
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    std::vector<double> work(static_cast<std::size_t>(m), 0.0);
    Matrix u(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
    Matrix v(static_cast<std::size_t>(n), static_cast<std::size_t>(n));

    const int nu = n;
    const int nct = std::min(m - 1, n);
    const int nrt = std::max(0, std::min(n - 2, m));

    // Reduce to bidiagonal form, diagonal in s, superdiagonal in e.
    for (int k = 0; k < std::max(nct, nrt); ++k) {
        if (k < nct) {
            double nrm = 0.0;
            for (int i = k; i < m; ++i) nrm = std::hypot(nrm, a(i, k));
            s[k] = nrm;
            if (s[k] != 0.0) {
                if (a(k, k) < 0.0) s[k] = -s[k];
                for (int i = k; i < m; ++i) a(i, k) /= s[k];
                a(k, k) += 1.0;
            }
            s[k] = -s[k];
        }
        for (int j = k + 1; j < n; ++j) {
            if (k < nct && s[k] != 0.0) {
                double t = 0.0;
                for (int i = k; i < m; ++i) t += a(i, k) * a(i, j);
                t = -t / a(k, k);
                for (int i = k; i < m; ++i) a(i, j) += t * a(i, k);
            }
            e[j] = a(k, j);
        }
        if (k < nct) {
            for (int i = k; i < m; ++i) u(i, k) = a(i, k);
        }
        if (k < nrt) {
            double nrm = 0.0;
            for (int i = k + 1; i < n; ++i) nrm = std::hypot(nrm, e[i]);
            e[k] = nrm;
            if (e[k] != 0.0) {
                if (e[k + 1] < 0.0) e[k] = -e[k];
                for (int i = k + 1; i < n; ++i) e[i] /= e[k];
                e[k + 1] += 1.0;
            }
            e[k] = -e[k];
            if (k + 1 < m && e[k] != 0.0) {
                for (int i = k + 1; i < m; ++i) work[i] = 0.0;
                for (int j = k + 1; j < n; ++j)
                    for (int i = k + 1; i < m; ++i) work[i] += e[j] * a(i, j);
                for (int j = k + 1; j < n; ++j) {
                    const double t = -e[j] / e[k + 1];
                    for (int i = k + 1; i < m; ++i) a(i, j) += t * work[i];
                }
            }
            for (int i = k + 1; i < n; ++i) v(i, k) = e[i];
        }
    }

    // Final bidiagonal of order p.
    int p = std::min(n, m + 1);
    if (nct < n) s[nct] = a(nct, nct);
    if (m < p) s[p - 1] = 0.0;
    if (nrt + 1 < p) e[nrt] = a(nrt, p - 1);
    e[p - 1] = 0.0;

    // Accumulate the left Householder transformations into U.
    for (int j = nct; j < nu; ++j) {
        for (int i = 0; i < m; ++i) u(i, j) = 0.0;
        u(j, j) = 1.0;
    }
    for (int k = nct - 1; k >= 0; --k) {
        if (s[k] != 0.0) {
            for (int j = k + 1; j < nu; ++j) {
                double t = 0.0;
                for (int i = k; i < m; ++i) t += u(i, k) * u(i, j);
                t = -t / u(k, k);
                for (int i = k; i < m; ++i) u(i, j) += t * u(i, k);
            }
            for (int i = k; i < m; ++i) u(i, k) = -u(i, k);
            u(k, k) = 1.0 + u(k, k);
            for (int i = 0; i < k; ++i) u(i, k) = 0.0;
        } else {
            for (int i = 0; i < m; ++i) u(i, k) = 0.0;
            u(k, k) = 1.0;
        }
    }

    // Accumulate the right Householder transformations into V.
    for (int k = n - 1; k >= 0; --k) {
        if (k < nrt && e[k] != 0.0) {
            for (int j = k + 1; j < nu; ++j) {
                double t = 0.0;
                for (int i = k + 1; i < n; ++i) t += v(i, k) * v(i, j);
                t = -t / v(k + 1, k);
                for (int i = k + 1; i < n; ++i) v(i, j) += t * v(i, k);
            }
        }
        for (int i = 0; i < n; ++i) v(i, k) = 0.0;
        v(k, k) = 1.0;
    }

    // Implicit-shift QR on the bidiagonal {s, e}.
    const int pp_final = p - 1;
    int iter = 0;
    const double eps = std::pow(2.0, -52.0);
    const double tiny = std::pow(2.0, -966.0);
    while (p > 0) {
        if (iter > kMaxQrSweeps) {
            throw ConvergenceError("svd: QR iteration failed to converge", s[p - 1],
                                   std::abs(e[p - 2]));
        }

        int k;
        int kase;
        for (k = p - 2; k >= -1; --k) {
            if (k == -1) break;
            if (std::abs(e[k]) <= tiny + eps * (std::abs(s[k]) + std::abs(s[k + 1]))) {
                e[k] = 0.0;
                break;
            }
        }
        if (k == p - 2) {
            kase = 4;
        } else {
            int ks;
            for (ks = p - 1; ks >= k; --ks) {
                if (ks == k) break;
                const double t = (ks != p ? std::abs(e[ks]) : 0.0) +
                                 (ks != k + 1 ? std::abs(e[ks - 1]) : 0.0);
                if (std::abs(s[ks]) <= tiny + eps * t) {
                    s[ks] = 0.0;
                    break;
                }
            }
            if (ks == k) {
                kase = 3;
            } else if (ks == p - 1) {
                kase = 1;
            } else {
                kase = 2;
                k = ks;
            }
        }
        ++k;

        switch (kase) {
            case 1: {  // s(p-1) negligible: annihilate e(p-2)
                double f = e[p - 2];
                e[p - 2] = 0.0;
                for (int j = p - 2; j >= k; --j) {
                    double t = std::hypot(s[j], f);
                    const double cs = (t != 0.0) ? s[j] / t : 1.0;
                    const double sn = (t != 0.0) ? f / t : 0.0;
                    s[j] = t;
                    if (j != k) {
                        f = -sn * e[j - 1];
                        e[j - 1] = cs * e[j - 1];
                    }
                    for (int i = 0; i < n; ++i) {
                        t = cs * v(i, j) + sn * v(i, p - 1);
                        v(i, p - 1) = -sn * v(i, j) + cs * v(i, p - 1);
                        v(i, j) = t;
                    }
                }
                break;
            }
            case 2: {  // s(k-1) negligible: annihilate e(k-1)
                double f = e[k - 1];
                e[k - 1] = 0.0;
                for (int j = k; j < p; ++j) {
                    double t = std::hypot(s[j], f);
                    const double cs = (t != 0.0) ? s[j] / t : 1.0;
                    const double sn = (t != 0.0) ? f / t : 0.0;
                    s[j] = t;
                    f = -sn * e[j];
                    e[j] = cs * e[j];
                    for (int i = 0; i < m; ++i) {
                        t = cs * u(i, j) + sn * u(i, k - 1);
                        u(i, k - 1) = -sn * u(i, j) + cs * u(i, k - 1);
                        u(i, j) = t;
                    }
                }
                break;
            }
            case 3: {  // one implicit-shift QR step
                const double scale =
                    std::max({std::abs(s[p - 1]), std::abs(s[p - 2]), std::abs(e[p - 2]),
                              std::abs(s[k]), std::abs(e[k])});
                const double sp = s[p - 1] / scale;
                const double spm1 = s[p - 2] / scale;
                const double epm1 = e[p - 2] / scale;
                const double sk = s[k] / scale;
                const double ek = e[k] / scale;
                const double b = ((spm1 + sp) * (spm1 - sp) + epm1 * epm1) / 2.0;
                const double c = (sp * epm1) * (sp * epm1);
                double shift = 0.0;
                if (b != 0.0 || c != 0.0) {
                    shift = std::sqrt(b * b + c);
                    if (b < 0.0) shift = -shift;
                    shift = c / (b + shift);
                }
                double f = (sk + sp) * (sk - sp) + shift;
                double g = sk * ek;

                for (int j = k; j < p - 1; ++j) {
                    double t = std::hypot(f, g);
                    double cs = (t != 0.0) ? f / t : 1.0;
                    double sn = (t != 0.0) ? g / t : 0.0;
                    if (j != k) e[j - 1] = t;
                    f = cs * s[j] + sn * e[j];
                    e[j] = cs * e[j] - sn * s[j];
                    g = sn * s[j + 1];
                    s[j + 1] = cs * s[j + 1];
                    for (int i = 0; i < n; ++i) {
                        t = cs * v(i, j) + sn * v(i, j + 1);
                        v(i, j + 1) = -sn * v(i, j) + cs * v(i, j + 1);
                        v(i, j) = t;
                    }
                    t = std::hypot(f, g);
                    cs = (t != 0.0) ? f / t : 1.0;
                    sn = (t != 0.0) ? g / t : 0.0;
                    s[j] = t;
                    f = cs * e[j] + sn * s[j + 1];
                    s[j + 1] = -sn * e[j] + cs * s[j + 1];
                    g = sn * e[j + 1];
                    e[j + 1] = cs * e[j + 1];
                    if (j < m - 1) {
                        for (int i = 0; i < m; ++i) {
                            t = cs * u(i, j) + sn * u(i, j + 1);
                            u(i, j + 1) = -sn * u(i, j) + cs * u(i, j + 1);
                            u(i, j) = t;
                        }
                    }
                }
                e[p - 2] = f;
                ++iter;
                break;
            }
            case 4: {  // converged: fix sign, then restore ordering
                if (s[k] <= 0.0) {
                    s[k] = (s[k] < 0.0 ? -s[k] : 0.0);
                    for (int i = 0; i <= pp_final; ++i) v(i, k) = -v(i, k);
                }
                while (k < pp_final) {
                    if (s[k] >= s[k + 1]) break;
                    std::swap(s[k], s[k + 1]);
                    if (k < n - 1)
                        for (int i = 0; i < n; ++i) std::swap(v(i, k), v(i, k + 1));
                    if (k < m - 1)
                        for (int i = 0; i < m; ++i) std::swap(u(i, k), u(i, k + 1));
                    ++k;
                }
                iter = 0;
                --p;
                break;
            }
        }
    }

    return FullSvd{std::move(u), std::move(s), std::move(v)};
}

// Thin SVD for any shape; transposes when m < n so the worker only sees
// tall matrices. Returns min(m,n) triplets.
FullSvd svd_dense(const Matrix& m) {
    if (m.rows() >= m.cols()) return svd_tall(m);
    FullSvd t = svd_tall(transpose(m));
    return FullSvd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

// Make each left singular vector's first nonzero component nonnegative,
// flipping the paired right vector to preserve the product.
void apply_sign_convention(Matrix& u, Matrix& v) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        double lead = 0.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            if (u(i, j) != 0.0) {
                lead = u(i, j);
                break;
            }
        }
        if (lead < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
        }
    }
}

Matrix take_columns(const Matrix& m, std::size_t t) {
    Matrix out(m.rows(), t);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < t; ++j) out(i, j) = m(i, j);
    return out;
}

// Orthonormalize the columns of a tall matrix (m >= n) via Householder QR;
// the returned Q has orthonormal columns even when the input is
// rank-deficient.
Matrix householder_q(Matrix a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<double> beta(n, 0.0);

    for (std::size_t k = 0; k < n; ++k) {
        double nrm = 0.0;
        for (std::size_t i = k; i < m; ++i) nrm = std::hypot(nrm, a(i, k));
        if (nrm == 0.0) continue;
        double alpha = (a(k, k) >= 0.0) ? -nrm : nrm;
        // v = x - alpha·e1, stored below the diagonal with v0 in place.
        a(k, k) -= alpha;
        double vnorm2 = 0.0;
        for (std::size_t i = k; i < m; ++i) vnorm2 += a(i, k) * a(i, k);
        if (vnorm2 == 0.0) {
            a(k, k) = alpha;
            continue;
        }
        beta[k] = 2.0 / vnorm2;
        for (std::size_t j = k + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += a(i, k) * a(i, j);
            const double t = beta[k] * dot;
            for (std::size_t i = k; i < m; ++i) a(i, j) -= t * a(i, k);
        }
        // Diagonal slot keeps the reflector; alpha itself is not needed.
    }

    // Back-accumulate Q = H_0·…·H_{n-1}·[e_0 … e_{n-1}].
    Matrix q(m, n);
    for (std::size_t j = 0; j < n; ++j) q(j, j) = 1.0;
    for (std::size_t k = n; k-- > 0;) {
        if (beta[k] == 0.0) continue;
        for (std::size_t j = k; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += a(i, k) * q(i, j);
            const double t = beta[k] * dot;
            for (std::size_t i = k; i < m; ++i) q(i, j) -= t * a(i, k);
        }
    }
    return q;
}

// Largest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps
// (values only). Intended for Ritz blocks of width <= 8.
double leading_eig_small(Matrix a) {
    const std::size_t n = a.rows();
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a(i, j)));
        if (off <= 1e-14 * (std::abs(a(0, 0)) + 1e-300)) break;

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
            }
        }
    }
    double best = a(0, 0);
    for (std::size_t i = 1; i < n; ++i) best = std::max(best, a(i, i));
    return best;
}

// Range finder + small dense SVD (Halko-style), deterministic via a fixed
// seed. Returns t triplets of m (d × k).
FullSvd svd_randomized(const Matrix& m, std::size_t t) {
    const std::size_t d = m.rows();
    const std::size_t k = m.cols();
    const std::size_t l = std::min(t + kOversampling, std::min(d, k));

    std::mt19937 gen(kRangeFinderSeed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix omega(k, l);
    for (double& x : omega.data()) x = gauss(gen);

    Matrix q = householder_q(matmul(m, omega));  // d × l
    for (int step = 0; step < kPowerSteps; ++step) {
        Matrix z = householder_q(matmul_tn(m, q));  // k × l
        q = householder_q(matmul(m, z));
    }

    const Matrix b = matmul_tn(q, m);  // l × k
    FullSvd small = svd_dense(b);
    Matrix u = matmul(q, take_columns(small.u, t));
    small.s.resize(t);
    return FullSvd{std::move(u), std::move(small.s), take_columns(small.v, t)};
}

void check_projector_basis(const Matrix& m, const Matrix& basis, bool along_rows,
                           const char* who) {
    const std::size_t need = along_rows ? m.cols() : m.rows();
    if (basis.rows() != need) {
        throw ShapeError(std::string(who) + ": basis has " + std::to_string(basis.rows()) +
                         " rows, expected " + std::to_string(need));
    }
    if (basis.cols() > basis.rows()) {
        throw InvalidInput(std::string(who) + ": basis has more columns than rows");
    }
    const double defect = orthonormality_defect(basis);
    if (defect > 1e-6) {
        throw InvalidInput(std::string(who) +
                           ": basis columns not orthonormal (defect " + std::to_string(defect) +
                           ")");
    }
}

}  // namespace

double frobenius_norm(const Matrix& m) {
    double sum = 0.0;
    for (double v : m.data()) sum += v * v;
    return std::sqrt(sum);
}

double spectral_norm(const Matrix& m, double tol, int max_iter) {
    if (m.empty() || m.all_zero()) {
        throw InvalidInput("spectral_norm: undefined for the zero matrix");
    }
    if (tol <= 0.0) {
        throw InvalidInput("spectral_norm: tolerance must be positive");
    }

    // Extreme magnitudes overflow/underflow the squared Gram products;
    // iterate on a rescaled copy and scale the result back.
    double max_abs = 0.0;
    for (double v : m.data()) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs > 1e100 || max_abs < 1e-100) {
        return max_abs * spectral_norm((1.0 / max_abs) * m, tol, max_iter);
    }

    // Blocked power iteration on the smaller of MᵀM and MMᵀ. A single
    // iteration vector converges like (σ₂/σ₁)²ᵏ, which stalls when the two
    // leading singular values nearly tie; a block of width b instead
    // converges like (σ_{b+1}/σ₁)²ᵏ. The Gram matrix is never materialized.
    const bool use_cols = m.cols() <= m.rows();
    const std::size_t n = use_cols ? m.cols() : m.rows();
    const std::size_t block = std::min<std::size_t>(8, n);

    auto gram_apply = [&](const Matrix& x) {
        return use_cols ? matmul_tn(m, matmul(m, x)) : matmul(m, matmul_tn(m, x));
    };

    std::mt19937 gen(0x517cc1b7u);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Matrix v(n, block);
    for (double& x : v.data()) x = unit(gen);
    v = householder_q(std::move(v));

    double sigma = 0.0;
    Matrix w = v;
    for (int iter = 0; iter < max_iter; ++iter) {
        w = gram_apply(v);

        // Leading Ritz value of the b×b projected problem.
        const Matrix ritz = matmul_tn(v, w);
        const double lambda = std::max(leading_eig_small(ritz), 0.0);
        const double sigma_new = std::sqrt(lambda);

        v = householder_q(w);

        if (iter > 0 && std::abs(sigma_new - sigma) <= tol * std::max(sigma_new, 1e-300)) {
            return sigma_new;
        }
        sigma = sigma_new;
    }

    // Residual of the leading Ritz pair for diagnostics.
    const Matrix r = gram_apply(v) - (sigma * sigma) * v;
    double residual = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) residual = std::hypot(residual, r(i, 0));
    throw ConvergenceError("spectral_norm: power iteration did not converge after " +
                               std::to_string(max_iter) + " iterations",
                           sigma, residual);
}

double stable_rank(const Matrix& m) {
    if (m.empty() || m.all_zero()) {
        throw InvalidInput("stable_rank: undefined for the zero matrix");
    }
    const double fro = frobenius_norm(m);
    const double sigma = spectral_norm(m);
    const double raw = (fro * fro) / (sigma * sigma);
    const double cap = static_cast<double>(std::min(m.rows(), m.cols()));
    return std::clamp(raw, 1.0, cap);
}

TruncatedSVD truncated_svd(const Matrix& m, std::size_t t) {
    const std::size_t min_dim = std::min(m.rows(), m.cols());
    if (t < 1 || t > min_dim) {
        throw InvalidInput("truncated_svd: rank " + std::to_string(t) +
                           " out of range [1, " + std::to_string(min_dim) + "]");
    }

    FullSvd full = (min_dim <= kDenseSvdCutoff) ? svd_dense(m) : svd_randomized(m, t);
    Matrix u = take_columns(full.u, t);
    Matrix v = take_columns(full.v, t);
    full.s.resize(t);
    apply_sign_convention(u, v);
    return TruncatedSVD{std::move(u), std::move(full.s), std::move(v)};
}

Matrix project_col_complement(const Matrix& m, const Matrix& u) {
    check_projector_basis(m, u, /*along_rows=*/false, "project_col_complement");
    return m - matmul(u, matmul_tn(u, m));
}

Matrix project_row_complement(const Matrix& m, const Matrix& v) {
    check_projector_basis(m, v, /*along_rows=*/true, "project_row_complement");
    return m - matmul_nt(matmul(m, v), v);
}

double orthonormality_defect(const Matrix& a) {
    const Matrix gram = matmul_tn(a, a);
    double worst = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(gram(i, j) - target));
        }
    }
    return worst;
}

}  // namespace lorakit
