#include "lorakit/matrix.hpp"

#include <cmath>
#include <string>

#include "lorakit/errors.hpp"

namespace lorakit {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
        throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                         "x" + std::to_string(cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ > 0 ? init.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) {
        throw ShapeError("matrix initializer must be non-empty");
    }
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
        if (row.size() != cols_) {
            throw ShapeError("ragged matrix initializer");
        }
        data_.insert(data_.end(), row.begin(), row.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Matrix::all_zero() const noexcept {
    for (double v : data_) {
        if (v != 0.0) return false;
    }
    return true;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (!same_shape(*this, other)) {
        throw ShapeError("matrix add: shape mismatch " + shape_str(*this) + " vs " +
                         shape_str(other));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (!same_shape(*this, other)) {
        throw ShapeError("matrix subtract: shape mismatch " + shape_str(*this) + " vs " +
                         shape_str(other));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double scalar) {
    for (double& v : data_) v *= scalar;
    return *this;
}

bool same_shape(const Matrix& a, const Matrix& b) noexcept {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) + " * " +
                         shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t l = 0; l < a.cols(); ++l) {
            const double ail = a(i, l);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += ail * b(l, j);
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: row counts differ, " + shape_str(a) + "ᵀ * " +
                         shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t l = 0; l < a.rows(); ++l) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ali = a(l, i);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += ali * b(l, j);
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: column counts differ, " + shape_str(a) + " * " +
                         shape_str(b) + "ᵀ");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < a.cols(); ++l) s += a(i, l) * b(j, l);
            out(i, j) = s;
        }
    }
    return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    out += b;
    return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    out -= b;
    return out;
}

Matrix operator*(double scalar, const Matrix& m) {
    Matrix out = m;
    out *= scalar;
    return out;
}

void ensure_finite(const Matrix& m, const std::string& context) {
    if (!m.all_finite()) {
        throw InvalidInput(context + ": matrix contains non-finite values");
    }
}

}  // namespace lorakit
