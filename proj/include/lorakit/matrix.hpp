#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lorakit {

/// Dense row-major 2-D array of doubles. The single tensor carrier of the
/// library; everything is computed in fp64 regardless of on-disk precision.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> init);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

    std::span<const double> data() const noexcept { return {data_.data(), data_.size()}; }
    std::span<double> data() noexcept { return {data_.data(), data_.size()}; }

    bool all_finite() const noexcept;
    bool all_zero() const noexcept;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scalar);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

bool same_shape(const Matrix& a, const Matrix& b) noexcept;

Matrix transpose(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);     // a · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ · b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a · bᵀ

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double scalar, const Matrix& m);

/// Throws InvalidInput naming `context` if any element is NaN/Inf.
void ensure_finite(const Matrix& m, const std::string& context);

}  // namespace lorakit
