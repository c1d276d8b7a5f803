#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace claimlm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Dense row-major matrix of doubles. Vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  std::string shape_string() const;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  Matrix transposed() const;
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (untaped) kernels. Accumulating variants add into `out`.
Matrix matmul(const Matrix& a, const Matrix& b);
void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& out);  // out += a * b
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);  // out += a * b^T
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);  // out += a^T * b

// Row-wise softmax of m / temperature. -inf entries map to exactly 0.
Matrix softmax_rows(const Matrix& m, double temperature = 1.0);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace claimlm
