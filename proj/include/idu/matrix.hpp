// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace idu {

/// Dense row-major matrix of doubles.
///
/// Activations use the row-vector convention: a batch of B samples of width
/// n is a B x n matrix, and a layer with weight W (n x m) maps it to x * W.
/// This lets every weight keep the "input x output" shape in which the model
/// tables are written.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Takes ownership of `data`; throws ShapeError on length mismatch and
  /// NumericError on non-finite entries.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double value) noexcept;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  /// Bitwise equality of shape and payload.
  friend bool operator==(const Matrix& a, const Matrix& b) noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { Sigmoid, Tanh, Relu, SoftmaxRows };

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix activate(const Matrix& x, Activation kind);

// Accumulating kernels shared by the tape's forward and backward passes.
void matmul_into(const Matrix& a, const Matrix& b, Matrix& out);        // out  = a * b
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);      // out += a * b^T
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);      // out += a^T * b

double sigmoid(double x) noexcept;
void softmax_row(std::span<const double> in, std::span<double> out) noexcept;

bool all_finite(const Matrix& m) noexcept;
/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);
void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view what);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace idu
