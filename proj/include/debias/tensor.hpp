#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace debias {

/// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  void fill(double v);

  /// Rows `indices` gathered into a new tensor, in order.
  Tensor2 gather_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a (n×k) · b (k×m)
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// aᵀ (k×n)ᵀ · b (k×m) -> n×m
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
/// a (n×k) · bᵀ (m×k)ᵀ -> n×m
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);

/// Throws ShapeError with `what` prefixed unless shapes match.
void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what);

}  // namespace debias
