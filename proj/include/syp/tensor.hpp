#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "syp/rng.hpp"
#include "syp/util.hpp"

namespace syp {

// Dense row-major matrix of doubles. Vectors are [1 x n], scalars [1 x 1];
// keeping everything two-dimensional keeps the backward rules small.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) throw ContractError("Tensor: negative extent");
  }

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

  static Tensor full(int rows, int cols, double x) {
    Tensor t(rows, cols);
    for (auto& e : t.v_) e = x;
    return t;
  }

  static Tensor from(std::initializer_list<std::initializer_list<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r ? static_cast<int>(rows.begin()->size()) : 0;
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) throw ContractError("Tensor::from: ragged rows");
      int j = 0;
      for (double x : row) t.at(i, j++) = x;
      ++i;
    }
    return t;
  }

  static Tensor row(std::initializer_list<double> xs) {
    Tensor t(1, static_cast<int>(xs.size()));
    int j = 0;
    for (double x : xs) t.at(0, j++) = x;
    return t;
  }

  static Tensor randn(int rows, int cols, double sd, Rng& rng) {
    Tensor t(rows, cols);
    for (auto& e : t.v_) e = rng.normal(0.0, sd);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t numel() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& at(int i, int j) { return v_[static_cast<size_t>(i) * cols_ + j]; }
  double at(int i, int j) const { return v_[static_cast<size_t>(i) * cols_ + j]; }
  double& operator[](size_t i) { return v_[i]; }
  double operator[](size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
  }

  std::string shape_str() const { return str("[", rows_, "x", cols_, "]"); }

  void fill(double x) {
    for (auto& e : v_) e = x;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

}  // namespace syp
