#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "clear/error.hpp"

namespace clear {

using Vec = std::vector<double>;

/// Dense row-major matrix of 64-bit floats.
///
/// Every reduction in this kernel accumulates left-to-right without
/// reordering, so results are bit-reproducible across runs.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs);

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  std::span<double> row(int i) {
    return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
  }
  std::span<const double> row(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Scales v to unit Euclidean norm. Throws ZeroVectorError if the norm is
/// below 1e-12.
Vec l2_normalize(std::span<const double> v);

/// Normalizes every row of m to unit norm.
Matrix normalize_rows(const Matrix& m);

/// result[i][j] = dot(A_i, B_j). Rows of A and B are expected unit-norm.
/// Satisfies cosine_sim_matrix(A,B) == transpose(cosine_sim_matrix(B,A))
/// bit-for-bit.
Matrix cosine_sim_matrix(const Matrix& a, const Matrix& b);

/// max(v) + ln(sum(exp(v_i - max(v)))); stable for entries up to 1e6.
double log_sum_exp(std::span<const double> v);

/// Softmax of each row of m/tau, computed through log_sum_exp.
Matrix row_softmax(const Matrix& m, double tau);

/// sum_i p_i * ln(p_i / q_i), both arguments distributions over the same
/// support with strictly positive q entries.
double kl_divergence_row(std::span<const double> p, std::span<const double> q);

// Fixed-order dense products used by the encoder. A is n x k throughout.
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a (n x k) * b^T (k x m), b is m x k
Matrix matmul_nn(const Matrix& a, const Matrix& b);  // a (n x k) * b (k x m)
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T (k x n) * b (n x m), a is n x k

}  // namespace clear
