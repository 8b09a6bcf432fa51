#include "clear/matrix.hpp"

#include <cmath>

namespace clear {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rs) {
  Matrix m(static_cast<int>(rs.size()), rs.size() ? static_cast<int>(rs.begin()->size()) : 0);
  int i = 0;
  for (const auto& r : rs) {
    if (static_cast<int>(r.size()) != m.cols) throw ShapeError("from_rows: ragged rows");
    int j = 0;
    for (double x : r) m.at(i, j++) = x;
    ++i;
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vec l2_normalize(std::span<const double> v) {
  if (v.empty()) throw ShapeError("l2_normalize: empty vector");
  const double n = l2_norm(v);
  if (n < 1e-12) throw ZeroVectorError("l2_normalize: vector norm below 1e-12");
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] / n;
  return out;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    Vec r = l2_normalize(m.row(i));
    for (int j = 0; j < m.cols; ++j) out.at(i, j) = r[j];
  }
  return out;
}

Matrix cosine_sim_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw ShapeError("cosine_sim_matrix: column count mismatch");
  Matrix s(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) s.at(i, j) = dot(a.row(i), b.row(j));
  return s;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ShapeError("log_sum_exp: empty input");
  double m = v[0];
  for (double x : v)
    if (x > m) m = x;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

Matrix row_softmax(const Matrix& m, double tau) {
  if (!(tau > 0.0)) throw InvalidTemperatureError("row_softmax: tau must be > 0");
  Matrix out(m.rows, m.cols);
  Vec scaled(m.cols);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) scaled[j] = m.at(i, j) / tau;
    const double lse = log_sum_exp(scaled);
    for (int j = 0; j < m.cols; ++j) out.at(i, j) = std::exp(scaled[j] - lse);
  }
  return out;
}

double kl_divergence_row(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence_row: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) acc += p[j] * std::log(p[j] / q[j]);
  return acc;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw ShapeError("matmul_nt: inner dimension mismatch");
  Matrix out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) out.at(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul_nn: inner dimension mismatch");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ShapeError("matmul_tn: inner dimension mismatch");
  Matrix out(a.cols, b.cols);
  for (int i = 0; i < a.cols; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.rows; ++k) acc += a.at(k, i) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace clear
