#pragma once

// Shared helpers for the test binaries. Everything here stays independent of
// the library's forward/backward code paths so it can serve as an oracle.

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clear/losses.hpp"
#include "clear/rng.hpp"

namespace clear::testsupport {

inline Matrix random_unit_rows(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < cols; ++j) {
      m.at(i, j) = rng.next_gaussian();
      norm2 += m.at(i, j) * m.at(i, j);
    }
    const double n = std::sqrt(norm2);
    for (int j = 0; j < cols; ++j) m.at(i, j) /= n;
  }
  return m;
}

inline ContrastiveBatch random_batch(int b, int d, int k, int k_q, double tau, Rng& rng) {
  ContrastiveBatch batch;
  batch.q_en = random_unit_rows(b, d, rng);
  batch.p_en_pos = random_unit_rows(b, d, rng);
  batch.p_en_neg = random_unit_rows(b * k, d, rng);
  batch.q_tgt_pos = random_unit_rows(b, d, rng);
  batch.q_tgt_neg = random_unit_rows(b * k_q, d, rng);
  batch.tau = tau;
  for (int i = 0; i < b; ++i) batch.example_ids.push_back("ex" + std::to_string(i));
  return batch;
}

/// Returns a 2D unit row whose dot products with e1=[1,0] equal `c`.
inline void set_row_by_cosine(Matrix& m, int row, double c) {
  m.at(row, 0) = c;
  m.at(row, 1) = std::sqrt(1.0 - c * c);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Process-unique scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("clear_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace clear::testsupport
