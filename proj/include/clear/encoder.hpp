#pragma once

#include <cstdint>
#include <filesystem>

#include "clear/matrix.hpp"
#include "clear/rng.hpp"

namespace clear {

/// Two-layer feed-forward adapter with a gated residual connection:
///   y_i = l2_normalize(W2 * gelu(W1 * x_i + b1) + b2 + alpha * x_i)
/// Input and output dimensions are equal so the residual path is valid.
struct AdapterParams {
  Matrix w1;  // H x D
  Vec b1;     // H
  Matrix w2;  // D x H
  Vec b2;     // D
  double alpha = 1.0;

  int input_dim() const { return w1.cols; }
  int hidden_dim() const { return w1.rows; }

  void validate() const;
};

/// Same shapes as AdapterParams; used for gradients and optimizer moments.
using AdapterGrads = AdapterParams;

/// Glorot-uniform weights, zero biases, alpha = 1. Deterministic in the rng.
AdapterParams init_params(int d_in, int hidden, Rng rng);

/// Maps n raw feature rows to n unit-norm embedding rows.
Matrix encode_batch(const AdapterParams& params, const Matrix& x);

struct EncoderBackward {
  AdapterGrads param_grads;
  Matrix input_grads;
};

/// Exact chain rule through normalization, residual and gelu for a loss
/// whose gradients with respect to encode_batch outputs are `upstream`.
EncoderBackward encoder_backward(const AdapterParams& params, const Matrix& x,
                                 const Matrix& upstream);

/// Accumulates only the parameter gradients (the common training path).
void accumulate_param_grads(const AdapterParams& params, const Matrix& x,
                            const Matrix& upstream, AdapterGrads& acc);

struct Checkpoint {
  AdapterParams params;
  AdapterGrads moment1;
  AdapterGrads moment2;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
};

/// Little-endian binary checkpoint: 16-byte magic, version field, fixed
/// scalar block, then length-prefixed named tensor records. Round-trips
/// bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Same as load_checkpoint but rejects a stored config hash different from
/// `expect_config_hash` (resume safety).
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t expect_config_hash);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace clear
