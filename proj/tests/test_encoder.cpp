#include <cmath>
#include <cstring>
#include <fstream>

#include <doctest.h>

#include "clear/encoder.hpp"
#include "clear/losses.hpp"
#include "clear/rng.hpp"
#include "support.hpp"

using namespace clear;
using testsupport::scratch_dir;

namespace {

Matrix random_features(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.next_gaussian();
  return m;
}

bool params_bits_equal(const AdapterParams& a, const AdapterParams& b) {
  return a.w1.data == b.w1.data && a.b1 == b.b1 && a.w2.data == b.w2.data && a.b2 == b.b2 &&
         std::memcmp(&a.alpha, &b.alpha, sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("init_params: deterministic, zero biases, bounded weights") {
  AdapterParams a = init_params(16, 32, Rng(7));
  AdapterParams b = init_params(16, 32, Rng(7));
  CHECK(params_bits_equal(a, b));

  for (double v : a.b1) CHECK(v == 0.0);
  for (double v : a.b2) CHECK(v == 0.0);
  CHECK(a.alpha == 1.0);

  const double bound = std::sqrt(6.0 / (16 + 32));
  for (double v : a.w1.data) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
  AdapterParams c = init_params(16, 32, Rng(8));
  CHECK_FALSE(params_bits_equal(a, c));
}

TEST_CASE("encode_batch: unit rows, residual identity, row independence") {
  Rng rng(3);
  AdapterParams p = init_params(12, 24, rng.substream("init"));
  Matrix x = random_features(9, 12, rng);
  Matrix y = encode_batch(p, x);
  for (int i = 0; i < y.rows; ++i) CHECK(std::abs(l2_norm(y.row(i)) - 1.0) < 1e-12);

  // Zero weights, alpha=1: output equals the (unit) input row.
  AdapterParams id;
  id.w1 = Matrix(4, 3);
  id.b1.assign(4, 0.0);
  id.w2 = Matrix(3, 4);
  id.b2.assign(3, 0.0);
  id.alpha = 1.0;
  Matrix unit = Matrix::from_rows({{0.6, 0.8, 0.0}});
  Matrix out = encode_batch(id, unit);
  CHECK(out.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(out.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  // Perturbing one input row changes only that output row.
  Matrix x2 = x;
  x2.at(4, 7) += 0.25;
  Matrix y2 = encode_batch(p, x2);
  for (int i = 0; i < y.rows; ++i) {
    bool same = true;
    for (int j = 0; j < y.cols; ++j) same = same && y.at(i, j) == y2.at(i, j);
    CHECK(same == (i != 4));
  }
}

TEST_CASE("encode_batch rejects rows that collapse to zero") {
  AdapterParams id;
  id.w1 = Matrix(2, 2);
  id.b1.assign(2, 0.0);
  id.w2 = Matrix(2, 2);
  id.b2.assign(2, 0.0);
  id.alpha = 1.0;  // v = x, so a zero input row collapses
  Matrix zero(1, 2);
  CHECK_THROWS_AS(encode_batch(id, zero), ZeroVectorError);
}

TEST_CASE("gelu derivative matches finite differences") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.841192).epsilon(1e-5));
  CHECK(gelu(-1.0) == doctest::Approx(-0.158808).epsilon(1e-4));
  for (double x : {-3.0, -0.7, 0.0, 0.3, 1.9, 4.2}) {
    const double eps = 1e-6;
    const double numeric = (gelu(x + eps) - gelu(x - eps)) / (2 * eps);
    CHECK(gelu_derivative(x) == doctest::Approx(numeric).epsilon(1e-7));
  }
}

TEST_CASE("encoder_backward: zero upstream gives zero grads; alpha grad identity") {
  Rng rng(5);
  AdapterParams p = init_params(8, 16, rng.substream("init"));
  Matrix x = random_features(6, 8, rng);
  Matrix zero(6, 8);
  EncoderBackward b = encoder_backward(p, x, zero);
  for (double v : b.param_grads.w1.data) CHECK(v == 0.0);
  for (double v : b.param_grads.w2.data) CHECK(v == 0.0);
  CHECK(b.param_grads.alpha == 0.0);
  for (double v : b.input_grads.data) CHECK(v == 0.0);

  // alpha gradient against a finite difference under a fixed linear loss
  // sum(y * u).
  Matrix u = random_features(6, 8, rng);
  auto loss_value = [&](const AdapterParams& params) {
    Matrix y = encode_batch(params, x);
    double acc = 0.0;
    for (std::size_t k = 0; k < y.data.size(); ++k) acc += y.data[k] * u.data[k];
    return acc;
  };
  EncoderBackward g = encoder_backward(p, x, u);
  AdapterParams up = p, down = p;
  up.alpha += 1e-6;
  down.alpha -= 1e-6;
  const double numeric = (loss_value(up) - loss_value(down)) / 2e-6;
  CHECK(g.param_grads.alpha == doctest::Approx(numeric).epsilon(1e-6));
}

TEST_CASE("full-model gradients match finite differences through the encoder") {
  Rng rng(9);
  const int d = 8, hidden = 6, bsz = 3, k = 2, kq = 2;

  AdapterParams p = init_params(d, hidden, rng.substream("init"));
  Matrix xq = random_features(bsz, d, rng);
  Matrix xp = random_features(bsz, d, rng);
  Matrix xpn = random_features(bsz * k, d, rng);
  Matrix xt = random_features(bsz, d, rng);
  Matrix xtn = random_features(bsz * kq, d, rng);

  auto batch_for = [&](const AdapterParams& params) {
    ContrastiveBatch b;
    b.q_en = encode_batch(params, xq);
    b.p_en_pos = encode_batch(params, xp);
    b.p_en_neg = encode_batch(params, xpn);
    b.q_tgt_pos = encode_batch(params, xt);
    b.q_tgt_neg = encode_batch(params, xtn);
    b.tau = 0.05;
    for (int i = 0; i < bsz; ++i) b.example_ids.push_back("e" + std::to_string(i));
    return b;
  };

  LossSpec spec;
  spec.weights = {0.4, 0.4, 0.2};
  const ContrastiveBatch base = batch_for(p);
  const LossFn loss = frozen_target_loss(spec, base);

  auto [base_value, emb_grads] = loss(base);
  (void)base_value;
  AdapterGrads analytic;
  analytic.w1 = Matrix(hidden, d);
  analytic.b1.assign(hidden, 0.0);
  analytic.w2 = Matrix(d, hidden);
  analytic.b2.assign(d, 0.0);
  analytic.alpha = 0.0;
  accumulate_param_grads(p, xq, emb_grads.q_en, analytic);
  accumulate_param_grads(p, xp, emb_grads.p_en_pos, analytic);
  accumulate_param_grads(p, xpn, emb_grads.p_en_neg, analytic);
  accumulate_param_grads(p, xt, emb_grads.q_tgt_pos, analytic);
  accumulate_param_grads(p, xtn, emb_grads.q_tgt_neg, analytic);

  auto value_at = [&](const AdapterParams& params) { return loss(batch_for(params)).first; };

  const double eps = 1e-5;
  double max_rel = 0.0;
  auto probe = [&](double* theta, double analytic_g) {
    const double saved = *theta;
    *theta = saved + eps;
    const double up = value_at(p);
    *theta = saved - eps;
    const double down = value_at(p);
    *theta = saved;
    const double numeric = (up - down) / (2 * eps);
    max_rel =
        std::max(max_rel, std::abs(analytic_g - numeric) / std::max(1.0, std::abs(numeric)));
  };
  for (std::size_t i = 0; i < p.w1.data.size(); ++i) probe(&p.w1.data[i], analytic.w1.data[i]);
  for (std::size_t i = 0; i < p.b1.size(); ++i) probe(&p.b1[i], analytic.b1[i]);
  for (std::size_t i = 0; i < p.w2.data.size(); ++i) probe(&p.w2.data[i], analytic.w2.data[i]);
  for (std::size_t i = 0; i < p.b2.size(); ++i) probe(&p.b2[i], analytic.b2[i]);
  probe(&p.alpha, analytic.alpha);
  CHECK(max_rel <= 1e-4);

  // Input gradients as well.
  EncoderBackward back = encoder_backward(p, xq, emb_grads.q_en);
  double max_rel_x = 0.0;
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < d; ++j) {
      const double saved = xq.at(i, j);
      xq.at(i, j) = saved + eps;
      const double up = value_at(p);
      xq.at(i, j) = saved - eps;
      const double down = value_at(p);
      xq.at(i, j) = saved;
      const double numeric = (up - down) / (2 * eps);
      max_rel_x = std::max(max_rel_x, std::abs(back.input_grads.at(i, j) - numeric) /
                                          std::max(1.0, std::abs(numeric)));
    }
  CHECK(max_rel_x <= 1e-4);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(13);
  Checkpoint c;
  c.params = init_params(10, 20, rng.substream("p"));
  c.moment1 = init_params(10, 20, rng.substream("m"));
  c.moment2 = init_params(10, 20, rng.substream("v"));
  c.step = 123;
  c.config_hash = 0xdeadbeefcafef00dULL;
  c.rng_key = 42;
  c.rng_counter = 17;

  auto dir = scratch_dir("ckpt");
  const auto path = dir / "model.bin";
  save_checkpoint(c, path);
  Checkpoint r = load_checkpoint(path);
  CHECK(params_bits_equal(c.params, r.params));
  CHECK(params_bits_equal(c.moment1, r.moment1));
  CHECK(params_bits_equal(c.moment2, r.moment2));
  CHECK(r.step == c.step);
  CHECK(r.config_hash == c.config_hash);
  CHECK(r.rng_key == c.rng_key);
  CHECK(r.rng_counter == c.rng_counter);

  // Byte-stable: saving the loaded checkpoint reproduces the file.
  const auto path2 = dir / "model2.bin";
  save_checkpoint(r, path2);
  CHECK(testsupport::read_file(path) == testsupport::read_file(path2));

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects truncation, bad magic and config-hash mismatch") {
  Rng rng(15);
  Checkpoint c;
  c.params = init_params(6, 4, rng);
  c.moment1 = c.params;
  c.moment2 = c.params;
  c.config_hash = 77;

  auto dir = scratch_dir("ckpt_bad");
  const auto path = dir / "model.bin";
  save_checkpoint(c, path);

  const std::string bytes = testsupport::read_file(path);
  const auto trunc_path = dir / "trunc.bin";
  std::ofstream(trunc_path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(trunc_path), IncompatibleCheckpointError);

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  const auto bad_path = dir / "bad.bin";
  std::ofstream(bad_path, std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_checkpoint(bad_path), IncompatibleCheckpointError);

  CHECK(load_checkpoint(path, 77).config_hash == 77);
  CHECK_THROWS_AS(load_checkpoint(path, 78), IncompatibleCheckpointError);

  std::filesystem::remove_all(dir);
}
