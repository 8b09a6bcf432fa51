#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include <doctest.h>

#include "clear/losses.hpp"
#include "clear/rng.hpp"
#include "support.hpp"

using namespace clear;
using testsupport::random_batch;
using testsupport::set_row_by_cosine;

namespace {

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool bits_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool bits_equal(const BatchGrads& a, const BatchGrads& b) {
  return bits_equal(a.q_en, b.q_en) && bits_equal(a.p_en_pos, b.p_en_pos) &&
         bits_equal(a.p_en_neg, b.p_en_neg) && bits_equal(a.q_tgt_pos, b.q_tgt_pos) &&
         bits_equal(a.q_tgt_neg, b.q_tgt_neg);
}

// B=1 batch with prescribed cosines between the anchor [1,0] and candidates.
ContrastiveBatch single_example_batch(double pos_cos, const std::vector<double>& neg_cos,
                                      double tau) {
  ContrastiveBatch b;
  b.q_en = Matrix::from_rows({{1.0, 0.0}});
  b.p_en_pos = Matrix(1, 2);
  set_row_by_cosine(b.p_en_pos, 0, pos_cos);
  b.p_en_neg = Matrix(static_cast<int>(neg_cos.size()), 2);
  for (std::size_t i = 0; i < neg_cos.size(); ++i)
    set_row_by_cosine(b.p_en_neg, static_cast<int>(i), neg_cos[i]);
  b.q_tgt_pos = Matrix::from_rows({{1.0, 0.0}});
  b.q_tgt_neg = Matrix(0, 2);
  b.tau = tau;
  b.example_ids = {"ex0"};
  return b;
}

LossFn term_fn(TermOutput (*fn)(const ContrastiveBatch&)) {
  return [fn](const ContrastiveBatch& b) {
    TermOutput t = fn(b);
    return std::pair<double, BatchGrads>(t.value, std::move(t.grads));
  };
}

TermOutput cl_reversed_term(const ContrastiveBatch& b) { return cl_reversed_forward(b); }
TermOutput nce_term(const ContrastiveBatch& b) { return nce_en_forward(b); }
TermOutput baseline_term(const ContrastiveBatch& b) { return baseline_infonce_forward(b); }

}  // namespace

TEST_CASE("nce_en closed forms") {
  // Two candidates with equal scores: ln 2.
  ContrastiveBatch b = single_example_batch(0.0, {0.0}, 1.0);
  b.p_en_pos = Matrix::from_rows({{0.0, 1.0}});
  b.p_en_neg = Matrix::from_rows({{0.0, 1.0}});
  CHECK(nce_en_forward(b).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Four in-batch candidates, all pairwise sims equal: ln 4 at any tau.
  ContrastiveBatch u;
  u.q_en = Matrix(4, 4);
  u.p_en_pos = Matrix(4, 4);
  for (int i = 0; i < 4; ++i) {
    u.p_en_pos.at(i, i) = 1.0;  // orthonormal passages
    for (int j = 0; j < 4; ++j) u.q_en.at(i, j) = 0.5;  // unit rows, sim 0.5 to all
  }
  u.p_en_neg = Matrix(0, 4);
  u.q_tgt_pos = u.q_en;
  u.q_tgt_neg = Matrix(0, 4);
  u.example_ids = {"a", "b", "c", "d"};
  u.tau = 0.37;
  TermOutput uniform = nce_en_forward(u);
  CHECK(uniform.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (double row : uniform.per_row)
    CHECK(std::abs(row - std::log(4.0)) < 1e-12);  // equals ln C iff scores equal

  // Sharp case: sims (0.9; 0.5, 0.4), tau = 0.05 -> ln(1 + e^-8 + e^-10).
  ContrastiveBatch sharp = single_example_batch(0.9, {0.5, 0.4}, 0.05);
  const double expect = std::log1p(std::exp(-8.0) + std::exp(-10.0));
  CHECK(std::abs(nce_en_forward(sharp).value - expect) < 1e-9);
  CHECK(expect == doctest::Approx(3.8086e-4).epsilon(1e-4));
}

TEST_CASE("nce_en degenerate batch") {
  ContrastiveBatch b = single_example_batch(0.5, {}, 1.0);
  CHECK_THROWS_AS(nce_en_forward(b), DegenerateBatchError);
}

TEST_CASE("cl_reversed closed forms and role symmetry") {
  // B=1, one query negative, both candidate sims 0: ln 2.
  ContrastiveBatch b;
  b.q_en = Matrix::from_rows({{1.0, 0.0}});
  b.p_en_pos = Matrix::from_rows({{1.0, 0.0}});  // anchor
  b.p_en_neg = Matrix(0, 2);
  b.q_tgt_pos = Matrix::from_rows({{0.0, 1.0}});
  b.q_tgt_neg = Matrix::from_rows({{0.0, 1.0}});
  b.tau = 1.0;
  b.example_ids = {"ex0"};
  CHECK(cl_reversed_forward(b).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // The reversed term is the same function as nce_en under role exchange.
  Rng rng(31);
  ContrastiveBatch a = random_batch(3, 8, 2, 2, 0.1, rng);
  ContrastiveBatch swapped = a;
  swapped.p_en_pos = a.q_en;       // anchor role
  swapped.q_tgt_pos = a.p_en_pos;  // positive role
  swapped.q_tgt_neg = a.p_en_neg;  // negative role
  CHECK(bits_equal(cl_reversed_forward(swapped).value, nce_en_forward(a).value));

  // B=2, no mined query negatives, identity similarity matrix, tau=0.05.
  ContrastiveBatch id;
  id.q_en = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.p_en_pos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.p_en_neg = Matrix(0, 2);
  id.q_tgt_pos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.q_tgt_neg = Matrix(0, 2);
  id.tau = 0.05;
  id.example_ids = {"x", "y"};
  const double expect = std::log1p(std::exp(-20.0));
  CHECK(std::abs(cl_reversed_forward(id).value - expect) < 1e-9);
  CHECK(expect == doctest::Approx(2.061e-9).epsilon(1e-3));
}

TEST_CASE("baseline closed forms and identity to nce under q_tgt == q_en") {
  ContrastiveBatch b;
  b.q_en = Matrix::from_rows({{1.0, 0.0}});
  b.p_en_pos = Matrix::from_rows({{0.0, 1.0}});
  b.p_en_neg = Matrix::from_rows({{0.0, 1.0}});
  b.q_tgt_pos = Matrix::from_rows({{1.0, 0.0}});
  b.q_tgt_neg = Matrix(0, 2);
  b.tau = 1.0;
  b.example_ids = {"ex0"};
  CHECK(baseline_infonce_forward(b).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(41);
  ContrastiveBatch same = random_batch(4, 6, 2, 2, 0.07, rng);
  same.q_tgt_pos = same.q_en;
  CHECK(bits_equal(baseline_infonce_forward(same).value, nce_en_forward(same).value));

  ContrastiveBatch id;
  id.q_en = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.p_en_pos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.p_en_neg = Matrix(0, 2);
  id.q_tgt_pos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  id.q_tgt_neg = Matrix(0, 2);
  id.tau = 0.05;
  id.example_ids = {"x", "y"};
  CHECK(std::abs(baseline_infonce_forward(id).value - std::log1p(std::exp(-20.0))) < 1e-9);
}

TEST_CASE("kl term: zero at identical distributions, closed-form row value") {
  Rng rng(51);
  ContrastiveBatch same = random_batch(5, 7, 1, 1, 0.05, rng);
  same.q_tgt_pos = same.q_en;
  CHECK(std::abs(kl_alignment_forward(same).value) < 1e-12);

  // D_en rows [0.5, 0.5]; D_cl rows [0.9, 0.1] and [0.1, 0.9]:
  // per-row KL = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = ln(5/3).
  const double tau = 0.05;
  const double c = tau * std::log(9.0);  // required score gap
  const double theta = std::acos(c / std::sqrt(2.0)) - std::numbers::pi / 4.0;
  ContrastiveBatch b;
  b.p_en_pos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const double h = std::sqrt(2.0) / 2.0;
  b.q_en = Matrix::from_rows({{h, h}, {h, h}});
  b.q_tgt_pos = Matrix::from_rows(
      {{std::cos(theta), std::sin(theta)}, {std::sin(theta), std::cos(theta)}});
  b.p_en_neg = Matrix(0, 2);
  b.q_tgt_neg = Matrix(0, 2);
  b.tau = tau;
  b.example_ids = {"x", "y"};
  TermOutput out = kl_alignment_forward(b);
  CHECK(std::abs(out.value - std::log(5.0 / 3.0)) < 1e-9);
  CHECK(out.value == doctest::Approx(0.5108256).epsilon(1e-6));
  CHECK(std::abs(out.per_row[0] - std::log(5.0 / 3.0)) < 1e-9);
}

TEST_CASE("kl term: non-negative on random batches, detached path has zero grads") {
  Rng rng(61);
  for (int t = 0; t < 200; ++t) {
    const int bsz = 2 + static_cast<int>(rng.next_below(7));
    ContrastiveBatch b = random_batch(bsz, 6, 1, 1, 0.05, rng);
    TermOutput out = kl_alignment_forward(b);
    CHECK(out.value >= 0.0);
    for (double g : out.grads.q_en.data) CHECK(g == 0.0);
    for (double g : out.grads.p_en_neg.data) CHECK(g == 0.0);
    for (double g : out.grads.q_tgt_neg.data) CHECK(g == 0.0);
  }
}

TEST_CASE("composite reduction identities are bitwise") {
  Rng rng(71);
  for (int t = 0; t < 10; ++t) {
    ContrastiveBatch b = random_batch(4, 8, 2, 2, t % 2 ? 0.05 : 1.0, rng);

    LossOutput only1 = clear_forward(b, {1.0, 0.0, 0.0});
    TermOutput nce = nce_en_forward(b);
    CHECK(bits_equal(only1.total, nce.value));
    CHECK(bits_equal(only1.grads, nce.grads));

    LossOutput only2 = clear_forward(b, {0.0, 1.0, 0.0});
    TermOutput cl = cl_reversed_forward(b);
    CHECK(bits_equal(only2.total, cl.value));
    CHECK(bits_equal(only2.grads, cl.grads));

    LossOutput only3 = clear_forward(b, {0.0, 0.0, 1.0});
    TermOutput kl = kl_alignment_forward(b);
    CHECK(bits_equal(only3.total, kl.value));
    CHECK(bits_equal(only3.grads, kl.grads));
  }
}

TEST_CASE("composite total equals weighted sum and reports unweighted terms") {
  Rng rng(81);
  ContrastiveBatch b = random_batch(5, 8, 2, 3, 0.05, rng);
  LossOutput out = clear_forward(b, {0.4, 0.4, 0.2});
  CHECK(std::abs(out.total - (0.4 * out.nce_en + 0.4 * out.cl + 0.2 * out.kl)) < 1e-12);
  CHECK(out.nce_en == doctest::Approx(nce_en_forward(b).value));
  CHECK(out.cl == doctest::Approx(cl_reversed_forward(b).value));
  CHECK(out.kl == doctest::Approx(kl_alignment_forward(b).value));

  // Documented arithmetic: weights (0.4,0.4,0.2) on term values (1,2,0.5).
  CHECK(0.4 * 1.0 + 0.4 * 2.0 + 0.2 * 0.5 == doctest::Approx(1.30).epsilon(1e-15));

  CHECK_THROWS_AS(clear_forward(b, {0.0, 0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(clear_forward(b, {-0.1, 0.6, 0.5}), ConfigError);
}

TEST_CASE("no-reversal composite uses the conventional direction") {
  Rng rng(91);
  ContrastiveBatch b = random_batch(4, 8, 2, 2, 0.05, rng);
  LossSpec spec;
  spec.weights = {0.0, 1.0, 0.0};
  spec.reversal = false;
  LossOutput out = composite_forward(b, spec);
  TermOutput conventional = baseline_infonce_forward(b);
  CHECK(bits_equal(out.total, conventional.value));
  CHECK(bits_equal(out.grads, conventional.grads));
}

TEST_CASE("permutation equivariance") {
  Rng rng(101);
  const int bsz = 5, d = 6, k = 2, kq = 3;
  ContrastiveBatch b = random_batch(bsz, d, k, kq, 0.05, rng);
  const std::vector<int> perm = {3, 0, 4, 1, 2};

  ContrastiveBatch p;
  p.q_en = Matrix(bsz, d);
  p.p_en_pos = Matrix(bsz, d);
  p.p_en_neg = Matrix(bsz * k, d);
  p.q_tgt_pos = Matrix(bsz, d);
  p.q_tgt_neg = Matrix(bsz * kq, d);
  p.tau = b.tau;
  p.example_ids.resize(bsz);
  for (int i = 0; i < bsz; ++i) {
    p.example_ids[i] = b.example_ids[perm[i]];
    for (int j = 0; j < d; ++j) {
      p.q_en.at(i, j) = b.q_en.at(perm[i], j);
      p.p_en_pos.at(i, j) = b.p_en_pos.at(perm[i], j);
      p.q_tgt_pos.at(i, j) = b.q_tgt_pos.at(perm[i], j);
    }
    for (int n = 0; n < k; ++n)
      for (int j = 0; j < d; ++j)
        p.p_en_neg.at(i * k + n, j) = b.p_en_neg.at(perm[i] * k + n, j);
    for (int n = 0; n < kq; ++n)
      for (int j = 0; j < d; ++j)
        p.q_tgt_neg.at(i * kq + n, j) = b.q_tgt_neg.at(perm[i] * kq + n, j);
  }

  LossOutput lb = clear_forward(b, {0.4, 0.4, 0.2});
  LossOutput lp = clear_forward(p, {0.4, 0.4, 0.2});
  CHECK(std::abs(lb.total - lp.total) < 1e-12);
  CHECK(std::abs(lb.nce_en - lp.nce_en) < 1e-12);
  CHECK(std::abs(lb.cl - lp.cl) < 1e-12);
  CHECK(std::abs(lb.kl - lp.kl) < 1e-12);
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < d; ++j) {
      CHECK(std::abs(lp.grads.q_en.at(i, j) - lb.grads.q_en.at(perm[i], j)) < 1e-12);
      CHECK(std::abs(lp.grads.p_en_pos.at(i, j) - lb.grads.p_en_pos.at(perm[i], j)) < 1e-12);
    }
}

TEST_CASE("temperature monotonicity when the positive leads every row") {
  Rng rng(111);
  ContrastiveBatch b = random_batch(4, 8, 2, 2, 1.0, rng);
  b.p_en_pos = b.q_en;       // sim(q_i, p_i) = 1, strictly the highest
  b.q_tgt_pos = b.p_en_pos;  // same property for the other terms
  ContrastiveBatch colder = b;
  colder.tau = 0.25;
  ContrastiveBatch coldest = b;
  coldest.tau = 0.05;
  for (auto* fn : {&nce_term, &cl_reversed_term, &baseline_term}) {
    const double warm = (*fn)(b).value;
    const double mid = (*fn)(colder).value;
    const double cold = (*fn)(coldest).value;
    CHECK(mid < warm);
    CHECK(cold < mid);
  }
}

TEST_CASE("per-row contrastive losses are positive; bounded by ln C when the positive leads") {
  Rng rng(121);
  for (int t = 0; t < 20; ++t) {
    ContrastiveBatch b = random_batch(3, 5, 2, 2, 0.2, rng);
    for (double row : nce_en_forward(b).per_row) CHECK(row > 0.0);

    // With the positive scoring weakly highest, -ln softmax <= ln C, with
    // equality exactly at uniform scores.
    ContrastiveBatch led = b;
    led.p_en_pos = led.q_en;  // sim(q_i, p_i) = 1 >= every other candidate
    const double ln_c = std::log(static_cast<double>(3 + 3 * 2));
    for (double row : nce_en_forward(led).per_row) {
      CHECK(row > 0.0);
      CHECK(row <= ln_c + 1e-12);
    }
  }
}

TEST_CASE("gradients match finite differences at the embedding level") {
  Rng rng(131);
  for (double tau : {0.05, 1.0}) {
    ContrastiveBatch b = random_batch(4, 8, 2, 2, tau, rng);
    CHECK(grad_check(term_fn(&nce_en_forward), b, 1e-5) <= 1e-4);
    CHECK(grad_check(term_fn(&cl_reversed_forward), b, 1e-5) <= 1e-4);
    CHECK(grad_check(term_fn(&baseline_infonce_forward), b, 1e-5) <= 1e-4);

    LossSpec kl_only;
    kl_only.weights = {0.0, 0.0, 1.0};
    CHECK(grad_check(frozen_target_loss(kl_only, b), b, 1e-5) <= 1e-4);

    LossSpec full;
    full.weights = {0.4, 0.4, 0.2};
    CHECK(grad_check(frozen_target_loss(full, b), b, 1e-5) <= 1e-4);
  }
}

TEST_CASE("bidirectional kl gradients match finite differences") {
  Rng rng(141);
  ContrastiveBatch b = random_batch(4, 6, 1, 1, 0.1, rng);
  LossSpec spec;
  spec.weights = {0.0, 0.0, 1.0};
  spec.kl_bidirectional = true;
  CHECK(grad_check(frozen_target_loss(spec, b), b, 1e-5) <= 1e-4);
}

TEST_CASE("grad_check rejects epsilon outside its window and non-finite losses") {
  Rng rng(151);
  ContrastiveBatch b = random_batch(2, 4, 1, 1, 0.5, rng);
  CHECK_THROWS_AS(grad_check(term_fn(&nce_en_forward), b, 1e-8), ConfigError);
  CHECK_THROWS_AS(grad_check(term_fn(&nce_en_forward), b, 1e-2), ConfigError);

  LossFn broken = [](const ContrastiveBatch&) {
    return std::pair<double, BatchGrads>(std::numeric_limits<double>::quiet_NaN(),
                                         BatchGrads{});
  };
  CHECK_THROWS_AS(grad_check(broken, b, 1e-5), NumericalInstabilityError);
}
