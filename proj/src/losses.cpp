#include "clear/losses.hpp"

#include <cmath>
#include <utility>

namespace clear {

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw ConfigError("loss weights must be non-negative");
  if (lambda1 == 0 && lambda2 == 0 && lambda3 == 0)
    throw ConfigError("loss weights must not all be zero");
}

void ContrastiveBatch::validate() const {
  const int b = batch_size();
  if (b == 0) throw DegenerateBatchError("empty batch");
  if (p_en_pos.rows != b || q_tgt_pos.rows != b)
    throw ShapeError("positive matrices must have one row per example");
  const int d = q_en.cols;
  if (p_en_pos.cols != d || q_tgt_pos.cols != d ||
      (p_en_neg.rows > 0 && p_en_neg.cols != d) ||
      (q_tgt_neg.rows > 0 && q_tgt_neg.cols != d))
    throw ShapeError("embedding dimension mismatch across batch roles");
  if (p_en_neg.rows % b != 0 || q_tgt_neg.rows % b != 0)
    throw ShapeError("negative row count must be a multiple of the batch size");
  if (!(tau > 0.0)) throw InvalidTemperatureError("batch temperature must be > 0");
}

BatchGrads BatchGrads::zeros_like(const ContrastiveBatch& b) {
  BatchGrads g;
  g.q_en = Matrix(b.q_en.rows, b.q_en.cols);
  g.p_en_pos = Matrix(b.p_en_pos.rows, b.p_en_pos.cols);
  g.p_en_neg = Matrix(b.p_en_neg.rows, b.p_en_neg.cols);
  g.q_tgt_pos = Matrix(b.q_tgt_pos.rows, b.q_tgt_pos.cols);
  g.q_tgt_neg = Matrix(b.q_tgt_neg.rows, b.q_tgt_neg.cols);
  return g;
}

namespace {

void add_scaled_mat(Matrix& dst, const Matrix& src, double s) {
  for (std::size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += s * src.data[k];
}

void scale_mat(Matrix& dst, const Matrix& src, double s) {
  for (std::size_t k = 0; k < dst.data.size(); ++k) dst.data[k] = s * src.data[k];
}

}  // namespace

void BatchGrads::add_scaled(const BatchGrads& other, double scale) {
  add_scaled_mat(q_en, other.q_en, scale);
  add_scaled_mat(p_en_pos, other.p_en_pos, scale);
  add_scaled_mat(p_en_neg, other.p_en_neg, scale);
  add_scaled_mat(q_tgt_pos, other.q_tgt_pos, scale);
  add_scaled_mat(q_tgt_neg, other.q_tgt_neg, scale);
}

void BatchGrads::scale_from(const BatchGrads& other, double scale) {
  scale_mat(q_en, other.q_en, scale);
  scale_mat(p_en_pos, other.p_en_pos, scale);
  scale_mat(p_en_neg, other.p_en_neg, scale);
  scale_mat(q_tgt_pos, other.q_tgt_pos, scale);
  scale_mat(q_tgt_neg, other.q_tgt_neg, scale);
}

namespace {

struct ContrastiveCore {
  double loss = 0.0;
  std::vector<double> per_row;
  Matrix grad_anchor;  // B x D
  Matrix grad_pos;     // B x D
  Matrix grad_neg;     // (B*K) x D
};

// Shared -ln softmax machinery. For each row i the candidate list is all B
// positives followed by all flattened negatives; the positive of row i sits
// at candidate index i. Losses are averaged over rows.
ContrastiveCore softmax_contrastive(const Matrix& anchors, const Matrix& positives,
                                    const Matrix& negatives, double tau) {
  const int b = anchors.rows;
  const int n_neg = negatives.rows;
  const int n_cand = b + n_neg;
  if (b < 2 && n_neg == 0)
    throw DegenerateBatchError(
        "contrastive term needs a batch of >= 2 or mined negatives");

  ContrastiveCore out;
  out.per_row.resize(b);
  out.grad_anchor = Matrix(b, anchors.cols);
  out.grad_pos = Matrix(b, positives.cols);
  out.grad_neg = Matrix(n_neg, positives.cols);

  const double inv_b = 1.0 / b;
  Vec scores(n_cand);
  Vec probs(n_cand);
  for (int i = 0; i < b; ++i) {
    auto anchor = anchors.row(i);
    for (int j = 0; j < b; ++j) scores[j] = dot(anchor, positives.row(j)) / tau;
    for (int j = 0; j < n_neg; ++j) scores[b + j] = dot(anchor, negatives.row(j)) / tau;

    const double lse = log_sum_exp(scores);
    out.per_row[i] = lse - scores[i];

    for (int j = 0; j < n_cand; ++j) probs[j] = std::exp(scores[j] - lse);

    // dL/ds_j = (p_j - [j == i]) / B; chain through s_j = dot(a_i, c_j)/tau.
    for (int j = 0; j < n_cand; ++j) {
      const double coeff = (probs[j] - (j == i ? 1.0 : 0.0)) * inv_b / tau;
      std::span<const double> cand =
          j < b ? positives.row(j) : negatives.row(j - b);
      auto ga = out.grad_anchor.row(i);
      for (int k = 0; k < anchors.cols; ++k) ga[k] += coeff * cand[k];
      auto gc = j < b ? out.grad_pos.row(j) : out.grad_neg.row(j - b);
      for (int k = 0; k < anchors.cols; ++k) gc[k] += coeff * anchor[k];
    }
  }
  double acc = 0.0;
  for (double v : out.per_row) acc += v;
  out.loss = acc * inv_b;
  return out;
}

}  // namespace

TermOutput nce_en_forward(const ContrastiveBatch& batch) {
  batch.validate();
  ContrastiveCore core =
      softmax_contrastive(batch.q_en, batch.p_en_pos, batch.p_en_neg, batch.tau);
  TermOutput out;
  out.value = core.loss;
  out.per_row = std::move(core.per_row);
  out.grads = BatchGrads::zeros_like(batch);
  out.grads.q_en = std::move(core.grad_anchor);
  out.grads.p_en_pos = std::move(core.grad_pos);
  out.grads.p_en_neg = std::move(core.grad_neg);
  return out;
}

TermOutput cl_reversed_forward(const ContrastiveBatch& batch) {
  batch.validate();
  ContrastiveCore core =
      softmax_contrastive(batch.p_en_pos, batch.q_tgt_pos, batch.q_tgt_neg, batch.tau);
  TermOutput out;
  out.value = core.loss;
  out.per_row = std::move(core.per_row);
  out.grads = BatchGrads::zeros_like(batch);
  out.grads.p_en_pos = std::move(core.grad_anchor);
  out.grads.q_tgt_pos = std::move(core.grad_pos);
  out.grads.q_tgt_neg = std::move(core.grad_neg);
  return out;
}

TermOutput baseline_infonce_forward(const ContrastiveBatch& batch) {
  batch.validate();
  ContrastiveCore core =
      softmax_contrastive(batch.q_tgt_pos, batch.p_en_pos, batch.p_en_neg, batch.tau);
  TermOutput out;
  out.value = core.loss;
  out.per_row = std::move(core.per_row);
  out.grads = BatchGrads::zeros_like(batch);
  out.grads.q_tgt_pos = std::move(core.grad_anchor);
  out.grads.p_en_pos = std::move(core.grad_pos);
  out.grads.p_en_neg = std::move(core.grad_neg);
  return out;
}

TermOutput kl_alignment_with_target(const ContrastiveBatch& batch, const Matrix& target_rows) {
  batch.validate();
  const int b = batch.batch_size();
  const double tau = batch.tau;
  if (target_rows.rows != b || target_rows.cols != b)
    throw ShapeError("kl_alignment_with_target: target must be B x B");

  // S_cl[i][j] = sim(p_en_j, q_tgt_i).
  Matrix s_cl = cosine_sim_matrix(batch.q_tgt_pos, batch.p_en_pos);
  Matrix d_cl = row_softmax(s_cl, tau);

  TermOutput out;
  out.per_row.resize(b);
  out.grads = BatchGrads::zeros_like(batch);

  double acc = 0.0;
  for (int i = 0; i < b; ++i) {
    out.per_row[i] = kl_divergence_row(target_rows.row(i), d_cl.row(i));
    acc += out.per_row[i];
  }
  const double inv_b = 1.0 / b;
  out.value = acc * inv_b;

  // dL/dS_cl[i][j] = (D_cl - D_en)[i][j] / (B * tau).
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      const double g = (d_cl.at(i, j) - target_rows.at(i, j)) * inv_b / tau;
      auto q = batch.q_tgt_pos.row(i);
      auto p = batch.p_en_pos.row(j);
      auto gq = out.grads.q_tgt_pos.row(i);
      auto gp = out.grads.p_en_pos.row(j);
      for (int k = 0; k < batch.q_en.cols; ++k) {
        gq[k] += g * p[k];
        gp[k] += g * q[k];
      }
    }
  }
  return out;
}

TermOutput kl_alignment_forward(const ContrastiveBatch& batch, bool bidirectional) {
  batch.validate();
  const int b = batch.batch_size();
  const double tau = batch.tau;

  // S_en[i][j] = sim(q_en_i, p_en_j) is the (detached) target.
  Matrix d_en = row_softmax(cosine_sim_matrix(batch.q_en, batch.p_en_pos), tau);
  TermOutput out = kl_alignment_with_target(batch, d_en);

  if (bidirectional) {
    Matrix d_cl = row_softmax(cosine_sim_matrix(batch.q_tgt_pos, batch.p_en_pos), tau);
    const double inv_b = 1.0 / b;
    // dL/dS_en[i][k] = P_k (ln r_k - sum_j P_j ln r_j) / (B * tau) per row,
    // with P the D_en row and r_j = P_j / Q_j.
    for (int i = 0; i < b; ++i) {
      double mean_lr = 0.0;
      for (int j = 0; j < b; ++j)
        mean_lr += d_en.at(i, j) * std::log(d_en.at(i, j) / d_cl.at(i, j));
      for (int j = 0; j < b; ++j) {
        const double lr = std::log(d_en.at(i, j) / d_cl.at(i, j));
        const double g = d_en.at(i, j) * (lr - mean_lr) * inv_b / tau;
        auto q = batch.q_en.row(i);
        auto p = batch.p_en_pos.row(j);
        auto gq = out.grads.q_en.row(i);
        auto gp = out.grads.p_en_pos.row(j);
        for (int k = 0; k < batch.q_en.cols; ++k) {
          gq[k] += g * p[k];
          gp[k] += g * q[k];
        }
      }
    }
  }
  return out;
}

LossOutput clear_forward(const ContrastiveBatch& batch, const LossWeights& w) {
  LossSpec spec;
  spec.kind = LossKind::kClear;
  spec.weights = w;
  return composite_forward(batch, spec);
}

namespace {

LossOutput composite_impl(const ContrastiveBatch& batch, const LossSpec& spec,
                          const Matrix* frozen_kl_target) {
  LossOutput out;
  out.grads = BatchGrads::zeros_like(batch);

  if (spec.kind == LossKind::kInfonceBaseline) {
    TermOutput t = baseline_infonce_forward(batch);
    out.total = t.value;
    out.grads = std::move(t.grads);
    return out;
  }

  spec.weights.validate();
  TermOutput nce = nce_en_forward(batch);
  TermOutput cl = spec.reversal ? cl_reversed_forward(batch)
                                : baseline_infonce_forward(batch);
  TermOutput kl = frozen_kl_target
                      ? kl_alignment_with_target(batch, *frozen_kl_target)
                      : kl_alignment_forward(batch, spec.kl_bidirectional);
  out.nce_en = nce.value;
  out.cl = cl.value;
  out.kl = kl.value;

  // Accumulate only active terms, assigning the first so that a single
  // nonzero lambda reproduces the single-term forward bit-for-bit.
  struct Entry {
    double lambda;
    const TermOutput* term;
  };
  const Entry entries[] = {{spec.weights.lambda1, &nce},
                           {spec.weights.lambda2, &cl},
                           {spec.weights.lambda3, &kl}};
  bool first = true;
  for (const Entry& e : entries) {
    if (e.lambda == 0.0) continue;
    if (first) {
      out.total = e.lambda * e.term->value;
      out.grads.scale_from(e.term->grads, e.lambda);
      first = false;
    } else {
      out.total += e.lambda * e.term->value;
      out.grads.add_scaled(e.term->grads, e.lambda);
    }
  }
  return out;
}

}  // namespace

LossOutput composite_forward(const ContrastiveBatch& batch, const LossSpec& spec) {
  return composite_impl(batch, spec, nullptr);
}

LossFn frozen_target_loss(const LossSpec& spec, const ContrastiveBatch& base) {
  const bool needs_freeze = spec.kind == LossKind::kClear &&
                            spec.weights.lambda3 != 0.0 && !spec.kl_bidirectional;
  if (!needs_freeze) {
    return [spec](const ContrastiveBatch& b) {
      LossOutput out = composite_forward(b, spec);
      return std::pair<double, BatchGrads>(out.total, std::move(out.grads));
    };
  }
  Matrix target = row_softmax(cosine_sim_matrix(base.q_en, base.p_en_pos), base.tau);
  return [spec, target](const ContrastiveBatch& b) {
    LossOutput out = composite_impl(b, spec, &target);
    return std::pair<double, BatchGrads>(out.total, std::move(out.grads));
  };
}

double grad_check(const LossFn& loss_fn, const ContrastiveBatch& batch, double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3]");

  auto [value, analytic] = loss_fn(batch);
  if (!std::isfinite(value))
    throw NumericalInstabilityError("grad_check: non-finite loss at the base point");

  ContrastiveBatch probe = batch;
  Matrix ContrastiveBatch::*fields[] = {
      &ContrastiveBatch::q_en, &ContrastiveBatch::p_en_pos,
      &ContrastiveBatch::p_en_neg, &ContrastiveBatch::q_tgt_pos,
      &ContrastiveBatch::q_tgt_neg};
  Matrix BatchGrads::*grad_fields[] = {
      &BatchGrads::q_en, &BatchGrads::p_en_pos, &BatchGrads::p_en_neg,
      &BatchGrads::q_tgt_pos, &BatchGrads::q_tgt_neg};

  double max_rel = 0.0;
  for (int f = 0; f < 5; ++f) {
    Matrix& m = probe.*(fields[f]);
    const Matrix& g = analytic.*(grad_fields[f]);
    for (std::size_t k = 0; k < m.data.size(); ++k) {
      const double saved = m.data[k];
      m.data[k] = saved + epsilon;
      const double up = loss_fn(probe).first;
      m.data[k] = saved - epsilon;
      const double down = loss_fn(probe).first;
      m.data[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalInstabilityError("grad_check: non-finite loss under perturbation");
      const double numeric = (up - down) / (2.0 * epsilon);
      const double rel = std::abs(g.data[k] - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace clear
