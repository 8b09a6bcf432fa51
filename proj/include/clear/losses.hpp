#pragma once

#include <functional>
#include <string>
#include <vector>

#include "clear/matrix.hpp"

namespace clear {

/// Weights of the three composite-loss terms. Defaults follow the published
/// configuration (0.4 / 0.4 / 0.2).
struct LossWeights {
  double lambda1 = 0.4;  // English contrastive term
  double lambda2 = 0.4;  // cross-lingual term
  double lambda3 = 0.2;  // distribution-alignment term

  void validate() const;
};

/// One training batch of unit-norm embeddings.
///
/// Negatives are stored flattened: row i*K + j of p_en_neg is the j-th mined
/// negative passage of example i, and likewise for q_tgt_neg.
struct ContrastiveBatch {
  Matrix q_en;       // B x D English queries
  Matrix p_en_pos;   // B x D gold English passages
  Matrix p_en_neg;   // (B*K) x D mined negative passages
  Matrix q_tgt_pos;  // B x D parallel target-language queries
  Matrix q_tgt_neg;  // (B*K_q) x D mined negative target-language queries
  double tau = 0.05;
  std::vector<std::string> example_ids;

  int batch_size() const { return q_en.rows; }
  int passage_negs_per_example() const {
    return q_en.rows > 0 ? p_en_neg.rows / q_en.rows : 0;
  }
  int query_negs_per_example() const {
    return q_en.rows > 0 ? q_tgt_neg.rows / q_en.rows : 0;
  }

  void validate() const;
};

/// Gradients with respect to every embedding field of a ContrastiveBatch.
struct BatchGrads {
  Matrix q_en;
  Matrix p_en_pos;
  Matrix p_en_neg;
  Matrix q_tgt_pos;
  Matrix q_tgt_neg;

  static BatchGrads zeros_like(const ContrastiveBatch& b);
  void add_scaled(const BatchGrads& other, double scale);
  void scale_from(const BatchGrads& other, double scale);
};

/// Value and gradients of a single loss term.
struct TermOutput {
  double value = 0.0;
  std::vector<double> per_row;  // per-example losses before averaging
  BatchGrads grads;
};

/// Composite loss output: total, unweighted per-term values, and the
/// lambda-weighted gradient sum.
struct LossOutput {
  double total = 0.0;
  double nce_en = 0.0;
  double cl = 0.0;
  double kl = 0.0;
  BatchGrads grads;
};

/// Selects which objective a training run optimizes.
enum class LossKind { kClear, kInfonceBaseline };

struct LossSpec {
  LossKind kind = LossKind::kClear;
  LossWeights weights;
  /// true: the cross-lingual term anchors on the gold passage and scores
  /// target-language query candidates. false: conventional direction (query
  /// anchor over passage candidates), used by the no-reversal ablation.
  bool reversal = true;
  /// When set, the distribution-alignment term also propagates gradients
  /// through the English similarity matrix instead of treating it as a
  /// fixed target. Off by default.
  bool kl_bidirectional = false;
};

/// English contrastive term: anchors q_en_i over all in-batch gold passages
/// plus every mined negative passage in the batch.
TermOutput nce_en_forward(const ContrastiveBatch& batch);

/// Reversed cross-lingual term: anchors the gold English passage over all
/// in-batch target-language queries plus every mined negative query.
TermOutput cl_reversed_forward(const ContrastiveBatch& batch);

/// Distribution-alignment term: KL between the row-softmaxed English
/// similarity matrix (detached target) and the cross-lingual one.
TermOutput kl_alignment_forward(const ContrastiveBatch& batch,
                                bool bidirectional = false);

/// Same term against an explicit row-distribution target. Equivalent to
/// kl_alignment_forward when the target is the batch's own softmaxed English
/// similarity matrix; used to hold the detached target fixed while probing
/// gradients numerically.
TermOutput kl_alignment_with_target(const ContrastiveBatch& batch, const Matrix& target_rows);

/// Baseline objective: anchors the target-language query over gold English
/// passages plus mined negative passages. Also serves as the conventional
/// cross-lingual direction in the no-reversal ablation.
TermOutput baseline_infonce_forward(const ContrastiveBatch& batch);

LossOutput clear_forward(const ContrastiveBatch& batch, const LossWeights& w);

/// Dispatches on LossSpec: composite (with optional ablations) or baseline.
LossOutput composite_forward(const ContrastiveBatch& batch, const LossSpec& spec);

using LossFn = std::function<std::pair<double, BatchGrads>(const ContrastiveBatch&)>;

/// Central finite differences over every embedding coordinate of the batch.
/// Returns max |analytic - numeric| / max(1, |numeric|). Perturbations are
/// applied to the unit-norm inputs as free variables (no re-normalization).
double grad_check(const LossFn& loss_fn, const ContrastiveBatch& batch, double epsilon);

/// Loss closure suitable for grad_check: evaluates the spec's objective with
/// the distribution-alignment target frozen at `base`, so the stop-gradient
/// contract holds under numeric perturbation.
LossFn frozen_target_loss(const LossSpec& spec, const ContrastiveBatch& base);

}  // namespace clear
