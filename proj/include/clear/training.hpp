#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clear/data.hpp"
#include "clear/encoder.hpp"
#include "clear/losses.hpp"

namespace clear {

/// Named ablation presets; each changes exactly one aspect of the composite.
enum class Ablation { kNone, kNoKl, kNoReversal, kNoBridge };

std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& s);

struct TrainConfig {
  LossKind loss = LossKind::kClear;
  Ablation ablation = Ablation::kNone;
  LossWeights weights;          // 0.4 / 0.4 / 0.2
  double tau = 0.05;
  bool kl_bidirectional = false;
  int batch_size = 64;
  double lr_peak = 5e-5;
  double warmup_ratio = 0.05;
  int epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int hidden_dim = 128;
  std::vector<std::string> languages;  // target languages; empty = all in the train set
  int n_per_lang = 0;                  // multilingual slice size; 0 = use everything
  std::string corpus_path;
  std::string train_path;
  std::string out_dir = "runs";

  void validate() const;

  /// The effective loss the run optimizes, after applying the ablation.
  LossSpec loss_spec() const;

  /// FNV-1a hash of the canonical JSON form; identifies runs and checkpoints.
  std::uint64_t config_hash() const;

  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
  static TrainConfig from_json_file(const std::filesystem::path& path);
};

struct TrainStepRecord {
  std::uint64_t step = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;
  double nce_en = 0.0;
  double cl = 0.0;
  double kl = 0.0;
};

struct TrainLog {
  std::vector<TrainStepRecord> steps;
  std::string checkpoint_path;

  std::string to_jsonl() const;
};

/// Cosine schedule with linear warmup. warmup = round(warmup_ratio * total).
double lr_at_step(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg);

struct AdamState {
  AdapterGrads m;
  AdapterGrads v;
  std::uint64_t step = 0;  // completed updates

  static AdamState zeros_like(const AdapterParams& p);
};

/// Decoupled weight-decay adaptive update, in place.
void adamw_step(AdapterParams& params, const AdapterGrads& grads, AdamState& state,
                double lr, const TrainConfig& cfg);

struct TrainResult {
  Checkpoint initial;
  Checkpoint final;
  TrainLog log;
};

/// One full optimization run over a mined, deduped dataset. Deterministic in
/// (config, seed).
TrainResult train_run(const TrainConfig& cfg, const Corpus& corpus,
                      const std::vector<TrainingExample>& examples);

/// Applies the config's language selection: filters to cfg.languages, mixes
/// disjoint slices when more than one language is requested, then dedupes.
std::vector<TrainingExample> select_training_set(const TrainConfig& cfg,
                                                 const std::vector<TrainingExample>& examples);

/// The adapter state a run starts from (shared with mining).
AdapterParams initial_adapter(const TrainConfig& cfg, int feature_dim);

}  // namespace clear
