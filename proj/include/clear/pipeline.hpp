#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clear/data.hpp"
#include "clear/eval.hpp"
#include "clear/mining.hpp"
#include "clear/training.hpp"

namespace clear {

/// Reference synthetic benchmark: 1,000 pairs, three languages (English, a
/// well-aligned high-resource target, a noisy low-resource target), 64-dim
/// features over a 16-dim latent space, and a quarter of the pairs carrying
/// a hard-twin distractor passage.
SyntheticConfig default_synthetic_config(std::uint64_t seed);

/// Training defaults for the synthetic benchmark. Multilingual over both
/// target languages with disjoint pair slices.
TrainConfig default_desk_train_config(std::uint64_t seed);

MiningPolicy default_mining_policy(std::uint64_t seed);

/// Output root: CLEAR_RUN_DIR environment variable when set, else fallback.
std::filesystem::path resolve_out_root(const std::string& fallback);

/// Run directory name derived from the config hash and seed.
std::string run_dir_name(const TrainConfig& cfg);

struct GeneratePaths {
  std::filesystem::path corpus;
  std::filesystem::path train;
  std::filesystem::path qrels;
};

/// Writes corpus.jsonl, train.jsonl (negatives unfilled) and qrels.tsv.
GeneratePaths run_generate(const SyntheticConfig& cfg, const std::filesystem::path& out_dir);

/// Mines both negative kinds with the given adapter and writes the augmented
/// train file. Inputs are never modified.
void run_mine(const AdapterParams& encoder, const std::filesystem::path& corpus_path,
              const std::filesystem::path& train_in, const std::filesystem::path& train_out,
              const MiningPolicy& policy);

struct TrainRunPaths {
  std::filesystem::path run_dir;
  std::filesystem::path config;
  std::filesystem::path checkpoint_init;
  std::filesystem::path checkpoint;
  std::filesystem::path trainlog;
};

/// Full training command: writes config.json, both checkpoints and the
/// step log into the run directory.
TrainRunPaths run_train(const TrainConfig& cfg);

/// Expands direction groups (en-lang, lang-en, en-en, lang-lang) into
/// concrete (passage language, query language) evaluations over the corpus's
/// target languages.
struct DirectionEval {
  std::string label;         // e.g. "en-de", "de-en", "en-en"
  std::string passage_lang;
  std::vector<std::string> query_langs;
};

std::vector<DirectionEval> expand_directions(const std::vector<std::string>& groups,
                                             const std::vector<std::string>& target_langs);

/// Evaluates a checkpointed adapter over the requested direction groups.
/// Returns one report per concrete direction, keyed by label.
std::map<std::string, EvalReport> evaluate_directions(const AdapterParams& encoder,
                                                      const Corpus& corpus, const Qrels& qrels,
                                                      const std::vector<std::string>& groups,
                                                      int k);

/// Serializes direction reports into the metrics.json layout.
std::string metrics_to_json(const std::map<std::string, EvalReport>& reports, int k);

/// Ablation grid of the composite objective plus the baseline; one row per
/// variant, all trained from the same initialization and data.
struct AblateRow {
  std::string variant;  // clear | no_kl | no_reversal | no_bridge | infonce_baseline
  double cross_mean_ndcg10 = 0.0;                    // en-passage / target-query
  std::map<std::string, double> cross_per_lang;      // by query language
  double reverse_mean_ndcg10 = 0.0;                  // target-passage / en-query
  double en_mono_ndcg10 = 0.0;
  std::map<std::string, double> alignment_distance;  // gold-pair cosine distance
  std::filesystem::path checkpoint;
};

struct AblateResult {
  // Metrics of the shared initialization, before any training.
  double initial_cross_mean_ndcg10 = 0.0;
  std::map<std::string, double> initial_cross_per_lang;
  double initial_reverse_mean_ndcg10 = 0.0;
  double initial_en_mono_ndcg10 = 0.0;
  std::map<std::string, double> initial_alignment_distance;
  std::vector<AblateRow> rows;

  std::string to_json_string() const;
  std::string to_table() const;
};

AblateResult run_ablate(const TrainConfig& base_cfg, const Qrels& qrels);

struct SweepRow {
  std::array<double, 3> lambdas{};  // normalized
  double cross_mean_ndcg10 = 0.0;   // en-passage / target-query
  double reverse_mean_ndcg10 = 0.0; // target-passage / en-query
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string to_json_string() const;
  std::string to_table() const;
};

/// Trains one composite run per weight triple (normalized to sum 1) and
/// evaluates both cross-lingual directions.
SweepResult run_sweep(const TrainConfig& base_cfg, const Qrels& qrels,
                      const std::vector<std::array<double, 3>>& grid);

/// Parses "a,b,c" into a weight triple.
std::array<double, 3> parse_lambda_triple(const std::string& text);

}  // namespace clear
