#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "clear/matrix.hpp"
#include "clear/rng.hpp"

namespace clear {

enum class Role { kQuery, kPassage };

std::string role_name(Role r);
Role role_from_name(const std::string& s);

/// One corpus item: a precomputed feature vector with identity metadata.
/// pair_id links a query to its gold passage; distractor passages carry an
/// empty pair_id.
struct TextRecord {
  std::string id;
  std::string lang;
  Role role = Role::kQuery;
  std::string pair_id;
  Vec vector;
};

/// Immutable record store with id lookup.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<TextRecord> records);

  const std::vector<TextRecord>& records() const { return records_; }
  const TextRecord& by_id(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  int feature_dim() const;

  /// Records matching both filters, in corpus order.
  std::vector<const TextRecord*> select(const std::string& lang, Role role) const;

 private:
  std::vector<TextRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One aligned training unit, referencing corpus records by id.
struct TrainingExample {
  std::string pair_id;
  std::string lang;  // target language of q_tgt
  std::string q_en_id;
  std::string p_en_pos_id;
  std::string q_tgt_id;
  std::vector<std::string> neg_passage_ids;
  std::vector<std::string> neg_query_ids;
};

struct LanguageSpec {
  std::string code;
  double noise_sigma = 0.0;
  std::uint64_t map_seed = 0;
  /// 0 reproduces the shared base frame exactly (a language already aligned
  /// with English); larger values rotate the frame away from it.
  double map_blend = 0.0;
};

struct SyntheticConfig {
  int n_pairs = 1000;
  int latent_dim = 16;
  int feature_dim = 64;
  std::vector<LanguageSpec> languages;  // must contain "en"
  double hard_twin_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  const LanguageSpec& english() const;
  std::vector<LanguageSpec> targets() const;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<TrainingExample> examples;  // negatives unfilled
};

/// Deterministic synthetic multilingual corpus. Every pair shares one latent
/// point; each language observes it through its own (seeded) orthonormal
/// feature map plus language-specific noise. A configurable fraction of
/// latents gains a nearby twin emitted as an English distractor passage.
SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg);

/// Keeps the first example per gold passage id; order stable.
std::vector<TrainingExample> dedupe_by_passage(const std::vector<TrainingExample>& examples);

// JSONL / TSV serialization. All files UTF-8 with LF line endings.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void save_examples(const std::vector<TrainingExample>& examples,
                   const std::filesystem::path& path);

/// Loads examples and resolves every id reference against the corpus.
std::vector<TrainingExample> load_examples(const std::filesystem::path& corpus_path,
                                           const std::filesystem::path& train_path);
std::vector<TrainingExample> load_examples(const Corpus& corpus,
                                           const std::filesystem::path& train_path);

/// Raw feature matrices for one batch, prior to encoding.
struct FeatureBatch {
  Matrix q_en;
  Matrix p_en_pos;
  Matrix p_en_neg;   // (B*K) x D
  Matrix q_tgt_pos;
  Matrix q_tgt_neg;  // (B*K_q) x D
  std::vector<std::string> example_ids;  // pair ids
};

/// Shuffles examples with rng, chunks them into batches of `batch_size`, and
/// keeps a short final chunk only if it has >= 2 examples. All examples must
/// carry equally many mined negatives of each kind.
std::vector<FeatureBatch> make_batches(const std::vector<TrainingExample>& examples,
                                       const Corpus& corpus, int batch_size, Rng rng);

/// Takes exactly n_per_lang examples per language with pairwise-disjoint
/// pair_id sets, then shuffles deterministically. Languages are processed in
/// sorted code order.
std::vector<TrainingExample> mix_multilingual(
    const std::map<std::string, std::vector<TrainingExample>>& per_language,
    int n_per_lang, Rng rng);

/// Groups examples by target language.
std::map<std::string, std::vector<TrainingExample>> split_by_language(
    const std::vector<TrainingExample>& examples);

}  // namespace clear
