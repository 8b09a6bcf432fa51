#include "clear/mining.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace clear {

void MiningPolicy::validate() const {
  if (window_lo < 1 || window_lo > window_hi)
    throw ConfigError("mining policy: need 1 <= window_lo <= window_hi");
  if (n_samples < 1) throw ConfigError("mining policy: n_samples must be >= 1");
}

namespace {

Matrix embed_records(const AdapterParams& encoder,
                     const std::vector<const TextRecord*>& records) {
  if (records.empty()) throw DegenerateDatasetError("mining: empty candidate pool");
  Matrix x(static_cast<int>(records.size()), static_cast<int>(records.front()->vector.size()));
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = 0; j < records.front()->vector.size(); ++j)
      x.at(static_cast<int>(i), static_cast<int>(j)) = records[i]->vector[j];
  return encode_batch(encoder, x);
}

Vec embed_one(const AdapterParams& encoder, const TextRecord& record) {
  Matrix x(1, static_cast<int>(record.vector.size()));
  for (std::size_t j = 0; j < record.vector.size(); ++j) x.at(0, static_cast<int>(j)) = record.vector[j];
  Matrix y = encode_batch(encoder, x);
  return Vec(y.row(0).begin(), y.row(0).end());
}

// Ranks candidates (excluding `excluded_id`) by descending similarity to the
// anchor, ties by ascending id, then samples n from the policy window.
std::vector<std::string> mine_for_anchor(const Vec& anchor, const Matrix& cand_embeds,
                                         const std::vector<const TextRecord*>& candidates,
                                         const std::string& excluded_id,
                                         const MiningPolicy& policy, Rng rng,
                                         const std::string& context) {
  struct Scored {
    double score;
    const std::string* id;
  };
  std::vector<Scored> scored;
  scored.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i]->id == excluded_id) continue;
    scored.push_back({dot(anchor, cand_embeds.row(static_cast<int>(i))), &candidates[i]->id});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return *a.id < *b.id;
  });

  const int pool_size = static_cast<int>(scored.size());
  const int lo = policy.window_lo;                      // 1-based rank
  const int hi = std::min(policy.window_hi, pool_size);
  const int window = hi - lo + 1;
  if (lo > pool_size || window < policy.n_samples)
    throw PoolTooSmallError("mining: candidate window [" + std::to_string(lo) + "," +
                            std::to_string(hi) + "] holds fewer than " +
                            std::to_string(policy.n_samples) + " items for " + context);

  // Partial Fisher-Yates over the window indices.
  std::vector<int> offsets(window);
  for (int i = 0; i < window; ++i) offsets[i] = i;
  std::vector<std::string> picked;
  picked.reserve(policy.n_samples);
  for (int i = 0; i < policy.n_samples; ++i) {
    const auto j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(window - i)));
    std::swap(offsets[i], offsets[j]);
    picked.push_back(*scored[static_cast<std::size_t>(lo - 1 + offsets[i])].id);
  }
  std::sort(picked.begin(), picked.end());  // canonical order within the sample
  return picked;
}

}  // namespace

std::vector<TrainingExample> mine_passage_negatives(
    const AdapterParams& encoder, const std::vector<TrainingExample>& examples,
    const Corpus& corpus, const std::vector<const TextRecord*>& passage_pool,
    const MiningPolicy& policy) {
  policy.validate();
  const Matrix pool_embeds = embed_records(encoder, passage_pool);
  const Rng root = Rng(policy.seed).substream("passage-negatives");

  std::vector<TrainingExample> out = examples;
  for (auto& ex : out) {
    const Vec anchor = embed_one(encoder, corpus.by_id(ex.q_en_id));
    ex.neg_passage_ids = mine_for_anchor(anchor, pool_embeds, passage_pool, ex.p_en_pos_id,
                                         policy, root.substream(ex.pair_id + "/" + ex.lang),
                                         "example " + ex.pair_id);
  }
  return out;
}

std::vector<TrainingExample> mine_query_negatives(
    const AdapterParams& encoder, const std::vector<TrainingExample>& examples,
    const Corpus& corpus, const MiningPolicy& policy) {
  policy.validate();
  const Rng root = Rng(policy.seed).substream("query-negatives");

  // Group query pools and their embeddings per target language.
  std::map<std::string, std::vector<const TextRecord*>> pools;
  std::map<std::string, Matrix> pool_embeds;
  for (const auto& ex : examples) {
    if (pools.count(ex.lang)) continue;
    pools[ex.lang] = corpus.select(ex.lang, Role::kQuery);
    pool_embeds[ex.lang] = embed_records(encoder, pools[ex.lang]);
  }

  std::vector<TrainingExample> out = examples;
  for (auto& ex : out) {
    const Vec anchor = embed_one(encoder, corpus.by_id(ex.p_en_pos_id));
    ex.neg_query_ids = mine_for_anchor(anchor, pool_embeds[ex.lang], pools[ex.lang], ex.q_tgt_id,
                                       policy, root.substream(ex.pair_id + "/" + ex.lang),
                                       "example " + ex.pair_id);
  }
  return out;
}

}  // namespace clear
