#pragma once

#include <cstdint>
#include <vector>

#include "clear/data.hpp"
#include "clear/encoder.hpp"

namespace clear {

/// Rank-window policy against false negatives: the most similar candidates
/// (ranks 1..window_lo-1 after gold exclusion) are never mined.
struct MiningPolicy {
  int window_lo = 31;
  int window_hi = 100;
  int n_samples = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fills neg_passage_ids: ranks all non-gold passages of the pool by cosine
/// similarity to the example's English query (descending, ties by ascending
/// id) and samples n_samples uniformly without replacement from the rank
/// window. Deterministic per example.
std::vector<TrainingExample> mine_passage_negatives(
    const AdapterParams& encoder, const std::vector<TrainingExample>& examples,
    const Corpus& corpus, const std::vector<const TextRecord*>& passage_pool,
    const MiningPolicy& policy);

/// Fills neg_query_ids: ranks non-parallel target-language queries of the
/// example's own language by similarity to the gold English passage.
std::vector<TrainingExample> mine_query_negatives(
    const AdapterParams& encoder, const std::vector<TrainingExample>& examples,
    const Corpus& corpus, const MiningPolicy& policy);

}  // namespace clear
