#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clear/data.hpp"
#include "clear/encoder.hpp"

namespace clear {

/// Binary relevance judgments: query id -> {passage id -> grade}.
struct Qrels {
  std::map<std::string, std::map<std::string, int>> rel;

  /// Judgments restricted to a candidate passage set; queries whose relevant
  /// set becomes empty are dropped.
  Qrels restricted_to(const std::vector<const TextRecord*>& passages) const;
};

void save_qrels(const Qrels& qrels, const std::filesystem::path& path);
Qrels load_qrels(const std::filesystem::path& path);

/// Qrels derived from pair ids: every query is relevant to every passage
/// sharing its pair id, across languages.
Qrels qrels_from_pairs(const Corpus& corpus);

struct RankedItem {
  std::string passage_id;
  double score = 0.0;
};

/// Ranked candidate lists per query; descending score, ties by ascending id.
struct RetrievalRun {
  std::map<std::string, std::vector<RankedItem>> per_query;
};

void save_run(const RetrievalRun& run, const std::filesystem::path& path);

struct MetricResult {
  std::map<std::string, double> per_query;
  double mean = 0.0;
};

MetricResult ndcg_at_k(const RetrievalRun& run, const Qrels& qrels, int k);
MetricResult recall_at_k(const RetrievalRun& run, const Qrels& qrels, int k);

struct LanguageMetrics {
  double ndcg10 = 0.0;
  double recall1 = 0.0;
  double recall10 = 0.0;
  int n_queries = 0;
};

struct EvalReport {
  std::string direction;  // e.g. "en-lo": passage language, then query language
  std::map<std::string, LanguageMetrics> per_language;  // keyed by query language
  double mean_ndcg10 = 0.0;

  std::string to_json_string() const;
};

/// Embeds both sides through the adapter, scores every query against every
/// passage exhaustively, and computes the metrics at cutoff k.
EvalReport run_retrieval_eval(const AdapterParams& encoder,
                              const std::vector<const TextRecord*>& queries,
                              const std::vector<const TextRecord*>& passages,
                              const Qrels& qrels, int k, const std::string& direction,
                              RetrievalRun* run_out = nullptr);

struct AlignmentReport {
  /// Mean (1 - cos(query, gold English passage)) per query language.
  std::map<std::string, double> mean_gold_distance;
  /// 2D coordinates of every embedded record: id, lang, role, x, y.
  struct Point {
    std::string id, lang;
    Role role;
    double x = 0.0, y = 0.0;
  };
  std::vector<Point> projection;

  std::string projection_csv() const;
};

/// Gold-pair distances for every query language against English passages,
/// plus an exact top-2 PCA projection of all embeddings involved.
AlignmentReport alignment_report(const AdapterParams& encoder, const Corpus& corpus);

}  // namespace clear
