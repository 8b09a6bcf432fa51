#include "clear/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace clear {

using nlohmann::json;

SyntheticConfig default_synthetic_config(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n_pairs = 1000;
  cfg.latent_dim = 16;
  cfg.feature_dim = 64;
  cfg.hard_twin_fraction = 0.25;
  cfg.seed = seed;
  cfg.languages = {
      {"en", 0.02, 101, 0.0},
      {"de", 0.30, 202, 0.6},  // high-resource stand-in: mild feature noise
      {"te", 1.00, 303, 0.6},  // low-resource stand-in: heavy feature noise
  };
  return cfg;
}

TrainConfig default_desk_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.languages = {"de", "te"};
  cfg.n_per_lang = 500;
  cfg.lr_peak = 1e-2;  // adapter trained from scratch in one short epoch
  return cfg;
}

MiningPolicy default_mining_policy(std::uint64_t seed) {
  MiningPolicy policy;
  policy.seed = seed;
  return policy;
}

std::filesystem::path resolve_out_root(const std::string& fallback) {
  if (const char* env = std::getenv("CLEAR_RUN_DIR"); env && *env)
    return std::filesystem::path(env);
  return std::filesystem::path(fallback);
}

std::string run_dir_name(const TrainConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(cfg.config_hash()));
  return std::string(buf) + "-s" + std::to_string(cfg.seed);
}

GeneratePaths run_generate(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  SyntheticCorpus synth = generate_synthetic_corpus(cfg);
  GeneratePaths paths{out_dir / "corpus.jsonl", out_dir / "train.jsonl", out_dir / "qrels.tsv"};
  save_corpus(synth.corpus, paths.corpus);
  save_examples(synth.examples, paths.train);
  save_qrels(qrels_from_pairs(synth.corpus), paths.qrels);
  return paths;
}

void run_mine(const AdapterParams& encoder, const std::filesystem::path& corpus_path,
              const std::filesystem::path& train_in, const std::filesystem::path& train_out,
              const MiningPolicy& policy) {
  const Corpus corpus = load_corpus(corpus_path);
  std::vector<TrainingExample> examples = load_examples(corpus, train_in);
  const auto passage_pool = corpus.select("en", Role::kPassage);
  examples = mine_passage_negatives(encoder, examples, corpus, passage_pool, policy);
  examples = mine_query_negatives(encoder, examples, corpus, policy);
  save_examples(examples, train_out);
}

TrainRunPaths run_train(const TrainConfig& cfg) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg.corpus_path);
  const std::vector<TrainingExample> examples = load_examples(corpus, cfg.train_path);
  TrainResult result = train_run(cfg, corpus, examples);

  TrainRunPaths paths;
  paths.run_dir = resolve_out_root(cfg.out_dir) / run_dir_name(cfg);
  std::filesystem::create_directories(paths.run_dir);
  paths.config = paths.run_dir / "config.json";
  paths.checkpoint_init = paths.run_dir / "checkpoint_init.bin";
  paths.checkpoint = paths.run_dir / "checkpoint.bin";
  paths.trainlog = paths.run_dir / "trainlog.jsonl";

  std::ofstream(paths.config, std::ios::binary | std::ios::trunc) << cfg.to_json_string() << '\n';
  save_checkpoint(result.initial, paths.checkpoint_init);
  save_checkpoint(result.final, paths.checkpoint);
  std::ofstream(paths.trainlog, std::ios::binary | std::ios::trunc) << result.log.to_jsonl();
  return paths;
}

std::vector<DirectionEval> expand_directions(const std::vector<std::string>& groups,
                                             const std::vector<std::string>& target_langs) {
  std::vector<DirectionEval> out;
  for (const auto& group : groups) {
    if (group == "en-lang") {
      out.push_back({"en-lang", "en", target_langs});
    } else if (group == "lang-en") {
      for (const auto& lang : target_langs) out.push_back({lang + "-en", lang, {"en"}});
    } else if (group == "en-en") {
      out.push_back({"en-en", "en", {"en"}});
    } else if (group == "lang-lang") {
      for (const auto& lang : target_langs) out.push_back({lang + "-" + lang, lang, {lang}});
    } else {
      throw ConfigError("unknown direction group: " + group +
                        " (expected en-lang, lang-en, en-en or lang-lang)");
    }
  }
  return out;
}

namespace {

std::vector<std::string> corpus_target_langs(const Corpus& corpus) {
  std::set<std::string> langs;
  for (const auto& r : corpus.records())
    if (r.lang != "en") langs.insert(r.lang);
  return {langs.begin(), langs.end()};
}

}  // namespace

std::map<std::string, EvalReport> evaluate_directions(const AdapterParams& encoder,
                                                      const Corpus& corpus, const Qrels& qrels,
                                                      const std::vector<std::string>& groups,
                                                      int k) {
  const auto targets = corpus_target_langs(corpus);
  std::map<std::string, EvalReport> out;
  for (const auto& dir : expand_directions(groups, targets)) {
    std::vector<const TextRecord*> queries;
    for (const auto& lang : dir.query_langs) {
      auto part = corpus.select(lang, Role::kQuery);
      queries.insert(queries.end(), part.begin(), part.end());
    }
    const auto passages = corpus.select(dir.passage_lang, Role::kPassage);
    out.emplace(dir.label,
                run_retrieval_eval(encoder, queries, passages, qrels, k, dir.label));
  }
  return out;
}

std::string metrics_to_json(const std::map<std::string, EvalReport>& reports, int k) {
  json dirs = json::object();
  for (const auto& [label, report] : reports) {
    json langs = json::object();
    for (const auto& [code, m] : report.per_language)
      langs[code] = json{{"ndcg10", m.ndcg10},
                         {"recall1", m.recall1},
                         {"recall10", m.recall10},
                         {"n_queries", m.n_queries}};
    dirs[label] = json{{"per_language", langs}, {"mean_ndcg10", report.mean_ndcg10}};
  }
  return json{{"k", k}, {"directions", dirs}}.dump(2) + "\n";
}

namespace {

struct VariantSpec {
  std::string name;
  LossKind kind;
  Ablation ablation;
};

const std::vector<VariantSpec>& ablation_variants() {
  static const std::vector<VariantSpec> v = {
      {"clear", LossKind::kClear, Ablation::kNone},
      {"no_kl", LossKind::kClear, Ablation::kNoKl},
      {"no_reversal", LossKind::kClear, Ablation::kNoReversal},
      {"no_bridge", LossKind::kClear, Ablation::kNoBridge},
      {"infonce_baseline", LossKind::kInfonceBaseline, Ablation::kNone},
  };
  return v;
}

struct DirectionSummary {
  double cross_mean = 0.0;
  std::map<std::string, double> cross_per_lang;
  double reverse_mean = 0.0;
  double en_mono = 0.0;
};

DirectionSummary summarize_directions(const AdapterParams& params, const Corpus& corpus,
                                      const Qrels& qrels, int k) {
  const auto reports =
      evaluate_directions(params, corpus, qrels, {"en-lang", "lang-en", "en-en"}, k);
  DirectionSummary s;
  s.cross_mean = reports.at("en-lang").mean_ndcg10;
  for (const auto& [lang, m] : reports.at("en-lang").per_language)
    s.cross_per_lang[lang] = m.ndcg10;
  double acc = 0.0;
  int n = 0;
  for (const auto& [label, report] : reports) {
    if (label.size() > 3 && label.ends_with("-en")) {
      acc += report.mean_ndcg10;
      ++n;
    }
  }
  s.reverse_mean = n ? acc / n : 0.0;
  s.en_mono = reports.at("en-en").mean_ndcg10;
  return s;
}

}  // namespace

std::string AblateResult::to_json_string() const {
  json rows_json = json::array();
  for (const auto& row : rows) {
    rows_json.push_back(json{{"variant", row.variant},
                             {"cross_mean_ndcg10", row.cross_mean_ndcg10},
                             {"cross_per_lang", row.cross_per_lang},
                             {"reverse_mean_ndcg10", row.reverse_mean_ndcg10},
                             {"en_mono_ndcg10", row.en_mono_ndcg10},
                             {"alignment_distance", row.alignment_distance},
                             {"checkpoint", row.checkpoint.string()}});
  }
  return json{{"initial",
               json{{"cross_mean_ndcg10", initial_cross_mean_ndcg10},
                    {"cross_per_lang", initial_cross_per_lang},
                    {"reverse_mean_ndcg10", initial_reverse_mean_ndcg10},
                    {"en_mono_ndcg10", initial_en_mono_ndcg10},
                    {"alignment_distance", initial_alignment_distance}}},
              {"rows", rows_json}}
             .dump(2) +
         "\n";
}

std::string AblateResult::to_table() const {
  std::ostringstream os;
  os << "variant            cross(en-lang)  reverse(lang-en)  en-en\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-18s %14.4f %17.4f %7.4f\n", "(untrained)",
                initial_cross_mean_ndcg10, initial_reverse_mean_ndcg10, initial_en_mono_ndcg10);
  os << buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %14.4f %17.4f %7.4f\n", row.variant.c_str(),
                  row.cross_mean_ndcg10, row.reverse_mean_ndcg10, row.en_mono_ndcg10);
    os << buf;
  }
  return os.str();
}

AblateResult run_ablate(const TrainConfig& base_cfg, const Qrels& qrels) {
  const Corpus corpus = load_corpus(base_cfg.corpus_path);
  const std::vector<TrainingExample> examples = load_examples(corpus, base_cfg.train_path);
  const int k = 10;

  AblateResult result;
  const AdapterParams init = initial_adapter(base_cfg, corpus.feature_dim());
  const DirectionSummary init_summary = summarize_directions(init, corpus, qrels, k);
  result.initial_cross_mean_ndcg10 = init_summary.cross_mean;
  result.initial_cross_per_lang = init_summary.cross_per_lang;
  result.initial_reverse_mean_ndcg10 = init_summary.reverse_mean;
  result.initial_en_mono_ndcg10 = init_summary.en_mono;
  result.initial_alignment_distance = alignment_report(init, corpus).mean_gold_distance;

  for (const auto& variant : ablation_variants()) {
    TrainConfig cfg = base_cfg;
    cfg.loss = variant.kind;
    cfg.ablation = variant.ablation;
    TrainRunPaths paths = run_train(cfg);
    const Checkpoint ckpt = load_checkpoint(paths.checkpoint);

    AblateRow row;
    row.variant = variant.name;
    row.checkpoint = paths.checkpoint;
    const DirectionSummary s = summarize_directions(ckpt.params, corpus, qrels, k);
    row.cross_mean_ndcg10 = s.cross_mean;
    row.cross_per_lang = s.cross_per_lang;
    row.reverse_mean_ndcg10 = s.reverse_mean;
    row.en_mono_ndcg10 = s.en_mono;
    row.alignment_distance = alignment_report(ckpt.params, corpus).mean_gold_distance;
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string SweepResult::to_json_string() const {
  json rows_json = json::array();
  for (const auto& row : rows)
    rows_json.push_back(json{{"lambda1", row.lambdas[0]},
                             {"lambda2", row.lambdas[1]},
                             {"lambda3", row.lambdas[2]},
                             {"cross_mean_ndcg10", row.cross_mean_ndcg10},
                             {"reverse_mean_ndcg10", row.reverse_mean_ndcg10}});
  return json{{"rows", rows_json}}.dump(2) + "\n";
}

std::string SweepResult::to_table() const {
  std::ostringstream os;
  os << "lambda1 lambda2 lambda3  cross(en-lang)  reverse(lang-en)\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%7.3f %7.3f %7.3f %15.4f %17.4f\n", row.lambdas[0],
                  row.lambdas[1], row.lambdas[2], row.cross_mean_ndcg10,
                  row.reverse_mean_ndcg10);
    os << buf;
  }
  return os.str();
}

SweepResult run_sweep(const TrainConfig& base_cfg, const Qrels& qrels,
                      const std::vector<std::array<double, 3>>& grid) {
  const Corpus corpus = load_corpus(base_cfg.corpus_path);
  SweepResult result;
  for (const auto& triple : grid) {
    const double sum = triple[0] + triple[1] + triple[2];
    if (!(sum > 0)) throw ConfigError("sweep: weight triple must have positive sum");
    TrainConfig cfg = base_cfg;
    cfg.loss = LossKind::kClear;
    cfg.ablation = Ablation::kNone;
    cfg.weights.lambda1 = triple[0] / sum;
    cfg.weights.lambda2 = triple[1] / sum;
    cfg.weights.lambda3 = triple[2] / sum;
    TrainRunPaths paths = run_train(cfg);
    const Checkpoint ckpt = load_checkpoint(paths.checkpoint);
    const DirectionSummary s = summarize_directions(ckpt.params, corpus, qrels, 10);
    SweepRow row;
    row.lambdas = {cfg.weights.lambda1, cfg.weights.lambda2, cfg.weights.lambda3};
    row.cross_mean_ndcg10 = s.cross_mean;
    row.reverse_mean_ndcg10 = s.reverse_mean;
    result.rows.push_back(row);
  }
  return result;
}

std::array<double, 3> parse_lambda_triple(const std::string& text) {
  std::array<double, 3> out{};
  std::istringstream ss(text);
  std::string token;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, token, ',') || token.empty())
      throw ConfigError("lambda triple must be three comma-separated numbers: " + text);
    try {
      out[i] = std::stod(token);
    } catch (const std::exception&) {
      throw ConfigError("bad number in lambda triple: " + token);
    }
  }
  if (ss.rdbuf()->in_avail() > 0 || std::getline(ss, token))
    throw ConfigError("lambda triple must have exactly three entries: " + text);
  return out;
}

}  // namespace clear
