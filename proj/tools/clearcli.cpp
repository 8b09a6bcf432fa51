// Command-line front end wiring the toolkit into reproducible pipelines:
//   generate | mine | train | evaluate | ablate | sweep | report
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clear/pipeline.hpp"

namespace fs = std::filesystem;
using namespace clear;

namespace {

struct GenerateArgs {
  std::uint64_t seed = 7;
  std::string out_dir = "data";
  int n_pairs = 1000;
  double twin_fraction = 0.25;
};

struct MineArgs {
  std::string corpus;
  std::string train_in;
  std::string train_out;
  std::uint64_t seed = 7;
  int hidden = 128;
  int window_lo = 31;
  int window_hi = 100;
  int n_samples = 5;
  std::string checkpoint;  // optional: mine with a trained adapter
};

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;  // key=value
};

struct EvaluateArgs {
  std::string corpus;
  std::string qrels;
  std::string checkpoint;
  std::string directions = "en-lang,lang-en,en-en,lang-lang";
  int k = 10;
  std::string out;       // metrics.json path
  std::string dump_run;  // optional TREC-style run file prefix
};

struct AblateArgs {
  std::string config;
  std::string qrels;
  std::string out;
};

struct SweepArgs {
  std::string config;
  std::string qrels;
  std::vector<std::string> grid;
  std::string out;
};

struct ReportArgs {
  std::string corpus;
  std::string checkpoint;
  std::string out_prefix = "alignment";
};

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string token;
  std::istringstream ss(text);
  while (std::getline(ss, token, ','))
    if (!token.empty()) out.push_back(token);
  return out;
}

TrainConfig load_config_with_overrides(const std::string& path,
                                       const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ParseError("config " + path + ": malformed JSON");
  for (const auto& ov : overrides) {
    const auto pos = ov.find('=');
    if (pos == std::string::npos)
      throw ConfigError("override must look like key=value: " + ov);
    const std::string key = ov.substr(0, pos);
    const std::string value = ov.substr(pos + 1);
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
  return TrainConfig::from_json_string(j.dump());
}

int cmd_generate(const GenerateArgs& args) {
  SyntheticConfig cfg = default_synthetic_config(args.seed);
  cfg.n_pairs = args.n_pairs;
  cfg.hard_twin_fraction = args.twin_fraction;
  const GeneratePaths paths = run_generate(cfg, args.out_dir);
  std::cout << "corpus: " << paths.corpus.string() << "\n"
            << "train:  " << paths.train.string() << "\n"
            << "qrels:  " << paths.qrels.string() << "\n";
  return 0;
}

int cmd_mine(const MineArgs& args) {
  MiningPolicy policy;
  policy.window_lo = args.window_lo;
  policy.window_hi = args.window_hi;
  policy.n_samples = args.n_samples;
  policy.seed = args.seed;

  AdapterParams encoder;
  if (!args.checkpoint.empty()) {
    encoder = load_checkpoint(args.checkpoint).params;
  } else {
    const Corpus corpus = load_corpus(args.corpus);
    TrainConfig cfg;
    cfg.seed = args.seed;
    cfg.hidden_dim = args.hidden;
    encoder = initial_adapter(cfg, corpus.feature_dim());
  }
  run_mine(encoder, args.corpus, args.train_in, args.train_out, policy);
  std::cout << "mined negatives written to " << args.train_out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  const TrainConfig cfg = load_config_with_overrides(args.config, args.overrides);
  const TrainRunPaths paths = run_train(cfg);
  std::cout << "run dir:    " << paths.run_dir.string() << "\n"
            << "checkpoint: " << paths.checkpoint.string() << "\n"
            << "trainlog:   " << paths.trainlog.string() << "\n";
  return 0;
}

int cmd_evaluate(const EvaluateArgs& args) {
  const Corpus corpus = load_corpus(args.corpus);
  const Qrels qrels = load_qrels(args.qrels);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const auto groups = split_csv(args.directions);

  std::map<std::string, EvalReport> reports;
  if (args.dump_run.empty()) {
    reports = evaluate_directions(ckpt.params, corpus, qrels, groups, args.k);
  } else {
    // Re-run per direction keeping the ranked lists for the run files.
    std::set<std::string> targets;
    for (const auto& r : corpus.records())
      if (r.lang != "en") targets.insert(r.lang);
    for (const auto& dir :
         expand_directions(groups, {targets.begin(), targets.end()})) {
      std::vector<const TextRecord*> queries;
      for (const auto& lang : dir.query_langs) {
        auto part = corpus.select(lang, Role::kQuery);
        queries.insert(queries.end(), part.begin(), part.end());
      }
      RetrievalRun run;
      reports.emplace(dir.label,
                      run_retrieval_eval(ckpt.params, queries,
                                         corpus.select(dir.passage_lang, Role::kPassage),
                                         qrels, args.k, dir.label, &run));
      save_run(run, args.dump_run + "." + dir.label + ".run");
    }
  }

  const std::string out_json = metrics_to_json(reports, args.k);
  std::cout << "direction     mean nDCG@10\n";
  for (const auto& [label, report] : reports) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-13s %.4f\n", label.c_str(), report.mean_ndcg10);
    std::cout << buf;
  }
  if (!args.out.empty()) {
    std::ofstream os(args.out, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write metrics to " + args.out);
    os << out_json;
    std::cout << "metrics: " << args.out << "\n";
  } else {
    std::cout << out_json;
  }
  return 0;
}

int cmd_ablate(const AblateArgs& args) {
  const TrainConfig cfg = load_config_with_overrides(args.config, {});
  const AblateResult result = run_ablate(cfg, load_qrels(args.qrels));
  std::cout << result.to_table();
  if (!args.out.empty()) {
    std::ofstream os(args.out, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write ablation results to " + args.out);
    os << result.to_json_string();
    std::cout << "results: " << args.out << "\n";
  }
  return 0;
}

int cmd_sweep(const SweepArgs& args) {
  const TrainConfig cfg = load_config_with_overrides(args.config, {});
  std::vector<std::array<double, 3>> grid;
  for (const auto& cell : args.grid) grid.push_back(parse_lambda_triple(cell));
  const SweepResult result = run_sweep(cfg, load_qrels(args.qrels), grid);
  std::cout << result.to_table();
  if (!args.out.empty()) {
    std::ofstream os(args.out, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write sweep results to " + args.out);
    os << result.to_json_string();
    std::cout << "results: " << args.out << "\n";
  }
  return 0;
}

int cmd_report(const ReportArgs& args) {
  const Corpus corpus = load_corpus(args.corpus);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const AlignmentReport report = alignment_report(ckpt.params, corpus);

  nlohmann::json j{{"mean_gold_distance", report.mean_gold_distance}};
  const std::string json_path = args.out_prefix + ".json";
  const std::string csv_path = args.out_prefix + ".csv";
  std::ofstream(json_path, std::ios::binary | std::ios::trunc) << j.dump(2) << "\n";
  std::ofstream(csv_path, std::ios::binary | std::ios::trunc) << report.projection_csv();

  std::cout << "lang  mean gold-pair distance\n";
  for (const auto& [lang, dist] : report.mean_gold_distance) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-5s %.6f\n", lang.c_str(), dist);
    std::cout << buf;
  }
  std::cout << "report: " << json_path << ", projection: " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual embedding alignment toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic multilingual corpus");
  generate->add_option("--seed", gen.seed, "Generation seed");
  generate->add_option("--out", gen.out_dir, "Output directory");
  generate->add_option("--pairs", gen.n_pairs, "Query-passage pairs per language");
  generate->add_option("--twin-fraction", gen.twin_fraction,
                       "Fraction of pairs with a hard-twin distractor passage");

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine", "Mine hard negatives into a new train file");
  mine_cmd->add_option("--corpus", mine.corpus, "corpus.jsonl")->required();
  mine_cmd->add_option("--train", mine.train_in, "train.jsonl input")->required();
  mine_cmd->add_option("--out", mine.train_out, "augmented train.jsonl output")->required();
  mine_cmd->add_option("--seed", mine.seed, "Adapter init + sampling seed");
  mine_cmd->add_option("--hidden", mine.hidden, "Adapter hidden width (for the default encoder)");
  mine_cmd->add_option("--window-lo", mine.window_lo, "Lowest mined rank (inclusive)");
  mine_cmd->add_option("--window-hi", mine.window_hi, "Highest mined rank (inclusive)");
  mine_cmd->add_option("--samples", mine.n_samples, "Negatives per example");
  mine_cmd->add_option("--checkpoint", mine.checkpoint, "Mine with a trained checkpoint instead");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run one training configuration");
  train_cmd->add_option("--config", train.config, "JSON config file")->required();
  train_cmd->add_option("--set", train.overrides, "Config overrides, key=value")->take_all();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Retrieval metrics for a checkpoint");
  eval_cmd->add_option("--corpus", eval.corpus, "corpus.jsonl")->required();
  eval_cmd->add_option("--qrels", eval.qrels, "qrels.tsv")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint.bin")->required();
  eval_cmd->add_option("--directions", eval.directions,
                       "Comma list of en-lang,lang-en,en-en,lang-lang");
  eval_cmd->add_option("--k", eval.k, "Metric cutoff");
  eval_cmd->add_option("--out", eval.out, "metrics.json output path");
  eval_cmd->add_option("--dump-run", eval.dump_run, "Prefix for TREC-style run files");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare every loss variant");
  ablate_cmd->add_option("--config", ablate.config, "Base JSON config")->required();
  ablate_cmd->add_option("--qrels", ablate.qrels, "qrels.tsv")->required();
  ablate_cmd->add_option("--out", ablate.out, "ablate.json output path");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Loss-weight grid sweep");
  sweep_cmd->add_option("--config", sweep.config, "Base JSON config")->required();
  sweep_cmd->add_option("--qrels", sweep.qrels, "qrels.tsv")->required();
  sweep_cmd->add_option("--grid", sweep.grid, "Weight triples, e.g. 4,4,2 5,3,2")
      ->required()
      ->take_all();
  sweep_cmd->add_option("--out", sweep.out, "sweep.json output path");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Gold-pair alignment distances + 2D projection");
  report_cmd->add_option("--corpus", report.corpus, "corpus.jsonl")->required();
  report_cmd->add_option("--checkpoint", report.checkpoint, "checkpoint.bin")->required();
  report_cmd->add_option("--out-prefix", report.out_prefix, "Output file prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0; any parse failure is a usage error
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*mine_cmd) return cmd_mine(mine);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*ablate_cmd) return cmd_ablate(ablate);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*report_cmd) return cmd_report(report);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
