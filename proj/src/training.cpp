#include "clear/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace clear {

using nlohmann::json;

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoKl: return "no_kl";
    case Ablation::kNoReversal: return "no_reversal";
    case Ablation::kNoBridge: return "no_bridge";
  }
  throw ConfigError("unreachable ablation value");
}

Ablation ablation_from_name(const std::string& s) {
  if (s == "none") return Ablation::kNone;
  if (s == "no_kl") return Ablation::kNoKl;
  if (s == "no_reversal") return Ablation::kNoReversal;
  if (s == "no_bridge") return Ablation::kNoBridge;
  throw ConfigError("unknown ablation: " + s);
}

void TrainConfig::validate() const {
  if (!(lr_peak > 0)) throw ConfigError("train config: lr_peak must be > 0");
  if (warmup_ratio < 0 || warmup_ratio >= 1)
    throw ConfigError("train config: warmup_ratio must lie in [0,1)");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train config: batch_size must be >= 2");
  if (!(tau > 0)) throw ConfigError("train config: tau must be > 0");
  if (hidden_dim < 1) throw ConfigError("train config: hidden_dim must be >= 1");
  if (loss == LossKind::kClear) weights.validate();
}

LossSpec TrainConfig::loss_spec() const {
  LossSpec spec;
  spec.kind = loss;
  spec.weights = weights;
  spec.kl_bidirectional = kl_bidirectional;
  switch (ablation) {
    case Ablation::kNone: break;
    case Ablation::kNoKl: spec.weights.lambda3 = 0.0; break;
    case Ablation::kNoReversal: spec.reversal = false; break;
    case Ablation::kNoBridge: spec.weights.lambda1 = 0.0; break;
  }
  return spec;
}

namespace {

const char* loss_name(LossKind k) {
  return k == LossKind::kClear ? "clear" : "infonce_baseline";
}

LossKind loss_from_name(const std::string& s) {
  if (s == "clear") return LossKind::kClear;
  if (s == "infonce_baseline") return LossKind::kInfonceBaseline;
  throw ConfigError("unknown loss: " + s);
}

json config_to_json(const TrainConfig& c) {
  return json{{"loss", loss_name(c.loss)},
              {"ablation", ablation_name(c.ablation)},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"lambda3", c.weights.lambda3},
              {"tau", c.tau},
              {"kl_bidirectional", c.kl_bidirectional},
              {"batch_size", c.batch_size},
              {"lr_peak", c.lr_peak},
              {"warmup_ratio", c.warmup_ratio},
              {"epochs", c.epochs},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"hidden_dim", c.hidden_dim},
              {"languages", c.languages},
              {"n_per_lang", c.n_per_lang},
              {"corpus_path", c.corpus_path},
              {"train_path", c.train_path},
              {"out_dir", c.out_dir}};
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t TrainConfig::config_hash() const {
  // The output location does not affect results; keep it out of the
  // experiment identity.
  json j = config_to_json(*this);
  j.erase("out_dir");
  return fnv1a64(j.dump());
}

std::string TrainConfig::to_json_string() const { return config_to_json(*this).dump(); }

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("train config: malformed JSON");
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");

  static const std::set<std::string> known = {
      "loss",       "ablation",     "lambda1",    "lambda2",   "lambda3",
      "tau",        "kl_bidirectional", "batch_size", "lr_peak", "warmup_ratio",
      "epochs",     "beta1",        "beta2",      "eps",       "weight_decay",
      "seed",       "hidden_dim",   "languages",  "n_per_lang", "corpus_path",
      "train_path", "out_dir"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("train config: unknown key '" + key + "'");

  TrainConfig c;
  try {
    if (j.contains("loss")) c.loss = loss_from_name(j["loss"].get<std::string>());
    if (j.contains("ablation")) c.ablation = ablation_from_name(j["ablation"].get<std::string>());
    if (j.contains("lambda1")) c.weights.lambda1 = j["lambda1"].get<double>();
    if (j.contains("lambda2")) c.weights.lambda2 = j["lambda2"].get<double>();
    if (j.contains("lambda3")) c.weights.lambda3 = j["lambda3"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("kl_bidirectional")) c.kl_bidirectional = j["kl_bidirectional"].get<bool>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr_peak")) c.lr_peak = j["lr_peak"].get<double>();
    if (j.contains("warmup_ratio")) c.warmup_ratio = j["warmup_ratio"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("eps")) c.eps = j["eps"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("hidden_dim")) c.hidden_dim = j["hidden_dim"].get<int>();
    if (j.contains("languages")) c.languages = j["languages"].get<std::vector<std::string>>();
    if (j.contains("n_per_lang")) c.n_per_lang = j["n_per_lang"].get<int>();
    if (j.contains("corpus_path")) c.corpus_path = j["corpus_path"].get<std::string>();
    if (j.contains("train_path")) c.train_path = j["train_path"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_string(ss.str());
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : steps) {
    json j{{"step", r.step}, {"lr", r.lr},     {"total", r.total},
           {"nce_en", r.nce_en}, {"cl", r.cl}, {"kl", r.kl}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

double lr_at_step(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0) throw InvalidScheduleError("lr_at_step: total_steps must be > 0");
  if (step > total_steps) throw InvalidScheduleError("lr_at_step: step beyond total_steps");
  const auto warmup = static_cast<std::uint64_t>(
      std::llround(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup)
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return 0.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState AdamState::zeros_like(const AdapterParams& p) {
  AdamState s;
  auto zeros = [&] {
    AdapterGrads g;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1.assign(p.b1.size(), 0.0);
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2.assign(p.b2.size(), 0.0);
    g.alpha = 0.0;
    return g;
  };
  s.m = zeros();
  s.v = zeros();
  return s;
}

namespace {

void adamw_update(double* theta, const double* g, double* m, double* v, std::size_t n,
                  double lr, double bc1, double bc2, const TrainConfig& cfg,
                  const char* tensor_name) {
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(g[k]))
      throw NumericalInstabilityError(std::string("adamw_step: non-finite gradient in ") +
                                      tensor_name);
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
    const double m_hat = m[k] / bc1;
    const double v_hat = v[k] / bc2;
    theta[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[k]);
  }
}

}  // namespace

void adamw_step(AdapterParams& params, const AdapterGrads& grads, AdamState& state,
                double lr, const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  adamw_update(params.w1.data.data(), grads.w1.data.data(), state.m.w1.data.data(),
               state.v.w1.data.data(), params.w1.data.size(), lr, bc1, bc2, cfg, "w1");
  adamw_update(params.b1.data(), grads.b1.data(), state.m.b1.data(), state.v.b1.data(),
               params.b1.size(), lr, bc1, bc2, cfg, "b1");
  adamw_update(params.w2.data.data(), grads.w2.data.data(), state.m.w2.data.data(),
               state.v.w2.data.data(), params.w2.data.size(), lr, bc1, bc2, cfg, "w2");
  adamw_update(params.b2.data(), grads.b2.data(), state.m.b2.data(), state.v.b2.data(),
               params.b2.size(), lr, bc1, bc2, cfg, "b2");
  adamw_update(&params.alpha, &grads.alpha, &state.m.alpha, &state.v.alpha, 1, lr, bc1, bc2,
               cfg, "alpha");
}

std::vector<TrainingExample> select_training_set(const TrainConfig& cfg,
                                                 const std::vector<TrainingExample>& examples) {
  std::vector<TrainingExample> selected;
  if (cfg.languages.empty()) {
    selected = examples;
  } else {
    std::set<std::string> wanted(cfg.languages.begin(), cfg.languages.end());
    for (const auto& ex : examples)
      if (wanted.count(ex.lang)) selected.push_back(ex);
  }
  auto by_lang = split_by_language(selected);
  if (by_lang.size() > 1) {
    if (cfg.n_per_lang < 1)
      throw ConfigError("train config: n_per_lang required for multilingual training");
    selected = mix_multilingual(by_lang, cfg.n_per_lang, Rng(cfg.seed).substream("multilingual"));
  }
  return dedupe_by_passage(selected);
}

AdapterParams initial_adapter(const TrainConfig& cfg, int feature_dim) {
  return init_params(feature_dim, cfg.hidden_dim, Rng(cfg.seed).substream("adapter-init"));
}

TrainResult train_run(const TrainConfig& cfg, const Corpus& corpus,
                      const std::vector<TrainingExample>& examples) {
  cfg.validate();
  const std::vector<TrainingExample> train_set = select_training_set(cfg, examples);
  if (train_set.size() < 2)
    throw DegenerateDatasetError("train_run: fewer than 2 training examples after selection");

  const Rng root(cfg.seed);
  AdapterParams params = initial_adapter(cfg, corpus.feature_dim());
  AdamState opt = AdamState::zeros_like(params);
  const LossSpec spec = cfg.loss_spec();

  TrainResult result;
  result.initial.params = params;
  result.initial.moment1 = opt.m;
  result.initial.moment2 = opt.v;
  result.initial.step = 0;
  result.initial.config_hash = cfg.config_hash();
  result.initial.rng_key = root.key();
  result.initial.rng_counter = root.counter();

  // Epochs share the chunking rule, so every epoch yields the same count.
  const auto batches_per_epoch =
      make_batches(train_set, corpus, cfg.batch_size, root.substream("batches").substream(0))
          .size();
  const std::uint64_t total_steps =
      static_cast<std::uint64_t>(cfg.epochs) * batches_per_epoch;
  if (total_steps == 0) throw DegenerateDatasetError("train_run: zero optimization steps");

  std::uint64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_batches(train_set, corpus, cfg.batch_size,
                                root.substream("batches").substream(epoch));
    for (const auto& fb : batches) {
      ContrastiveBatch batch;
      batch.q_en = encode_batch(params, fb.q_en);
      batch.p_en_pos = encode_batch(params, fb.p_en_pos);
      batch.p_en_neg = encode_batch(params, fb.p_en_neg);
      batch.q_tgt_pos = encode_batch(params, fb.q_tgt_pos);
      batch.q_tgt_neg = encode_batch(params, fb.q_tgt_neg);
      batch.tau = cfg.tau;
      batch.example_ids = fb.example_ids;

      LossOutput loss = composite_forward(batch, spec);

      AdapterGrads grads = AdamState::zeros_like(params).m;
      accumulate_param_grads(params, fb.q_en, loss.grads.q_en, grads);
      accumulate_param_grads(params, fb.p_en_pos, loss.grads.p_en_pos, grads);
      if (fb.p_en_neg.rows > 0)
        accumulate_param_grads(params, fb.p_en_neg, loss.grads.p_en_neg, grads);
      accumulate_param_grads(params, fb.q_tgt_pos, loss.grads.q_tgt_pos, grads);
      if (fb.q_tgt_neg.rows > 0)
        accumulate_param_grads(params, fb.q_tgt_neg, loss.grads.q_tgt_neg, grads);

      const double lr = lr_at_step(global_step, total_steps, cfg);
      try {
        adamw_step(params, grads, opt, lr, cfg);
      } catch (const NumericalInstabilityError& e) {
        throw NumericalInstabilityError(std::string(e.what()) + " at step " +
                                        std::to_string(global_step + 1));
      }
      ++global_step;

      TrainStepRecord rec;
      rec.step = global_step;
      rec.lr = lr;
      rec.total = loss.total;
      rec.nce_en = loss.nce_en;
      rec.cl = loss.cl;
      rec.kl = loss.kl;
      if (!std::isfinite(loss.total))
        throw NumericalInstabilityError("train_run: non-finite loss at step " +
                                        std::to_string(global_step));
      result.log.steps.push_back(rec);
    }
  }

  result.final.params = std::move(params);
  result.final.moment1 = std::move(opt.m);
  result.final.moment2 = std::move(opt.v);
  result.final.step = global_step;
  result.final.config_hash = cfg.config_hash();
  result.final.rng_key = root.key();
  result.final.rng_counter = root.counter();
  return result;
}

}  // namespace clear
