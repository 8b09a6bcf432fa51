#include "clear/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace clear {

using nlohmann::json;

std::string role_name(Role r) { return r == Role::kQuery ? "query" : "passage"; }

Role role_from_name(const std::string& s) {
  if (s == "query") return Role::kQuery;
  if (s == "passage") return Role::kPassage;
  throw ParseError("unknown role: " + s);
}

Corpus::Corpus(std::vector<TextRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] = index_.emplace(records_[i].id, i);
    if (!inserted) throw ParseError("duplicate record id: " + records_[i].id);
  }
}

const TextRecord& Corpus::by_id(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ReferenceError("unknown record id: " + id);
  return records_[it->second];
}

int Corpus::feature_dim() const {
  return records_.empty() ? 0 : static_cast<int>(records_.front().vector.size());
}

std::vector<const TextRecord*> Corpus::select(const std::string& lang, Role role) const {
  std::vector<const TextRecord*> out;
  for (const auto& r : records_)
    if (r.lang == lang && r.role == role) out.push_back(&r);
  return out;
}

void SyntheticConfig::validate() const {
  if (n_pairs < 1) throw ConfigError("synthetic config: n_pairs must be >= 1");
  if (latent_dim < 2 || feature_dim < 2)
    throw ConfigError("synthetic config: dims must be >= 2");
  if (feature_dim < latent_dim)
    throw ConfigError("synthetic config: feature_dim must be >= latent_dim");
  if (hard_twin_fraction < 0.0 || hard_twin_fraction > 1.0)
    throw ConfigError("synthetic config: hard_twin_fraction must lie in [0,1]");
  bool has_en = false;
  std::set<std::string> codes;
  for (const auto& l : languages) {
    if (l.noise_sigma < 0) throw ConfigError("synthetic config: noise_sigma must be >= 0");
    if (!codes.insert(l.code).second)
      throw ConfigError("synthetic config: duplicate language " + l.code);
    if (l.code == "en") has_en = true;
  }
  if (!has_en) throw ConfigError("synthetic config: languages must include en");
}

const LanguageSpec& SyntheticConfig::english() const {
  for (const auto& l : languages)
    if (l.code == "en") return l;
  throw ConfigError("synthetic config: languages must include en");
}

std::vector<LanguageSpec> SyntheticConfig::targets() const {
  std::vector<LanguageSpec> out;
  for (const auto& l : languages)
    if (l.code != "en") out.push_back(l);
  return out;
}

namespace {

Matrix gaussian_matrix(int rows, int cols, Rng rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.next_gaussian();
  return m;
}

// Gram-Schmidt on the columns; requires rows >= cols and full column rank
// (holds almost surely for Gaussian input).
Matrix orthonormalize_columns(Matrix m) {
  for (int j = 0; j < m.cols; ++j) {
    for (int prev = 0; prev < j; ++prev) {
      double proj = 0.0;
      for (int i = 0; i < m.rows; ++i) proj += m.at(i, j) * m.at(i, prev);
      for (int i = 0; i < m.rows; ++i) m.at(i, j) -= proj * m.at(i, prev);
    }
    double norm = 0.0;
    for (int i = 0; i < m.rows; ++i) norm += m.at(i, j) * m.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw NumericalInstabilityError("language map columns degenerate");
    for (int i = 0; i < m.rows; ++i) m.at(i, j) /= norm;
  }
  return m;
}

// A_lang: the shared base frame blended toward a per-language random frame,
// re-orthonormalized. blend 0 returns the base frame unchanged.
Matrix language_map(const Matrix& base, const LanguageSpec& lang) {
  if (lang.map_blend == 0.0) return base;
  Matrix noise = gaussian_matrix(base.rows, base.cols,
                                 Rng(lang.map_seed).substream("language-map"));
  for (double& v : noise.data) v /= std::sqrt(static_cast<double>(base.rows));
  Matrix mixed(base.rows, base.cols);
  for (std::size_t k = 0; k < mixed.data.size(); ++k)
    mixed.data[k] = (1.0 - lang.map_blend) * base.data[k] + lang.map_blend * noise.data[k];
  return orthonormalize_columns(std::move(mixed));
}

Vec map_latent(const Matrix& a, const Vec& z) {
  Vec out(a.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols; ++j) acc += a.at(i, j) * z[j];
    out[i] = acc;
  }
  return out;
}

Vec add_noise(Vec v, double sigma, Rng rng) {
  for (double& x : v) x += sigma * rng.next_gaussian();
  return v;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  const Matrix base = orthonormalize_columns(
      gaussian_matrix(cfg.feature_dim, cfg.latent_dim, root.substream("base-map")));

  std::vector<std::pair<LanguageSpec, Matrix>> maps;
  for (const auto& lang : cfg.languages) maps.emplace_back(lang, language_map(base, lang));

  const Rng latents = root.substream("latent");
  const Rng deltas = root.substream("passage-delta");
  const Rng twin_pick = root.substream("twin-pick");
  const Rng twin_dir = root.substream("twin-direction");
  const Rng noise = root.substream("noise");

  std::vector<TextRecord> records;
  std::vector<TrainingExample> examples;

  for (int i = 0; i < cfg.n_pairs; ++i) {
    Vec z(cfg.latent_dim), delta(cfg.latent_dim);
    {
      Rng zr = latents.substream(static_cast<std::uint64_t>(i));
      for (double& x : z) x = zr.next_gaussian();
      Rng dr = deltas.substream(static_cast<std::uint64_t>(i));
      for (double& x : delta) x = dr.next_gaussian();
    }
    Vec passage_latent(cfg.latent_dim);
    for (int k = 0; k < cfg.latent_dim; ++k) passage_latent[k] = z[k] + 0.1 * delta[k];

    const std::string pair_id = "pair_" + std::to_string(i);
    const bool has_twin =
        twin_pick.substream(static_cast<std::uint64_t>(i)).next_double() < cfg.hard_twin_fraction;

    for (const auto& [lang, map] : maps) {
      Rng lang_noise = noise.substream(lang.code);
      const std::string suffix = lang.code + "_" + std::to_string(i);

      TextRecord query;
      query.id = "q_" + suffix;
      query.lang = lang.code;
      query.role = Role::kQuery;
      query.pair_id = pair_id;
      query.vector = add_noise(map_latent(map, z), lang.noise_sigma,
                               lang_noise.substream("query").substream(i));
      records.push_back(std::move(query));

      TextRecord passage;
      passage.id = "p_" + suffix;
      passage.lang = lang.code;
      passage.role = Role::kPassage;
      passage.pair_id = pair_id;
      passage.vector = add_noise(map_latent(map, passage_latent), lang.noise_sigma,
                                 lang_noise.substream("passage").substream(i));
      records.push_back(std::move(passage));

      if (has_twin && lang.code == "en") {
        // Twin latent z' = z + 0.3 u for a unit direction u: a semantically
        // near distractor passage with no query of its own.
        Rng ur = twin_dir.substream(static_cast<std::uint64_t>(i));
        Vec u(cfg.latent_dim);
        for (double& x : u) x = ur.next_gaussian();
        u = l2_normalize(u);
        Vec twin_latent(cfg.latent_dim);
        for (int k = 0; k < cfg.latent_dim; ++k) twin_latent[k] = z[k] + 0.3 * u[k];
        TextRecord twin;
        twin.id = "p_" + suffix + "_twin";
        twin.lang = lang.code;
        twin.role = Role::kPassage;
        twin.pair_id = "";
        twin.vector = add_noise(map_latent(map, twin_latent), lang.noise_sigma,
                                lang_noise.substream("twin").substream(i));
        records.push_back(std::move(twin));
      }
    }

    for (const auto& lang : cfg.targets()) {
      TrainingExample ex;
      ex.pair_id = pair_id;
      ex.lang = lang.code;
      ex.q_en_id = "q_en_" + std::to_string(i);
      ex.p_en_pos_id = "p_en_" + std::to_string(i);
      ex.q_tgt_id = "q_" + lang.code + "_" + std::to_string(i);
      examples.push_back(std::move(ex));
    }
  }
  return {Corpus(std::move(records)), std::move(examples)};
}

std::vector<TrainingExample> dedupe_by_passage(const std::vector<TrainingExample>& examples) {
  std::vector<TrainingExample> out;
  std::set<std::string> seen;
  for (const auto& ex : examples)
    if (seen.insert(ex.p_en_pos_id).second) out.push_back(ex);
  return out;
}

namespace {

json record_to_json(const TextRecord& r) {
  return json{{"id", r.id},
              {"lang", r.lang},
              {"role", role_name(r.role)},
              {"pair_id", r.pair_id},
              {"vector", r.vector}};
}

json example_to_json(const TrainingExample& ex) {
  return json{{"pair_id", ex.pair_id},
              {"lang", ex.lang},
              {"q_en", ex.q_en_id},
              {"p_en_pos", ex.p_en_pos_id},
              {"q_tgt", ex.q_tgt_id},
              {"neg_passage_ids", ex.neg_passage_ids},
              {"neg_query_ids", ex.neg_query_ids}};
}

json parse_line(const std::string& line, const std::filesystem::path& path, int lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
  return j;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write corpus: " + path.string());
  for (const auto& r : corpus.records()) os << record_to_json(r).dump() << '\n';
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open corpus: " + path.string());
  std::vector<TextRecord> records;
  std::string line;
  int lineno = 0;
  std::size_t dim = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    try {
      TextRecord r;
      r.id = j.at("id").get<std::string>();
      r.lang = j.at("lang").get<std::string>();
      r.role = role_from_name(j.at("role").get<std::string>());
      r.pair_id = j.at("pair_id").get<std::string>();
      r.vector = j.at("vector").get<Vec>();
      if (records.empty()) dim = r.vector.size();
      else if (r.vector.size() != dim)
        throw ParseError(path.string() + ":" + std::to_string(lineno) +
                         ": vector length differs from the rest of the corpus");
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return Corpus(std::move(records));
}

void save_examples(const std::vector<TrainingExample>& examples,
                   const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write train file: " + path.string());
  for (const auto& ex : examples) os << example_to_json(ex).dump() << '\n';
}

std::vector<TrainingExample> load_examples(const std::filesystem::path& corpus_path,
                                           const std::filesystem::path& train_path) {
  return load_examples(load_corpus(corpus_path), train_path);
}

std::vector<TrainingExample> load_examples(const Corpus& corpus,
                                           const std::filesystem::path& train_path) {
  std::ifstream is(train_path);
  if (!is) throw Error("cannot open train file: " + train_path.string());
  std::vector<TrainingExample> out;
  std::string line;
  int lineno = 0;
  auto check_ref = [&](const std::string& id) {
    if (!corpus.contains(id))
      throw ReferenceError(train_path.string() + ":" + std::to_string(lineno) +
                           ": reference to unknown record id " + id);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, train_path, lineno);
    try {
      TrainingExample ex;
      ex.pair_id = j.at("pair_id").get<std::string>();
      ex.lang = j.at("lang").get<std::string>();
      ex.q_en_id = j.at("q_en").get<std::string>();
      ex.p_en_pos_id = j.at("p_en_pos").get<std::string>();
      ex.q_tgt_id = j.at("q_tgt").get<std::string>();
      ex.neg_passage_ids = j.at("neg_passage_ids").get<std::vector<std::string>>();
      ex.neg_query_ids = j.at("neg_query_ids").get<std::vector<std::string>>();
      check_ref(ex.q_en_id);
      check_ref(ex.p_en_pos_id);
      check_ref(ex.q_tgt_id);
      for (const auto& id : ex.neg_passage_ids) check_ref(id);
      for (const auto& id : ex.neg_query_ids) check_ref(id);
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ParseError(train_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

Matrix rows_for(const Corpus& corpus, const std::vector<std::string>& ids, int dim) {
  Matrix m(static_cast<int>(ids.size()), dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& v = corpus.by_id(ids[i]).vector;
    if (static_cast<int>(v.size()) != dim) throw ShapeError("feature dim mismatch in corpus");
    for (int j = 0; j < dim; ++j) m.at(static_cast<int>(i), j) = v[j];
  }
  return m;
}

}  // namespace

std::vector<FeatureBatch> make_batches(const std::vector<TrainingExample>& examples,
                                       const Corpus& corpus, int batch_size, Rng rng) {
  if (batch_size < 2) throw ConfigError("make_batches: batch_size must be >= 2");
  if (examples.size() < 2)
    throw DegenerateDatasetError("make_batches: need at least 2 examples");
  const std::size_t n_pneg = examples.front().neg_passage_ids.size();
  const std::size_t n_qneg = examples.front().neg_query_ids.size();
  for (const auto& ex : examples)
    if (ex.neg_passage_ids.size() != n_pneg || ex.neg_query_ids.size() != n_qneg)
      throw ShapeError("make_batches: examples carry unequal negative counts");

  std::vector<std::size_t> idx(examples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle_indices(idx, rng);

  const int dim = corpus.feature_dim();
  std::vector<FeatureBatch> batches;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    if (end - start < 2) break;  // drop a trailing singleton
    std::vector<std::string> q_en, p_pos, p_neg, q_pos, q_neg, ids;
    for (std::size_t k = start; k < end; ++k) {
      const auto& ex = examples[idx[k]];
      q_en.push_back(ex.q_en_id);
      p_pos.push_back(ex.p_en_pos_id);
      q_pos.push_back(ex.q_tgt_id);
      ids.push_back(ex.pair_id);
      for (const auto& id : ex.neg_passage_ids) p_neg.push_back(id);
      for (const auto& id : ex.neg_query_ids) q_neg.push_back(id);
    }
    FeatureBatch b;
    b.q_en = rows_for(corpus, q_en, dim);
    b.p_en_pos = rows_for(corpus, p_pos, dim);
    b.p_en_neg = rows_for(corpus, p_neg, dim);
    b.q_tgt_pos = rows_for(corpus, q_pos, dim);
    b.q_tgt_neg = rows_for(corpus, q_neg, dim);
    b.example_ids = std::move(ids);
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<TrainingExample> mix_multilingual(
    const std::map<std::string, std::vector<TrainingExample>>& per_language,
    int n_per_lang, Rng rng) {
  if (n_per_lang < 1) throw ConfigError("mix_multilingual: n_per_lang must be >= 1");
  std::vector<TrainingExample> out;
  std::set<std::string> used_pairs;
  for (const auto& [lang, examples] : per_language) {  // std::map: sorted codes
    std::vector<std::size_t> idx(examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng lang_rng = rng.substream("mix").substream(lang);
    shuffle_indices(idx, lang_rng);
    int taken = 0;
    for (std::size_t k = 0; k < idx.size() && taken < n_per_lang; ++k) {
      const auto& ex = examples[idx[k]];
      if (!used_pairs.insert(ex.pair_id).second) continue;  // keep slices disjoint
      out.push_back(ex);
      ++taken;
    }
    if (taken < n_per_lang)
      throw InsufficientDataError("mix_multilingual: language " + lang + " has only " +
                                  std::to_string(taken) + " disjoint examples, need " +
                                  std::to_string(n_per_lang));
  }
  std::vector<std::size_t> idx(out.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng final_rng = rng.substream("mix-final");
  shuffle_indices(idx, final_rng);
  std::vector<TrainingExample> shuffled;
  shuffled.reserve(out.size());
  for (std::size_t i : idx) shuffled.push_back(std::move(out[i]));
  return shuffled;
}

std::map<std::string, std::vector<TrainingExample>> split_by_language(
    const std::vector<TrainingExample>& examples) {
  std::map<std::string, std::vector<TrainingExample>> out;
  for (const auto& ex : examples) out[ex.lang].push_back(ex);
  return out;
}

}  // namespace clear
