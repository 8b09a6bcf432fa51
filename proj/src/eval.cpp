#include "clear/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace clear {

using nlohmann::json;

Qrels Qrels::restricted_to(const std::vector<const TextRecord*>& passages) const {
  std::set<std::string> pool;
  for (const auto* p : passages) pool.insert(p->id);
  Qrels out;
  for (const auto& [qid, docs] : rel) {
    std::map<std::string, int> kept;
    for (const auto& [pid, grade] : docs)
      if (pool.count(pid)) kept.emplace(pid, grade);
    if (!kept.empty()) out.rel.emplace(qid, std::move(kept));
  }
  return out;
}

void save_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write qrels: " + path.string());
  for (const auto& [qid, docs] : qrels.rel)
    for (const auto& [pid, grade] : docs) os << qid << '\t' << pid << '\t' << grade << '\n';
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open qrels: " + path.string());
  Qrels out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, pid;
    int grade;
    if (!(ss >> qid >> pid >> grade))
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed qrels line");
    out.rel[qid][pid] = grade;
  }
  return out;
}

Qrels qrels_from_pairs(const Corpus& corpus) {
  std::map<std::string, std::vector<const TextRecord*>> passages_by_pair;
  for (const auto& r : corpus.records())
    if (r.role == Role::kPassage && !r.pair_id.empty()) passages_by_pair[r.pair_id].push_back(&r);
  Qrels out;
  for (const auto& r : corpus.records()) {
    if (r.role != Role::kQuery || r.pair_id.empty()) continue;
    auto it = passages_by_pair.find(r.pair_id);
    if (it == passages_by_pair.end()) continue;
    for (const auto* p : it->second) out.rel[r.id][p->id] = 1;
  }
  return out;
}

void save_run(const RetrievalRun& run, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write run file: " + path.string());
  char buf[64];
  for (const auto& [qid, items] : run.per_query) {
    int rank = 1;
    for (const auto& item : items) {
      std::snprintf(buf, sizeof buf, "%.17g", item.score);
      os << qid << '\t' << item.passage_id << '\t' << rank++ << '\t' << buf << '\n';
    }
  }
}

namespace {

double dcg_at_k(const std::vector<int>& gains, int k) {
  double acc = 0.0;
  const int n = std::min<int>(k, static_cast<int>(gains.size()));
  for (int r = 1; r <= n; ++r)
    acc += static_cast<double>(gains[r - 1]) / std::log2(static_cast<double>(r) + 1.0);
  return acc;
}

const std::map<std::string, int>& judged_docs(const Qrels& qrels, const std::string& qid) {
  auto it = qrels.rel.find(qid);
  if (it == qrels.rel.end())
    throw MissingQrelsError("no relevance judgments for query " + qid);
  return it->second;
}

}  // namespace

MetricResult ndcg_at_k(const RetrievalRun& run, const Qrels& qrels, int k) {
  if (k < 1) throw ConfigError("ndcg_at_k: k must be >= 1");
  MetricResult out;
  double acc = 0.0;
  for (const auto& [qid, items] : run.per_query) {
    const auto& judged = judged_docs(qrels, qid);
    std::vector<int> gains;
    gains.reserve(items.size());
    for (const auto& item : items) {
      auto it = judged.find(item.passage_id);
      gains.push_back(it == judged.end() ? 0 : it->second);
    }
    std::vector<int> ideal;
    for (const auto& [pid, grade] : judged)
      if (grade > 0) ideal.push_back(grade);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double idcg = dcg_at_k(ideal, k);
    const double score = idcg > 0.0 ? dcg_at_k(gains, k) / idcg : 0.0;
    out.per_query[qid] = score;
    acc += score;
  }
  out.mean = run.per_query.empty() ? 0.0 : acc / static_cast<double>(run.per_query.size());
  return out;
}

MetricResult recall_at_k(const RetrievalRun& run, const Qrels& qrels, int k) {
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  MetricResult out;
  double acc = 0.0;
  for (const auto& [qid, items] : run.per_query) {
    const auto& judged = judged_docs(qrels, qid);
    int n_rel = 0;
    for (const auto& [pid, grade] : judged)
      if (grade > 0) ++n_rel;
    int hit = 0;
    const int n = std::min<int>(k, static_cast<int>(items.size()));
    for (int r = 0; r < n; ++r) {
      auto it = judged.find(items[r].passage_id);
      if (it != judged.end() && it->second > 0) ++hit;
    }
    const double score = n_rel > 0 ? static_cast<double>(hit) / n_rel : 0.0;
    out.per_query[qid] = score;
    acc += score;
  }
  out.mean = run.per_query.empty() ? 0.0 : acc / static_cast<double>(run.per_query.size());
  return out;
}

std::string EvalReport::to_json_string() const {
  json langs = json::object();
  for (const auto& [code, m] : per_language)
    langs[code] = json{{"ndcg10", m.ndcg10},
                       {"recall1", m.recall1},
                       {"recall10", m.recall10},
                       {"n_queries", m.n_queries}};
  return json{{"direction", direction}, {"per_language", langs}, {"mean_ndcg10", mean_ndcg10}}
      .dump();
}

namespace {

Matrix embed_pointers(const AdapterParams& encoder, const std::vector<const TextRecord*>& recs) {
  if (recs.empty()) throw DegenerateDatasetError("evaluation over an empty record set");
  Matrix x(static_cast<int>(recs.size()), static_cast<int>(recs.front()->vector.size()));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i]->vector.size() != recs.front()->vector.size())
      throw ShapeError("evaluation records have mixed feature dims");
    for (std::size_t j = 0; j < recs[i]->vector.size(); ++j)
      x.at(static_cast<int>(i), static_cast<int>(j)) = recs[i]->vector[j];
  }
  return encode_batch(encoder, x);
}

}  // namespace

EvalReport run_retrieval_eval(const AdapterParams& encoder,
                              const std::vector<const TextRecord*>& queries,
                              const std::vector<const TextRecord*>& passages,
                              const Qrels& qrels, int k, const std::string& direction,
                              RetrievalRun* run_out) {
  if (queries.empty() || passages.empty())
    throw DegenerateDatasetError("run_retrieval_eval: empty query or passage set");
  const Matrix q = embed_pointers(encoder, queries);
  const Matrix p = embed_pointers(encoder, passages);
  const Qrels scoped = qrels.restricted_to(passages);

  const int depth = std::max(k, 100);
  RetrievalRun run;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<RankedItem> items;
    items.reserve(passages.size());
    for (std::size_t j = 0; j < passages.size(); ++j)
      items.push_back({passages[j]->id, dot(q.row(static_cast<int>(i)), p.row(static_cast<int>(j)))});
    std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.passage_id < b.passage_id;
    });
    if (static_cast<int>(items.size()) > depth) items.resize(depth);
    run.per_query.emplace(queries[i]->id, std::move(items));
  }

  const MetricResult ndcg = ndcg_at_k(run, scoped, k);
  const MetricResult r1 = recall_at_k(run, scoped, 1);
  const MetricResult r10 = recall_at_k(run, scoped, 10);

  EvalReport report;
  report.direction = direction;
  std::map<std::string, std::string> lang_of_query;
  for (const auto* qr : queries) lang_of_query[qr->id] = qr->lang;
  for (const auto& [qid, score] : ndcg.per_query) {
    LanguageMetrics& m = report.per_language[lang_of_query[qid]];
    m.ndcg10 += score;
    m.recall1 += r1.per_query.at(qid);
    m.recall10 += r10.per_query.at(qid);
    m.n_queries += 1;
  }
  for (auto& [code, m] : report.per_language) {
    m.ndcg10 /= m.n_queries;
    m.recall1 /= m.n_queries;
    m.recall10 /= m.n_queries;
  }
  report.mean_ndcg10 = ndcg.mean;
  if (run_out) *run_out = std::move(run);
  return report;
}

namespace {

// Jacobi eigenvalue iteration for a symmetric matrix; returns eigenvectors in
// columns paired with eigenvalues, sorted descending.
std::pair<Vec, Matrix> symmetric_eigen(Matrix a) {
  const int n = a.rows;
  Matrix v(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a.at(p, q)) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int j = 0; j < n; ++j) {
          const double apj = a.at(p, j), aqj = a.at(q, j);
          a.at(p, j) = c * apj - s * aqj;
          a.at(q, j) = s * apj + c * aqj;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return a.at(x, x) > a.at(y, y); });
  Vec eigenvalues(n);
  Matrix eigenvectors(n, n);
  for (int k = 0; k < n; ++k) {
    eigenvalues[k] = a.at(order[k], order[k]);
    for (int i = 0; i < n; ++i) eigenvectors.at(i, k) = v.at(i, order[k]);
  }
  return {eigenvalues, eigenvectors};
}

}  // namespace

std::string AlignmentReport::projection_csv() const {
  std::string out = "id,lang,role,x,y\n";
  char buf[64];
  for (const auto& pt : projection) {
    out += pt.id + ',' + pt.lang + ',' + role_name(pt.role) + ',';
    std::snprintf(buf, sizeof buf, "%.17g", pt.x);
    out += buf;
    out += ',';
    std::snprintf(buf, sizeof buf, "%.17g", pt.y);
    out += buf;
    out += '\n';
  }
  return out;
}

AlignmentReport alignment_report(const AdapterParams& encoder, const Corpus& corpus) {
  // Collect gold pairs: every query (any language) against the English
  // passage sharing its pair id.
  std::map<std::string, const TextRecord*> en_passage_by_pair;
  for (const auto& r : corpus.records())
    if (r.role == Role::kPassage && r.lang == "en" && !r.pair_id.empty())
      en_passage_by_pair[r.pair_id] = &r;

  std::vector<const TextRecord*> involved;
  std::vector<std::pair<const TextRecord*, const TextRecord*>> pairs;  // (query, passage)
  std::set<std::string> passage_added;
  for (const auto& r : corpus.records()) {
    if (r.role != Role::kQuery || r.pair_id.empty()) continue;
    auto it = en_passage_by_pair.find(r.pair_id);
    if (it == en_passage_by_pair.end()) continue;
    pairs.emplace_back(&r, it->second);
    involved.push_back(&r);
    if (passage_added.insert(it->second->id).second) involved.push_back(it->second);
  }
  if (involved.empty()) throw DegenerateDatasetError("alignment_report: no gold pairs");

  const Matrix y = embed_pointers(encoder, involved);
  std::map<std::string, int> row_of;
  for (std::size_t i = 0; i < involved.size(); ++i) row_of[involved[i]->id] = static_cast<int>(i);

  AlignmentReport report;
  std::map<std::string, std::pair<double, int>> acc;  // lang -> (sum, count)
  for (const auto& [query, passage] : pairs) {
    const double d = 1.0 - dot(y.row(row_of[query->id]), y.row(row_of[passage->id]));
    auto& [sum, count] = acc[query->lang];
    sum += d;
    count += 1;
  }
  for (const auto& [lang, sc] : acc) report.mean_gold_distance[lang] = sc.first / sc.second;

  // Exact PCA of the centered embeddings; project on the top-2 components.
  const int n = y.rows, d = y.cols;
  Vec mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += y.at(i, j);
  for (double& m : mean) m /= n;
  Matrix centered(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) centered.at(i, j) = y.at(i, j) - mean[j];
  Matrix cov = matmul_tn(centered, centered);
  for (double& c : cov.data) c /= std::max(1, n - 1);
  auto [eigenvalues, eigenvectors] = symmetric_eigen(cov);
  (void)eigenvalues;

  // Fix component signs so the projection is stable: largest-magnitude
  // loading positive.
  for (int comp = 0; comp < 2 && comp < d; ++comp) {
    int arg = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(eigenvectors.at(j, comp)) > std::abs(eigenvectors.at(arg, comp))) arg = j;
    if (eigenvectors.at(arg, comp) < 0)
      for (int j = 0; j < d; ++j) eigenvectors.at(j, comp) = -eigenvectors.at(j, comp);
  }

  report.projection.reserve(involved.size());
  for (std::size_t i = 0; i < involved.size(); ++i) {
    AlignmentReport::Point pt;
    pt.id = involved[i]->id;
    pt.lang = involved[i]->lang;
    pt.role = involved[i]->role;
    double x = 0.0, yy = 0.0;
    for (int j = 0; j < d; ++j) {
      x += centered.at(static_cast<int>(i), j) * eigenvectors.at(j, 0);
      if (d > 1) yy += centered.at(static_cast<int>(i), j) * eigenvectors.at(j, 1);
    }
    pt.x = x;
    pt.y = yy;
    report.projection.push_back(std::move(pt));
  }
  return report;
}

}  // namespace clear
