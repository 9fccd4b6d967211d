#include "annostudy/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"
#include "annostudy/rng.hpp"

namespace annostudy {

using nlohmann::json;

AnnotationMatrix::AnnotationMatrix(std::vector<std::string> items,
                                   std::vector<std::string> annotators)
    : items_(std::move(items)), annotators_(std::move(annotators)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!item_index_.emplace(items_[i], i).second) {
      throw InvalidArgument("duplicate item '" + items_[i] + "'");
    }
  }
  for (std::size_t j = 0; j < annotators_.size(); ++j) {
    if (!annotator_index_.emplace(annotators_[j], j).second) {
      throw InvalidArgument("duplicate annotator '" + annotators_[j] + "'");
    }
  }
  cells_.assign(items_.size() * annotators_.size(), std::nullopt);
}

AnnotationMatrix AnnotationMatrix::from_entries(std::span<const Entry> entries) {
  std::vector<std::string> items, annotators;
  std::unordered_map<std::string, std::size_t> seen_i, seen_a;
  for (const auto& e : entries) {
    if (seen_i.emplace(e.item, items.size()).second) items.push_back(e.item);
    if (seen_a.emplace(e.annotator, annotators.size()).second) annotators.push_back(e.annotator);
  }
  AnnotationMatrix m(std::move(items), std::move(annotators));
  for (const auto& e : entries) {
    const auto i = seen_i[e.item], j = seen_a[e.annotator];
    if (m.at(i, j)) {
      throw InvalidArgument("annotator '" + e.annotator + "' labeled item '" + e.item + "' twice");
    }
    m.set(i, j, e.label);
  }
  return m;
}

void AnnotationMatrix::set(std::size_t item, std::size_t annotator, Label l) {
  if (item >= items_.size() || annotator >= annotators_.size()) {
    throw InvalidArgument("matrix index out of range");
  }
  cells_[item * annotators_.size() + annotator] = l;
}

void AnnotationMatrix::set(const std::string& item, const std::string& annotator, Label l) {
  auto i = item_index_.find(item);
  auto j = annotator_index_.find(annotator);
  if (i == item_index_.end()) throw NotFound("unknown item '" + item + "'");
  if (j == annotator_index_.end()) throw NotFound("unknown annotator '" + annotator + "'");
  set(i->second, j->second, l);
}

std::size_t AnnotationMatrix::labels_on_item(std::size_t item) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < annotators_.size(); ++j) n += at(item, j).has_value();
  return n;
}

PerLabel<std::size_t> AnnotationMatrix::votes(std::size_t item) const {
  PerLabel<std::size_t> v{};
  for (std::size_t j = 0; j < annotators_.size(); ++j) {
    if (auto l = at(item, j)) ++v[code(*l)];
  }
  return v;
}

void AnnotationMatrix::validate() const {
  if (items_.empty() || annotators_.empty()) throw InvalidArgument("annotation matrix is empty");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (labels_on_item(i) == 0) throw InvalidArgument("item '" + items_[i] + "' has no labels");
  }
}

bool AnnotationMatrix::is_complete() const {
  return std::all_of(cells_.begin(), cells_.end(), [](const auto& c) { return c.has_value(); });
}

AnnotationMatrix AnnotationMatrix::common_items() const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (labels_on_item(i) == annotators_.size()) keep.push_back(i);
  }
  std::vector<std::string> ids;
  for (auto i : keep) ids.push_back(items_[i]);
  AnnotationMatrix out(std::move(ids), annotators_);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (std::size_t j = 0; j < annotators_.size(); ++j) out.set(r, j, *at(keep[r], j));
  }
  return out;
}

AnnotationMatrix AnnotationMatrix::permute_annotators(std::span<const std::size_t> order) const {
  if (order.size() != annotators_.size()) throw InvalidArgument("permutation has wrong length");
  std::vector<std::string> names;
  for (auto j : order) {
    if (j >= annotators_.size()) throw InvalidArgument("permutation index out of range");
    names.push_back(annotators_[j]);
  }
  AnnotationMatrix out(items_, std::move(names));
  for (std::size_t i = 0; i < items_.size(); ++i) {
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (auto l = at(i, order[k])) out.set(i, k, *l);
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

}  // namespace

AnnotationMatrix read_matrix_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  strip_cr(line);
  auto header = split_tabs(line);
  if (header.size() < 2 || header[0] != "item") {
    throw ParseError(1, "header must be 'item' followed by annotator ids");
  }
  std::vector<std::string> annotators(header.begin() + 1, header.end());
  std::vector<std::string> items;
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  std::vector<std::size_t> linenos;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (cells.size() > header.size()) throw ParseError(lineno, "too many columns");
    cells.resize(header.size());
    items.push_back(cells[0]);
    rows.push_back(std::move(cells));
    linenos.push_back(lineno);
  }
  AnnotationMatrix m;
  try {
    m = AnnotationMatrix(std::move(items), std::move(annotators));
  } catch (const InvalidArgument& e) {
    throw ParseError(0, e.what());
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 1; j < rows[r].size(); ++j) {
      if (rows[r][j].empty()) continue;
      auto l = parse_label(rows[r][j]);
      if (!l) throw ParseError(linenos[r], "unknown label '" + rows[r][j] + "'");
      m.set(r, j - 1, *l);
    }
  }
  return m;
}

AnnotationMatrix load_matrix_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path.string() + "'");
  return read_matrix_tsv(in);
}

void write_matrix_tsv(std::ostream& out, const AnnotationMatrix& m) {
  out << "item";
  for (const auto& a : m.annotators()) out << '\t' << a;
  out << '\n';
  for (std::size_t i = 0; i < m.num_items(); ++i) {
    out << m.items()[i];
    for (std::size_t j = 0; j < m.num_annotators(); ++j) {
      out << '\t';
      if (auto l = m.at(i, j)) out << label_name(*l);
    }
    out << '\n';
  }
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::unanimous: return "unanimous";
    case Provenance::mace: return "mace";
    case Provenance::majority: return "majority";
    case Provenance::adjudicated: return "adjudicated";
  }
  return "?";
}

namespace {

Provenance provenance_from_name(const std::string& s) {
  for (auto p : {Provenance::unanimous, Provenance::mace, Provenance::majority,
                 Provenance::adjudicated}) {
    if (provenance_name(p) == s) return p;
  }
  throw InvalidArgument("unknown provenance '" + s + "'");
}

}  // namespace

void to_json(json& j, const GoldLabel& g) {
  j = json{{"document_id", g.document_id},
           {"label", g.label},
           {"provenance", provenance_name(g.provenance)},
           {"entropy", g.posterior_entropy}};
}

void from_json(const json& j, GoldLabel& g) {
  g.document_id = j.at("document_id").get<std::string>();
  g.label = j.at("label").get<Label>();
  g.provenance = j.contains("provenance")
                     ? provenance_from_name(j["provenance"].get<std::string>())
                     : Provenance::adjudicated;
  g.posterior_entropy = j.value("entropy", 0.0);
  if (g.posterior_entropy < 0.0) throw InvalidArgument("negative entropy");
}

void write_gold_jsonl(std::ostream& out, std::span<const GoldLabel> gold) {
  for (const auto& g : gold) out << json(g).dump() << '\n';
}

std::vector<GoldLabel> read_gold_jsonl(std::istream& in) {
  std::vector<GoldLabel> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<GoldLabel>());
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

double entropy(const PerLabel<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(0.0, h);
}

std::vector<GoldLabel> majority_vote(const AnnotationMatrix& m, TieBreak tie_break) {
  m.validate();
  std::vector<GoldLabel> out;
  std::vector<std::string> tied;
  for (std::size_t i = 0; i < m.num_items(); ++i) {
    const auto v = m.votes(i);
    const std::size_t total = std::accumulate(v.begin(), v.end(), std::size_t{0});
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumLabels; ++k) {
      if (v[k] > v[best]) best = k;
    }
    const auto n_best = std::count(v.begin(), v.end(), v[best]);
    if (n_best > 1) tied.push_back(m.items()[i]);
    PerLabel<double> dist{};
    for (std::size_t k = 0; k < kNumLabels; ++k) dist[k] = static_cast<double>(v[k]) / total;
    GoldLabel g;
    g.document_id = m.items()[i];
    g.label = kAllLabels[best];
    g.provenance = v[best] == total ? Provenance::unanimous : Provenance::majority;
    g.posterior_entropy = entropy(dist);
    out.push_back(std::move(g));
  }
  if (tie_break == TieBreak::error && !tied.empty()) {
    std::string msg = "majority vote tied on " + std::to_string(tied.size()) + " item(s):";
    for (const auto& t : tied) msg += " " + t;
    throw InvalidArgument(msg);
  }
  return out;
}

// ---------------------------------------------------------------- MACE

namespace {

struct Obs {
  std::size_t annotator;
  std::size_t label;  // code
};

struct Problem {
  std::vector<std::vector<Obs>> by_item;
  std::vector<std::size_t> labels;  // codes in the label space
  std::size_t n_annotators = 0;
};

Problem make_problem(const AnnotationMatrix& m, std::span<const Label> label_space) {
  Problem p;
  p.n_annotators = m.num_annotators();
  for (Label l : label_space) p.labels.push_back(code(l));
  p.by_item.resize(m.num_items());
  for (std::size_t i = 0; i < m.num_items(); ++i) {
    for (std::size_t j = 0; j < m.num_annotators(); ++j) {
      if (auto l = m.at(i, j)) p.by_item[i].push_back({j, code(*l)});
    }
  }
  return p;
}

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double emission(double theta, const PerLabel<double>& xi, std::size_t truth, std::size_t a) {
  return (a == truth ? theta : 0.0) + (1.0 - theta) * xi[a];
}

// Returns the marginal log-likelihood; fills per-item log joint over truths.
double item_log_joint(const Problem& p, std::size_t i, std::span<const double> theta,
                      std::span<const PerLabel<double>> xi, std::vector<double>& lj) {
  const double log_prior = -std::log(static_cast<double>(p.labels.size()));
  lj.assign(p.labels.size(), log_prior);
  for (std::size_t t = 0; t < p.labels.size(); ++t) {
    for (const auto& o : p.by_item[i]) {
      lj[t] += std::log(emission(theta[o.annotator], xi[o.annotator], p.labels[t], o.label));
    }
  }
  return log_sum_exp(lj);
}

double log_likelihood(const Problem& p, std::span<const double> theta,
                      std::span<const PerLabel<double>> xi) {
  std::vector<double> lj;
  double ll = 0.0;
  for (std::size_t i = 0; i < p.by_item.size(); ++i) ll += item_log_joint(p, i, theta, xi, lj);
  return ll;
}

// Log-density (up to a constant) of the Beta(s+1, s+1) x Dirichlet(s+1)
// prior whose MAP update is add-s smoothing.
double log_prior(const Problem& p, std::span<const double> theta,
                 std::span<const PerLabel<double>> xi, double s) {
  if (s == 0.0) return 0.0;
  double lp = 0.0;
  for (std::size_t j = 0; j < p.n_annotators; ++j) {
    lp += s * (std::log(theta[j]) + std::log(1.0 - theta[j]));
    for (auto k : p.labels) lp += s * std::log(xi[j][k]);
  }
  return lp;
}

std::vector<PerLabel<double>> posteriors(const Problem& p, std::span<const double> theta,
                                         std::span<const PerLabel<double>> xi) {
  std::vector<PerLabel<double>> out(p.by_item.size(), PerLabel<double>{});
  std::vector<double> lj;
  for (std::size_t i = 0; i < p.by_item.size(); ++i) {
    const double z = item_log_joint(p, i, theta, xi, lj);
    for (std::size_t t = 0; t < p.labels.size(); ++t) out[i][p.labels[t]] = std::exp(lj[t] - z);
  }
  return out;
}

struct Params {
  std::vector<double> theta;
  std::vector<PerLabel<double>> xi;
};

void em_step(const Problem& p, Params& prm, double s) {
  std::vector<double> copy(p.n_annotators, 0.0), seen(p.n_annotators, 0.0);
  std::vector<PerLabel<double>> spam(p.n_annotators, PerLabel<double>{});
  const auto post = posteriors(p, prm.theta, prm.xi);
  for (std::size_t i = 0; i < p.by_item.size(); ++i) {
    for (const auto& o : p.by_item[i]) {
      const double th = prm.theta[o.annotator];
      const double spam_mass = (1.0 - th) * prm.xi[o.annotator][o.label];
      seen[o.annotator] += 1.0;
      for (auto t : p.labels) {
        const double w = post[i][t];
        if (w == 0.0) continue;
        const double e = emission(th, prm.xi[o.annotator], t, o.label);
        const double pc = t == o.label && e > 0.0 ? th / e : 0.0;
        copy[o.annotator] += w * pc;
        spam[o.annotator][o.label] += w * (e > 0.0 ? spam_mass / e : 0.0);
      }
    }
  }
  const double k = static_cast<double>(p.labels.size());
  for (std::size_t j = 0; j < p.n_annotators; ++j) {
    if (seen[j] + 2.0 * s > 0.0) prm.theta[j] = (copy[j] + s) / (seen[j] + 2.0 * s);
    double total = 0.0;
    for (auto a : p.labels) total += spam[j][a];
    if (total + k * s > 0.0) {
      for (auto a : p.labels) prm.xi[j][a] = (spam[j][a] + s) / (total + k * s);
    }
  }
}

}  // namespace

double mace_log_likelihood(const AnnotationMatrix& m, std::span<const Label> label_space,
                           std::span<const double> theta, std::span<const PerLabel<double>> xi) {
  if (theta.size() != m.num_annotators() || xi.size() != m.num_annotators()) {
    throw InvalidArgument("parameter count does not match annotators");
  }
  return log_likelihood(make_problem(m, label_space), theta, xi);
}

std::vector<PerLabel<double>> mace_posterior(const AnnotationMatrix& m,
                                             std::span<const Label> label_space,
                                             std::span<const double> theta,
                                             std::span<const PerLabel<double>> xi) {
  if (theta.size() != m.num_annotators() || xi.size() != m.num_annotators()) {
    throw InvalidArgument("parameter count does not match annotators");
  }
  return posteriors(make_problem(m, label_space), theta, xi);
}

CompetenceModel mace_em(const AnnotationMatrix& m, const MaceOptions& opts) {
  m.validate();
  if (opts.iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (opts.restarts < 1) throw InvalidArgument("restarts must be >= 1");

  std::vector<Label> space;
  {
    PerLabel<bool> present{};
    for (std::size_t i = 0; i < m.num_items(); ++i) {
      for (std::size_t j = 0; j < m.num_annotators(); ++j) {
        if (auto l = m.at(i, j)) present[code(*l)] = true;
      }
    }
    for (Label l : kAllLabels) {
      if (present[code(l)]) space.push_back(l);
    }
  }
  const double s = opts.smoothing.value_or(0.1 / static_cast<double>(space.size()));
  if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("smoothing must be >= 0");

  const Problem p = make_problem(m, space);
  CompetenceModel cm;
  cm.items = m.items();
  cm.annotators = m.annotators();
  cm.label_space = space;
  cm.smoothing = s;

  Params best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    Params prm;
    prm.theta.resize(p.n_annotators);
    prm.xi.assign(p.n_annotators, PerLabel<double>{});
    const auto restart_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(r));
    for (std::size_t j = 0; j < p.n_annotators; ++j) {
      // Keyed by annotator id so reordering annotators does not change the fit.
      Rng rng(derive_seed(restart_seed, fnv1a64(m.annotators()[j])));
      prm.theta[j] = 0.05 + 0.9 * rng.uniform01();
      double total = 0.0;
      for (auto a : p.labels) {
        prm.xi[j][a] = 0.1 + rng.uniform01();
        total += prm.xi[j][a];
      }
      for (auto a : p.labels) prm.xi[j][a] /= total;
    }

    std::vector<double> trace, ll_trace;
    double ll = log_likelihood(p, prm.theta, prm.xi);
    ll_trace.push_back(ll);
    trace.push_back(ll + log_prior(p, prm.theta, prm.xi, s));
    for (int it = 0; it < opts.iterations; ++it) {
      em_step(p, prm, s);
      ll = log_likelihood(p, prm.theta, prm.xi);
      ll_trace.push_back(ll);
      trace.push_back(ll + log_prior(p, prm.theta, prm.xi, s));
    }
    cm.restart_traces.push_back(std::move(trace));
    cm.restart_ll_traces.push_back(std::move(ll_trace));
    if (ll > best_ll || r == 0) {
      best_ll = ll;
      best = prm;
      cm.best_restart = static_cast<std::size_t>(r);
    }
  }

  cm.theta = best.theta;
  cm.xi = best.xi;
  cm.log_likelihood = best_ll;
  cm.objective = cm.restart_traces[cm.best_restart].back();
  cm.posterior = posteriors(p, cm.theta, cm.xi);
  return cm;
}

std::vector<GoldLabel> mace_gold(const CompetenceModel& cm, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw InvalidArgument("threshold must be in (0, 1]");
  }
  const std::size_t n = cm.items.size();
  if (n == 0 || cm.posterior.size() != n) throw InvalidArgument("competence model has no items");
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = entropy(cm.posterior[i]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return h[a] < h[b]; });
  const auto keep = static_cast<std::size_t>(std::floor(threshold * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(chosen.begin(), chosen.end());

  std::vector<GoldLabel> out;
  for (auto i : chosen) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumLabels; ++k) {
      if (cm.posterior[i][k] > cm.posterior[i][best]) best = k;
    }
    out.push_back({cm.items[i], kAllLabels[best], Provenance::mace, h[i]});
  }
  return out;
}

std::vector<std::string> review_candidates(const CompetenceModel& cm, double max_entropy) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cm.items.size(); ++i) {
    if (entropy(cm.posterior[i]) > max_entropy) out.push_back(cm.items[i]);
  }
  return out;
}

}  // namespace annostudy
