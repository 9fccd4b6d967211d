#include "annostudy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "annostudy/error.hpp"
#include "annostudy/rng.hpp"

namespace annostudy {

using nlohmann::json;

double fleiss_kappa(const AnnotationMatrix& m) {
  m.validate();
  const std::size_t n = m.labels_on_item(0);
  for (std::size_t i = 1; i < m.num_items(); ++i) {
    if (m.labels_on_item(i) != n) {
      throw InvalidArgument(
          "Fleiss' kappa needs the same number of labels on every item; item '" + m.items()[i] +
          "' differs. Restrict the matrix to common items first.");
    }
  }
  if (n < 2) throw InvalidArgument("Fleiss' kappa needs at least 2 labels per item");

  const double N = static_cast<double>(m.num_items());
  const double nn = static_cast<double>(n);
  PerLabel<double> pooled{};
  double p_bar = 0.0;
  for (std::size_t i = 0; i < m.num_items(); ++i) {
    const auto v = m.votes(i);
    double sq = 0.0;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      sq += static_cast<double>(v[k] * v[k]);
      pooled[k] += static_cast<double>(v[k]);
    }
    p_bar += (sq - nn) / (nn * (nn - 1.0));
  }
  p_bar /= N;
  double p_e = 0.0;
  for (double c : pooled) p_e += (c / (N * nn)) * (c / (N * nn));
  if (std::abs(1.0 - p_e) < 1e-12) {
    if (std::abs(1.0 - p_bar) < 1e-12) return 1.0;
    throw InvalidArgument("Fleiss' kappa is undefined: chance agreement is 1");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

namespace {

std::unordered_map<std::string, Label> gold_map(std::span<const GoldLabel> gold) {
  std::unordered_map<std::string, Label> out;
  for (const auto& g : gold) out.emplace(g.document_id, g.label);
  return out;
}

Label gold_for(const std::unordered_map<std::string, Label>& gold, const std::string& doc) {
  auto it = gold.find(doc);
  if (it == gold.end()) throw InvalidArgument("no gold label for control document '" + doc + "'");
  return it->second;
}

}  // namespace

ControlAccuracy control_accuracy(std::span<const AnnotationEvent> events,
                                 std::span<const GoldLabel> gold) {
  const auto g = gold_map(gold);
  ControlAccuracy out;
  for (const auto& e : events) {
    if (!e.is_control) continue;
    const bool ok = e.chosen == gold_for(g, e.document_id);
    for (Tally* t : {&out.overall, &out.by_group_round[e.group][e.round],
                     &out.by_group_round[e.group][0]}) {
      t->correct += ok;
      ++t->total;
    }
  }
  return out;
}

std::vector<AgreementReport> agreement_reports(std::span<const AnnotationEvent> events,
                                               std::span<const GoldLabel> gold) {
  const auto acc = control_accuracy(events, gold);
  std::map<std::string, std::set<int>> rounds;
  for (const auto& e : events) {
    if (e.is_control) rounds[e.group].insert(e.round);
  }
  std::vector<AgreementReport> out;
  for (const auto& [group, rs] : rounds) {
    std::vector<int> scopes(rs.begin(), rs.end());
    scopes.push_back(0);
    for (int scope : scopes) {
      std::vector<AnnotationMatrix::Entry> entries;
      std::set<std::string> annotators;
      for (const auto& e : events) {
        if (!e.is_control || e.group != group || (scope != 0 && e.round != scope)) continue;
        entries.push_back({e.document_id, e.annotator_id, e.chosen});
        annotators.insert(e.annotator_id);
      }
      AgreementReport r;
      r.group = group;
      r.round = scope;
      r.accuracy = acc.by_group_round.at(group).at(scope).rate();
      r.n_annotators = annotators.size();
      const auto common = AnnotationMatrix::from_entries(entries).common_items();
      r.n_items = common.num_items();
      if (r.n_annotators >= 2 && r.n_items > 0) {
        try {
          r.kappa = fleiss_kappa(common);
        } catch (const InvalidArgument&) {
        }
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

AcceptanceReport acceptance_rate(std::span<const AnnotationEvent> events) {
  AcceptanceReport out;
  std::map<std::string, AnnotatorAcceptance> all;
  for (const auto& e : events) {
    auto& a = all[e.annotator_id];
    a.group = e.group;
    if (!e.suggestion) continue;
    const bool ok = *e.accepted();
    ++a.shown;
    ++a.shown_by_round[e.round];
    a.accepted += ok;
    a.accepted_by_round[e.round] += ok;
  }
  for (auto& [id, a] : all) {
    if (a.shown == 0) {
      out.warnings.push_back("annotator " + id + " saw no suggestions; excluded");
      continue;
    }
    out.annotators.emplace(id, a);
  }
  if (out.annotators.empty()) {
    out.warnings.push_back("no events with suggestions");
    return out;
  }
  std::map<std::string, std::vector<double>> rates;
  std::map<std::string, std::map<int, std::vector<double>>> round_rates;
  for (const auto& [id, a] : out.annotators) {
    rates[a.group].push_back(a.rate());
    for (const auto& [r, shown] : a.shown_by_round) {
      const auto acc = a.accepted_by_round.count(r) ? a.accepted_by_round.at(r) : 0;
      round_rates[a.group][r].push_back(static_cast<double>(acc) / shown);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  for (const auto& [g, v] : rates) out.group_rate[g] = mean(v);
  for (const auto& [g, by_round] : round_rates) {
    for (const auto& [r, v] : by_round) out.group_round_rate[g][r] = mean(v);
  }
  return out;
}

CorrectionMatrix correction_matrix(std::span<const AnnotationEvent> events) {
  CorrectionMatrix m{};
  for (const auto& e : events) {
    if (e.suggestion && e.suggestion->label != e.chosen) {
      ++m[code(e.suggestion->label)][code(e.chosen)];
    }
  }
  return m;
}

std::vector<DivergencePoint> divergence_series(const ModelSnapshot& fixed,
                                               std::span<const ModelSnapshot> snapshots,
                                               const Corpus& eval_docs) {
  std::vector<Label> base;
  base.reserve(eval_docs.size());
  for (const auto& d : eval_docs) base.push_back(fixed.predict_label(d.text));
  std::vector<DivergencePoint> out;
  for (const auto& s : snapshots) {
    if (!(s.features() == fixed.features())) {
      throw InvalidArgument("snapshot v" + std::to_string(s.version()) +
                            " uses a different feature configuration");
    }
    DivergencePoint p{s.version(), s.train_size(), 0};
    for (std::size_t i = 0; i < eval_docs.size(); ++i) {
      p.differing += s.predict_label(eval_docs[i].text) != base[i];
    }
    out.push_back(p);
  }
  return out;
}

std::vector<std::string> flag_outliers(std::span<const AnnotationEvent> events,
                                       double min_mean_latency, double max_acceptance) {
  struct Acc {
    double latency = 0.0;
    std::size_t n = 0, shown = 0, accepted = 0;
  };
  std::map<std::string, Acc> per;
  for (const auto& e : events) {
    auto& a = per[e.annotator_id];
    a.latency += e.latency_seconds();
    ++a.n;
    if (auto ok = e.accepted()) {
      ++a.shown;
      a.accepted += *ok;
    }
  }
  std::vector<std::string> out;
  for (const auto& [id, a] : per) {
    if (a.shown == 0) continue;
    const double mean_latency = a.latency / static_cast<double>(a.n);
    const double rate = static_cast<double>(a.accepted) / static_cast<double>(a.shown);
    if (mean_latency < min_mean_latency && rate > max_acceptance) out.push_back(id);
  }
  return out;
}

std::vector<LabeledDocument> resolve_by_majority(std::span<const LabeledDocument> annotations) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::pair<const Document*, PerLabel<std::size_t>>> votes;
  for (const auto& a : annotations) {
    auto [it, fresh] = votes.try_emplace(a.doc.id, &a.doc, PerLabel<std::size_t>{});
    if (fresh) order.push_back(a.doc.id);
    ++it->second.second[code(a.label)];
  }
  std::vector<LabeledDocument> out;
  for (const auto& id : order) {
    const auto& [doc, v] = votes.at(id);
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumLabels; ++k) {
      if (v[k] > v[best]) best = k;
    }
    out.push_back({*doc, kAllLabels[best]});
  }
  return out;
}

Split stratified_split(std::span<const LabeledDocument> data, double train_fraction,
                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must be in (0, 1)");
  }
  Rng rng(seed);
  PerLabel<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[code(data[i].label)].push_back(i);
  std::vector<bool> held(data.size(), false);
  std::size_t n_held = 0;
  std::size_t largest = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    auto& idx = by_class[k];
    rng.shuffle(idx);
    const auto h = static_cast<std::size_t>(
        std::lround((1.0 - train_fraction) * static_cast<double>(idx.size())));
    for (std::size_t t = 0; t < h; ++t) held[idx[t]] = true;
    n_held += h;
    if (idx.size() > by_class[largest].size()) largest = k;
  }
  if (n_held == 0 && !by_class[largest].empty()) {
    held[by_class[largest][0]] = true;
    n_held = 1;
  }
  if (n_held == data.size()) throw InvalidArgument("split leaves no training data");
  Split s;
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? s.holdout : s.train).push_back(data[i]);
  return s;
}

TransferMatrix transfer_experiment(std::span<const TransferGroup> groups,
                                   const TransferOptions& opts) {
  if (groups.size() < 2) throw InvalidArgument("transfer needs at least 2 groups");
  if (opts.runs < 1) throw InvalidArgument("runs must be >= 1");
  opts.train.validate();
  opts.features.validate();

  std::vector<std::vector<LabeledDocument>> data;
  TransferMatrix t;
  for (const auto& g : groups) {
    data.push_back(resolve_by_majority(g.annotations));
    if (data.back().size() < 10) {
      throw InvalidArgument("group " + g.name + " has " + std::to_string(data.back().size()) +
                            " documents after aggregation; need at least 10");
    }
    t.groups.push_back(g.name);
  }
  const std::size_t G = groups.size();
  t.runs = opts.runs;
  for (int r = 0; r < opts.runs; ++r) {
    const std::uint64_t run_seed = opts.seed + static_cast<std::uint64_t>(r);
    std::vector<std::vector<double>> cell(G, std::vector<double>(G, 0.0));
    for (std::size_t i = 0; i < G; ++i) {
      const auto split = stratified_split(data[i], opts.split, derive_seed(run_seed, i));
      std::unordered_set<std::string> train_ids;
      for (const auto& d : split.train) train_ids.insert(d.doc.id);
      for (const auto& d : split.holdout) {
        if (train_ids.count(d.doc.id)) {
          throw std::logic_error("transfer split leaks document " + d.doc.id);
        }
      }
      TrainConfig tc = opts.train;
      tc.seed = run_seed;
      const auto sel = train_select_best(split.train, split.holdout, tc, opts.features);
      for (std::size_t j = 0; j < G; ++j) {
        cell[i][j] = i == j ? evaluate(sel.model, split.holdout).macro_f1
                            : evaluate(sel.model, data[j]).macro_f1;
      }
    }
    t.per_run.push_back(std::move(cell));
  }
  t.mean.assign(G, std::vector<double>(G, 0.0));
  t.stddev.assign(G, std::vector<double>(G, 0.0));
  for (std::size_t i = 0; i < G; ++i) {
    for (std::size_t j = 0; j < G; ++j) {
      double s = 0.0;
      for (const auto& run : t.per_run) s += run[i][j];
      const double mu = s / opts.runs;
      double ss = 0.0;
      for (const auto& run : t.per_run) ss += (run[i][j] - mu) * (run[i][j] - mu);
      t.mean[i][j] = mu;
      t.stddev[i][j] = opts.runs > 1 ? std::sqrt(ss / (opts.runs - 1)) : 0.0;
    }
  }
  return t;
}

// -------------------------------------------------------------- output

void to_json(json& j, const Tally& t) {
  j = json{{"correct", t.correct}, {"total", t.total}, {"accuracy", t.rate()}};
}

void to_json(json& j, const ControlAccuracy& c) {
  j = json{{"overall", c.overall}};
  json groups = json::object();
  for (const auto& [g, rounds] : c.by_group_round) {
    json r = json::object();
    for (const auto& [k, t] : rounds) r[k == 0 ? "total" : "round" + std::to_string(k)] = t;
    groups[g] = r;
  }
  j["groups"] = groups;
}

void to_json(json& j, const AgreementReport& r) {
  j = json{{"group", r.group},
           {"scope", r.round == 0 ? "total" : "round" + std::to_string(r.round)},
           {"accuracy", r.accuracy},
           {"n_items", r.n_items},
           {"n_annotators", r.n_annotators}};
  j["kappa"] = r.kappa ? json(*r.kappa) : json(nullptr);
}

void to_json(json& j, const AnnotatorAcceptance& a) {
  j = json{{"group", a.group}, {"shown", a.shown}, {"accepted", a.accepted}, {"rate", a.rate()}};
  json by_round = json::object();
  for (const auto& [r, n] : a.shown_by_round) {
    by_round[std::to_string(r)] = {
        {"shown", n}, {"accepted", a.accepted_by_round.count(r) ? a.accepted_by_round.at(r) : 0}};
  }
  j["rounds"] = by_round;
}

void to_json(json& j, const AcceptanceReport& r) {
  j = json{{"annotators", r.annotators}, {"warnings", r.warnings}};
  json groups = json::object();
  for (const auto& [g, rate] : r.group_rate) {
    json rounds = json::object();
    if (r.group_round_rate.count(g)) {
      for (const auto& [k, v] : r.group_round_rate.at(g)) rounds[std::to_string(k)] = v;
    }
    groups[g] = {{"rate", rate}, {"rounds", rounds}};
  }
  j["groups"] = groups;
}

void to_json(json& j, const DivergencePoint& p) {
  j = json{{"model_version", p.model_version},
           {"training_size", p.training_size},
           {"differing", p.differing}};
}

void to_json(json& j, const TransferMatrix& t) {
  j = json{{"groups", t.groups}, {"mean", t.mean}, {"std", t.stddev}, {"runs", t.runs}};
}

void write_correction_csv(std::ostream& out, const CorrectionMatrix& m) {
  out << "suggested";
  for (Label l : kAllLabels) out << ',' << label_name(l);
  out << '\n';
  for (Label s : kAllLabels) {
    out << label_name(s);
    for (Label c : kAllLabels) out << ',' << m[code(s)][code(c)];
    out << '\n';
  }
}

void write_divergence_csv(std::ostream& out, std::span<const DivergencePoint> series) {
  out << "model_version,training_size,differing\n";
  for (const auto& p : series) {
    out << p.model_version << ',' << p.training_size << ',' << p.differing << '\n';
  }
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace

std::string render_agreement_table(std::span<const AgreementReport> reports) {
  std::set<int> rounds;
  std::map<std::string, std::map<int, const AgreementReport*>> grid;
  for (const auto& r : reports) {
    if (r.round != 0) rounds.insert(r.round);
    grid[r.group][r.round] = &r;
  }
  std::vector<int> cols(rounds.begin(), rounds.end());
  cols.push_back(0);
  std::ostringstream out;
  out << pad("", 8);
  for (int c : cols) out << lpad(c == 0 ? "Total" : "Round " + std::to_string(c), 16);
  out << '\n' << pad("Group", 8);
  for (std::size_t i = 0; i < cols.size(); ++i) out << lpad("Acc", 8) << lpad("kappa", 8);
  out << '\n';
  for (const auto& [g, row] : grid) {
    out << pad(g, 8);
    for (int c : cols) {
      auto it = row.find(c);
      if (it == row.end()) {
        out << lpad("-", 8) << lpad("-", 8);
        continue;
      }
      out << lpad(fmt("%.3f", it->second->accuracy), 8)
          << lpad(it->second->kappa ? fmt("%.3f", *it->second->kappa) : "n/a", 8);
    }
    out << '\n';
  }
  return out.str();
}

std::string render_acceptance_table(const AcceptanceReport& report) {
  std::set<int> rounds;
  for (const auto& [g, by_round] : report.group_round_rate) {
    for (const auto& [r, v] : by_round) rounds.insert(r);
  }
  std::ostringstream out;
  out << pad("Group", 8);
  for (int r : rounds) out << lpad("Round " + std::to_string(r), 10);
  out << lpad("Total", 10) << '\n';
  for (const auto& [g, rate] : report.group_rate) {
    out << pad(g, 8);
    for (int r : rounds) {
      const auto& gr = report.group_round_rate.at(g);
      out << lpad(gr.count(r) ? fmt("%.3f", gr.at(r)) : "-", 10);
    }
    out << lpad(fmt("%.3f", rate), 10) << '\n';
  }
  return out.str();
}

std::string render_transfer_table(const TransferMatrix& t) {
  std::ostringstream out;
  out << pad("train\\test", 12);
  for (const auto& g : t.groups) out << lpad(g, 16);
  out << '\n';
  for (std::size_t i = 0; i < t.groups.size(); ++i) {
    out << pad(t.groups[i], 12);
    for (std::size_t j = 0; j < t.groups.size(); ++j) {
      out << lpad(fmt("%.3f", t.mean[i][j]) + " +- " + fmt("%.3f", t.stddev[i][j]), 16);
    }
    out << '\n';
  }
  out << "runs: " << t.runs << '\n';
  return out.str();
}

}  // namespace annostudy
