#include "annostudy/simharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <toml.hpp>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"

namespace annostudy {

using nlohmann::json;

void SimAnnotatorConfig::validate() const {
  for (double a : per_class_accuracy) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("per_class_accuracy must be in [0, 1]");
  }
  if (!(anchoring_prob >= 0.0 && anchoring_prob <= 1.0)) {
    throw InvalidArgument("anchoring_prob must be in [0, 1]");
  }
  if (!(latency_mean > 0.0)) throw InvalidArgument("latency_mean must be > 0");
  if (!(latency_sd >= 0.0)) throw InvalidArgument("latency_sd must be >= 0");
}

SimAnnotator::SimAnnotator(SimAnnotatorConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

SimDecision SimAnnotator::decide(Label truth, std::optional<Label> suggestion) {
  SimDecision d;
  if (suggestion && rng_.bernoulli(cfg_.anchoring_prob)) {
    d.chosen = *suggestion;
  } else if (rng_.bernoulli(cfg_.per_class_accuracy[code(truth)])) {
    d.chosen = truth;
  } else {
    const std::size_t k = rng_.uniform_index(kNumLabels - 1);
    d.chosen = kAllLabels[k >= code(truth) ? k + 1 : k];
  }
  // Normal truncated below at 0.1 s, by rejection.
  d.latency = 0.1;
  for (int tries = 0; tries < 1000; ++tries) {
    const double v = rng_.normal(cfg_.latency_mean, cfg_.latency_sd);
    if (v >= 0.1) {
      d.latency = v;
      break;
    }
  }
  return d;
}

void WorldConfig::validate() const {
  if (pool_size == 0 || expert_size == 0) throw InvalidArgument("world needs documents");
  if (!(keyword_fidelity >= 0.0 && keyword_fidelity <= 1.0)) {
    throw InvalidArgument("keyword_fidelity must be in [0, 1]");
  }
  double s = 0.0;
  for (double p : class_prior) {
    if (!(p >= 0.0)) throw InvalidArgument("class_prior must be non-negative");
    s += p;
  }
  if (!(s > 0.0)) throw InvalidArgument("class_prior must not be all zero");
  if (simulated_experts < 0) throw InvalidArgument("simulated_experts must be >= 0");
  if (!(expert_accuracy >= 0.0 && expert_accuracy <= 1.0)) {
    throw InvalidArgument("expert_accuracy must be in [0, 1]");
  }
}

namespace {

const PerLabel<std::vector<std::string>> kKeywords = {{
    {"wetterlage", "fussballspiel"},
    {"fallzahlen", "lagebericht"},
    {"vernuenftig", "solidarisch"},
    {"panikmache", "uebertrieben"},
}};

constexpr std::size_t kFillerWords = 60;

Label draw_label(Rng& rng, const PerLabel<double>& prior) {
  double total = 0.0;
  for (double p : prior) total += p;
  double u = rng.uniform01() * total;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    if (u < prior[k]) return kAllLabels[k];
    u -= prior[k];
  }
  for (std::size_t k = kNumLabels; k-- > 0;) {
    if (prior[k] > 0.0) return kAllLabels[k];
  }
  return Label::Unrelated;
}

LabeledDocument make_doc(Rng& rng, const WorldConfig& cfg, const std::string& id) {
  const Label truth = draw_label(rng, cfg.class_prior);
  std::size_t kw_class = code(truth);
  if (!rng.bernoulli(cfg.keyword_fidelity)) {
    const std::size_t k = rng.uniform_index(kNumLabels - 1);
    kw_class = k >= kw_class ? k + 1 : k;
  }
  const auto& kws = kKeywords[kw_class];
  // two keyword slots among 4..7 words
  const std::size_t words = 4 + rng.uniform_index(4);
  const std::size_t at1 = rng.uniform_index(words);
  const std::size_t at2 = (at1 + 1 + rng.uniform_index(words - 1)) % words;
  std::string text = "corona";
  for (std::size_t w = 0; w < words; ++w) {
    text += ' ';
    text += w == at1 || w == at2 ? kws[rng.uniform_index(kws.size())]
                                 : "wort" + std::to_string(rng.uniform_index(kFillerWords));
  }
  return {Document::make(id, std::move(text)), truth};
}

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

}  // namespace

SyntheticWorld make_world(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x5eed));
  SyntheticWorld w;
  std::vector<Document> pool;
  for (std::size_t i = 0; i < cfg.pool_size; ++i) {
    auto d = make_doc(rng, cfg, padded("p", i));
    w.truth.emplace(d.doc.id, d.label);
    pool.push_back(std::move(d.doc));
  }
  w.inputs.pool = Corpus(std::move(pool));

  std::vector<LabeledDocument> expert;
  for (std::size_t i = 0; i < cfg.expert_size; ++i) {
    auto d = make_doc(rng, cfg, padded("x", i));
    w.truth.emplace(d.doc.id, d.label);
    expert.push_back(std::move(d));
  }
  if (cfg.simulated_experts > 0) {
    std::vector<std::string> items, names;
    for (const auto& d : expert) items.push_back(d.doc.id);
    for (int e = 0; e < cfg.simulated_experts; ++e) names.push_back("expert" + std::to_string(e + 1));
    AnnotationMatrix m(items, names);
    for (int e = 0; e < cfg.simulated_experts; ++e) {
      SimAnnotatorConfig ec;
      ec.per_class_accuracy.fill(cfg.expert_accuracy);
      ec.seed = derive_seed(cfg.seed, 0xe0 + static_cast<std::uint64_t>(e));
      SimAnnotator sim(ec);
      for (std::size_t i = 0; i < expert.size(); ++i) {
        m.set(i, static_cast<std::size_t>(e), sim.decide(expert[i].label, std::nullopt).chosen);
      }
    }
    MaceOptions mo;
    mo.seed = cfg.seed;
    const auto gold = mace_gold(mace_em(m, mo), 1.0);
    for (std::size_t i = 0; i < expert.size(); ++i) expert[i].label = gold[i].label;
    w.expert_matrix = std::move(m);
  }
  w.inputs.expert_gold = std::move(expert);
  return w;
}

namespace {

void fill_reports(SimStudyResult& r) {
  r.agreement = agreement_reports(r.events, r.control_gold);
  r.acceptance = acceptance_rate(r.events);
  r.corrections = correction_matrix(r.events);
  r.outliers = flag_outliers(r.events);
  r.groups.clear();
  for (const auto& a : r.agreement) {
    if (a.round != 0) continue;
    auto& g = r.groups[a.group];
    g.kappa = a.kappa;
    g.accuracy = a.accuracy;
  }
  for (const auto& e : r.events) {
    auto& g = r.groups[e.group];
    ++g.events;
    g.non_control_events += !e.is_control;
  }
  for (const auto& [name, rate] : r.acceptance.group_rate) r.groups[name].acceptance = rate;
}

}  // namespace

SimStudyResult run_simulated_study(const SimStudyConfig& cfg, const SyntheticWorld& world) {
  StudyConfig sc = cfg.study;
  sc.synchronous_retrain = true;
  const Timestamp start = parse_rfc3339("2020-03-16T08:00:00Z");
  Study st(sc, world.inputs, start);

  SimStudyResult r;
  for (int round = 1; round <= sc.rounds; ++round) {
    for (const auto& id : st.control_ids(round)) {
      r.control_gold.push_back({id, *st.control_gold(id), Provenance::adjudicated, 0.0});
    }
  }

  for (const auto& id : st.annotator_ids()) {
    const auto prof = st.profile(id);
    auto it = cfg.per_group.find(prof.group);
    SimAnnotatorConfig ac = it == cfg.per_group.end() ? cfg.annotator : it->second;
    ac.seed = derive_seed(derive_seed(cfg.seed, ac.seed), fnv1a64(id));
    SimAnnotator sim(ac);
    Timestamp clock = start;
    while (true) {
      auto next = st.next_item(id);
      if (std::holds_alternative<StudyComplete>(next)) break;
      if (std::holds_alternative<RoundComplete>(next)) {
        st.finish_round(id);
        clock += std::chrono::hours(24);
        continue;
      }
      const auto& item = std::get<ServedItem>(next);
      const Label truth = world.truth.at(item.document->id);
      std::optional<Label> shown;
      if (item.suggestion) shown = item.suggestion->label;
      const auto d = sim.decide(truth, shown);
      const Timestamp begin = clock;
      clock += std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(d.latency * 1000.0)));
      st.submit(id, item.document->id, d.chosen, begin, clock);
    }
  }

  r.events = st.events();
  r.log = st.records();
  r.divergence = st.divergence();
  r.retrain_sizes = st.retrain_sizes();
  fill_reports(r);

  std::size_t correct = 0;
  for (const auto& d : world.inputs.pool) {
    correct += st.expert_model()->predict_label(d.text) == world.truth.at(d.id);
  }
  r.expert_model_accuracy = static_cast<double>(correct) / static_cast<double>(world.inputs.pool.size());

  if (cfg.run_transfer) {
    std::vector<TransferGroup> groups;
    for (const auto& g : sc.groups) {
      TransferGroup tg{g.name, {}};
      for (const auto& e : r.events) {
        if (e.group == g.name && !e.is_control) tg.annotations.push_back({*st.document(e.document_id), e.chosen});
      }
      groups.push_back(std::move(tg));
    }
    TransferOptions to = cfg.transfer;
    to.features = sc.features;
    r.transfer = transfer_experiment(groups, to);
  }
  return r;
}

SimStudyResult recompute_reports(const SimStudyResult& r) {
  SimStudyResult out;
  out.events = r.events;
  out.log = r.log;
  out.control_gold = r.control_gold;
  out.divergence = r.divergence;
  out.retrain_sizes = r.retrain_sizes;
  out.transfer = r.transfer;
  out.expert_model_accuracy = r.expert_model_accuracy;
  fill_reports(out);
  return out;
}

void to_json(json& j, const GroupSummary& g) {
  j = json{{"accuracy", g.accuracy}, {"events", g.events}, {"non_control_events", g.non_control_events}};
  j["kappa"] = g.kappa ? json(*g.kappa) : json(nullptr);
  j["acceptance"] = g.acceptance ? json(*g.acceptance) : json(nullptr);
}

void to_json(json& j, const SimStudyResult& r) {
  json corrections = json::array();
  for (const auto& row : r.corrections) corrections.push_back(row);
  j = json{{"events", r.events.size()},
           {"groups", r.groups},
           {"agreement", r.agreement},
           {"acceptance", r.acceptance},
           {"corrections", corrections},
           {"divergence", r.divergence},
           {"retrain_sizes", r.retrain_sizes},
           {"outliers", r.outliers},
           {"expert_model_accuracy", r.expert_model_accuracy}};
  j["transfer"] = r.transfer ? json(*r.transfer) : json(nullptr);
}

// ------------------------------------------------------------------ sweep

namespace {

class TomlReader {
 public:
  TomlReader(const toml::table& root) : root_(root) {}

  const toml::table* table(std::string_view name, std::initializer_list<std::string_view> keys) {
    const auto* node = root_.get(name);
    if (!node) return nullptr;
    const auto* t = node->as_table();
    if (!t) throw ParseError(0, "[" + std::string(name) + "] must be a table");
    for (const auto& [k, v] : *t) {
      if (std::find(keys.begin(), keys.end(), k.str()) == keys.end()) {
        throw ParseError(0, "unknown key '" + std::string(name) + "." + std::string(k.str()) + "'");
      }
    }
    return t;
  }

  template <typename T>
  static void read(const toml::table* t, std::string_view section, std::string_view key, T& out) {
    if (!t) return;
    const auto* node = t->get(key);
    if (!node) return;
    std::optional<T> v;
    if constexpr (std::is_same_v<T, bool>) {
      v = node->value<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      v = node->value<double>();
    } else {
      if (auto i = node->value<std::int64_t>(); i && *i >= 0) v = static_cast<T>(*i);
    }
    if (!v) {
      throw ParseError(node->source().begin.line,
                       "bad value for '" + std::string(section) + "." + std::string(key) + "'");
    }
    out = *v;
  }

  template <typename T>
  static std::vector<T> read_list(const toml::table* t, std::string_view section,
                                  std::string_view key) {
    std::vector<T> out;
    if (!t) return out;
    const auto* node = t->get(key);
    if (!node) return out;
    auto fail = [&] {
      return ParseError(node->source().begin.line,
                        "'" + std::string(section) + "." + std::string(key) + "' must be a list of numbers");
    };
    const auto* arr = node->as_array();
    if (!arr) {
      T single{};
      try {
        read(t, section, key, single);
      } catch (const ParseError&) {
        throw fail();
      }
      return {single};
    }
    for (const auto& el : *arr) {
      std::optional<T> v;
      if constexpr (std::is_floating_point_v<T>) {
        v = el.value<double>();
      } else if (auto i = el.value<std::int64_t>(); i && *i >= 0) {
        v = static_cast<T>(*i);
      }
      if (!v) throw fail();
      out.push_back(*v);
    }
    return out;
  }

 private:
  const toml::table& root_;
};

}  // namespace

SweepConfig parse_sweep_toml(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ParseError(e.source().begin.line, std::string(e.description()));
  }
  for (const auto& [k, v] : root) {
    const auto key = k.str();
    if (key != "study" && key != "world" && key != "annotator" && key != "sweep") {
      throw ParseError(0, "unknown section '" + std::string(key) + "'");
    }
  }
  TomlReader rd(root);
  SweepConfig c;
  auto& s = c.base.study;
  s.features.n_buckets = 1u << 16;

  const auto* st = rd.table("study", {"annotators_per_group", "rounds", "new_per_round",
                                      "control_per_round", "retrain_batch",
                                      "interactive_start_round", "freeze_after_round_1",
                                      "n_buckets", "epochs", "learning_rate", "batch_size", "l2"});
  TomlReader::read(st, "study", "annotators_per_group", s.annotators_per_group);
  TomlReader::read(st, "study", "rounds", s.rounds);
  TomlReader::read(st, "study", "new_per_round", s.new_per_round);
  TomlReader::read(st, "study", "control_per_round", s.control_per_round);
  TomlReader::read(st, "study", "retrain_batch", s.retrain_batch);
  TomlReader::read(st, "study", "interactive_start_round", s.interactive_start_round);
  TomlReader::read(st, "study", "freeze_after_round_1", s.freeze_after_round_1);
  TomlReader::read(st, "study", "n_buckets", s.features.n_buckets);
  TomlReader::read(st, "study", "epochs", s.train.epochs);
  TomlReader::read(st, "study", "learning_rate", s.train.learning_rate);
  TomlReader::read(st, "study", "batch_size", s.train.batch_size);
  TomlReader::read(st, "study", "l2", s.train.l2);

  const auto* wt = rd.table("world", {"pool_size", "expert_size", "simulated_experts",
                                      "expert_accuracy"});
  TomlReader::read(wt, "world", "pool_size", c.world.pool_size);
  TomlReader::read(wt, "world", "expert_size", c.world.expert_size);
  TomlReader::read(wt, "world", "simulated_experts", c.world.simulated_experts);
  TomlReader::read(wt, "world", "expert_accuracy", c.world.expert_accuracy);

  const auto* at = rd.table("annotator", {"accuracy", "latency_mean", "latency_sd"});
  if (at) {
    const auto acc = TomlReader::read_list<double>(at, "annotator", "accuracy");
    if (acc.size() == 1) {
      c.base.annotator.per_class_accuracy.fill(acc[0]);
    } else if (acc.size() == kNumLabels) {
      std::copy(acc.begin(), acc.end(), c.base.annotator.per_class_accuracy.begin());
    } else if (!acc.empty()) {
      throw ParseError(0, "'annotator.accuracy' needs 1 or 4 values");
    }
  }
  TomlReader::read(at, "annotator", "latency_mean", c.base.annotator.latency_mean);
  TomlReader::read(at, "annotator", "latency_sd", c.base.annotator.latency_sd);

  const auto* sw = rd.table("sweep", {"anchoring_prob", "keyword_fidelity", "seeds", "threads",
                                      "transfer", "transfer_runs"});
  c.anchoring = TomlReader::read_list<double>(sw, "sweep", "anchoring_prob");
  c.fidelity = TomlReader::read_list<double>(sw, "sweep", "keyword_fidelity");
  c.seeds = TomlReader::read_list<std::uint64_t>(sw, "sweep", "seeds");
  TomlReader::read(sw, "sweep", "threads", c.threads);
  TomlReader::read(sw, "sweep", "transfer", c.base.run_transfer);
  TomlReader::read(sw, "sweep", "transfer_runs", c.base.transfer.runs);
  if (c.anchoring.empty()) c.anchoring = {c.base.annotator.anchoring_prob};
  if (c.fidelity.empty()) c.fidelity = {c.world.keyword_fidelity};
  if (c.seeds.empty()) c.seeds = {0};

  try {
    s.validate();
    c.world.validate();
    c.base.annotator.validate();
    for (double a : c.anchoring) {
      if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("anchoring_prob values must be in [0, 1]");
    }
    for (double q : c.fidelity) {
      if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("keyword_fidelity values must be in [0, 1]");
    }
  } catch (const InvalidArgument& e) {
    throw ParseError(0, e.what());
  }
  return c;
}

SweepConfig load_sweep_toml(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_sweep_toml(ss.str());
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const std::filesystem::path& out) {
  std::vector<SweepRow> rows;
  for (double a : cfg.anchoring) {
    for (double q : cfg.fidelity) {
      for (auto seed : cfg.seeds) {
        SweepRow r;
        r.anchoring = a;
        r.fidelity = q;
        r.seed = seed;
        char buf[96];
        std::snprintf(buf, sizeof buf, "a%.2f_q%.2f_s%llu", a, q, static_cast<unsigned long long>(seed));
        r.dir = buf;
        rows.push_back(std::move(r));
      }
    }
  }
  std::filesystem::create_directories(out);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next++;
      if (i >= rows.size()) return;
      try {
        auto& row = rows[i];
        WorldConfig wc = cfg.world;
        wc.keyword_fidelity = row.fidelity;
        wc.seed = row.seed;
        const auto world = make_world(wc);
        SimStudyConfig sc = cfg.base;
        sc.seed = row.seed;
        sc.study.seed = row.seed;
        sc.annotator.anchoring_prob = row.anchoring;
        for (auto& [g, pc] : sc.per_group) pc.anchoring_prob = row.anchoring;
        const auto res = run_simulated_study(sc, world);
        row.groups = res.groups;
        row.expert_model_accuracy = res.expert_model_accuracy;
        const auto dir = out / row.dir;
        std::filesystem::create_directories(dir);
        std::ofstream ev(dir / "events.jsonl", std::ios::binary);
        write_events_jsonl(ev, res.events);
        std::ofstream rep(dir / "report.json", std::ios::binary);
        rep << json(res).dump(2) << '\n';
        std::ofstream gold(dir / "control_gold.jsonl", std::ios::binary);
        write_gold_jsonl(gold, res.control_gold);
        if (!ev || !rep || !gold) throw std::runtime_error("failed writing " + dir.string());
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto n = static_cast<unsigned>(
      std::min<std::size_t>(rows.size(), cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : hw));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  std::ofstream csv(out / "summary.csv", std::ios::binary);
  csv << "anchoring_prob,keyword_fidelity,seed,group,kappa,accuracy,acceptance,expert_model_accuracy\n";
  for (const auto& r : rows) {
    for (const auto& [g, s] : r.groups) {
      char line[256];
      std::snprintf(line, sizeof line, "%.4f,%.4f,%llu,%s,%s,%.6f,%s,%.6f\n", r.anchoring,
                    r.fidelity, static_cast<unsigned long long>(r.seed), g.c_str(),
                    s.kappa ? std::to_string(*s.kappa).c_str() : "",
                    s.accuracy, s.acceptance ? std::to_string(*s.acceptance).c_str() : "",
                    r.expert_model_accuracy);
      csv << line;
    }
  }
  if (!csv) throw std::runtime_error("failed writing summary.csv");
  return rows;
}

}  // namespace annostudy
