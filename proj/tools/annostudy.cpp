// annostudy command-line front end.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "annostudy/aggregation.hpp"
#include "annostudy/corpus.hpp"
#include "annostudy/error.hpp"
#include "annostudy/events.hpp"
#include "annostudy/metrics.hpp"
#include "annostudy/service.hpp"
#include "annostudy/simharness.hpp"
#include "annostudy/suggester.hpp"

using namespace annostudy;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

// Writes to `path`, or stdout when empty or "-".
void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  auto out = open_out(path);
  out << content;
}

Corpus read_any_corpus(const std::string& path) { return load_corpus(path, corpus_format_from_path(path)); }

std::vector<AnnotationEvent> load_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path + "'");
  return read_events_jsonl(in);
}

std::vector<GoldLabel> load_gold(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path + "'");
  return read_gold_jsonl(in);
}

struct ModelOpts {
  unsigned buckets = 1u << 18;
  std::vector<int> ngrams = {1, 2};
  bool keep_case = false;
  bool keep_hash = false;
  int epochs = 10;
  double lr = 0.1;
  int batch = 8;
  double l2 = 1e-6;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--buckets", buckets, "hash buckets")->capture_default_str();
    app->add_option("--ngrams", ngrams, "n-gram orders")->delimiter(',')->capture_default_str();
    app->add_flag("--keep-case", keep_case, "do not lowercase");
    app->add_flag("--keep-hash", keep_hash, "keep leading '#'");
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--lr", lr, "learning rate")->capture_default_str();
    app->add_option("--batch-size", batch)->capture_default_str();
    app->add_option("--l2", l2)->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
  }
  FeatureConfig features() const {
    FeatureConfig f;
    f.n_buckets = buckets;
    f.ngram_orders.assign(ngrams.begin(), ngrams.end());
    f.lowercase = !keep_case;
    f.strip_hash_prefix = !keep_hash;
    return f;
  }
  TrainConfig train() const {
    TrainConfig t;
    t.epochs = epochs;
    t.learning_rate = lr;
    t.batch_size = batch;
    t.l2 = l2;
    t.seed = seed;
    return t;
  }
};

json competence_json(const CompetenceModel& cm) {
  json ann = json::object();
  for (std::size_t j = 0; j < cm.annotators.size(); ++j) {
    json xi = json::object();
    for (Label l : cm.label_space) xi[std::string(label_name(l))] = cm.xi[j][code(l)];
    ann[cm.annotators[j]] = {{"competence", cm.theta[j]}, {"spam_distribution", xi}};
  }
  return json{{"annotators", ann},
              {"log_likelihood", cm.log_likelihood},
              {"objective", cm.objective},
              {"smoothing", cm.smoothing},
              {"best_restart", cm.best_restart}};
}

int run_serve(const std::string& config_path) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  std::optional<fs::path> cfg_path;
  if (!config_path.empty()) cfg_path = config_path;
  const auto cfg = load_service_config(cfg_path, [](const char* k) { return std::getenv(k); });
  AnnotationService svc(cfg);
  HttpFrontend http(svc);
  const int port = http.bind(cfg.listen_addr);
  std::cerr << "serving " << svc.study_ids().size() << " studies from " << cfg.data_dir.string()
            << " on port " << port << '\n';
  if (config_path.empty() || cfg.admin_token.empty()) {
    std::cerr << "admin token in " << (cfg.data_dir / "admin.token").string() << '\n';
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    std::cerr << "stopping\n";
    http.stop();
  });
  http.serve();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  svc.drain();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotation-study toolkit: corpus prep, suggestion models, aggregation, "
               "agreement analytics, simulation and the annotation service."};
  app.require_subcommand(1);
  int rc = 0;

  // filter
  std::string f_in, f_out, f_report, f_keywords;
  FilterConfig fcfg;
  bool f_no_kw = false, f_keep_dup = false, f_keep_rt = false;
  auto* filter = app.add_subcommand("filter", "drop retweets, off-topic, short and duplicate documents");
  filter->add_option("--in", f_in, "input corpus (.jsonl or .tsv)")->required();
  filter->add_option("--out", f_out, "output corpus")->required();
  filter->add_option("--report", f_report, "write the drop report JSON here (default stderr)");
  filter->add_option("--keywords", f_keywords, "keyword list file, one per line");
  filter->add_option("--min-length", fcfg.min_length, "minimum length in characters")->capture_default_str();
  filter->add_flag("--no-keyword-filter", f_no_kw);
  filter->add_flag("--keep-duplicates", f_keep_dup);
  filter->add_flag("--keep-retweets", f_keep_rt);
  filter->callback([&] {
    if (!f_keywords.empty()) {
      std::ifstream in(f_keywords);
      if (!in) throw NotFound("cannot open '" + f_keywords + "'");
      fcfg.keywords.clear();
      for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        if (!l.empty()) fcfg.keywords.push_back(l);
      }
    }
    fcfg.keyword_filter = !f_no_kw;
    fcfg.drop_duplicates = !f_keep_dup;
    fcfg.drop_retweets = !f_keep_rt;
    const auto res = filter_corpus(read_any_corpus(f_in), fcfg);
    auto out = open_out(f_out);
    write_corpus(out, res.corpus, corpus_format_from_path(f_out));
    const auto rep = json(res.report).dump(2) + "\n";
    if (f_report.empty()) std::cerr << rep;
    else emit(f_report, rep);
  });

  // sample
  std::string s_in, s_out;
  std::size_t s_n = 0;
  std::uint64_t s_seed = 0;
  auto* sample = app.add_subcommand("sample", "draw documents uniformly without replacement");
  sample->add_option("--in", s_in)->required();
  sample->add_option("--out", s_out)->required();
  sample->add_option("-n,--count", s_n)->required();
  sample->add_option("--seed", s_seed)->capture_default_str();
  sample->callback([&] {
    const auto c = sample_uniform(read_any_corpus(s_in), s_n, s_seed);
    auto out = open_out(s_out);
    write_corpus(out, c, corpus_format_from_path(s_out));
  });

  // train
  std::string t_data, t_holdout, t_out;
  std::int64_t t_version = 1;
  std::string t_created;
  ModelOpts t_opts;
  auto* trainc = app.add_subcommand("train", "train a suggestion model on labeled JSONL");
  trainc->add_option("--data", t_data, "labeled JSONL")->required();
  trainc->add_option("--holdout", t_holdout, "labeled JSONL; keeps the best epoch by macro-F1");
  trainc->add_option("--out", t_out, "snapshot path")->required();
  trainc->add_option("--version", t_version, "model version stamped in the snapshot")->capture_default_str();
  trainc->add_option("--created-at", t_created, "RFC 3339 timestamp to stamp (default now)");
  t_opts.add(trainc);
  trainc->callback([&] {
    const auto data = load_labeled(t_data);
    ModelSnapshot m(t_opts.features());
    json info;
    if (t_holdout.empty()) {
      m = train(data, t_opts.train(), t_opts.features());
    } else {
      const auto hold = load_labeled(t_holdout);
      auto sel = train_select_best(data, hold, t_opts.train(), t_opts.features());
      m = std::move(sel.model);
      info["best_epoch"] = sel.best_epoch;
      info["holdout_macro_f1"] = sel.holdout_macro_f1;
    }
    m.set_version(t_version);
    m.set_created_at(t_created.empty() ? now_utc() : parse_rfc3339(t_created));
    save_snapshot(m, t_out);
    info["training_size"] = m.train_size();
    info["fingerprint"] = m.train_fingerprint();
    info["final_loss"] = m.epoch_losses().empty() ? json(nullptr) : json(m.epoch_losses().back());
    std::cerr << info.dump() << '\n';
  });

  // predict
  std::string p_model, p_in, p_out;
  auto* predict = app.add_subcommand("predict", "label suggestions for a corpus, as JSONL");
  predict->add_option("--model", p_model)->required();
  predict->add_option("--in", p_in)->required();
  predict->add_option("--out", p_out, "default stdout");
  predict->callback([&] {
    const auto m = load_snapshot(p_model);
    std::ostringstream ss;
    for (const auto& d : read_any_corpus(p_in)) {
      const auto s = m.predict(d);
      json probs = json::object();
      for (Label l : kAllLabels) probs[std::string(label_name(l))] = s.probabilities[code(l)];
      ss << json{{"id", d.id},
                 {"label", label_name(s.label)},
                 {"confidence", s.confidence},
                 {"model_version", s.model_version},
                 {"probabilities", probs}}
                .dump()
         << '\n';
    }
    emit(p_out, ss.str());
  });

  // evaluate
  std::string e_model, e_data, e_out;
  auto* evalc = app.add_subcommand("evaluate", "accuracy, macro-F1 and confusion on labeled JSONL");
  evalc->add_option("--model", e_model)->required();
  evalc->add_option("--data", e_data)->required();
  evalc->add_option("--out", e_out, "default stdout");
  evalc->callback([&] {
    const auto m = load_snapshot(e_model);
    emit(e_out, json(evaluate(m, load_labeled(e_data))).dump(2) + "\n");
  });

  // aggregate
  std::string a_matrix, a_out, a_competence, a_method = "mace", a_tie = "lowest";
  double a_threshold = 1.0;
  double a_review = -1.0;
  MaceOptions mopt;
  double a_smoothing = -1.0;
  auto* aggregate = app.add_subcommand("aggregate", "gold labels from a multi-annotator TSV matrix");
  aggregate->add_option("--matrix", a_matrix, "TSV: item<TAB>annotator columns")->required();
  aggregate->add_option("--out", a_out, "gold JSONL (default stdout)");
  aggregate->add_option("--method", a_method)->check(CLI::IsMember({"mace", "majority"}))->capture_default_str();
  aggregate->add_option("--threshold", a_threshold, "MACE: keep this fraction of lowest-entropy items")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  aggregate->add_option("--iterations", mopt.iterations)->capture_default_str();
  aggregate->add_option("--restarts", mopt.restarts)->capture_default_str();
  aggregate->add_option("--smoothing", a_smoothing, "MAP prior strength (default 0.1/labels)");
  aggregate->add_option("--seed", mopt.seed)->capture_default_str();
  aggregate->add_option("--tie", a_tie, "majority ties")->check(CLI::IsMember({"lowest", "error"}))->capture_default_str();
  aggregate->add_option("--competence", a_competence, "MACE: write annotator competence JSON");
  aggregate->add_option("--review-entropy", a_review, "MACE: list items above this entropy on stderr");
  aggregate->callback([&] {
    const auto m = load_matrix_tsv(a_matrix);
    std::vector<GoldLabel> gold;
    if (a_method == "majority") {
      gold = majority_vote(m, a_tie == "error" ? TieBreak::error : TieBreak::lowest_code);
    } else {
      if (a_smoothing >= 0.0) mopt.smoothing = a_smoothing;
      const auto cm = mace_em(m, mopt);
      gold = mace_gold(cm, a_threshold);
      if (!a_competence.empty()) emit(a_competence, competence_json(cm).dump(2) + "\n");
      if (a_review >= 0.0) {
        for (const auto& id : review_candidates(cm, a_review)) std::cerr << "review\t" << id << '\n';
      }
    }
    std::ostringstream ss;
    write_gold_jsonl(ss, gold);
    emit(a_out, ss.str());
  });

  // kappa
  std::string k_matrix;
  bool k_common = false;
  auto* kappa = app.add_subcommand("kappa", "Fleiss' kappa of a TSV matrix");
  kappa->add_option("--matrix", k_matrix)->required();
  kappa->add_flag("--common-items", k_common, "restrict to items every annotator labeled");
  kappa->callback([&] {
    auto m = load_matrix_tsv(k_matrix);
    if (k_common) m = m.common_items();
    std::printf("%.6f\n", fleiss_kappa(m));
  });

  // simulate
  std::string sim_config, sim_out;
  int sim_threads = -1;
  auto* simulate = app.add_subcommand("simulate", "run a simulated-study sweep");
  simulate->add_option("--config", sim_config, "sweep TOML")->required();
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--threads", sim_threads, "override sweep.threads");
  simulate->callback([&] {
    auto cfg = load_sweep_toml(sim_config);
    if (sim_threads >= 0) cfg.threads = sim_threads;
    const auto rows = run_sweep(cfg, sim_out);
    // mean per grid point and group
    std::map<std::tuple<double, double, std::string>, std::pair<double, int>> kap;
    for (const auto& r : rows) {
      for (const auto& [g, s] : r.groups) {
        if (!s.kappa) continue;
        auto& [sum, n] = kap[{r.anchoring, r.fidelity, g}];
        sum += *s.kappa;
        ++n;
      }
    }
    std::printf("%-10s %-10s %-6s %s\n", "anchoring", "fidelity", "group", "mean kappa");
    for (const auto& [k, v] : kap) {
      std::printf("%-10.2f %-10.2f %-6s %.3f\n", std::get<0>(k), std::get<1>(k), std::get<2>(k).c_str(),
                  v.first / v.second);
    }
    std::cerr << rows.size() << " runs written to " << sim_out << '\n';
  });

  // report
  std::string r_events, r_gold, r_json, r_corr, r_corpus;
  int r_transfer_runs = 0;
  auto* report = app.add_subcommand("report", "agreement and acceptance tables from an event export");
  report->add_option("--events", r_events, "event JSONL export")->required();
  report->add_option("--gold", r_gold, "control gold JSONL")->required();
  report->add_option("--json", r_json, "also write all reports as JSON");
  report->add_option("--corrections-csv", r_corr, "write the correction matrix");
  report->add_option("--corpus", r_corpus, "documents, needed for --transfer-runs");
  report->add_option("--transfer-runs", r_transfer_runs, "run the cross-group transfer experiment");
  report->callback([&] {
    const auto events = load_events(r_events);
    const auto gold = load_gold(r_gold);
    const auto agreement = agreement_reports(events, gold);
    const auto acceptance = acceptance_rate(events);
    std::cout << render_agreement_table(agreement) << '\n' << render_acceptance_table(acceptance);
    for (const auto& w : acceptance.warnings) std::cerr << "warning: " << w << '\n';
    const auto outliers = flag_outliers(events);
    if (!outliers.empty()) {
      std::cout << "\nOutliers:";
      for (const auto& o : outliers) std::cout << ' ' << o;
      std::cout << '\n';
    }
    json j{{"agreement", agreement}, {"acceptance", acceptance}, {"outliers", outliers},
           {"control_accuracy", control_accuracy(events, gold)}};
    const auto corr = correction_matrix(events);
    json cj = json::array();
    for (const auto& row : corr) cj.push_back(row);
    j["corrections"] = cj;
    if (!r_corr.empty()) {
      auto out = open_out(r_corr);
      write_correction_csv(out, corr);
    }
    if (r_transfer_runs > 0) {
      if (r_corpus.empty()) throw InvalidArgument("--transfer-runs needs --corpus");
      const auto corpus = read_any_corpus(r_corpus);
      std::map<std::string, TransferGroup> groups;
      for (const auto& e : events) {
        if (e.is_control) continue;
        const auto* d = corpus.find(e.document_id);
        if (!d) throw NotFound("document '" + e.document_id + "' not in corpus");
        auto& g = groups[e.group];
        g.name = e.group;
        g.annotations.push_back({*d, e.chosen});
      }
      std::vector<TransferGroup> gv;
      for (auto& [n, g] : groups) gv.push_back(std::move(g));
      TransferOptions to;
      to.runs = r_transfer_runs;
      const auto tm = transfer_experiment(gv, to);
      std::cout << '\n' << render_transfer_table(tm);
      j["transfer"] = tm;
    }
    if (!r_json.empty()) emit(r_json, j.dump(2) + "\n");
  });

  // serve
  std::string v_config;
  auto* serve = app.add_subcommand("serve", "run the HTTP annotation service");
  serve->add_option("--config", v_config, "service TOML (LISTEN_ADDR, DATA_DIR, STUDY_SEED override)");
  serve->callback([&] { rc = run_serve(v_config); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
