#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "annostudy/error.hpp"
#include "annostudy/metrics.hpp"
#include "doctest.h"
#include "support/keyword_corpus.hpp"

using namespace annostudy;

namespace {

constexpr Label U = Label::Unrelated;
constexpr Label C = Label::Comment;
constexpr Label S = Label::Support;
constexpr Label R = Label::Refute;

AnnotationMatrix dense(const std::vector<std::vector<Label>>& rows) {
  std::vector<std::string> items, annotators;
  for (std::size_t i = 0; i < rows.size(); ++i) items.push_back("i" + std::to_string(i));
  for (std::size_t j = 0; j < rows.at(0).size(); ++j) annotators.push_back("a" + std::to_string(j));
  AnnotationMatrix m(items, annotators);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.set(i, j, rows[i][j]);
  }
  return m;
}

AnnotationEvent event(std::string annotator, std::string group, std::string doc, Label chosen,
                      std::optional<Label> suggested = std::nullopt, int round = 1,
                      bool control = false, double latency = 5.0) {
  AnnotationEvent e;
  e.annotator_id = std::move(annotator);
  e.group = std::move(group);
  e.document_id = std::move(doc);
  e.chosen = chosen;
  e.round = round;
  e.is_control = control;
  if (suggested) {
    Suggestion s;
    s.document_id = e.document_id;
    s.label = *suggested;
    s.confidence = 0.6;
    s.model_version = 1;
    e.suggestion = s;
  }
  e.started_at = Timestamp{std::chrono::milliseconds{1'600'000'000'000}};
  e.submitted_at = e.started_at + std::chrono::milliseconds{static_cast<long>(latency * 1000)};
  return e;
}

const std::vector<std::vector<Label>> kKappaFixture = {
    {U, U, U}, {U, C, U}, {C, C, C}, {S, S, C}, {R, R, R},
    {S, S, S}, {U, R, R}, {C, C, U}, {S, R, S}, {U, U, C}};

}  // namespace

TEST_CASE("fleiss_kappa") {
  SUBCASE("identical annotators") { CHECK(fleiss_kappa(dense({{U, U}, {S, S}, {R, R}})) == 1.0); }
  SUBCASE("perfect disagreement over two classes") {
    CHECK(fleiss_kappa(dense({{U, C}, {C, U}})) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("10-item, 3-annotator fixture") {
    // Worked by hand with exact fractions: P = 0.6, Pe = 23/90, kappa = 31/67.
    CHECK(std::abs(fleiss_kappa(dense(kKappaFixture)) - 31.0 / 67.0) < 1e-9);
  }
  SUBCASE("invariant under relabeling and annotator order") {
    const double k = fleiss_kappa(dense(kKappaFixture));
    std::vector<std::vector<Label>> relabeled = kKappaFixture, reordered = kKappaFixture;
    const PerLabel<Label> perm = {R, S, U, C};
    for (auto& r : relabeled) {
      for (auto& l : r) l = perm[code(l)];
    }
    for (auto& r : reordered) std::rotate(r.begin(), r.begin() + 1, r.end());
    CHECK(fleiss_kappa(dense(relabeled)) == doctest::Approx(k).epsilon(1e-12));
    CHECK(fleiss_kappa(dense(reordered)) == doctest::Approx(k).epsilon(1e-12));
  }
  SUBCASE("ragged matrix asks for common items") {
    AnnotationMatrix m({"x", "y"}, {"a", "b", "c"});
    m.set("x", "a", U);
    m.set("x", "b", U);
    m.set("x", "c", C);
    m.set("y", "a", S);
    m.set("y", "b", S);
    try {
      fleiss_kappa(m);
      FAIL("expected error");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("common items") != std::string::npos);
    }
    CHECK(fleiss_kappa(m.common_items()) == doctest::Approx(-0.5));  // P = 1/3, Pe = 5/9
  }
  SUBCASE("one label everywhere is perfect agreement") {
    CHECK(fleiss_kappa(dense({{S, S, S}, {S, S, S}})) == 1.0);
  }
  SUBCASE("single annotator") { CHECK_THROWS_AS(fleiss_kappa(dense({{S}, {U}})), InvalidArgument); }
}

TEST_CASE("control_accuracy") {
  std::vector<GoldLabel> gold;
  for (int i = 0; i < 60; ++i) gold.push_back({"c" + std::to_string(i), kAllLabels[i % 4]});

  SUBCASE("all correct") {
    std::vector<AnnotationEvent> ev;
    for (const auto& g : gold) ev.push_back(event("a", "G1", g.document_id, g.label, {}, 1, true));
    CHECK(control_accuracy(ev, gold).overall.rate() == 1.0);
  }
  SUBCASE("45 of 60") {
    std::vector<AnnotationEvent> ev;
    for (int i = 0; i < 60; ++i) {
      const Label l = i < 45 ? gold[i].label : kAllLabels[(i + 1) % 4];
      ev.push_back(event("a", "G1", gold[i].document_id, l, {}, 1 + i / 30, true));
    }
    // non-control events are ignored
    ev.push_back(event("a", "G1", "n1", U));
    const auto acc = control_accuracy(ev, gold);
    CHECK(acc.overall.rate() == 0.75);
    CHECK(acc.overall.total == 60);
    CHECK(acc.by_group_round.at("G1").at(1).rate() == 1.0);
    CHECK(acc.by_group_round.at("G1").at(2).rate() == doctest::Approx(0.5));
    CHECK(acc.by_group_round.at("G1").at(0).rate() == 0.75);
  }
  SUBCASE("missing gold names the document") {
    std::vector<AnnotationEvent> ev = {event("a", "G1", "nope", U, {}, 1, true)};
    try {
      control_accuracy(ev, gold);
      FAIL("expected error");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
  }
}

TEST_CASE("agreement_reports mirror the round/total layout") {
  std::vector<GoldLabel> gold;
  std::vector<AnnotationEvent> ev;
  for (int r = 1; r <= 2; ++r) {
    for (int i = 0; i < 5; ++i) {
      const std::string id = "r" + std::to_string(r) + "c" + std::to_string(i);
      gold.push_back({id, kAllLabels[i % 4]});
      for (const char* g : {"G1", "G2"}) {
        for (int a = 0; a < 3; ++a) {
          const std::string ann = std::string(g) + "-" + std::to_string(a);
          // G2 annotator 2 mislabels everything in round 2
          const bool wrong = std::string(g) == "G2" && a == 2 && r == 2;
          ev.push_back(event(ann, g, id, wrong ? kAllLabels[(i + 1) % 4] : kAllLabels[i % 4],
                             {}, r, true));
        }
      }
    }
  }
  const auto reports = agreement_reports(ev, gold);
  REQUIRE(reports.size() == 6);
  CHECK(reports[0].group == "G1");
  CHECK(reports[0].round == 1);
  CHECK(reports[2].round == 0);
  CHECK(reports[2].n_items == 10);
  CHECK(reports[2].n_annotators == 3);
  CHECK(*reports[2].kappa == 1.0);
  CHECK(reports[4].group == "G2");
  CHECK(reports[4].round == 2);
  CHECK(reports[4].accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(*reports[4].kappa < 1.0);
  const auto table = render_agreement_table(reports);
  CHECK(table.find("Round 1") != std::string::npos);
  CHECK(table.find("Total") != std::string::npos);
  CHECK(table.find("G2") != std::string::npos);
}

TEST_CASE("acceptance_rate") {
  SUBCASE("73 of 100") {
    std::vector<AnnotationEvent> ev;
    for (int i = 0; i < 100; ++i) {
      ev.push_back(event("a", "G2", "d" + std::to_string(i), i < 73 ? S : U, S));
    }
    const auto r = acceptance_rate(ev);
    CHECK(r.annotators.at("a").rate() == doctest::Approx(0.73));
    CHECK(r.group_rate.at("G2") == doctest::Approx(0.73));
    CHECK(r.warnings.empty());
  }
  SUBCASE("no suggestions at all") {
    std::vector<AnnotationEvent> ev = {event("a", "G1", "d", U)};
    const auto r = acceptance_rate(ev);
    CHECK(r.annotators.empty());
    CHECK(r.group_rate.empty());
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("simulated group accepting with probability 0.7") {
    std::mt19937_64 gen(42);
    std::bernoulli_distribution accept(0.7);
    std::vector<AnnotationEvent> ev;
    for (int a = 0; a < 7; ++a) {
      for (int i = 0; i < 70; ++i) {
        ev.push_back(event("s" + std::to_string(a), "G3", "d" + std::to_string(i),
                           accept(gen) ? C : R, C));
      }
    }
    const auto r = acceptance_rate(ev);
    CHECK(std::abs(r.group_rate.at("G3") - 0.7) <= 0.03);
    double lo = 1.0, hi = 0.0;
    for (const auto& [id, a] : r.annotators) {
      lo = std::min(lo, a.rate());
      hi = std::max(hi, a.rate());
    }
    CHECK(r.group_rate.at("G3") >= lo);
    CHECK(r.group_rate.at("G3") <= hi);
  }
  SUBCASE("macro mean over annotators, per round") {
    std::vector<AnnotationEvent> ev;
    for (int i = 0; i < 10; ++i) ev.push_back(event("fast", "G2", "f" + std::to_string(i), S, S));
    ev.push_back(event("slow", "G2", "s0", U, S, 2));
    ev.push_back(event("none", "G2", "n0", U));
    const auto r = acceptance_rate(ev);
    CHECK(r.group_rate.at("G2") == doctest::Approx(0.5));
    CHECK(r.group_round_rate.at("G2").at(1) == 1.0);
    CHECK(r.group_round_rate.at("G2").at(2) == 0.0);
    CHECK(r.annotators.at("fast").accepted_by_round.at(1) == 10);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("none") != std::string::npos);
  }
}

TEST_CASE("correction_matrix") {
  SUBCASE("all accepted") {
    std::vector<AnnotationEvent> ev = {event("a", "G2", "1", S, S), event("a", "G2", "2", R, R)};
    for (const auto& row : correction_matrix(ev)) {
      for (auto v : row) CHECK(v == 0);
    }
  }
  SUBCASE("fixture log against a hand tally") {
    std::vector<AnnotationEvent> ev = {
        event("a", "G2", "1", U, R),  // Refute -> Unrelated
        event("a", "G2", "2", U, R),  // Refute -> Unrelated
        event("a", "G2", "3", C, S),  // Support -> Comment
        event("b", "G3", "4", S, S),  // accepted
        event("b", "G3", "5", R, C),  // Comment -> Refute
        event("b", "G3", "6", U),     // no suggestion
    };
    const auto m = correction_matrix(ev);
    CHECK(m[code(R)][code(U)] == 2);
    CHECK(m[code(S)][code(C)] == 1);
    CHECK(m[code(C)][code(R)] == 1);
    std::size_t sum = 0, diag = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) sum += m[i][j];
      diag += m[i][i];
    }
    CHECK(sum == 4);  // shown 5, accepted 1
    CHECK(diag == 0);
    std::ostringstream csv;
    write_correction_csv(csv, m);
    CHECK(csv.str().find("Refute,2,0,0,0") != std::string::npos);
  }
}

TEST_CASE("divergence_series") {
  FeatureConfig f;
  f.n_buckets = 1u << 12;
  std::vector<Document> docs;
  for (const char* t : {"alpha beta", "gamma delta", "epsilon zeta", "solitary"}) {
    docs.push_back(Document::make(std::string("e") + t, t));
  }
  const Corpus eval(docs);
  const ModelSnapshot fixed(f);

  SUBCASE("identical snapshot") {
    std::vector<ModelSnapshot> snaps = {fixed, fixed, fixed};
    const auto s = divergence_series(fixed, snaps, eval);
    REQUIRE(s.size() == 3);
    for (const auto& p : s) CHECK(p.differing == 0);
  }
  SUBCASE("one edited weight moves one document") {
    const auto feats = featurize("solitary", f);
    REQUIRE(feats.size() == 1);
    for (std::size_t i = 0; i + 1 < docs.size(); ++i) {
      for (const auto& x : featurize(docs[i].text, f)) REQUIRE(x.index != feats[0].index);
    }
    auto edited = fixed.with_weight(S, feats[0].index, 5.0);
    edited.set_version(7);
    std::vector<ModelSnapshot> snaps = {edited};
    const auto s = divergence_series(fixed, snaps, eval);
    CHECK(s[0].differing == 1);
    CHECK(s[0].model_version == 7);
  }
  SUBCASE("feature mismatch") {
    FeatureConfig g = f;
    g.hash_seed = 1;
    std::vector<ModelSnapshot> snaps = {ModelSnapshot(g)};
    CHECK_THROWS_AS(divergence_series(fixed, snaps, eval), InvalidArgument);
  }
}

TEST_CASE("flag_outliers") {
  std::vector<AnnotationEvent> ev;
  for (int i = 0; i < 100; ++i) {
    const std::string d = "d" + std::to_string(i);
    ev.push_back(event("clicker", "G2", d, i == 0 ? U : S, S, 1, false, 0.5));
    ev.push_back(event("careful", "G2", d, S, S, 1, false, 7.0));
    ev.push_back(event("nosugg", "G1", d, S, {}, 1, false, 0.3));
  }
  CHECK(flag_outliers(ev) == std::vector<std::string>{"clicker"});
  CHECK(flag_outliers(std::vector<AnnotationEvent>{}).empty());
}

TEST_CASE("stratified_split") {
  auto data = testing::keyword_corpus(200, 5);
  const auto s = stratified_split(data, 0.8, 9);
  CHECK(s.train.size() + s.holdout.size() == data.size());
  PerLabel<int> all{}, held{};
  for (const auto& d : data) ++all[code(d.label)];
  for (const auto& d : s.holdout) ++held[code(d.label)];
  for (std::size_t k = 0; k < 4; ++k) CHECK(held[k] == std::lround(0.2 * all[k]));
  std::set<std::string> ids;
  for (const auto& d : s.train) ids.insert(d.doc.id);
  for (const auto& d : s.holdout) CHECK(ids.count(d.doc.id) == 0);
  const auto again = stratified_split(data, 0.8, 9);
  CHECK(again.holdout.front().doc.id == s.holdout.front().doc.id);
}

TEST_CASE("transfer_experiment") {
  TransferOptions opts;
  opts.features.n_buckets = 1u << 12;
  opts.train.epochs = 8;
  opts.runs = 3;
  opts.seed = 17;

  auto group = [](std::string name, std::vector<LabeledDocument> docs) {
    return TransferGroup{std::move(name), std::move(docs)};
  };

  SUBCASE("separable groups score high everywhere; shape matches") {
    std::vector<TransferGroup> g = {group("G1", testing::keyword_corpus(150, 1, "a")),
                                    group("G2", testing::keyword_corpus(150, 2, "b")),
                                    group("G3", testing::keyword_corpus(150, 3, "c"))};
    const auto t = transfer_experiment(g, opts);
    REQUIRE(t.mean.size() == 3);
    for (const auto& row : t.mean) {
      REQUIRE(row.size() == 3);
      for (double v : row) CHECK(v >= 0.95);
    }
    CHECK(t.per_run.size() == 3);
    CHECK(render_transfer_table(t).find("G3") != std::string::npos);
  }
  SUBCASE("identical groups: off-diagonal close to diagonal") {
    const auto docs = testing::keyword_corpus(150, 4);
    std::vector<TransferGroup> g = {group("A", docs), group("B", docs)};
    const auto t = transfer_experiment(g, opts);
    CHECK(std::abs(t.mean[0][1] - t.mean[1][1]) < 0.05);
    CHECK(std::abs(t.mean[1][0] - t.mean[0][0]) < 0.05);
  }
  SUBCASE("a group with shuffled labels transfers poorly") {
    auto noisy = testing::keyword_corpus(200, 6, "n");
    std::mt19937 gen(2);
    std::vector<Label> labels;
    for (const auto& d : noisy) labels.push_back(d.label);
    std::shuffle(labels.begin(), labels.end(), gen);
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i].label = labels[i];
    std::vector<TransferGroup> g = {group("clean", testing::keyword_corpus(200, 7, "c")),
                                    group("noisy", noisy)};
    const auto t = transfer_experiment(g, opts);
    CHECK(t.mean[1][0] < 0.5);
    CHECK(t.mean[0][1] < 0.5);
    CHECK(t.mean[0][0] > 0.9);
  }
  SUBCASE("multi-annotator labels are resolved by majority") {
    auto base = testing::keyword_corpus(20, 8);
    std::vector<LabeledDocument> ann;
    for (const auto& d : base) {
      ann.push_back(d);
      ann.push_back(d);
      ann.push_back({d.doc, kAllLabels[(code(d.label) + 1) % 4]});
    }
    const auto r = resolve_by_majority(ann);
    REQUIRE(r.size() == 20);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].label == base[i].label);
  }
  SUBCASE("errors") {
    std::vector<TransferGroup> small = {group("x", testing::keyword_corpus(9, 1)),
                                        group("y", testing::keyword_corpus(50, 2))};
    CHECK_THROWS_AS(transfer_experiment(small, opts), InvalidArgument);
    std::vector<TransferGroup> one = {group("x", testing::keyword_corpus(50, 1))};
    CHECK_THROWS_AS(transfer_experiment(one, opts), InvalidArgument);
  }
}

TEST_CASE("event export round trip") {
  std::vector<AnnotationEvent> ev = {event("a", "G2", "1", U, R, 2, true, 3.25),
                                     event("b", "G1", "2", C)};
  std::stringstream buf;
  write_events_jsonl(buf, ev);
  const auto first = nlohmann::json::parse(buf.str().substr(0, buf.str().find('\n')));
  CHECK(first["suggestion_label"] == "Refute");
  CHECK(first["accepted"] == false);
  const auto back = read_events_jsonl(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].latency_seconds() == doctest::Approx(3.25));
  CHECK(back[0].is_control);
  CHECK(back[0].round == 2);
  CHECK(back[0].suggestion->label == R);
  CHECK_FALSE(back[1].suggestion.has_value());
  CHECK_FALSE(back[1].accepted().has_value());
}
