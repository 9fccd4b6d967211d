#include <fstream>
#include <sstream>

#include "annostudy/error.hpp"
#include "annostudy/simharness.hpp"
#include "doctest.h"
#include "support/temp_dir.hpp"

using namespace annostudy;

namespace {

SimStudyConfig small_sim(std::uint64_t seed) {
  SimStudyConfig c;
  c.study.annotators_per_group = 3;
  c.study.new_per_round = 20;
  c.study.control_per_round = 10;
  c.study.retrain_batch = 5;
  c.study.seed = seed;
  c.study.features.n_buckets = 1u << 14;
  c.study.train.epochs = 5;
  c.seed = seed;
  return c;
}

WorldConfig small_world(std::uint64_t seed) {
  WorldConfig w;
  w.pool_size = 400;
  w.expert_size = 100;
  w.seed = seed;
  return w;
}

}  // namespace

TEST_CASE("full anchoring always takes the suggestion") {
  SimAnnotatorConfig c;
  c.anchoring_prob = 1.0;
  c.seed = 3;
  SimAnnotator a(c);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.decide(Label::Support, Label::Refute).chosen == Label::Refute);
  }
}

TEST_CASE("no anchoring and perfect accuracy returns the truth") {
  SimAnnotatorConfig c;
  c.per_class_accuracy.fill(1.0);
  c.seed = 4;
  SimAnnotator a(c);
  for (int i = 0; i < 1000; ++i) {
    const Label t = kAllLabels[static_cast<std::size_t>(i) % kNumLabels];
    CHECK(a.decide(t, Label::Unrelated == t ? Label::Comment : Label::Unrelated).chosen == t);
  }
}

TEST_CASE("half anchoring follows a wrong suggestion about half the time") {
  SimAnnotatorConfig c;
  c.anchoring_prob = 0.5;
  c.per_class_accuracy.fill(1.0);
  c.seed = 5;
  SimAnnotator a(c);
  int followed = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) followed += a.decide(Label::Comment, Label::Refute).chosen == Label::Refute;
  CHECK(static_cast<double>(followed) / n == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("error draws are uniform over the other labels and latency is truncated") {
  SimAnnotatorConfig c;
  c.per_class_accuracy.fill(0.0);
  c.latency_mean = 0.0;
  c.latency_sd = 1.0;
  c.seed = 6;
  // latency_mean must be positive
  CHECK_THROWS_AS(SimAnnotator{c}, InvalidArgument);
  c.latency_mean = 0.2;
  SimAnnotator a(c);
  PerLabel<int> counts{};
  for (int i = 0; i < 9000; ++i) {
    const auto d = a.decide(Label::Support, std::nullopt);
    ++counts[code(d.chosen)];
    CHECK(d.latency >= 0.1);
  }
  CHECK(counts[code(Label::Support)] == 0);
  for (Label l : {Label::Unrelated, Label::Comment, Label::Refute}) {
    CHECK(counts[code(l)] == doctest::Approx(3000).epsilon(0.08));
  }
}

TEST_CASE("world keywords track the truth at the configured fidelity") {
  auto w = small_world(1);
  w.pool_size = 2000;
  w.keyword_fidelity = 1.0;
  const auto world = make_world(w);
  CHECK(world.inputs.pool.size() == 2000);
  CHECK(world.inputs.expert_gold.size() == 100);
  for (const auto& d : world.inputs.expert_gold) CHECK(d.label == world.truth.at(d.doc.id));
  // a model on perfect keywords is near perfect
  FeatureConfig fc;
  fc.n_buckets = 1u << 14;
  TrainConfig tc;
  const auto m = train(world.inputs.expert_gold, tc, fc);
  std::size_t ok = 0;
  for (const auto& d : world.inputs.pool) ok += m.predict_label(d.text) == world.truth.at(d.id);
  CHECK(static_cast<double>(ok) / 2000.0 > 0.95);

  // determinism
  const auto again = make_world(w);
  CHECK(again.inputs.pool[0].text == world.inputs.pool[0].text);
  CHECK(again.inputs.expert_gold.back().doc.text == world.inputs.expert_gold.back().doc.text);
}

TEST_CASE("simulated experts are aggregated by MACE") {
  auto w = small_world(2);
  w.simulated_experts = 5;
  w.expert_accuracy = 0.85;
  const auto world = make_world(w);
  REQUIRE(world.expert_matrix.has_value());
  CHECK(world.expert_matrix->annotators().size() == 5);
  std::size_t ok = 0;
  for (const auto& d : world.inputs.expert_gold) ok += d.label == world.truth.at(d.doc.id);
  CHECK(static_cast<double>(ok) / 100.0 > 0.9);
}

TEST_CASE("simulated study covers every item and routes suggestions") {
  const auto world = make_world(small_world(3));
  const auto cfg = small_sim(3);
  const auto r = run_simulated_study(cfg, world);
  CHECK(r.events.size() == 9u * 2u * 30u);
  for (const auto& [g, s] : r.groups) {
    CHECK(s.events == 3u * 60u);
    CHECK(s.non_control_events == 3u * 40u);
  }
  for (const auto& e : r.events) {
    if (e.group == "G1") CHECK_FALSE(e.suggestion.has_value());
    if (e.group == "G2") CHECK(e.suggestion.has_value());
    if (e.group == "G2") CHECK(e.suggestion->model_version == Study::kExpertVersion);
  }
  CHECK_FALSE(r.groups.at("G1").acceptance.has_value());
  CHECK(r.groups.at("G2").acceptance.has_value());
  CHECK(r.retrain_sizes.size() == 3);
  for (const auto& [id, sizes] : r.retrain_sizes) {
    REQUIRE(sizes.size() == 8);
    for (std::size_t k = 0; k < sizes.size(); ++k) CHECK(sizes[k] == 100 + 5 * (k + 1));
  }
  CHECK(r.expert_model_accuracy > 0.8);
}

TEST_CASE("perfect annotators agree completely") {
  const auto world = make_world(small_world(4));
  auto cfg = small_sim(4);
  cfg.annotator.per_class_accuracy.fill(1.0);
  const auto r = run_simulated_study(cfg, world);
  for (const auto& [g, s] : r.groups) {
    REQUIRE(s.kappa.has_value());
    CHECK(*s.kappa == doctest::Approx(1.0));
    CHECK(s.accuracy == doctest::Approx(1.0));
  }
}

TEST_CASE("anchoring on a good model raises agreement of the static group") {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto world = make_world(small_world(seed));
    auto cfg = small_sim(seed);
    cfg.annotator.anchoring_prob = 0.7;
    const auto r = run_simulated_study(cfg, world);
    wins += *r.groups.at("G2").kappa > *r.groups.at("G1").kappa;
  }
  CHECK(wins == 3);
}

TEST_CASE("simulation is deterministic and reports recompute from events") {
  const auto world = make_world(small_world(5));
  auto cfg = small_sim(5);
  cfg.annotator.anchoring_prob = 0.3;
  const auto a = run_simulated_study(cfg, world);
  const auto b = run_simulated_study(cfg, world);
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
  CHECK(a.log == b.log);
  const auto c = recompute_reports(a);
  CHECK(nlohmann::json(c).dump() == nlohmann::json(a).dump());

  // events survive the export round trip
  std::stringstream ss;
  write_events_jsonl(ss, a.events);
  SimStudyResult d = a;
  d.events = read_events_jsonl(ss);
  CHECK(nlohmann::json(recompute_reports(d)).dump() == nlohmann::json(a).dump());
}

TEST_CASE("per-group annotator overrides") {
  const auto world = make_world(small_world(6));
  auto cfg = small_sim(6);
  SimAnnotatorConfig perfect;
  perfect.per_class_accuracy.fill(1.0);
  cfg.per_group["G1"] = perfect;
  cfg.annotator.per_class_accuracy.fill(0.4);
  const auto r = run_simulated_study(cfg, world);
  CHECK(r.groups.at("G1").accuracy == doctest::Approx(1.0));
  CHECK(r.groups.at("G2").accuracy < 0.9);
}

TEST_CASE("transfer runs on simulated groups") {
  const auto world = make_world(small_world(7));
  auto cfg = small_sim(7);
  cfg.run_transfer = true;
  cfg.transfer.runs = 2;
  const auto r = run_simulated_study(cfg, world);
  REQUIRE(r.transfer.has_value());
  CHECK(r.transfer->groups.size() == 3);
}

TEST_CASE("sweep TOML parsing") {
  const auto c = parse_sweep_toml(R"(
[study]
annotators_per_group = 2
new_per_round = 20
control_per_round = 10
retrain_batch = 5
n_buckets = 4096
epochs = 3

[world]
pool_size = 300
expert_size = 60

[annotator]
accuracy = [0.9, 0.7, 0.7, 0.5]
latency_mean = 5

[sweep]
anchoring_prob = [0.0, 0.7]
keyword_fidelity = 0.9
seeds = [1, 2]
threads = 2
)");
  CHECK(c.base.study.annotators_per_group == 2);
  CHECK(c.base.study.features.n_buckets == 4096);
  CHECK(c.base.study.train.epochs == 3);
  CHECK(c.world.pool_size == 300);
  CHECK(c.base.annotator.per_class_accuracy[0] == 0.9);
  CHECK(c.base.annotator.per_class_accuracy[3] == 0.5);
  CHECK(c.base.annotator.latency_mean == 5.0);
  CHECK(c.anchoring == std::vector<double>{0.0, 0.7});
  CHECK(c.fidelity == std::vector<double>{0.9});
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.threads == 2);

  CHECK_THROWS_AS(parse_sweep_toml("[study]\nbogus = 1\n"), ParseError);
  CHECK_THROWS_AS(parse_sweep_toml("[nope]\n"), ParseError);
  CHECK_THROWS_AS(parse_sweep_toml("[study]\nrounds = \"two\"\n"), ParseError);
  CHECK_THROWS_AS(parse_sweep_toml("[sweep]\nanchoring_prob = [1.5]\n"), ParseError);
  CHECK_THROWS_AS(parse_sweep_toml("[study\n"), ParseError);
  try {
    parse_sweep_toml("\n\n[study]\nrounds = \"two\"\n");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("study.rounds") != std::string::npos);
  }
}

TEST_CASE("sweep writes runs and a summary") {
  testing::TempDir tmp;
  auto c = parse_sweep_toml(R"(
[study]
annotators_per_group = 2
new_per_round = 10
control_per_round = 5
retrain_batch = 5
n_buckets = 4096
epochs = 3
[world]
pool_size = 150
expert_size = 40
[sweep]
anchoring_prob = [0.0, 0.7]
seeds = [1, 2]
)");
  const auto rows = run_sweep(c, tmp.path());
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(std::filesystem::exists(tmp.path() / r.dir / "events.jsonl"));
    CHECK(std::filesystem::exists(tmp.path() / r.dir / "report.json"));
  }
  std::ifstream csv(tmp.path() / "summary.csv");
  std::string line;
  int n = 0;
  while (std::getline(csv, line)) ++n;
  CHECK(n == 1 + 4 * 3);
  // threads do not change results
  c.threads = 1;
  testing::TempDir tmp2;
  const auto rows1 = run_sweep(c, tmp2.path());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(nlohmann::json(rows[i].groups).dump() == nlohmann::json(rows1[i].groups).dump());
  }
}
