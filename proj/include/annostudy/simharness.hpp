#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "annostudy/aggregation.hpp"
#include "annostudy/metrics.hpp"
#include "annostudy/orchestrator.hpp"
#include "annostudy/rng.hpp"
#include "json.hpp"

namespace annostudy {

// Anchor-then-judge annotator: with probability anchoring_prob a shown
// suggestion is taken as is; otherwise the annotator picks the true label with
// per_class_accuracy[true], else a uniformly drawn other label.
struct SimAnnotatorConfig {
  PerLabel<double> per_class_accuracy = {0.7, 0.7, 0.7, 0.7};
  double anchoring_prob = 0.0;
  double latency_mean = 8.0;  // seconds
  double latency_sd = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SimDecision {
  Label chosen = Label::Unrelated;
  double latency = 0.0;  // seconds, >= 0.1
};

class SimAnnotator {
 public:
  explicit SimAnnotator(SimAnnotatorConfig cfg);
  SimDecision decide(Label truth, std::optional<Label> suggestion);
  const SimAnnotatorConfig& config() const { return cfg_; }

 private:
  SimAnnotatorConfig cfg_;
  Rng rng_;
};

// Keyword-planted synthetic corpus. Every document carries one class keyword;
// with probability `keyword_fidelity` it belongs to the document's true
// class, otherwise to a uniformly drawn other class. A model trained on the
// keywords therefore reaches roughly `keyword_fidelity` accuracy.
struct WorldConfig {
  std::size_t pool_size = 3000;
  std::size_t expert_size = 200;
  double keyword_fidelity = 0.9;
  // Unrelated / Comment / Support / Refute.
  PerLabel<double> class_prior = {0.265, 0.445, 0.215, 0.075};
  // 0 = expert gold is the oracle label; otherwise this many simulated
  // experts label the expert set and MACE aggregates them.
  int simulated_experts = 0;
  double expert_accuracy = 0.85;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticWorld {
  StudyInputs inputs;
  std::unordered_map<std::string, Label> truth;
  // Set when simulated experts were used.
  std::optional<AnnotationMatrix> expert_matrix;
};

SyntheticWorld make_world(const WorldConfig& cfg);

struct SimStudyConfig {
  StudyConfig study;
  SimAnnotatorConfig annotator;  // defaults for everyone
  std::map<std::string, SimAnnotatorConfig> per_group;  // overrides by group name
  bool run_transfer = false;
  TransferOptions transfer;
  std::uint64_t seed = 0;
};

struct GroupSummary {
  std::optional<double> kappa;
  double accuracy = 0.0;
  std::optional<double> acceptance;
  std::size_t events = 0;
  std::size_t non_control_events = 0;
};

struct SimStudyResult {
  std::vector<AnnotationEvent> events;
  std::vector<nlohmann::json> log;
  std::vector<GoldLabel> control_gold;
  std::vector<AgreementReport> agreement;
  AcceptanceReport acceptance;
  CorrectionMatrix corrections{};
  std::map<std::string, std::vector<DivergencePoint>> divergence;
  std::map<std::string, std::vector<std::size_t>> retrain_sizes;
  std::vector<std::string> outliers;
  std::optional<TransferMatrix> transfer;
  std::map<std::string, GroupSummary> groups;
  double expert_model_accuracy = 0.0;  // on the pool's oracle labels
};

// Drives every annotator through every round. Retraining is synchronous so
// the run is a pure function of its inputs.
SimStudyResult run_simulated_study(const SimStudyConfig& cfg, const SyntheticWorld& world);

// Recomputes the analytics of `r` from its event log alone.
SimStudyResult recompute_reports(const SimStudyResult& r);

void to_json(nlohmann::json& j, const GroupSummary& g);
void to_json(nlohmann::json& j, const SimStudyResult& r);

// Parameter sweep: anchoring_prob x keyword_fidelity x seeds.
struct SweepConfig {
  SimStudyConfig base;
  WorldConfig world;
  std::vector<double> anchoring;
  std::vector<double> fidelity;
  std::vector<std::uint64_t> seeds;
  int threads = 0;  // 0 = hardware concurrency
};

// Parses a sweep TOML document. Throws ParseError with the offending key.
SweepConfig parse_sweep_toml(std::string_view toml);
SweepConfig load_sweep_toml(const std::filesystem::path& path);

struct SweepRow {
  double anchoring = 0.0;
  double fidelity = 0.0;
  std::uint64_t seed = 0;
  std::string dir;
  std::map<std::string, GroupSummary> groups;
  double expert_model_accuracy = 0.0;
};

// Runs every grid point and writes
// <out>/<run>/{events.jsonl,control_gold.jsonl,report.json}
// plus <out>/summary.csv. Returns rows in grid order.
std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const std::filesystem::path& out);

}  // namespace annostudy
