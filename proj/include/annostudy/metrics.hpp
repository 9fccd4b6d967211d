#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "annostudy/aggregation.hpp"
#include "annostudy/corpus.hpp"
#include "annostudy/events.hpp"
#include "annostudy/suggester.hpp"
#include "json.hpp"

namespace annostudy {

// ------------------------------------------------------------ agreement

// Fleiss' kappa. Every item must carry the same number n >= 2 of labels.
double fleiss_kappa(const AnnotationMatrix& m);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct ControlAccuracy {
  Tally overall;
  // group -> round -> tally; round 0 holds the group total.
  std::map<std::string, std::map<int, Tally>> by_group_round;
};

// Micro accuracy over control-item events against gold.
ControlAccuracy control_accuracy(std::span<const AnnotationEvent> events,
                                 std::span<const GoldLabel> gold);

struct AgreementReport {
  std::string group;
  int round = 0;  // 0 = all rounds
  std::optional<double> kappa;  // unset when undefined (< 2 annotators or no common items)
  double accuracy = 0.0;
  std::size_t n_items = 0;
  std::size_t n_annotators = 0;
};

// Per group and round (plus a round-0 total): control accuracy and Fleiss'
// kappa over the group's control items that every member labeled.
std::vector<AgreementReport> agreement_reports(std::span<const AnnotationEvent> events,
                                               std::span<const GoldLabel> gold);

// --------------------------------------------------------------- bias

struct AnnotatorAcceptance {
  std::string group;
  std::size_t shown = 0;
  std::size_t accepted = 0;
  std::map<int, std::size_t> accepted_by_round;
  std::map<int, std::size_t> shown_by_round;
  double rate() const { return shown ? static_cast<double>(accepted) / shown : 0.0; }
};

struct AcceptanceReport {
  std::map<std::string, AnnotatorAcceptance> annotators;
  // Unweighted mean over the group's annotators.
  std::map<std::string, double> group_rate;
  std::map<std::string, std::map<int, double>> group_round_rate;
  std::vector<std::string> warnings;
};

AcceptanceReport acceptance_rate(std::span<const AnnotationEvent> events);

// counts[suggested][chosen] over rejected suggestions; the diagonal stays 0.
using CorrectionMatrix = PerLabel<PerLabel<std::size_t>>;
CorrectionMatrix correction_matrix(std::span<const AnnotationEvent> events);

struct DivergencePoint {
  std::int64_t model_version = 0;
  std::size_t training_size = 0;
  std::size_t differing = 0;
};

// For each snapshot, how many eval documents it labels differently from
// `fixed`.
std::vector<DivergencePoint> divergence_series(const ModelSnapshot& fixed,
                                               std::span<const ModelSnapshot> snapshots,
                                               const Corpus& eval_docs);

// Flags annotators whose mean latency is below `min_mean_latency` seconds and
// whose acceptance rate exceeds `max_acceptance`. Sorted ids.
std::vector<std::string> flag_outliers(std::span<const AnnotationEvent> events,
                                       double min_mean_latency = 1.0,
                                       double max_acceptance = 0.95);

// ------------------------------------------------------------- transfer

struct TransferGroup {
  std::string name;
  // One record per annotation; a document may appear several times.
  std::vector<LabeledDocument> annotations;
};

struct TransferOptions {
  TrainConfig train;
  FeatureConfig features;
  int runs = 10;
  double split = 0.8;
  std::uint64_t seed = 0;
};

struct TransferMatrix {
  std::vector<std::string> groups;
  // [train][test]
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> stddev;
  // [run][train][test]
  std::vector<std::vector<std::vector<double>>> per_run;
  int runs = 0;
};

// One label per document by majority (ties to the lowest code), in first-seen
// order.
std::vector<LabeledDocument> resolve_by_majority(std::span<const LabeledDocument> annotations);

struct Split {
  std::vector<LabeledDocument> train;
  std::vector<LabeledDocument> holdout;
};

// Per class, round((1 - train_fraction) * n_c) documents go to the holdout
// (at least one overall). Deterministic for a fixed seed.
Split stratified_split(std::span<const LabeledDocument> data, double train_fraction,
                       std::uint64_t seed);

TransferMatrix transfer_experiment(std::span<const TransferGroup> groups,
                                   const TransferOptions& opts);

// -------------------------------------------------------------- output

void to_json(nlohmann::json& j, const Tally& t);
void to_json(nlohmann::json& j, const ControlAccuracy& c);
void to_json(nlohmann::json& j, const AgreementReport& r);
void to_json(nlohmann::json& j, const AnnotatorAcceptance& a);
void to_json(nlohmann::json& j, const AcceptanceReport& r);
void to_json(nlohmann::json& j, const DivergencePoint& p);
void to_json(nlohmann::json& j, const TransferMatrix& t);

void write_correction_csv(std::ostream& out, const CorrectionMatrix& m);
void write_divergence_csv(std::ostream& out, std::span<const DivergencePoint> series);

// Groups as rows; accuracy and kappa per round plus total as columns.
std::string render_agreement_table(std::span<const AgreementReport> reports);
std::string render_acceptance_table(const AcceptanceReport& report);
std::string render_transfer_table(const TransferMatrix& t);

}  // namespace annostudy
