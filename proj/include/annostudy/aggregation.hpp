#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "annostudy/label.hpp"
#include "json.hpp"

namespace annostudy {

// Items x annotators, each cell optionally labeled.
class AnnotationMatrix {
 public:
  AnnotationMatrix() = default;
  AnnotationMatrix(std::vector<std::string> items, std::vector<std::string> annotators);

  // Builds the matrix from (item, annotator, label) triples, keeping first-seen
  // order for both axes. A repeated (item, annotator) pair throws.
  struct Entry {
    std::string item;
    std::string annotator;
    Label label;
  };
  static AnnotationMatrix from_entries(std::span<const Entry> entries);

  std::size_t num_items() const { return items_.size(); }
  std::size_t num_annotators() const { return annotators_.size(); }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<std::string>& annotators() const { return annotators_; }

  void set(std::size_t item, std::size_t annotator, Label l);
  void set(const std::string& item, const std::string& annotator, Label l);
  std::optional<Label> at(std::size_t item, std::size_t annotator) const {
    return cells_[item * annotators_.size() + annotator];
  }

  std::size_t labels_on_item(std::size_t item) const;
  PerLabel<std::size_t> votes(std::size_t item) const;

  // Every item carries at least one label.
  void validate() const;
  // Every item labeled by every annotator.
  bool is_complete() const;
  // Sub-matrix of the items every annotator labeled.
  AnnotationMatrix common_items() const;
  AnnotationMatrix permute_annotators(std::span<const std::size_t> order) const;

 private:
  std::vector<std::string> items_;
  std::vector<std::string> annotators_;
  std::unordered_map<std::string, std::size_t> item_index_;
  std::unordered_map<std::string, std::size_t> annotator_index_;
  std::vector<std::optional<Label>> cells_;
};

// TSV: header `item<TAB>annotator...`; one row per item; empty cell = missing.
AnnotationMatrix read_matrix_tsv(std::istream& in);
AnnotationMatrix load_matrix_tsv(const std::filesystem::path& path);
void write_matrix_tsv(std::ostream& out, const AnnotationMatrix& m);

enum class Provenance { unanimous, mace, majority, adjudicated };
std::string_view provenance_name(Provenance p);

struct GoldLabel {
  std::string document_id;
  Label label = Label::Unrelated;
  Provenance provenance = Provenance::majority;
  double posterior_entropy = 0.0;  // nats
};

void to_json(nlohmann::json& j, const GoldLabel& g);
void from_json(const nlohmann::json& j, GoldLabel& g);
void write_gold_jsonl(std::ostream& out, std::span<const GoldLabel> gold);
std::vector<GoldLabel> read_gold_jsonl(std::istream& in);

double entropy(const PerLabel<double>& p);

enum class TieBreak { lowest_code, error };

// Modal label per item; entropy is that of the vote distribution.
// TieBreak::error throws InvalidArgument listing every tied item.
std::vector<GoldLabel> majority_vote(const AnnotationMatrix& m,
                                     TieBreak tie_break = TieBreak::lowest_code);

struct MaceOptions {
  int iterations = 50;
  int restarts = 10;
  // Add-smoothing for the theta/xi updates; unset means 0.1 / |labels|.
  std::optional<double> smoothing;
  std::uint64_t seed = 0;
};

// Annotator j copies the latent label with probability theta_j, otherwise
// draws from its strategy distribution xi_j. The label space is the set of
// labels that occur in the matrix; entries for absent labels stay 0.
struct CompetenceModel {
  std::vector<std::string> items;
  std::vector<std::string> annotators;
  std::vector<Label> label_space;
  std::vector<double> theta;
  std::vector<PerLabel<double>> xi;
  std::vector<PerLabel<double>> posterior;
  double smoothing = 0.0;
  // Objective of the selected restart: log-likelihood plus the log-density of
  // the smoothing prior (plain log-likelihood when smoothing is 0).
  double objective = 0.0;
  double log_likelihood = 0.0;
  // Restarts are ranked by final log-likelihood, lowest index on ties.
  std::size_t best_restart = 0;
  // Objective before the first and after every EM iteration, per restart.
  std::vector<std::vector<double>> restart_traces;
  // Same, plain log-likelihood.
  std::vector<std::vector<double>> restart_ll_traces;
};

CompetenceModel mace_em(const AnnotationMatrix& m, const MaceOptions& opts = {});

// Marginal log-likelihood of the observed labels under (theta, xi) with a
// uniform prior over `label_space`. xi is indexed by label code.
double mace_log_likelihood(const AnnotationMatrix& m, std::span<const Label> label_space,
                           std::span<const double> theta, std::span<const PerLabel<double>> xi);

// Exact posterior over the latent label of every item for fixed parameters.
std::vector<PerLabel<double>> mace_posterior(const AnnotationMatrix& m,
                                             std::span<const Label> label_space,
                                             std::span<const double> theta,
                                             std::span<const PerLabel<double>> xi);

// Keeps the `threshold` fraction of items with the lowest posterior entropy
// (ties by item order); output is in item order. threshold must be in (0, 1].
std::vector<GoldLabel> mace_gold(const CompetenceModel& cm, double threshold);

// Items whose posterior entropy exceeds `max_entropy`, for expert re-review.
std::vector<std::string> review_candidates(const CompetenceModel& cm, double max_entropy);

}  // namespace annostudy
