#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "annostudy/corpus.hpp"
#include "annostudy/label.hpp"
#include "annostudy/time.hpp"

namespace annostudy {

inline constexpr std::string_view kHashAlgorithm = "fnv1a64";

struct FeatureConfig {
  std::uint32_t n_buckets = 1u << 18;
  std::vector<int> ngram_orders = {1, 2};
  bool lowercase = true;
  bool strip_hash_prefix = true;
  std::uint64_t hash_seed = 0;

  void validate() const;
  bool operator==(const FeatureConfig&) const = default;
};

struct Feature {
  std::uint32_t index;
  double value;
  bool operator==(const Feature&) const = default;
};

// Sorted by index, one entry per bucket.
using SparseVector = std::vector<Feature>;

// The n-gram strings that get hashed, in text order (unigrams first).
// Bigrams join tokens with U+001F.
std::vector<std::string> ngram_keys(std::string_view text, const FeatureConfig& cfg);
SparseVector featurize(std::string_view text, const FeatureConfig& cfg);

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 0.1;
  int batch_size = 8;
  double l2 = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct Suggestion {
  std::string document_id;
  Label label = Label::Unrelated;
  double confidence = 0.0;
  std::int64_t model_version = 0;
  PerLabel<double> probabilities{};
};

// A trained, immutable suggestion model. Implementations must be safe to
// call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Suggestion predict(const Document& doc) const = 0;
  virtual std::int64_t version() const = 0;
  virtual const std::string& train_fingerprint() const = 0;
  virtual std::size_t train_size() const = 0;
};

// Content hash of the (document id, label) training multiset, as 16 hex digits.
std::string training_fingerprint(std::span<const LabeledDocument> data);

// Linear softmax model over hashed n-gram buckets.
class ModelSnapshot final : public Classifier {
 public:
  // Zero weights and bias.
  explicit ModelSnapshot(FeatureConfig features);
  ModelSnapshot(FeatureConfig features, std::vector<double> weights, PerLabel<double> bias);

  Suggestion predict(const Document& doc) const override;
  std::int64_t version() const override { return version_; }
  const std::string& train_fingerprint() const override { return fingerprint_; }
  std::size_t train_size() const override { return train_size_; }

  PerLabel<double> scores(const SparseVector& x) const;
  PerLabel<double> probabilities(const SparseVector& x) const;
  Label predict_label(std::string_view text) const;

  const FeatureConfig& features() const { return features_; }
  const TrainConfig& train_config() const { return train_config_; }
  // Row-major [label][bucket].
  std::span<const double> weights() const { return weights_; }
  const PerLabel<double>& bias() const { return bias_; }
  double weight(Label l, std::uint32_t bucket) const;
  Timestamp created_at() const { return created_at_; }
  // Mean training objective after each epoch.
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }

  ModelSnapshot with_weight(Label l, std::uint32_t bucket, double value) const;

  void set_version(std::int64_t v) { version_ = v; }
  void set_created_at(Timestamp t) { created_at_ = t; }
  void set_training_info(std::string fingerprint, std::size_t size, TrainConfig cfg,
                         std::vector<double> epoch_losses);

 private:
  FeatureConfig features_;
  std::vector<double> weights_;
  PerLabel<double> bias_{};
  std::int64_t version_ = 0;
  std::string fingerprint_;
  std::size_t train_size_ = 0;
  TrainConfig train_config_;
  std::vector<double> epoch_losses_;
  Timestamp created_at_{};
};

// Numerically stable softmax.
PerLabel<double> softmax(const PerLabel<double>& scores);

// Lowest code wins ties.
Label argmax_label(const PerLabel<double>& p);

// Mean cross-entropy plus (l2 / 2) * ||W||^2 and its gradient. The bias is
// not penalised.
struct ObjectiveValue {
  double loss = 0.0;
  std::vector<double> weight_grad;  // same layout as ModelSnapshot::weights()
  PerLabel<double> bias_grad{};
};

ObjectiveValue objective(const ModelSnapshot& model, std::span<const SparseVector> x,
                         std::span<const Label> y, double l2);

// Mini-batch SGD from zero weights. The data is put in canonical (id, label)
// order first, so the result depends only on the training multiset and the
// two configs. Throws InvalidArgument on empty data.
ModelSnapshot train(std::span<const LabeledDocument> data, const TrainConfig& tcfg,
                    const FeatureConfig& fcfg);

struct SelectedModel {
  ModelSnapshot model;
  int best_epoch = 0;  // 1-based
  double holdout_macro_f1 = 0.0;
};

// Like train(), but keeps the epoch whose weights score the best macro-F1 on
// `holdout` (earliest epoch on ties).
SelectedModel train_select_best(std::span<const LabeledDocument> data,
                                std::span<const LabeledDocument> holdout,
                                const TrainConfig& tcfg, const FeatureConfig& fcfg);

struct EvaluationReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  PerLabel<double> per_class_f1{};
  PerLabel<PerLabel<std::size_t>> confusion{};  // [gold][predicted]
};

// Macro-F1 averages all four classes; a class with no gold and no predicted
// instances contributes 0.
EvaluationReport evaluate_predictions(std::span<const Label> gold, std::span<const Label> predicted);
EvaluationReport evaluate(const Classifier& model, std::span<const LabeledDocument> data);

void to_json(nlohmann::json& j, const EvaluationReport& r);

inline constexpr int kSnapshotFormatVersion = 1;

// Layout: see docs/snapshot-format.md. Load errors are ParseError.
void write_snapshot(std::ostream& out, const ModelSnapshot& m);
ModelSnapshot read_snapshot(std::istream& in);
void save_snapshot(const ModelSnapshot& m, const std::filesystem::path& path);
ModelSnapshot load_snapshot(const std::filesystem::path& path);

// Trains and persists Classifier instances; lets the orchestrator swap the
// model family without touching study logic.
class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual std::shared_ptr<const Classifier> train(std::span<const LabeledDocument> data,
                                                  std::int64_t version,
                                                  Timestamp created_at) const = 0;
  virtual void save(const Classifier& model, const std::filesystem::path& path) const = 0;
  virtual std::shared_ptr<const Classifier> load(const std::filesystem::path& path) const = 0;
};

class LinearBackend final : public ClassifierBackend {
 public:
  LinearBackend(TrainConfig tcfg, FeatureConfig fcfg);

  std::shared_ptr<const Classifier> train(std::span<const LabeledDocument> data,
                                          std::int64_t version,
                                          Timestamp created_at) const override;
  void save(const Classifier& model, const std::filesystem::path& path) const override;
  std::shared_ptr<const Classifier> load(const std::filesystem::path& path) const override;

  const TrainConfig& train_config() const { return tcfg_; }
  const FeatureConfig& feature_config() const { return fcfg_; }

 private:
  TrainConfig tcfg_;
  FeatureConfig fcfg_;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace annostudy
