#include "annostudy/suggester.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"
#include "annostudy/rng.hpp"
#include "annostudy/text.hpp"

namespace annostudy {

using nlohmann::json;

void FeatureConfig::validate() const {
  if (n_buckets == 0 || !std::has_single_bit(n_buckets)) {
    throw InvalidArgument("n_buckets must be a power of two");
  }
  if (ngram_orders.empty()) throw InvalidArgument("ngram_orders must not be empty");
  for (int o : ngram_orders) {
    if (o < 1 || o > 3) throw InvalidArgument("ngram_orders must be a subset of {1,2,3}");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(l2 >= 0.0)) throw InvalidArgument("l2 must be >= 0");
  if (learning_rate * l2 >= 1.0) throw InvalidArgument("learning_rate * l2 must be < 1");
}

std::vector<std::string> ngram_keys(std::string_view raw, const FeatureConfig& cfg) {
  std::string normalized = text::nfc(raw);
  if (cfg.lowercase) normalized = text::to_lower(normalized);
  const auto tokens = text::alnum_tokens(normalized, !cfg.strip_hash_prefix);

  std::vector<int> orders = cfg.ngram_orders;
  std::sort(orders.begin(), orders.end());
  orders.erase(std::unique(orders.begin(), orders.end()), orders.end());

  std::vector<std::string> keys;
  for (int order : orders) {
    const auto n = static_cast<std::size_t>(order);
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string key = tokens[i];
      for (std::size_t k = 1; k < n; ++k) {
        key.push_back('\x1f');
        key += tokens[i + k];
      }
      keys.push_back(std::move(key));
    }
  }
  return keys;
}

SparseVector featurize(std::string_view raw, const FeatureConfig& cfg) {
  std::map<std::uint32_t, double> counts;
  const std::uint64_t mask = cfg.n_buckets - 1;
  for (const auto& key : ngram_keys(raw, cfg)) {
    counts[static_cast<std::uint32_t>(fnv1a64(key, cfg.hash_seed) & mask)] += 1.0;
  }
  SparseVector out;
  out.reserve(counts.size());
  for (const auto& [idx, v] : counts) out.push_back({idx, v});
  return out;
}

PerLabel<double> softmax(const PerLabel<double>& s) {
  const double mx = *std::max_element(s.begin(), s.end());
  PerLabel<double> p{};
  double z = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    p[k] = std::exp(s[k] - mx);
    z += p[k];
  }
  for (auto& v : p) v /= z;
  return p;
}

Label argmax_label(const PerLabel<double>& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    if (p[k] > p[best]) best = k;
  }
  return static_cast<Label>(best);
}

std::string training_fingerprint(std::span<const LabeledDocument> data) {
  std::vector<std::pair<std::string_view, std::size_t>> pairs;
  pairs.reserve(data.size());
  for (const auto& ld : data) pairs.emplace_back(ld.doc.id, code(ld.label));
  std::sort(pairs.begin(), pairs.end());
  std::string buf;
  for (const auto& [id, c] : pairs) {
    buf += id;
    buf.push_back('\x1f');
    buf.push_back(static_cast<char>('0' + c));
    buf.push_back('\x1e');
  }
  return to_hex(fnv1a64(buf));
}

// --- ModelSnapshot ---------------------------------------------------------

ModelSnapshot::ModelSnapshot(FeatureConfig features)
    : ModelSnapshot(features, std::vector<double>(kNumLabels * features.n_buckets, 0.0), {}) {}

ModelSnapshot::ModelSnapshot(FeatureConfig features, std::vector<double> weights,
                             PerLabel<double> bias)
    : features_(std::move(features)), weights_(std::move(weights)), bias_(bias) {
  features_.validate();
  if (weights_.size() != kNumLabels * static_cast<std::size_t>(features_.n_buckets)) {
    throw InvalidArgument("weight matrix does not match 4 x n_buckets");
  }
}

PerLabel<double> ModelSnapshot::scores(const SparseVector& x) const {
  PerLabel<double> s = bias_;
  const std::size_t b = features_.n_buckets;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const double* row = weights_.data() + k * b;
    for (const auto& f : x) s[k] += row[f.index] * f.value;
  }
  return s;
}

PerLabel<double> ModelSnapshot::probabilities(const SparseVector& x) const {
  return softmax(scores(x));
}

Label ModelSnapshot::predict_label(std::string_view text) const {
  return argmax_label(scores(featurize(text, features_)));
}

Suggestion ModelSnapshot::predict(const Document& doc) const {
  Suggestion s;
  s.document_id = doc.id;
  s.probabilities = probabilities(featurize(doc.text, features_));
  s.label = argmax_label(s.probabilities);
  s.confidence = s.probabilities[code(s.label)];
  s.model_version = version_;
  return s;
}

double ModelSnapshot::weight(Label l, std::uint32_t bucket) const {
  return weights_.at(code(l) * features_.n_buckets + bucket);
}

ModelSnapshot ModelSnapshot::with_weight(Label l, std::uint32_t bucket, double value) const {
  ModelSnapshot copy = *this;
  copy.weights_.at(code(l) * features_.n_buckets + bucket) = value;
  return copy;
}

void ModelSnapshot::set_training_info(std::string fingerprint, std::size_t size, TrainConfig cfg,
                                      std::vector<double> epoch_losses) {
  fingerprint_ = std::move(fingerprint);
  train_size_ = size;
  train_config_ = cfg;
  epoch_losses_ = std::move(epoch_losses);
}

// --- gradients -------------------------------------------------------------

namespace {

// Sparse accumulator for a gradient over a 4 x B weight matrix.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::size_t buckets)
      : buckets_(buckets), dense_(kNumLabels * buckets, 0.0), marked_(buckets, 0) {}

  void add(std::size_t k, std::uint32_t f, double v) {
    if (!marked_[f]) {
      marked_[f] = 1;
      touched_.push_back(f);
    }
    dense_[k * buckets_ + f] += v;
  }
  double at(std::size_t k, std::uint32_t f) const { return dense_[k * buckets_ + f]; }
  const std::vector<std::uint32_t>& touched() const { return touched_; }

  void clear() {
    for (auto f : touched_) {
      marked_[f] = 0;
      for (std::size_t k = 0; k < kNumLabels; ++k) dense_[k * buckets_ + f] = 0.0;
    }
    touched_.clear();
    bias = {};
  }

  PerLabel<double> bias{};

 private:
  std::size_t buckets_;
  std::vector<double> dense_;
  std::vector<char> marked_;
  std::vector<std::uint32_t> touched_;
};

// Adds factor * d(CE)/d(w) for each example to `grad` where the effective
// weights are scale * W. Returns factor * sum of cross-entropies.
double accumulate_data_gradient(std::span<const double> W, double scale, const PerLabel<double>& bias,
                                std::size_t buckets, std::span<const SparseVector* const> xs,
                                std::span<const Label> ys, double factor, GradientBuffer& grad) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const SparseVector& x = *xs[i];
    PerLabel<double> s = bias;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      const double* row = W.data() + k * buckets;
      double acc = 0.0;
      for (const auto& f : x) acc += row[f.index] * f.value;
      s[k] += scale * acc;
    }
    const PerLabel<double> p = softmax(s);
    const std::size_t y = code(ys[i]);
    loss -= factor * std::log(std::max(p[y], 1e-300));
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      const double g = factor * (p[k] - (k == y ? 1.0 : 0.0));
      grad.bias[k] += g;
      for (const auto& f : x) grad.add(k, f.index, g * f.value);
    }
  }
  return loss;
}

double squared_norm(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return s;
}

struct PreparedData {
  std::vector<SparseVector> features;
  std::vector<Label> labels;
  std::string fingerprint;
};

PreparedData prepare(std::span<const LabeledDocument> data, const FeatureConfig& fcfg) {
  if (data.empty()) throw InvalidArgument("training data is empty");
  std::vector<const LabeledDocument*> order;
  order.reserve(data.size());
  for (const auto& ld : data) {
    if (code(ld.label) >= kNumLabels) throw InvalidArgument("label outside the category set");
    order.push_back(&ld);
  }
  std::sort(order.begin(), order.end(), [](const LabeledDocument* a, const LabeledDocument* b) {
    if (a->doc.id != b->doc.id) return a->doc.id < b->doc.id;
    return code(a->label) < code(b->label);
  });
  PreparedData p;
  p.features.reserve(order.size());
  p.labels.reserve(order.size());
  for (const auto* ld : order) {
    p.features.push_back(featurize(ld->doc.text, fcfg));
    p.labels.push_back(ld->label);
  }
  p.fingerprint = training_fingerprint(data);
  return p;
}

// Runs SGD and reports the materialised model after each epoch.
void run_sgd(const PreparedData& data, const TrainConfig& tcfg, const FeatureConfig& fcfg,
             const std::function<void(int, ModelSnapshot&&)>& on_epoch) {
  const std::size_t buckets = fcfg.n_buckets;
  const std::size_t n = data.features.size();
  std::vector<double> W(kNumLabels * buckets, 0.0);
  PerLabel<double> bias{};
  double scale = 1.0;
  GradientBuffer grad(buckets);
  Rng rng(tcfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const SparseVector*> all_x(n);
  for (std::size_t i = 0; i < n; ++i) all_x[i] = &data.features[i];

  std::vector<double> losses;
  const auto batch = static_cast<std::size_t>(tcfg.batch_size);
  std::vector<const SparseVector*> bx;
  std::vector<Label> by;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(all_x[order[i]]);
        by.push_back(data.labels[order[i]]);
      }
      grad.clear();
      accumulate_data_gradient(W, scale, bias, buckets, bx, by,
                               1.0 / static_cast<double>(end - start), grad);
      // w <- (1 - lr*l2) w - lr * g, with w = scale * W.
      const double new_scale = scale * (1.0 - tcfg.learning_rate * tcfg.l2);
      for (auto f : grad.touched()) {
        for (std::size_t k = 0; k < kNumLabels; ++k) {
          W[k * buckets + f] -= tcfg.learning_rate * grad.at(k, f) / new_scale;
        }
      }
      for (std::size_t k = 0; k < kNumLabels; ++k) bias[k] -= tcfg.learning_rate * grad.bias[k];
      scale = new_scale;
      if (scale < 1e-6) {
        for (auto& v : W) v *= scale;
        scale = 1.0;
      }
    }

    std::vector<double> effective(W);
    for (auto& v : effective) v *= scale;
    grad.clear();
    double loss = accumulate_data_gradient(effective, 1.0, bias, buckets, all_x, data.labels,
                                           1.0 / static_cast<double>(n), grad);
    loss += 0.5 * tcfg.l2 * squared_norm(effective);
    losses.push_back(loss);

    ModelSnapshot snap(fcfg, std::move(effective), bias);
    snap.set_training_info(data.fingerprint, n, tcfg, losses);
    on_epoch(epoch, std::move(snap));
  }
}

}  // namespace

ObjectiveValue objective(const ModelSnapshot& model, std::span<const SparseVector> x,
                         std::span<const Label> y, double l2) {
  if (x.size() != y.size() || x.empty()) {
    throw InvalidArgument("objective needs equally sized, non-empty inputs");
  }
  const std::size_t buckets = model.features().n_buckets;
  std::vector<const SparseVector*> xs;
  xs.reserve(x.size());
  for (const auto& v : x) xs.push_back(&v);
  GradientBuffer grad(buckets);
  ObjectiveValue out;
  out.loss = accumulate_data_gradient(model.weights(), 1.0, model.bias(), buckets, xs, y,
                                      1.0 / static_cast<double>(x.size()), grad);
  out.loss += 0.5 * l2 * squared_norm(model.weights());
  out.weight_grad.assign(model.weights().begin(), model.weights().end());
  for (auto& v : out.weight_grad) v *= l2;
  for (auto f : grad.touched()) {
    for (std::size_t k = 0; k < kNumLabels; ++k) out.weight_grad[k * buckets + f] += grad.at(k, f);
  }
  out.bias_grad = grad.bias;
  return out;
}

ModelSnapshot train(std::span<const LabeledDocument> data, const TrainConfig& tcfg,
                    const FeatureConfig& fcfg) {
  tcfg.validate();
  fcfg.validate();
  const PreparedData prepared = prepare(data, fcfg);
  std::optional<ModelSnapshot> last;
  run_sgd(prepared, tcfg, fcfg, [&](int epoch, ModelSnapshot&& snap) {
    if (epoch == tcfg.epochs) last.emplace(std::move(snap));
  });
  return std::move(*last);
}

SelectedModel train_select_best(std::span<const LabeledDocument> data,
                                std::span<const LabeledDocument> holdout,
                                const TrainConfig& tcfg, const FeatureConfig& fcfg) {
  tcfg.validate();
  fcfg.validate();
  if (holdout.empty()) throw InvalidArgument("holdout set is empty");
  const PreparedData prepared = prepare(data, fcfg);
  std::vector<SparseVector> hx;
  std::vector<Label> hy;
  for (const auto& ld : holdout) {
    hx.push_back(featurize(ld.doc.text, fcfg));
    hy.push_back(ld.label);
  }
  std::optional<SelectedModel> best;
  run_sgd(prepared, tcfg, fcfg, [&](int epoch, ModelSnapshot&& snap) {
    std::vector<Label> pred;
    pred.reserve(hx.size());
    for (const auto& x : hx) pred.push_back(argmax_label(snap.scores(x)));
    const double f1 = evaluate_predictions(hy, pred).macro_f1;
    if (!best || f1 > best->holdout_macro_f1) {
      best.emplace(SelectedModel{std::move(snap), epoch, f1});
    }
  });
  return std::move(*best);
}

// --- evaluation --------------------------------------------------------------

EvaluationReport evaluate_predictions(std::span<const Label> gold, std::span<const Label> predicted) {
  if (gold.size() != predicted.size()) throw InvalidArgument("gold/prediction size mismatch");
  if (gold.empty()) throw InvalidArgument("evaluation data is empty");
  EvaluationReport r;
  r.n = gold.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++r.confusion[code(gold[i])][code(predicted[i])];
    if (gold[i] == predicted[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::size_t tp = r.confusion[k][k], fp = 0, fn = 0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      if (j == k) continue;
      fp += r.confusion[j][k];
      fn += r.confusion[k][j];
    }
    const std::size_t denom = 2 * tp + fp + fn;
    r.per_class_f1[k] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.per_class_f1[k];
  }
  r.macro_f1 = sum / static_cast<double>(kNumLabels);
  return r;
}

EvaluationReport evaluate(const Classifier& model, std::span<const LabeledDocument> data) {
  std::vector<Label> gold, pred;
  gold.reserve(data.size());
  pred.reserve(data.size());
  for (const auto& ld : data) {
    gold.push_back(ld.label);
    pred.push_back(model.predict(ld.doc).label);
  }
  return evaluate_predictions(gold, pred);
}

void to_json(json& j, const EvaluationReport& r) {
  json per_class = json::object();
  for (Label l : kAllLabels) per_class[std::string(label_name(l))] = r.per_class_f1[code(l)];
  j = {{"n", r.n}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"per_class_f1", per_class},
       {"confusion", r.confusion}};
}

// --- config JSON -------------------------------------------------------------

void to_json(json& j, const FeatureConfig& c) {
  j = {{"n_buckets", c.n_buckets},
       {"ngram_orders", c.ngram_orders},
       {"lowercase", c.lowercase},
       {"strip_hash_prefix", c.strip_hash_prefix},
       {"hash_seed", c.hash_seed}};
}

void from_json(const json& j, FeatureConfig& c) {
  c = FeatureConfig{};
  c.n_buckets = j.value("n_buckets", c.n_buckets);
  c.ngram_orders = j.value("ngram_orders", c.ngram_orders);
  c.lowercase = j.value("lowercase", c.lowercase);
  c.strip_hash_prefix = j.value("strip_hash_prefix", c.strip_hash_prefix);
  c.hash_seed = j.value("hash_seed", c.hash_seed);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"l2", c.l2},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.l2 = j.value("l2", c.l2);
  c.seed = j.value("seed", c.seed);
}

// --- backend -----------------------------------------------------------------

LinearBackend::LinearBackend(TrainConfig tcfg, FeatureConfig fcfg)
    : tcfg_(tcfg), fcfg_(std::move(fcfg)) {
  tcfg_.validate();
  fcfg_.validate();
}

std::shared_ptr<const Classifier> LinearBackend::train(std::span<const LabeledDocument> data,
                                                       std::int64_t version,
                                                       Timestamp created_at) const {
  auto snap = std::make_shared<ModelSnapshot>(annostudy::train(data, tcfg_, fcfg_));
  snap->set_version(version);
  snap->set_created_at(created_at);
  return snap;
}

void LinearBackend::save(const Classifier& model, const std::filesystem::path& path) const {
  const auto* snap = dynamic_cast<const ModelSnapshot*>(&model);
  if (!snap) throw InvalidArgument("LinearBackend can only save ModelSnapshot instances");
  save_snapshot(*snap, path);
}

std::shared_ptr<const Classifier> LinearBackend::load(const std::filesystem::path& path) const {
  return std::make_shared<ModelSnapshot>(load_snapshot(path));
}

}  // namespace annostudy
