#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "annostudy/aggregation.hpp"
#include "annostudy/corpus.hpp"
#include "annostudy/events.hpp"
#include "annostudy/metrics.hpp"
#include "annostudy/suggester.hpp"
#include "json.hpp"

namespace annostudy {

struct GroupSpec {
  std::string name;
  SuggestionMode mode = SuggestionMode::none;
};

struct StudyConfig {
  std::vector<GroupSpec> groups = {{"G1", SuggestionMode::none},
                                   {"G2", SuggestionMode::fixed},
                                   {"G3", SuggestionMode::interactive}};
  int annotators_per_group = 7;
  int rounds = 2;
  int new_per_round = 70;
  int control_per_round = 30;
  int retrain_batch = 10;
  // Interactive groups see the expert model before this round.
  int interactive_start_round = 2;
  // Stop personal retraining once round 1 is over.
  bool freeze_after_round_1 = false;
  std::uint64_t seed = 0;
  FeatureConfig features;
  TrainConfig train;
  // Retrain on the submitting thread instead of the background worker.
  bool synchronous_retrain = false;

  int items_per_round() const { return new_per_round + control_per_round; }
  void validate() const;
};

void to_json(nlohmann::json& j, const StudyConfig& c);
void from_json(const nlohmann::json& j, StudyConfig& c);

struct StudyInputs {
  Corpus pool;
  // Trains the static expert model.
  std::vector<LabeledDocument> expert_gold;
  // Gold-labeled control documents; expert_gold when empty.
  std::vector<LabeledDocument> control_pool;
};

struct PlanItem {
  std::string document_id;
  bool is_control = false;
};

struct RoundPlan {
  std::string annotator_id;
  int round = 1;
  std::vector<PlanItem> items;
};

struct AnnotatorProfile {
  std::string id;
  std::string group;
  SuggestionMode mode = SuggestionMode::none;
  bool claimed = false;
  int round = 1;          // current round, 1-based; rounds + 1 once done
  std::size_t next = 0;   // index of the pending item in the current round
  std::size_t non_control_count = 0;
  std::int64_t current_model_version = 0;
  bool flagged_outlier = false;
};

struct ServedItem {
  const Document* document = nullptr;
  int round = 1;
  int position = 1;  // 1-based
  int total = 0;
  bool is_control = false;
  std::optional<Suggestion> suggestion;
};
struct RoundComplete {
  int round = 1;
};
struct StudyComplete {};
using NextResult = std::variant<ServedItem, RoundComplete, StudyComplete>;

struct SubmitAck {
  std::size_t event_index = 0;
  std::optional<bool> accepted;
  bool retrain_scheduled = false;
  std::optional<std::int64_t> retrain_version;
  std::size_t training_size = 0;  // of the scheduled retrain
};

struct RoundSummary {
  std::string annotator_id;
  int round = 1;
  std::size_t items = 0;
  Tally control;
  std::size_t shown = 0;
  std::size_t accepted = 0;
  bool study_complete = false;
};

void to_json(nlohmann::json& j, const SubmitAck& a);
void to_json(nlohmann::json& j, const RoundSummary& s);

// Callback hooks. `on_record` sees every log record before the call that
// produced it returns; `on_snapshot` sees every installed personal model;
// `load_snapshot` may supply a stored model during replay instead of
// retraining.
struct StudyHooks {
  std::function<void(const nlohmann::json&)> on_record;
  std::function<void(const ModelSnapshot&)> on_snapshot;
  std::function<std::optional<ModelSnapshot>(std::int64_t version)> load_snapshot;
};

class Study {
 public:
  static constexpr std::int64_t kExpertVersion = 1;

  // Builds the round plans and trains the expert model. Throws
  // InvalidArgument when the pool is too small or overlaps the controls.
  Study(StudyConfig cfg, StudyInputs inputs, Timestamp created_at = {}, StudyHooks hooks = {});
  ~Study();
  Study(const Study&) = delete;
  Study& operator=(const Study&) = delete;

  const StudyConfig& config() const { return cfg_; }
  Timestamp created_at() const { return created_at_; }

  std::vector<std::string> annotator_ids() const;
  AnnotatorProfile profile(const std::string& annotator) const;
  const RoundPlan& plan(const std::string& annotator, int round) const;
  const std::vector<std::string>& control_ids(int round) const;
  std::optional<Label> control_gold(const std::string& doc_id) const;
  const Document* document(const std::string& doc_id) const;

  // Takes the first unclaimed seat of `group`, or of the group with the
  // fewest claimed seats when unset. Throws StateConflict when full.
  std::string claim_annotator(const std::optional<std::string>& group = std::nullopt);

  NextResult next_item(const std::string& annotator);
  SubmitAck submit(const std::string& annotator, const std::string& doc_id, Label chosen,
                   Timestamp started_at, Timestamp submitted_at);
  // The stored ack of an earlier submit of (annotator, doc), if any.
  std::optional<std::pair<Label, SubmitAck>> find_submission(const std::string& annotator,
                                                             const std::string& doc_id) const;
  RoundSummary finish_round(const std::string& annotator);

  // Applies one log record produced by another Study built from the same
  // config and inputs. Retrains run synchronously here.
  void apply(const nlohmann::json& record);

  void wait_for_retrains();

  std::vector<AnnotationEvent> events() const;
  std::vector<nlohmann::json> records() const;
  std::shared_ptr<const ModelSnapshot> expert_model() const { return expert_; }
  std::shared_ptr<const ModelSnapshot> current_model(const std::string& annotator) const;
  std::int64_t latest_version() const;

  // Per interactive annotator: one point per installed personal model,
  // counted on the annotator's planned non-control documents.
  std::map<std::string, std::vector<DivergencePoint>> divergence() const;
  // Training-set sizes of every retrain scheduled per annotator, in order.
  std::map<std::string, std::vector<std::size_t>> retrain_sizes() const;
  // Non-control counts at which each retrain was scheduled.
  std::map<std::string, std::vector<std::size_t>> retrain_triggers() const;

  // Marks (and returns) annotators matching the outlier rule.
  std::vector<std::string> flag_outliers(double min_mean_latency = 1.0,
                                         double max_acceptance = 0.95);

  // Export JSONL of every event except those of flagged annotators.
  void export_jsonl(std::ostream& out) const;

  // Stable digest of the replayable state: positions, counters, versions,
  // and events.
  nlohmann::json state() const;

 private:
  struct Annotator;
  struct RetrainJob {
    std::string annotator;
    std::int64_t version = 0;
    std::vector<LabeledDocument> data;
    Timestamp created_at{};
  };

  Annotator& get(const std::string& id);
  const Annotator& get(const std::string& id) const;
  std::optional<Suggestion> suggest(const Annotator& a, const Document& doc) const;
  SubmitAck submit_locked(Annotator& a, const std::string& doc_id, Label chosen,
                          Timestamp started_at, Timestamp submitted_at,
                          const std::optional<std::optional<Suggestion>>& recorded,
                          std::optional<std::int64_t> recorded_version, bool replay,
                          std::optional<RetrainJob>& job);
  RoundSummary finish_locked(Annotator& a);
  ModelSnapshot run_retrain(const RetrainJob& job) const;
  void install(const std::string& annotator, ModelSnapshot m);
  void emit(const nlohmann::json& record);
  void worker_loop();

  StudyConfig cfg_;
  StudyInputs inputs_;
  Timestamp created_at_;
  StudyHooks hooks_;
  std::unordered_map<std::string, const Document*> docs_;
  std::unordered_map<std::string, Label> control_gold_;
  std::vector<std::vector<std::string>> control_ids_;  // per round
  std::shared_ptr<const ModelSnapshot> expert_;

  mutable std::mutex mu_;
  std::vector<std::unique_ptr<Annotator>> annotators_;
  std::unordered_map<std::string, Annotator*> by_id_;
  std::vector<AnnotationEvent> events_;
  std::vector<nlohmann::json> records_;
  std::int64_t next_version_ = kExpertVersion + 1;

  // Background retraining: newest pending job per annotator.
  std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, RetrainJob> pending_;
  int running_ = 0;
  bool stopping_ = false;
  std::thread worker_;
};

// Rebuilds a study by applying `records` in order.
std::unique_ptr<Study> replay_study(StudyConfig cfg, StudyInputs inputs, Timestamp created_at,
                                    std::span<const nlohmann::json> records,
                                    StudyHooks hooks = {});

}  // namespace annostudy
