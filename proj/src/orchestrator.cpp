#include "annostudy/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <ostream>
#include <set>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"
#include "annostudy/rng.hpp"

namespace annostudy {

using nlohmann::json;

void StudyConfig::validate() const {
  if (groups.empty()) throw InvalidArgument("study needs at least one group");
  std::set<std::string> names;
  for (const auto& g : groups) {
    if (g.name.empty()) throw InvalidArgument("group name must not be empty");
    if (!names.insert(g.name).second) throw InvalidArgument("duplicate group '" + g.name + "'");
  }
  if (annotators_per_group < 1) throw InvalidArgument("annotators_per_group must be >= 1");
  if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
  if (new_per_round < 0 || control_per_round < 0 || items_per_round() < 1) {
    throw InvalidArgument("a round needs at least one item");
  }
  if (retrain_batch < 1) throw InvalidArgument("retrain_batch must be >= 1");
  if (interactive_start_round < 1) throw InvalidArgument("interactive_start_round must be >= 1");
  features.validate();
  train.validate();
}

void to_json(json& j, const StudyConfig& c) {
  json groups = json::array();
  for (const auto& g : c.groups) groups.push_back({{"name", g.name}, {"mode", suggestion_mode_name(g.mode)}});
  j = json{{"groups", groups},
           {"annotators_per_group", c.annotators_per_group},
           {"rounds", c.rounds},
           {"new_per_round", c.new_per_round},
           {"control_per_round", c.control_per_round},
           {"retrain_batch", c.retrain_batch},
           {"interactive_start_round", c.interactive_start_round},
           {"freeze_after_round_1", c.freeze_after_round_1},
           {"seed", c.seed},
           {"features", c.features},
           {"train", c.train},
           {"synchronous_retrain", c.synchronous_retrain}};
}

void from_json(const json& j, StudyConfig& c) {
  c = StudyConfig{};
  if (j.contains("groups")) {
    c.groups.clear();
    for (const auto& g : j["groups"]) {
      c.groups.push_back({g.at("name").get<std::string>(),
                          suggestion_mode_from_name(g.at("mode").get<std::string>())});
    }
  }
  c.annotators_per_group = j.value("annotators_per_group", c.annotators_per_group);
  c.rounds = j.value("rounds", c.rounds);
  c.new_per_round = j.value("new_per_round", c.new_per_round);
  c.control_per_round = j.value("control_per_round", c.control_per_round);
  c.retrain_batch = j.value("retrain_batch", c.retrain_batch);
  c.interactive_start_round = j.value("interactive_start_round", c.interactive_start_round);
  c.freeze_after_round_1 = j.value("freeze_after_round_1", c.freeze_after_round_1);
  c.seed = j.value("seed", c.seed);
  if (j.contains("features")) c.features = j["features"].get<FeatureConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  c.synchronous_retrain = j.value("synchronous_retrain", c.synchronous_retrain);
}

void to_json(json& j, const SubmitAck& a) {
  j = json{{"event_index", a.event_index},
           {"accepted_recorded", true},
           {"retrain_scheduled", a.retrain_scheduled}};
  j["accepted"] = a.accepted ? json(*a.accepted) : json(nullptr);
  j["retrain_version"] = a.retrain_version ? json(*a.retrain_version) : json(nullptr);
  if (a.retrain_scheduled) j["training_size"] = a.training_size;
}

void to_json(json& j, const RoundSummary& s) {
  j = json{{"annotator", s.annotator_id},
           {"round", s.round},
           {"items", s.items},
           {"control_correct", s.control.correct},
           {"control_total", s.control.total},
           {"control_accuracy", s.control.rate()},
           {"suggestions_shown", s.shown},
           {"suggestions_accepted", s.accepted},
           {"study_complete", s.study_complete}};
}

struct Study::Annotator {
  AnnotatorProfile p;
  std::vector<RoundPlan> plans;
  std::shared_ptr<const ModelSnapshot> model;
  std::size_t since_retrain = 0;
  std::vector<LabeledDocument> labeled;
  std::unordered_map<std::string, std::pair<Label, SubmitAck>> acks;
  std::optional<std::pair<std::string, std::optional<Suggestion>>> served;
  std::vector<const Document*> eval_docs;
  std::vector<Label> eval_expert;
  std::vector<DivergencePoint> divergence;
  std::vector<std::size_t> retrain_sizes;
  std::vector<std::size_t> retrain_triggers;
};

namespace {

std::string seat_name(const std::string& group, int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "-%02d", k);
  return group + buf;
}

}  // namespace

Study::Study(StudyConfig cfg, StudyInputs inputs, Timestamp created_at, StudyHooks hooks)
    : cfg_(std::move(cfg)), inputs_(std::move(inputs)), created_at_(created_at),
      hooks_(std::move(hooks)) {
  cfg_.validate();
  if (inputs_.expert_gold.empty()) throw InvalidArgument("expert gold is empty");
  if (inputs_.control_pool.empty()) inputs_.control_pool = inputs_.expert_gold;

  const auto rounds = static_cast<std::size_t>(cfg_.rounds);
  const auto n_ctrl = static_cast<std::size_t>(cfg_.control_per_round);
  const auto n_new = static_cast<std::size_t>(cfg_.new_per_round);

  for (const auto& d : inputs_.control_pool) {
    if (!control_gold_.emplace(d.doc.id, d.label).second) {
      throw InvalidArgument("duplicate control document '" + d.doc.id + "'");
    }
  }
  if (inputs_.control_pool.size() < rounds * n_ctrl) {
    throw InvalidArgument("control pool has " + std::to_string(inputs_.control_pool.size()) +
                          " documents; study needs " + std::to_string(rounds * n_ctrl));
  }
  for (const auto& d : inputs_.pool) {
    if (control_gold_.count(d.id)) {
      throw InvalidArgument("pool document '" + d.id + "' is also a control document");
    }
  }
  const std::size_t seats = cfg_.groups.size() * static_cast<std::size_t>(cfg_.annotators_per_group);
  const std::size_t need = seats * rounds * n_new;
  if (inputs_.pool.size() < need) {
    throw InvalidArgument("pool has " + std::to_string(inputs_.pool.size()) +
                          " documents; study needs " + std::to_string(need));
  }

  for (const auto& d : inputs_.pool) docs_.emplace(d.id, &d);
  for (const auto& d : inputs_.control_pool) docs_.emplace(d.doc.id, &d.doc);
  for (const auto& d : inputs_.expert_gold) docs_.emplace(d.doc.id, &d.doc);

  std::vector<std::size_t> ctrl(inputs_.control_pool.size());
  for (std::size_t i = 0; i < ctrl.size(); ++i) ctrl[i] = i;
  Rng(derive_seed(cfg_.seed, 1)).shuffle(ctrl);
  control_ids_.resize(rounds);
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t k = 0; k < n_ctrl; ++k) {
      control_ids_[r].push_back(inputs_.control_pool[ctrl[r * n_ctrl + k]].doc.id);
    }
  }

  std::vector<std::size_t> pool_order(inputs_.pool.size());
  for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
  Rng(derive_seed(cfg_.seed, 2)).shuffle(pool_order);

  expert_ = std::make_shared<const ModelSnapshot>([&] {
    auto m = train(inputs_.expert_gold, cfg_.train, cfg_.features);
    m.set_version(kExpertVersion);
    m.set_created_at(created_at_);
    return m;
  }());

  std::size_t seat = 0;
  for (const auto& g : cfg_.groups) {
    for (int k = 1; k <= cfg_.annotators_per_group; ++k, ++seat) {
      auto a = std::make_unique<Annotator>();
      a->p.id = seat_name(g.name, k);
      a->p.group = g.name;
      a->p.mode = g.mode;
      a->p.current_model_version = g.mode == SuggestionMode::none ? 0 : kExpertVersion;
      for (std::size_t r = 0; r < rounds; ++r) {
        RoundPlan plan;
        plan.annotator_id = a->p.id;
        plan.round = static_cast<int>(r + 1);
        const std::size_t base = (seat * rounds + r) * n_new;
        for (std::size_t i = 0; i < n_new; ++i) {
          plan.items.push_back({inputs_.pool[pool_order[base + i]].id, false});
        }
        for (const auto& id : control_ids_[r]) plan.items.push_back({id, true});
        Rng(derive_seed(cfg_.seed, 1000 + seat * rounds + r)).shuffle(plan.items);
        a->plans.push_back(std::move(plan));
      }
      if (g.mode == SuggestionMode::interactive) {
        for (const auto& plan : a->plans) {
          for (const auto& it : plan.items) {
            if (it.is_control) continue;
            a->eval_docs.push_back(docs_.at(it.document_id));
            a->eval_expert.push_back(expert_->predict_label(a->eval_docs.back()->text));
          }
        }
      }
      by_id_.emplace(a->p.id, a.get());
      annotators_.push_back(std::move(a));
    }
  }

  if (!cfg_.synchronous_retrain) worker_ = std::thread([this] { worker_loop(); });
}

Study::~Study() {
  if (worker_.joinable()) {
    {
      std::lock_guard lk(job_mu_);
      stopping_ = true;
    }
    job_cv_.notify_all();
    worker_.join();
  }
}

Study::Annotator& Study::get(const std::string& id) {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw NotFound("unknown annotator '" + id + "'");
  return *it->second;
}

const Study::Annotator& Study::get(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw NotFound("unknown annotator '" + id + "'");
  return *it->second;
}

std::vector<std::string> Study::annotator_ids() const {
  std::vector<std::string> out;
  for (const auto& a : annotators_) out.push_back(a->p.id);
  return out;
}

AnnotatorProfile Study::profile(const std::string& annotator) const {
  std::lock_guard lk(mu_);
  return get(annotator).p;
}

const RoundPlan& Study::plan(const std::string& annotator, int round) const {
  const auto& a = get(annotator);
  if (round < 1 || round > cfg_.rounds) throw InvalidArgument("no such round");
  return a.plans[static_cast<std::size_t>(round - 1)];
}

const std::vector<std::string>& Study::control_ids(int round) const {
  if (round < 1 || round > cfg_.rounds) throw InvalidArgument("no such round");
  return control_ids_[static_cast<std::size_t>(round - 1)];
}

std::optional<Label> Study::control_gold(const std::string& doc_id) const {
  auto it = control_gold_.find(doc_id);
  if (it == control_gold_.end()) return std::nullopt;
  return it->second;
}

const Document* Study::document(const std::string& doc_id) const {
  auto it = docs_.find(doc_id);
  return it == docs_.end() ? nullptr : it->second;
}

std::string Study::claim_annotator(const std::optional<std::string>& group) {
  std::lock_guard lk(mu_);
  std::map<std::string, std::pair<int, Annotator*>> per_group;  // claimed count, first free
  for (const auto& a : annotators_) {
    auto& [claimed, free] = per_group[a->p.group];
    if (a->p.claimed) {
      ++claimed;
    } else if (!free) {
      free = a.get();
    }
  }
  Annotator* pick = nullptr;
  if (group) {
    auto it = per_group.find(*group);
    if (it == per_group.end()) throw NotFound("unknown group '" + *group + "'");
    pick = it->second.second;
  } else {
    int best = -1;
    for (const auto& g : cfg_.groups) {
      const auto& [claimed, free] = per_group[g.name];
      if (free && (best < 0 || claimed < best)) {
        best = claimed;
        pick = free;
      }
    }
  }
  if (!pick) throw StateConflict("no free annotator seat");
  pick->p.claimed = true;
  emit(json{{"type", "claim"}, {"annotator", pick->p.id}});
  return pick->p.id;
}

std::optional<Suggestion> Study::suggest(const Annotator& a, const Document& doc) const {
  switch (a.p.mode) {
    case SuggestionMode::none: return std::nullopt;
    case SuggestionMode::fixed: return expert_->predict(doc);
    case SuggestionMode::interactive:
      if (a.p.round >= cfg_.interactive_start_round && a.model) return a.model->predict(doc);
      return expert_->predict(doc);
  }
  return std::nullopt;
}

NextResult Study::next_item(const std::string& annotator) {
  std::lock_guard lk(mu_);
  auto& a = get(annotator);
  if (a.p.round > cfg_.rounds) return StudyComplete{};
  const auto& plan = a.plans[static_cast<std::size_t>(a.p.round - 1)];
  if (a.p.next >= plan.items.size()) return RoundComplete{a.p.round};
  const auto& item = plan.items[a.p.next];
  const Document* doc = docs_.at(item.document_id);
  if (!a.served || a.served->first != item.document_id) {
    a.served.emplace(item.document_id, suggest(a, *doc));
  }
  ServedItem s;
  s.document = doc;
  s.round = a.p.round;
  s.position = static_cast<int>(a.p.next) + 1;
  s.total = static_cast<int>(plan.items.size());
  s.is_control = item.is_control;
  s.suggestion = a.served->second;
  return s;
}

SubmitAck Study::submit_locked(Annotator& a, const std::string& doc_id, Label chosen,
                               Timestamp started_at, Timestamp submitted_at,
                               const std::optional<std::optional<Suggestion>>& recorded,
                               std::optional<std::int64_t> recorded_version, bool replay,
                               std::optional<RetrainJob>& job) {
  if (a.acks.count(doc_id)) {
    throw StateConflict("annotator " + a.p.id + " already submitted document " + doc_id);
  }
  if (a.p.round > cfg_.rounds) throw StateConflict("annotator " + a.p.id + " has finished the study");
  const auto& plan = a.plans[static_cast<std::size_t>(a.p.round - 1)];
  if (a.p.next >= plan.items.size()) {
    throw StateConflict("round " + std::to_string(a.p.round) + " is complete; finish it first");
  }
  const auto& item = plan.items[a.p.next];
  if (item.document_id != doc_id) {
    throw StateConflict("out-of-order submit: expected document " + item.document_id + ", got " +
                        doc_id);
  }
  if (submitted_at < started_at) throw InvalidArgument("submitted_at precedes started_at");

  const Document& doc = *docs_.at(doc_id);
  AnnotationEvent e;
  e.annotator_id = a.p.id;
  e.group = a.p.group;
  e.document_id = doc_id;
  e.round = a.p.round;
  e.position = static_cast<int>(a.p.next) + 1;
  e.is_control = item.is_control;
  if (recorded) {
    e.suggestion = *recorded;
  } else if (a.served && a.served->first == doc_id) {
    e.suggestion = a.served->second;
  } else {
    e.suggestion = suggest(a, doc);
  }
  e.chosen = chosen;
  e.started_at = started_at;
  e.submitted_at = submitted_at;

  SubmitAck ack;
  ack.event_index = events_.size();
  ack.accepted = e.accepted();

  if (!item.is_control) {
    ++a.p.non_control_count;
    a.labeled.push_back({doc, chosen});
    const bool frozen = cfg_.freeze_after_round_1 && a.p.round > 1;
    if (a.p.mode == SuggestionMode::interactive && !frozen &&
        ++a.since_retrain == static_cast<std::size_t>(cfg_.retrain_batch)) {
      a.since_retrain = 0;
      RetrainJob j;
      j.annotator = a.p.id;
      j.version = recorded_version.value_or(next_version_);
      if (j.version < next_version_) {
        throw StateConflict("recorded model version " + std::to_string(j.version) + " reused");
      }
      next_version_ = j.version + 1;
      j.data = inputs_.expert_gold;
      j.data.insert(j.data.end(), a.labeled.begin(), a.labeled.end());
      j.created_at = submitted_at;
      ack.retrain_scheduled = true;
      ack.retrain_version = j.version;
      ack.training_size = j.data.size();
      a.retrain_sizes.push_back(j.data.size());
      a.retrain_triggers.push_back(a.p.non_control_count);
      job = std::move(j);
    }
  } else if (replay && recorded_version) {
    throw StateConflict("control item cannot trigger a retrain");
  }

  json rec = json{{"type", "annotation"},
                  {"annotator", e.annotator_id},
                  {"group", e.group},
                  {"round", e.round},
                  {"position", e.position},
                  {"doc_id", e.document_id},
                  {"is_control", e.is_control},
                  {"chosen", e.chosen},
                  {"started_at", format_rfc3339(e.started_at)},
                  {"submitted_at", format_rfc3339(e.submitted_at)}};
  if (e.suggestion) {
    rec["suggestion"] = {{"label", e.suggestion->label},
                         {"confidence", e.suggestion->confidence},
                         {"model_version", e.suggestion->model_version},
                         {"probabilities", e.suggestion->probabilities}};
  } else {
    rec["suggestion"] = nullptr;
  }
  rec["retrain"] = ack.retrain_scheduled
                       ? json{{"version", *ack.retrain_version}, {"training_size", ack.training_size}}
                       : json(nullptr);

  events_.push_back(std::move(e));
  ++a.p.next;
  a.served.reset();
  a.acks.emplace(doc_id, std::make_pair(chosen, ack));
  if (replay) {
    records_.push_back(std::move(rec));
  } else {
    emit(rec);
  }
  return ack;
}

SubmitAck Study::submit(const std::string& annotator, const std::string& doc_id, Label chosen,
                        Timestamp started_at, Timestamp submitted_at) {
  std::optional<RetrainJob> job;
  SubmitAck ack;
  {
    std::lock_guard lk(mu_);
    ack = submit_locked(get(annotator), doc_id, chosen, started_at, submitted_at, std::nullopt,
                        std::nullopt, false, job);
  }
  if (job) {
    if (cfg_.synchronous_retrain) {
      install(job->annotator, run_retrain(*job));
    } else {
      {
        std::lock_guard lk(job_mu_);
        pending_[job->annotator] = std::move(*job);
      }
      job_cv_.notify_one();
    }
  }
  return ack;
}

std::optional<std::pair<Label, SubmitAck>> Study::find_submission(const std::string& annotator,
                                                                  const std::string& doc_id) const {
  std::lock_guard lk(mu_);
  const auto& a = get(annotator);
  auto it = a.acks.find(doc_id);
  if (it == a.acks.end()) return std::nullopt;
  return it->second;
}

RoundSummary Study::finish_locked(Annotator& a) {
  if (a.p.round > cfg_.rounds) throw StateConflict("annotator " + a.p.id + " has finished the study");
  const auto& plan = a.plans[static_cast<std::size_t>(a.p.round - 1)];
  if (a.p.next < plan.items.size()) {
    throw StateConflict("round " + std::to_string(a.p.round) + " has " +
                        std::to_string(plan.items.size() - a.p.next) + " unfinished items");
  }
  RoundSummary s;
  s.annotator_id = a.p.id;
  s.round = a.p.round;
  s.items = plan.items.size();
  for (const auto& e : events_) {
    if (e.annotator_id != a.p.id || e.round != a.p.round) continue;
    if (e.is_control) {
      ++s.control.total;
      s.control.correct += e.chosen == control_gold_.at(e.document_id);
    }
    if (auto ok = e.accepted()) {
      ++s.shown;
      s.accepted += *ok;
    }
  }
  ++a.p.round;
  a.p.next = 0;
  a.served.reset();
  s.study_complete = a.p.round > cfg_.rounds;
  return s;
}

RoundSummary Study::finish_round(const std::string& annotator) {
  std::lock_guard lk(mu_);
  auto& a = get(annotator);
  auto s = finish_locked(a);
  emit(json{{"type", "finish_round"}, {"annotator", a.p.id}, {"round", s.round}});
  return s;
}

void Study::apply(const json& record) {
  const auto type = record.at("type").get<std::string>();
  std::optional<RetrainJob> job;
  {
    std::lock_guard lk(mu_);
    auto& a = get(record.at("annotator").get<std::string>());
    if (type == "claim") {
      a.p.claimed = true;
      records_.push_back(record);
    } else if (type == "finish_round") {
      if (record.at("round").get<int>() != a.p.round) {
        throw StateConflict("finish_round record for round " +
                            std::to_string(record["round"].get<int>()) + " but annotator " +
                            a.p.id + " is in round " + std::to_string(a.p.round));
      }
      finish_locked(a);
      records_.push_back(record);
    } else if (type == "annotation") {
      std::optional<Suggestion> sugg;
      if (!record.at("suggestion").is_null()) {
        const auto& s = record["suggestion"];
        Suggestion v;
        v.document_id = record.at("doc_id").get<std::string>();
        v.label = s.at("label").get<Label>();
        v.confidence = s.at("confidence").get<double>();
        v.model_version = s.at("model_version").get<std::int64_t>();
        if (s.contains("probabilities")) v.probabilities = s["probabilities"].get<PerLabel<double>>();
        sugg = v;
      }
      std::optional<std::int64_t> version;
      if (record.contains("retrain") && !record["retrain"].is_null()) {
        version = record["retrain"].at("version").get<std::int64_t>();
      }
      const auto ack = submit_locked(
          a, record.at("doc_id").get<std::string>(), record.at("chosen").get<Label>(),
          parse_rfc3339(record.at("started_at").get<std::string>()),
          parse_rfc3339(record.at("submitted_at").get<std::string>()),
          std::optional<std::optional<Suggestion>>(sugg), version, true, job);
      if (version.has_value() != ack.retrain_scheduled) {
        throw StateConflict("log and study disagree on retraining at event " +
                            std::to_string(ack.event_index));
      }
    } else {
      throw InvalidArgument("unknown record type '" + type + "'");
    }
  }
  if (job) {
    std::optional<ModelSnapshot> m;
    if (hooks_.load_snapshot) m = hooks_.load_snapshot(job->version);
    if (m && m->train_size() != job->data.size()) m.reset();
    install(job->annotator, m ? std::move(*m) : run_retrain(*job));
  }
}

ModelSnapshot Study::run_retrain(const RetrainJob& job) const {
  auto m = train(job.data, cfg_.train, cfg_.features);
  m.set_version(job.version);
  m.set_created_at(job.created_at);
  return m;
}

void Study::install(const std::string& annotator, ModelSnapshot m) {
  auto snap = std::make_shared<const ModelSnapshot>(std::move(m));
  bool installed = false;
  {
    std::lock_guard lk(mu_);
    auto& a = get(annotator);
    if (snap->version() > a.p.current_model_version) {
      DivergencePoint p{snap->version(), snap->train_size(), 0};
      for (std::size_t i = 0; i < a.eval_docs.size(); ++i) {
        p.differing += snap->predict_label(a.eval_docs[i]->text) != a.eval_expert[i];
      }
      a.divergence.push_back(p);
      a.model = snap;
      a.p.current_model_version = snap->version();
      installed = true;
    }
  }
  if (installed && hooks_.on_snapshot) hooks_.on_snapshot(*snap);
}

void Study::emit(const json& record) {
  records_.push_back(record);
  if (hooks_.on_record) hooks_.on_record(record);
}

void Study::worker_loop() {
  while (true) {
    RetrainJob job;
    {
      std::unique_lock lk(job_mu_);
      job_cv_.wait(lk, [&] { return stopping_ || !pending_.empty(); });
      if (pending_.empty()) return;
      auto it = pending_.begin();
      job = std::move(it->second);
      pending_.erase(it);
      ++running_;
    }
    try {
      install(job.annotator, run_retrain(job));
    } catch (const std::exception& e) {
      std::cerr << "retrain of " << job.annotator << " v" << job.version << " failed: " << e.what()
                << '\n';
    }
    {
      std::lock_guard lk(job_mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void Study::wait_for_retrains() {
  std::unique_lock lk(job_mu_);
  idle_cv_.wait(lk, [&] { return pending_.empty() && running_ == 0; });
}

std::vector<AnnotationEvent> Study::events() const {
  std::lock_guard lk(mu_);
  return events_;
}

std::vector<json> Study::records() const {
  std::lock_guard lk(mu_);
  return records_;
}

std::shared_ptr<const ModelSnapshot> Study::current_model(const std::string& annotator) const {
  std::lock_guard lk(mu_);
  const auto& a = get(annotator);
  return a.model ? a.model : (a.p.mode == SuggestionMode::none ? nullptr : expert_);
}

std::int64_t Study::latest_version() const {
  std::lock_guard lk(mu_);
  return next_version_ - 1;
}

std::map<std::string, std::vector<DivergencePoint>> Study::divergence() const {
  std::lock_guard lk(mu_);
  std::map<std::string, std::vector<DivergencePoint>> out;
  for (const auto& a : annotators_) {
    if (a->p.mode == SuggestionMode::interactive) out[a->p.id] = a->divergence;
  }
  return out;
}

std::map<std::string, std::vector<std::size_t>> Study::retrain_sizes() const {
  std::lock_guard lk(mu_);
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& a : annotators_) {
    if (a->p.mode == SuggestionMode::interactive) out[a->p.id] = a->retrain_sizes;
  }
  return out;
}

std::map<std::string, std::vector<std::size_t>> Study::retrain_triggers() const {
  std::lock_guard lk(mu_);
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& a : annotators_) {
    if (a->p.mode == SuggestionMode::interactive) out[a->p.id] = a->retrain_triggers;
  }
  return out;
}

std::vector<std::string> Study::flag_outliers(double min_mean_latency, double max_acceptance) {
  std::lock_guard lk(mu_);
  auto ids = annostudy::flag_outliers(events_, min_mean_latency, max_acceptance);
  for (const auto& a : annotators_) {
    a->p.flagged_outlier = std::find(ids.begin(), ids.end(), a->p.id) != ids.end();
  }
  return ids;
}

void Study::export_jsonl(std::ostream& out) const {
  std::lock_guard lk(mu_);
  for (const auto& e : events_) {
    if (by_id_.at(e.annotator_id)->p.flagged_outlier) continue;
    out << json(e).dump() << '\n';
  }
}

json Study::state() const {
  std::lock_guard lk(mu_);
  json ann = json::array();
  for (const auto& a : annotators_) {
    ann.push_back({{"id", a->p.id},
                   {"group", a->p.group},
                   {"claimed", a->p.claimed},
                   {"round", a->p.round},
                   {"next", a->p.next},
                   {"non_control_count", a->p.non_control_count},
                   {"since_retrain", a->since_retrain},
                   {"model_version", a->p.current_model_version},
                   {"model_fingerprint", a->model ? a->model->train_fingerprint() : ""},
                   {"retrain_sizes", a->retrain_sizes},
                   {"flagged", a->p.flagged_outlier}});
  }
  std::string all;
  for (const auto& r : records_) all += r.dump() + '\n';
  return json{{"next_version", next_version_},
              {"events", events_.size()},
              {"records", records_.size()},
              {"records_crc32c", to_hex(crc32c(all), 8)},
              {"annotators", ann}};
}

std::unique_ptr<Study> replay_study(StudyConfig cfg, StudyInputs inputs, Timestamp created_at,
                                    std::span<const json> records, StudyHooks hooks) {
  auto s = std::make_unique<Study>(std::move(cfg), std::move(inputs), created_at, std::move(hooks));
  for (const auto& r : records) s->apply(r);
  return s;
}

}  // namespace annostudy
