#include "annostudy/service.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <httplib.h>
#include <toml.hpp>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"

namespace annostudy {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------- config

namespace {

std::uint64_t parse_seed(std::string_view s, const char* what) {
  std::uint64_t v = 0;
  if (s.empty()) throw InvalidArgument(std::string(what) + " is empty");
  for (char c : s) {
    if (c < '0' || c > '9') throw InvalidArgument(std::string(what) + " must be a non-negative integer");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

}  // namespace

ServiceConfig parse_service_config(std::string_view text) {
  toml::table t;
  try {
    t = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ParseError(e.source().begin.line, std::string(e.description()));
  }
  ServiceConfig c;
  for (const auto& [k, node] : t) {
    const std::string key(k.str());
    const auto line = node.source().begin.line;
    if (key == "listen_addr") {
      auto v = node.value<std::string>();
      if (!v) throw ParseError(line, "listen_addr must be a string");
      c.listen_addr = *v;
    } else if (key == "data_dir") {
      auto v = node.value<std::string>();
      if (!v) throw ParseError(line, "data_dir must be a string");
      c.data_dir = *v;
    } else if (key == "admin_token") {
      auto v = node.value<std::string>();
      if (!v) throw ParseError(line, "admin_token must be a string");
      c.admin_token = *v;
    } else if (key == "study_seed") {
      auto v = node.value<std::int64_t>();
      if (!v || *v < 0) throw ParseError(line, "study_seed must be a non-negative integer");
      c.study_seed = static_cast<std::uint64_t>(*v);
    } else if (key == "threads") {
      auto v = node.value<std::int64_t>();
      if (!v || *v < 1) throw ParseError(line, "threads must be a positive integer");
      c.threads = static_cast<int>(*v);
    } else {
      throw ParseError(line, "unknown key '" + key + "'");
    }
  }
  return c;
}

ServiceConfig load_service_config(const std::optional<fs::path>& path,
                                  const std::function<const char*(const char*)>& env) {
  ServiceConfig c;
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw NotFound("cannot open config '" + path->string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    c = parse_service_config(ss.str());
  }
  if (env) {
    if (const char* v = env("LISTEN_ADDR"); v && *v) c.listen_addr = v;
    if (const char* v = env("DATA_DIR"); v && *v) c.data_dir = v;
    if (const char* v = env("STUDY_SEED"); v && *v) c.study_seed = parse_seed(v, "STUDY_SEED");
  }
  return c;
}

// ---------------------------------------------------------------- event log

std::string encode_log_line(const json& record) {
  const std::string body = record.dump();
  return to_hex(crc32c(body), 8) + '\t' + body + '\n';
}

LogReadResult read_event_log(const fs::path& path, bool truncate_partial) {
  LogReadResult out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  in.close();

  std::size_t pos = 0, line = 0;
  while (pos < data.size()) {
    ++line;
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) {
      out.warning = path.string() + ": dropped partial final line " + std::to_string(line) +
                    " (" + std::to_string(data.size() - pos) + " bytes)";
      if (truncate_partial) fs::resize_file(path, pos);
      break;
    }
    const std::string_view l(data.data() + pos, nl - pos);
    pos = nl + 1;
    const auto tab = l.find('\t');
    if (tab != 8) throw CorruptLog(path, line, "malformed record");
    const auto body = l.substr(9);
    if (to_hex(crc32c(body), 8) != l.substr(0, 8)) throw CorruptLog(path, line, "checksum mismatch");
    try {
      out.records.push_back(json::parse(body));
    } catch (const json::exception& e) {
      throw CorruptLog(path, line, std::string("bad json: ") + e.what());
    }
  }
  return out;
}

EventLog::EventLog(const fs::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const json& record) {
  const std::string line = encode_log_line(record);
  std::lock_guard lk(mu_);
  std::size_t off = 0;
  while (off < line.size()) {
    const auto n = ::write(fd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("write " + path_.string() + ": " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) throw std::runtime_error("fdatasync " + path_.string() + ": " + std::strerror(errno));
}

SnapshotStore::SnapshotStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path SnapshotStore::path_for(std::int64_t version) const {
  return dir_ / ("v" + std::to_string(version) + ".snap");
}

void SnapshotStore::put(const ModelSnapshot& m) const {
  const auto p = path_for(m.version());
  if (fs::exists(p)) return;
  const auto tmp = fs::path(p).concat(".tmp");
  save_snapshot(m, tmp);
  fs::rename(tmp, p);
}

std::optional<ModelSnapshot> SnapshotStore::get(std::int64_t version) const {
  const auto p = path_for(version);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return load_snapshot(p);
  } catch (const std::exception& e) {
    std::cerr << "warning: ignoring unreadable snapshot " << p << ": " << e.what() << '\n';
    return std::nullopt;
  }
}

// ------------------------------------------------------------------ service

namespace {

std::string random_hex(int bytes) {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard lk(mu);
  std::string out;
  for (int i = 0; i < bytes; i += 4) out += to_hex(rd(), 8);
  return out.substr(0, static_cast<std::size_t>(bytes) * 2);
}

Response json_response(const json& j, int status = 200) { return {status, j.dump(), "application/json"}; }

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  auto j = json::parse(body);  // json::exception -> 400
  if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
  return j;
}

void write_file_atomic(const fs::path& p, const std::string& content) {
  const auto tmp = fs::path(p).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::vector<Document> documents_from_ref(const json& ref, const char* what) {
  if (ref.contains("path")) {
    const fs::path p = ref.at("path").get<std::string>();
    const auto c = load_corpus(p, corpus_format_from_path(p));
    return {c.begin(), c.end()};
  }
  if (ref.contains("documents")) {
    std::stringstream ss;
    for (const auto& d : ref.at("documents")) ss << d.dump() << '\n';
    const auto c = read_corpus(ss, CorpusFormat::jsonl);
    return {c.begin(), c.end()};
  }
  throw HttpError(400, std::string(what) + " needs \"path\" or \"documents\"");
}

std::vector<LabeledDocument> labeled_from_ref(const json& ref, const char* what) {
  if (ref.contains("path")) return load_labeled(ref.at("path").get<std::string>());
  if (ref.contains("documents")) {
    std::stringstream ss;
    for (const auto& d : ref.at("documents")) ss << d.dump() << '\n';
    return read_labeled(ss);
  }
  throw HttpError(400, std::string(what) + " needs \"path\" or \"documents\"");
}

}  // namespace

struct AnnotationService::Host {
  std::string id;
  fs::path dir;
  std::unique_ptr<EventLog> log;
  std::unique_ptr<SnapshotStore> snapshots;
  std::unique_ptr<Study> study;
  std::mutex write_mu;  // serializes check-then-act request sequences
  std::unordered_map<std::string, std::string> token_to_annotator;
  std::unordered_map<std::string, std::string> annotator_token;
  std::vector<GoldLabel> control_gold;

  void add_session(const std::string& annotator, const std::string& token) {
    if (auto it = annotator_token.find(annotator); it != annotator_token.end()) {
      token_to_annotator.erase(it->second);
    }
    annotator_token[annotator] = token;
    token_to_annotator[token] = annotator;
  }

  const std::string& annotator_for(const std::string& token) const {
    auto it = token_to_annotator.find(token);
    if (token.empty() || it == token_to_annotator.end()) throw HttpError(401, "invalid token");
    return it->second;
  }
};

AnnotationService::AnnotationService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  fs::create_directories(cfg_.data_dir / "studies");
  if (cfg_.admin_token.empty()) {
    const auto p = cfg_.data_dir / "admin.token";
    if (fs::exists(p)) {
      std::ifstream in(p);
      std::getline(in, cfg_.admin_token);
    }
    if (cfg_.admin_token.empty()) {
      cfg_.admin_token = random_hex(16);
      write_file_atomic(p, cfg_.admin_token + "\n");
      fs::permissions(p, fs::perms::owner_read | fs::perms::owner_write);
    }
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(cfg_.data_dir / "studies")) {
    if (e.is_directory() && fs::exists(e.path() / "study.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    auto h = open_host(d, false);
    hosts_.emplace(h->id, std::move(h));
  }
}

AnnotationService::~AnnotationService() {
  // Studies stop their retrain workers before the logs close.
  for (auto& [id, h] : hosts_) h->study.reset();
}

std::unique_ptr<AnnotationService::Host> AnnotationService::open_host(const fs::path& dir,
                                                                        bool fresh) {
  auto h = std::make_unique<Host>();
  h->dir = dir;
  json meta;
  {
    std::ifstream in(dir / "study.json");
    if (!in) throw std::runtime_error("cannot read " + (dir / "study.json").string());
    meta = json::parse(in);
  }
  h->id = meta.at("id").get<std::string>();
  const auto cfg = meta.at("config").get<StudyConfig>();
  const auto created_at = parse_rfc3339(meta.at("created_at").get<std::string>());

  StudyInputs inputs;
  inputs.pool = load_corpus(dir / "pool.jsonl", CorpusFormat::jsonl);
  inputs.expert_gold = load_labeled(dir / "expert_gold.jsonl");
  if (fs::exists(dir / "control_pool.jsonl")) inputs.control_pool = load_labeled(dir / "control_pool.jsonl");

  std::vector<json> records;
  if (!fresh) {
    auto r = read_event_log(dir / "events.log");
    if (r.warning) {
      std::cerr << "warning: " << *r.warning << '\n';
      warnings_.push_back(*r.warning);
    }
    records = std::move(r.records);
  }
  h->log = std::make_unique<EventLog>(dir / "events.log");
  h->snapshots = std::make_unique<SnapshotStore>(dir / "snapshots");

  Host* raw = h.get();
  StudyHooks hooks;
  hooks.on_record = [raw](const json& rec) { raw->log->append(rec); };
  hooks.on_snapshot = [raw](const ModelSnapshot& m) { raw->snapshots->put(m); };
  hooks.load_snapshot = [raw](std::int64_t v) { return raw->snapshots->get(v); };

  std::vector<json> study_records;
  for (auto& rec : records) {
    if (rec.value("type", "") == "session") {
      h->add_session(rec.at("annotator").get<std::string>(), rec.at("token").get<std::string>());
    } else {
      study_records.push_back(std::move(rec));
    }
  }
  if (study_records.empty()) {
    h->study = std::make_unique<Study>(cfg, std::move(inputs), created_at, hooks);
  } else {
    h->study = replay_study(cfg, std::move(inputs), created_at, study_records, hooks);
  }
  for (int r = 1; r <= cfg.rounds; ++r) {
    for (const auto& id : h->study->control_ids(r)) {
      h->control_gold.push_back({id, *h->study->control_gold(id), Provenance::adjudicated, 0.0});
    }
  }
  return h;
}

std::vector<std::string> AnnotationService::study_ids() const {
  std::shared_lock lk(mu_);
  std::vector<std::string> out;
  for (const auto& [id, h] : hosts_) out.push_back(id);
  return out;
}

AnnotationService::Host& AnnotationService::host(const std::string& id) {
  std::shared_lock lk(mu_);
  auto it = hosts_.find(id);
  if (it == hosts_.end()) throw HttpError(404, "unknown study '" + id + "'");
  return *it->second;
}

Study* AnnotationService::study(const std::string& id) {
  std::shared_lock lk(mu_);
  auto it = hosts_.find(id);
  return it == hosts_.end() ? nullptr : it->second->study.get();
}

void AnnotationService::require_admin(const std::string& token) const {
  if (token.empty() || token != cfg_.admin_token) throw HttpError(401, "admin token required");
}

template <typename F>
Response AnnotationService::guarded(F&& f) {
  auto err = [](int status, const std::string& msg) { return json_response(json{{"error", msg}}, status); };
  try {
    return f();
  } catch (const HttpError& e) {
    return err(e.status, e.what());
  } catch (const NotFound& e) {
    return err(404, e.what());
  } catch (const StateConflict& e) {
    return err(409, e.what());
  } catch (const ParseError& e) {
    return err(400, e.what());
  } catch (const InvalidArgument& e) {
    return err(400, e.what());
  } catch (const json::exception& e) {
    return err(400, e.what());
  } catch (const std::exception& e) {
    return err(500, e.what());
  }
}

Response AnnotationService::create_study(const std::string& token, const std::string& body) {
  return guarded([&] {
    require_admin(token);
    const json req = parse_body(body);
    StudyConfig cfg = req.value("config", json::object()).get<StudyConfig>();
    if (cfg_.study_seed) cfg.seed = *cfg_.study_seed;
    cfg.validate();
    if (!req.contains("corpus")) throw HttpError(400, "missing \"corpus\"");
    if (!req.contains("expert_gold")) throw HttpError(400, "missing \"expert_gold\"");
    const Corpus pool(documents_from_ref(req.at("corpus"), "corpus"));
    const auto gold = labeled_from_ref(req.at("expert_gold"), "expert_gold");
    std::vector<LabeledDocument> control;
    if (req.contains("control_pool")) control = labeled_from_ref(req.at("control_pool"), "control_pool");

    const std::string id = "s" + random_hex(8);
    const auto tmp_dir = cfg_.data_dir / "studies" / ("." + id + ".tmp");
    const auto dir = cfg_.data_dir / "studies" / id;
    fs::create_directories(tmp_dir);
    try {
      {
        std::ofstream out(tmp_dir / "pool.jsonl", std::ios::binary);
        write_corpus(out, pool, CorpusFormat::jsonl);
        std::ofstream g(tmp_dir / "expert_gold.jsonl", std::ios::binary);
        write_labeled(g, gold);
        if (!control.empty()) {
          std::ofstream c(tmp_dir / "control_pool.jsonl", std::ios::binary);
          write_labeled(c, control);
        }
      }
      const json meta{{"id", id}, {"config", cfg}, {"created_at", format_rfc3339(now_utc())}};
      write_file_atomic(tmp_dir / "study.json", meta.dump(2) + "\n");
      // Builds the plans and expert model; rejects bad inputs before publishing.
      auto h = open_host(tmp_dir, true);
      h->study.reset();
      h->log.reset();
      fs::rename(tmp_dir, dir);
    } catch (...) {
      std::error_code ec;
      fs::remove_all(tmp_dir, ec);
      throw;
    }
    auto h = open_host(dir, true);
    json resp{{"study_id", id},
              {"annotators", h->study->annotator_ids()},
              {"expert_model_version", Study::kExpertVersion}};
    std::unique_lock lk(mu_);
    hosts_.emplace(id, std::move(h));
    return json_response(resp, 201);
  });
}

Response AnnotationService::create_annotator(const std::string& token, const std::string& study,
                                             const std::string& body) {
  return guarded([&] {
    require_admin(token);
    Host& h = host(study);
    const json req = parse_body(body);
    std::optional<std::string> group;
    if (req.contains("group") && !req.at("group").is_null()) group = req.at("group").get<std::string>();
    std::lock_guard lk(h.write_mu);
    const auto id = h.study->claim_annotator(group);
    const auto tok = random_hex(16);
    h.log->append(json{{"type", "session"}, {"annotator", id}, {"token", tok}});
    h.add_session(id, tok);
    const auto p = h.study->profile(id);
    return json_response(json{{"annotator_id", id}, {"group", p.group}, {"token", tok}}, 201);
  });
}

Response AnnotationService::renew_session(const std::string& token, const std::string& study,
                                          const std::string& annotator) {
  return guarded([&] {
    require_admin(token);
    Host& h = host(study);
    std::lock_guard lk(h.write_mu);
    const auto p = h.study->profile(annotator);  // NotFound -> 404
    if (!p.claimed) throw StateConflict("annotator '" + annotator + "' has not been claimed");
    const auto tok = random_hex(16);
    h.log->append(json{{"type", "session"}, {"annotator", annotator}, {"token", tok}});
    h.add_session(annotator, tok);
    return json_response(json{{"annotator_id", annotator}, {"group", p.group}, {"token", tok}});
  });
}

Response AnnotationService::next(const std::string& token, const std::string& study) {
  return guarded([&] {
    Host& h = host(study);
    std::lock_guard lk(h.write_mu);
    const auto annotator = h.annotator_for(token);
    const auto r = h.study->next_item(annotator);
    if (const auto* s = std::get_if<ServedItem>(&r)) {
      json j{{"doc_id", s->document->id},
             {"text", s->document->text},
             {"round", s->round},
             {"position", s->position},
             {"total", s->total},
             {"suggestion", nullptr}};
      if (s->suggestion) {
        j["suggestion"] = {{"label", label_name(s->suggestion->label)},
                           {"confidence", s->suggestion->confidence}};
      }
      return json_response(j);
    }
    if (const auto* rc = std::get_if<RoundComplete>(&r)) {
      return json_response(json{{"done", true}, {"round_complete", true}, {"round", rc->round}});
    }
    return json_response(json{{"done", true}, {"study_complete", true}});
  });
}

Response AnnotationService::submit(const std::string& token, const std::string& study,
                                   const std::string& body) {
  return guarded([&] {
    Host& h = host(study);
    const json req = parse_body(body);
    const auto doc = req.at("doc_id").get<std::string>();
    const auto chosen_name = req.at("chosen").get<std::string>();
    const auto chosen = parse_label(chosen_name);
    if (!chosen) throw HttpError(400, "unknown label '" + chosen_name + "'");
    const Timestamp now = now_utc();
    const Timestamp started =
        req.contains("started_at") && !req.at("started_at").is_null()
            ? parse_rfc3339(req.at("started_at").get<std::string>())
            : now;
    std::lock_guard lk(h.write_mu);
    const auto annotator = h.annotator_for(token);
    if (auto prior = h.study->find_submission(annotator, doc)) {
      if (prior->first != *chosen) {
        throw StateConflict("document '" + doc + "' was already submitted with label " +
                            std::string(label_name(prior->first)));
      }
      return json_response(json(prior->second));
    }
    if (started > now) throw HttpError(400, "started_at is in the future");
    return json_response(json(h.study->submit(annotator, doc, *chosen, started, now)));
  });
}

Response AnnotationService::finish_round(const std::string& token, const std::string& study) {
  return guarded([&] {
    Host& h = host(study);
    std::lock_guard lk(h.write_mu);
    const auto annotator = h.annotator_for(token);
    return json_response(json(h.study->finish_round(annotator)));
  });
}

Response AnnotationService::metrics(const std::string& token, const std::string& study,
                                    const std::string& report,
                                    const std::map<std::string, std::string>& params) {
  return guarded([&] {
    require_admin(token);
    Host& h = host(study);
    const auto events = h.study->events();
    if (report == "agreement") {
      json j;
      j["agreement"] = agreement_reports(events, h.control_gold);
      j["control_accuracy"] = control_accuracy(events, h.control_gold);
      return json_response(j);
    }
    if (report == "bias") {
      json corrections = json::array();
      for (const auto& row : correction_matrix(events)) corrections.push_back(row);
      json j;
      j["acceptance"] = acceptance_rate(events);
      j["corrections"] = corrections;
      j["divergence"] = h.study->divergence();
      j["outliers"] = flag_outliers(events);
      return json_response(j);
    }
    if (report == "transfer") {
      const auto& cfg = h.study->config();
      std::vector<TransferGroup> groups;
      for (const auto& g : cfg.groups) {
        TransferGroup tg{g.name, {}};
        for (const auto& e : events) {
          if (e.group == g.name && !e.is_control) {
            tg.annotations.push_back({*h.study->document(e.document_id), e.chosen});
          }
        }
        groups.push_back(std::move(tg));
      }
      TransferOptions opts;
      opts.features = cfg.features;
      opts.train = cfg.train;
      opts.seed = cfg.seed;
      if (auto it = params.find("runs"); it != params.end()) {
        opts.runs = static_cast<int>(parse_seed(it->second, "runs"));
      }
      try {
        return json_response(json(transfer_experiment(groups, opts)));
      } catch (const InvalidArgument& e) {
        throw StateConflict(std::string("not enough annotations yet: ") + e.what());
      }
    }
    throw HttpError(400, "report must be agreement, bias or transfer");
  });
}

Response AnnotationService::export_events(const std::string& token, const std::string& study) {
  return guarded([&] {
    require_admin(token);
    Host& h = host(study);
    std::lock_guard lk(h.write_mu);
    h.study->flag_outliers();
    std::ostringstream out;
    h.study->export_jsonl(out);
    return Response{200, out.str(), "application/x-ndjson"};
  });
}

void AnnotationService::drain() {
  std::shared_lock lk(mu_);
  for (auto& [id, h] : hosts_) h->study->wait_for_retrains();
}

// --------------------------------------------------------------------- http

namespace {

std::string bearer(const httplib::Request& req) {
  const auto v = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (v.size() > prefix.size() && v.compare(0, prefix.size(), prefix) == 0) return v.substr(prefix.size());
  return {};
}

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

HttpFrontend::HttpFrontend(AnnotationService& svc)
    : svc_(svc), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  const int threads = std::max(1, svc_.config().threads);
  s.set_payload_max_length(512u << 20);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };

  s.Post("/v1/studies", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.create_study(bearer(q), q.body));
  });
  s.Post(R"(/v1/studies/([^/]+)/annotators)", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.create_annotator(bearer(q), q.matches[1], q.body));
  });
  s.Post(R"(/v1/studies/([^/]+)/annotators/([^/]+)/session)",
         [this](const httplib::Request& q, httplib::Response& r) {
           reply(r, svc_.renew_session(bearer(q), q.matches[1], q.matches[2]));
         });
  s.Get(R"(/v1/studies/([^/]+)/next)", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.next(bearer(q), q.matches[1]));
  });
  s.Post(R"(/v1/studies/([^/]+)/annotations)", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.submit(bearer(q), q.matches[1], q.body));
  });
  s.Post(R"(/v1/studies/([^/]+)/finish-round)", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.finish_round(bearer(q), q.matches[1]));
  });
  s.Get(R"(/v1/studies/([^/]+)/metrics)", [this](const httplib::Request& q, httplib::Response& r) {
    std::map<std::string, std::string> params;
    for (const auto& [k, v] : q.params) params.emplace(k, v);
    reply(r, svc_.metrics(bearer(q), q.matches[1], q.get_param_value("report"), params));
  });
  s.Get(R"(/v1/studies/([^/]+)/export)", [this](const httplib::Request& q, httplib::Response& r) {
    reply(r, svc_.export_events(bearer(q), q.matches[1]));
  });
  s.Get("/v1/health", [](const httplib::Request&, httplib::Response& r) {
    r.set_content(R"({"ok":true})", "application/json");
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& listen_addr) {
  const auto colon = listen_addr.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("listen address must be host:port");
  std::string host = listen_addr.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  const int port = static_cast<int>(parse_seed(listen_addr.substr(colon + 1), "port"));
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p <= 0) throw std::runtime_error("cannot bind " + listen_addr);
    return p;
  }
  if (!server_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + listen_addr);
  return port;
}

void HttpFrontend::serve() { server_->listen_after_bind(); }

void HttpFrontend::stop() {
  if (server_) server_->stop();
}

}  // namespace annostudy
