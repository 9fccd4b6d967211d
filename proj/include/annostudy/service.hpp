#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "annostudy/orchestrator.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace annostudy {

struct ServiceConfig {
  std::string listen_addr = "127.0.0.1:8080";
  std::filesystem::path data_dir = "data";
  // Replaces the seed of every study created by this process.
  std::optional<std::uint64_t> study_seed;
  // Generated into <data_dir>/admin.token when empty.
  std::string admin_token;
  int threads = 8;
};

// TOML keys: listen_addr, data_dir, study_seed, admin_token, threads.
// LISTEN_ADDR, DATA_DIR and STUDY_SEED from `env` win over the file.
ServiceConfig parse_service_config(std::string_view toml);
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& path,
                                  const std::function<const char*(const char*)>& env);

// ---------------------------------------------------------------- event log
//
// One record per line: `<crc32c as 8 hex digits>\t<compact json>\n`, the
// checksum taken over the JSON bytes.

std::string encode_log_line(const nlohmann::json& record);

// A complete line whose checksum or JSON is bad. Recovery refuses to start.
class CorruptLog : public std::runtime_error {
 public:
  CorruptLog(const std::filesystem::path& file, std::size_t line, const std::string& why)
      : std::runtime_error(file.string() + ": line " + std::to_string(line) + ": " + why),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct LogReadResult {
  std::vector<nlohmann::json> records;
  // Set when a partial final line was dropped; the file is cut back to the
  // last complete line.
  std::optional<std::string> warning;
};

// Missing file reads as empty.
LogReadResult read_event_log(const std::filesystem::path& path, bool truncate_partial = true);

// Appends and fsyncs one line per call. Thread-safe.
class EventLog {
 public:
  explicit EventLog(const std::filesystem::path& path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void append(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  int fd_ = -1;
};

// snapshots/v<N>.snap, written atomically.
class SnapshotStore {
 public:
  explicit SnapshotStore(std::filesystem::path dir);
  void put(const ModelSnapshot& m) const;
  std::optional<ModelSnapshot> get(std::int64_t version) const;
  std::filesystem::path path_for(std::int64_t version) const;

 private:
  std::filesystem::path dir_;
};

// ------------------------------------------------------------------ service

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& msg) : std::runtime_error(msg), status(status) {}
  int status;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Transport-free core of the HTTP API. Every handler takes the raw bearer
// token (may be empty) and returns a response; errors map to JSON bodies
// {"error": message} with 400/401/404/409/500.
class AnnotationService {
 public:
  // Recovers every study under <data_dir>/studies. Throws CorruptLog when a
  // log has a bad complete line. Warnings about dropped partial lines are
  // collected in warnings().
  explicit AnnotationService(ServiceConfig cfg);
  ~AnnotationService();

  const ServiceConfig& config() const { return cfg_; }
  const std::string& admin_token() const { return cfg_.admin_token; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::vector<std::string> study_ids() const;

  // Body: {"config": {...}, "corpus": ref, "expert_gold": ref,
  // "control_pool"?: ref}; ref = {"path": file} or {"documents": [...]}.
  Response create_study(const std::string& token, const std::string& body);
  Response create_annotator(const std::string& token, const std::string& study,
                            const std::string& body);
  // Issues a fresh token for an existing seat; the old one stops working.
  Response renew_session(const std::string& token, const std::string& study,
                         const std::string& annotator);
  Response next(const std::string& token, const std::string& study);
  Response submit(const std::string& token, const std::string& study, const std::string& body);
  Response finish_round(const std::string& token, const std::string& study);
  Response metrics(const std::string& token, const std::string& study, const std::string& report,
                   const std::map<std::string, std::string>& params = {});
  Response export_events(const std::string& token, const std::string& study);

  // Blocks until background retrains of every study are done.
  void drain();

  // Direct access for tests and tools.
  Study* study(const std::string& id);

 private:
  struct Host;
  Host& host(const std::string& id);
  std::unique_ptr<Host> open_host(const std::filesystem::path& dir, bool fresh);
  void require_admin(const std::string& token) const;
  template <typename F>
  Response guarded(F&& f);

  ServiceConfig cfg_;
  std::vector<std::string> warnings_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::unique_ptr<Host>> hosts_;
};

// Binds the /v1 routes of `svc` onto an httplib server.
class HttpFrontend {
 public:
  explicit HttpFrontend(AnnotationService& svc);
  ~HttpFrontend();

  // Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& listen_addr);
  // Blocks serving requests until stop().
  void serve();
  void stop();

 private:
  AnnotationService& svc_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace annostudy
