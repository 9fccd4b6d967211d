#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "annostudy/label.hpp"
#include "annostudy/suggester.hpp"
#include "annostudy/time.hpp"
#include "json.hpp"

namespace annostudy {

enum class SuggestionMode { none, fixed, interactive };
std::string_view suggestion_mode_name(SuggestionMode m);
SuggestionMode suggestion_mode_from_name(std::string_view s);

// One labeling act. Rounds and positions are 1-based.
struct AnnotationEvent {
  std::string annotator_id;
  std::string group;
  std::string document_id;
  int round = 1;
  int position = 1;
  bool is_control = false;
  std::optional<Suggestion> suggestion;
  Label chosen = Label::Unrelated;
  Timestamp started_at{};
  Timestamp submitted_at{};

  std::optional<bool> accepted() const {
    if (!suggestion) return std::nullopt;
    return chosen == suggestion->label;
  }
  double latency_seconds() const { return seconds_between(started_at, submitted_at); }
};

// Export record: annotator, group, round, position, doc_id, suggestion_label,
// suggestion_confidence, model_version, chosen, accepted, started_at,
// submitted_at, is_control. Absent suggestion fields are null.
void to_json(nlohmann::json& j, const AnnotationEvent& e);
void from_json(const nlohmann::json& j, AnnotationEvent& e);

void write_events_jsonl(std::ostream& out, std::span<const AnnotationEvent> events);
std::vector<AnnotationEvent> read_events_jsonl(std::istream& in);

}  // namespace annostudy
