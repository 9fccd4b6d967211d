#include "annostudy/events.hpp"

#include <istream>
#include <ostream>

#include "annostudy/error.hpp"

namespace annostudy {

using nlohmann::json;

std::string_view suggestion_mode_name(SuggestionMode m) {
  switch (m) {
    case SuggestionMode::none: return "none";
    case SuggestionMode::fixed: return "static";
    case SuggestionMode::interactive: return "interactive";
  }
  return "?";
}

SuggestionMode suggestion_mode_from_name(std::string_view s) {
  if (s == "none") return SuggestionMode::none;
  if (s == "static") return SuggestionMode::fixed;
  if (s == "interactive") return SuggestionMode::interactive;
  throw InvalidArgument("unknown suggestion mode '" + std::string(s) +
                        "' (expected none, static or interactive)");
}

void to_json(json& j, const AnnotationEvent& e) {
  j = json{{"annotator", e.annotator_id},
           {"group", e.group},
           {"round", e.round},
           {"position", e.position},
           {"doc_id", e.document_id}};
  if (e.suggestion) {
    j["suggestion_label"] = e.suggestion->label;
    j["suggestion_confidence"] = e.suggestion->confidence;
    j["model_version"] = e.suggestion->model_version;
  } else {
    j["suggestion_label"] = nullptr;
    j["suggestion_confidence"] = nullptr;
    j["model_version"] = nullptr;
  }
  j["chosen"] = e.chosen;
  if (auto a = e.accepted()) {
    j["accepted"] = *a;
  } else {
    j["accepted"] = nullptr;
  }
  j["started_at"] = format_rfc3339(e.started_at);
  j["submitted_at"] = format_rfc3339(e.submitted_at);
  j["is_control"] = e.is_control;
}

void from_json(const json& j, AnnotationEvent& e) {
  e.annotator_id = j.at("annotator").get<std::string>();
  e.group = j.at("group").get<std::string>();
  e.round = j.at("round").get<int>();
  e.position = j.at("position").get<int>();
  e.document_id = j.at("doc_id").get<std::string>();
  e.is_control = j.value("is_control", false);
  e.suggestion.reset();
  if (j.contains("suggestion_label") && !j["suggestion_label"].is_null()) {
    Suggestion s;
    s.document_id = e.document_id;
    s.label = j["suggestion_label"].get<Label>();
    s.confidence = j.value("suggestion_confidence", 0.0);
    s.model_version = j.value("model_version", std::int64_t{0});
    e.suggestion = s;
  }
  e.chosen = j.at("chosen").get<Label>();
  e.started_at = parse_rfc3339(j.at("started_at").get<std::string>());
  e.submitted_at = parse_rfc3339(j.at("submitted_at").get<std::string>());
}

void write_events_jsonl(std::ostream& out, std::span<const AnnotationEvent> events) {
  for (const auto& e : events) out << json(e).dump() << '\n';
}

std::vector<AnnotationEvent> read_events_jsonl(std::istream& in) {
  std::vector<AnnotationEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<AnnotationEvent>());
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

}  // namespace annostudy
