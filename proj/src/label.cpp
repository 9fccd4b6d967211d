#include "annostudy/label.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace annostudy {

namespace {
constexpr std::array<std::string_view, kNumLabels> kNames = {"Unrelated", "Comment",
                                                             "Support", "Refute"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}
}  // namespace

std::string_view label_name(Label l) { return kNames.at(code(l)); }

std::optional<Label> parse_label(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (iequals(name, kNames[i])) return static_cast<Label>(i);
  }
  return std::nullopt;
}

Label label_from_name(std::string_view name) {
  if (auto l = parse_label(name)) return *l;
  throw std::invalid_argument("unknown label '" + std::string(name) +
                              "' (expected Unrelated, Comment, Support or Refute)");
}

Label label_from_code(long long c) {
  if (c < 0 || c >= static_cast<long long>(kNumLabels)) {
    throw std::invalid_argument("label code out of range: " + std::to_string(c));
  }
  return static_cast<Label>(c);
}

void to_json(nlohmann::json& j, Label l) { j = std::string(label_name(l)); }

void from_json(const nlohmann::json& j, Label& l) {
  if (!j.is_string()) throw std::invalid_argument("label must be serialized as a name");
  l = label_from_name(j.get<std::string>());
}

}  // namespace annostudy
