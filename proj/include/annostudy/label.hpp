#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

#include "json.hpp"

namespace annostudy {

// Stance toward governmental containment measures. Codes are stable and
// define tie-breaking order everywhere (lowest code wins).
enum class Label : std::uint8_t {
  Unrelated = 0,
  Comment = 1,
  Support = 2,
  Refute = 3,
};

inline constexpr std::size_t kNumLabels = 4;

inline constexpr std::array<Label, kNumLabels> kAllLabels = {
    Label::Unrelated, Label::Comment, Label::Support, Label::Refute};

constexpr std::size_t code(Label l) { return static_cast<std::size_t>(l); }

std::string_view label_name(Label l);

// Accepts the canonical names case-insensitively.
std::optional<Label> parse_label(std::string_view name);

// Throws std::invalid_argument for anything outside the closed set.
Label label_from_name(std::string_view name);
Label label_from_code(long long c);

template <typename T>
using PerLabel = std::array<T, kNumLabels>;

void to_json(nlohmann::json& j, Label l);
void from_json(const nlohmann::json& j, Label& l);

}  // namespace annostudy
