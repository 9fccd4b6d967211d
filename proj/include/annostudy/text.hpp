#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 helpers backed by ICU. All functions take and return UTF-8.
namespace annostudy::text {

bool is_valid_utf8(std::string_view s);

// Number of Unicode scalar values. Throws InvalidArgument on malformed UTF-8.
std::size_t scalar_count(std::string_view s);

std::string nfc(std::string_view s);

// Full Unicode lowercase mapping (root locale).
std::string to_lower(std::string_view s);

// Strips leading/trailing characters with the White_Space property.
std::string_view trim(std::string_view s);

// Maximal runs of alphanumeric code points. With `keep_hash`, a '#'
// directly preceding a run stays attached to the token.
std::vector<std::string> alnum_tokens(std::string_view s, bool keep_hash);

}  // namespace annostudy::text
