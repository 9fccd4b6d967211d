#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace annostudy {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

// "2020-03-14T09:26:53.589Z"; always UTC with millisecond precision.
std::string format_rfc3339(Timestamp t);

// Accepts RFC 3339 date-times with optional fractional seconds and either
// 'Z' or a numeric offset. Throws ParseError on anything else.
Timestamp parse_rfc3339(std::string_view s);

Timestamp now_utc();

inline double seconds_between(Timestamp from, Timestamp to) {
  return std::chrono::duration<double>(to - from).count();
}

}  // namespace annostudy
