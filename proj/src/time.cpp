#include "annostudy/time.hpp"

#include <cstdio>

#include "annostudy/error.hpp"

namespace annostudy {

namespace chr = std::chrono;

std::string format_rfc3339(Timestamp t) {
  const auto day = chr::floor<chr::days>(t);
  const chr::year_month_day ymd{day};
  const chr::hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()),
                static_cast<int>(hms.subseconds().count()));
  return buf;
}

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw ParseError(0, "truncated timestamp '" + std::string(s) + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') throw ParseError(0, "bad timestamp '" + std::string(s) + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, std::string_view options) {
  if (pos >= s.size() || options.find(s[pos]) == std::string_view::npos) {
    throw ParseError(0, "bad timestamp '" + std::string(s) + "'");
  }
}

}  // namespace

Timestamp parse_rfc3339(std::string_view s) {
  const int year = digits(s, 0, 4);
  expect(s, 4, "-");
  const int month = digits(s, 5, 2);
  expect(s, 7, "-");
  const int dayn = digits(s, 8, 2);
  expect(s, 10, "Tt ");
  const int hour = digits(s, 11, 2);
  expect(s, 13, ":");
  const int minute = digits(s, 14, 2);
  expect(s, 16, ":");
  const int second = digits(s, 17, 2);
  std::size_t pos = 19;
  long millis = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int scale = 100;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      millis += (s[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) throw ParseError(0, "bad timestamp '" + std::string(s) + "'");
  }
  long offset_minutes = 0;
  expect(s, pos, "Zz+-");
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else {
    const int sign = s[pos] == '-' ? -1 : 1;
    const int oh = digits(s, pos + 1, 2);
    expect(s, pos + 3, ":");
    const int om = digits(s, pos + 4, 2);
    offset_minutes = sign * (oh * 60 + om);
    pos += 6;
  }
  if (pos != s.size()) throw ParseError(0, "trailing characters in timestamp '" + std::string(s) + "'");

  const chr::year_month_day ymd{chr::year{year}, chr::month{static_cast<unsigned>(month)},
                                chr::day{static_cast<unsigned>(dayn)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 60) {
    throw ParseError(0, "invalid date-time '" + std::string(s) + "'");
  }
  Timestamp t = chr::sys_days{ymd} + chr::hours{hour} + chr::minutes{minute} +
                chr::seconds{second} + chr::milliseconds{millis};
  return t - chr::minutes{offset_minutes};
}

Timestamp now_utc() { return chr::floor<chr::milliseconds>(chr::system_clock::now()); }

}  // namespace annostudy
