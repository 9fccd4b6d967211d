#include "annostudy/text.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "annostudy/error.hpp"

namespace annostudy::text {

namespace {

// Decodes one scalar at `i`, advancing it. Returns a negative value on error.
UChar32 next_scalar(std::string_view s, std::size_t& i) {
  UChar32 c = 0;
  auto idx = static_cast<int32_t>(i);
  U8_NEXT(reinterpret_cast<const uint8_t*>(s.data()), idx, static_cast<int32_t>(s.size()), c);
  i = static_cast<std::size_t>(idx);
  return c;
}

icu::UnicodeString to_unicode(std::string_view s) {
  if (!is_valid_utf8(s)) throw InvalidArgument("malformed UTF-8 input");
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
}

std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (next_scalar(s, i) < 0) return false;
  }
  return true;
}

std::size_t scalar_count(std::string_view s) {
  std::size_t i = 0;
  std::size_t n = 0;
  while (i < s.size()) {
    if (next_scalar(s, i) < 0) throw InvalidArgument("malformed UTF-8 input");
    ++n;
  }
  return n;
}

std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  icu::UnicodeString result = norm->normalize(to_unicode(s), status);
  if (U_FAILURE(status)) throw std::runtime_error("NFC normalization failed");
  return to_utf8(result);
}

std::string to_lower(std::string_view s) {
  icu::UnicodeString u = to_unicode(s);
  u.toLower(icu::Locale::getRoot());
  return to_utf8(u);
}

std::string_view trim(std::string_view s) {
  std::size_t begin = 0;
  while (begin < s.size()) {
    std::size_t next = begin;
    UChar32 c = next_scalar(s, next);
    if (c < 0 || !u_hasBinaryProperty(c, UCHAR_WHITE_SPACE)) break;
    begin = next;
  }
  std::size_t end = begin;
  std::size_t i = begin;
  while (i < s.size()) {
    UChar32 c = next_scalar(s, i);
    if (c < 0 || !u_hasBinaryProperty(c, UCHAR_WHITE_SPACE)) end = i;
  }
  return s.substr(begin, end - begin);
}

std::vector<std::string> alnum_tokens(std::string_view s, bool keep_hash) {
  std::vector<std::string> tokens;
  std::string current;
  bool pending_hash = false;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t start = i;
    UChar32 c = next_scalar(s, i);
    if (c < 0) throw InvalidArgument("malformed UTF-8 input");
    if (u_isalnum(c)) {
      if (current.empty() && pending_hash) current.push_back('#');
      current.append(s.substr(start, i - start));
      pending_hash = false;
      continue;
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
    pending_hash = keep_hash && c == '#';
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace annostudy::text
