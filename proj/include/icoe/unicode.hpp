#pragma once

// UTF-8 <-> code point conversion and character classes. All offsets in
// this library count Unicode code points, never bytes.

#include <string>
#include <string_view>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "icoe/error.hpp"

namespace icoe::unicode {

inline std::u32string decode(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
  const auto length = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) throw Error("invalid UTF-8 sequence at byte " + std::to_string(i));
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

inline std::string encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t c : text) {
    uint8_t buf[U8_MAX_LENGTH];
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(c), error);
    if (error) throw Error("code point not encodable as UTF-8");
    out.append(reinterpret_cast<const char*>(buf), static_cast<size_t>(n));
  }
  return out;
}

inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }
inline bool is_digit(char32_t c) { return c >= U'0' && c <= U'9'; }
inline bool is_alpha(char32_t c) { return u_isalpha(static_cast<UChar32>(c)); }
inline bool is_alnum(char32_t c) { return is_digit(c) || is_alpha(c); }
inline bool is_upper(char32_t c) { return u_isupper(static_cast<UChar32>(c)); }
inline bool is_lower(char32_t c) { return u_islower(static_cast<UChar32>(c)); }
inline char32_t to_lower(char32_t c) {
  return static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
}

inline std::u32string lower(std::u32string_view s) {
  std::u32string out(s);
  for (auto& c : out) c = to_lower(c);
  return out;
}

/// Lowercases a UTF-8 string per code point.
inline std::string lower_utf8(std::string_view s) { return encode(lower(decode(s))); }

}  // namespace icoe::unicode
