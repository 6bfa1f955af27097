#pragma once

// Offset-preserving normalization, sentence segmentation and tokenization.
//
// Normalized offsets index NormalizedText::text (code points). Every
// normalized character remembers the raw interval it was produced from, so
// any span found on normalized text can be projected back onto the raw body.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "icoe/error.hpp"
#include "icoe/unicode.hpp"

namespace icoe {

struct NormalizedText {
  std::u32string text;
  /// Raw offset each normalized character came from.
  std::vector<std::size_t> offset_map;
  /// Raw end (exclusive) of the material each normalized character came from.
  std::vector<std::size_t> raw_end;
  std::size_t raw_length = 0;

  std::string utf8() const { return unicode::encode(text); }
  std::string slice(std::size_t start, std::size_t end) const {
    return unicode::encode(std::u32string_view(text).substr(start, end - start));
  }
};

struct Token {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;

  bool operator==(const Token&) const = default;
};

struct Sentence {
  int index = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<Token> tokens;
};

namespace detail {

inline constexpr char32_t kEnDash = U'\u2013';
inline constexpr char32_t kEmDash = U'\u2014';
inline constexpr char32_t kMiddleDot = U'\u00B7';
inline constexpr char32_t kNoBreakSpace = U'\u00A0';
inline constexpr char32_t kNarrowNoBreakSpace = U'\u202F';
inline constexpr char32_t kLessEqual = U'\u2264';
inline constexpr char32_t kGreaterEqual = U'\u2265';

struct MappedChar {
  char32_t c;
  std::size_t raw_begin;
  std::size_t raw_end;
};

using MappedText = std::vector<MappedChar>;

inline MappedText nfc(std::u32string_view raw) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");

  MappedText out;
  out.reserve(raw.size());
  std::size_t seg = 0;
  // Each normalization segment (a starter plus its combining marks) maps as
  // a unit onto its raw interval.
  auto flush = [&](std::size_t end) {
    if (end == seg) return;
    auto piece = raw.substr(seg, end - seg);
    icu::UnicodeString src = icu::UnicodeString::fromUTF32(
        reinterpret_cast<const UChar32*>(piece.data()), static_cast<int32_t>(piece.size()));
    icu::UnicodeString dst = normalizer->normalize(src, status);
    if (U_FAILURE(status)) throw Error("NFC normalization failed");
    std::u32string composed(static_cast<std::size_t>(dst.countChar32()), U'\0');
    UErrorCode conv = U_ZERO_ERROR;
    dst.toUTF32(reinterpret_cast<UChar32*>(composed.data()),
                static_cast<int32_t>(composed.size()), conv);
    for (char32_t c : composed) out.push_back({c, seg, end});
    seg = end;
  };
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (normalizer->hasBoundaryBefore(static_cast<UChar32>(raw[i]))) flush(i);
  }
  flush(raw.size());
  return out;
}

inline bool is_dash(char32_t c) { return c == kEnDash || c == kEmDash; }
inline bool is_nbsp(char32_t c) { return c == kNoBreakSpace || c == kNarrowNoBreakSpace; }
inline bool is_blank(char32_t c) { return unicode::is_space(c) || is_nbsp(c); }

// Nearest non-blank neighbours of position i are both digits.
inline bool digit_context(const MappedText& t, std::size_t i) {
  std::size_t l = i;
  while (l > 0 && is_blank(t[l - 1].c)) --l;
  std::size_t r = i + 1;
  while (r < t.size() && is_blank(t[r].c)) ++r;
  return l > 0 && r < t.size() && unicode::is_digit(t[l - 1].c) && unicode::is_digit(t[r].c);
}

inline MappedText rewrite_dashes(const MappedText& in) {
  MappedText out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (is_dash(in[i].c) && digit_context(in, i)) {
      for (char32_t c : std::u32string_view(U" to ")) out.push_back({c, in[i].raw_begin, in[i].raw_end});
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

inline void rewrite_middle_dots(MappedText& t) {
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    if (t[i].c == kMiddleDot && unicode::is_digit(t[i - 1].c) && unicode::is_digit(t[i + 1].c))
      t[i].c = U'.';
  }
}

inline void rewrite_nbsp(MappedText& t) {
  for (auto& ch : t)
    if (is_nbsp(ch.c)) ch.c = U' ';
}

inline MappedText collapse_whitespace(const MappedText& in) {
  MappedText out;
  out.reserve(in.size());
  for (const auto& ch : in) {
    if (!is_blank(ch.c)) {
      out.push_back(ch);
    } else if (!out.empty() && out.back().c == U' ') {
      out.back().raw_end = ch.raw_end;
    } else {
      out.push_back({U' ', ch.raw_begin, ch.raw_end});
    }
  }
  return out;
}

inline bool is_operator_char(char32_t c) {
  return c == U'=' || c == U'<' || c == U'>' || c == kLessEqual || c == kGreaterEqual;
}

inline bool is_sign(char32_t c) { return c == U'-' || c == U'+' || c == U'\u2212'; }

}  // namespace detail

/// NFC, digit-context dash -> " to ", middle-dot decimals, NBSP -> space,
/// whitespace collapse; in that order.
inline NormalizedText normalize(std::u32string_view raw) {
  using namespace detail;
  MappedText t = nfc(raw);
  t = rewrite_dashes(t);
  rewrite_middle_dots(t);
  rewrite_nbsp(t);
  t = collapse_whitespace(t);

  NormalizedText nt;
  nt.raw_length = raw.size();
  nt.text.reserve(t.size());
  nt.offset_map.reserve(t.size());
  nt.raw_end.reserve(t.size());
  for (const auto& ch : t) {
    nt.text.push_back(ch.c);
    nt.offset_map.push_back(ch.raw_begin);
    nt.raw_end.push_back(ch.raw_end);
  }
  return nt;
}

inline NormalizedText normalize(std::string_view raw_utf8) {
  return normalize(std::u32string_view(unicode::decode(raw_utf8)));
}

/// Maps a normalized half-open interval back onto the raw text.
inline std::pair<std::size_t, std::size_t> project_span(const NormalizedText& nt, std::size_t start,
                                                        std::size_t end) {
  if (start >= end || end > nt.text.size())
    throw Error("project_span: invalid interval [" + std::to_string(start) + ", " +
                std::to_string(end) + ") for text of length " + std::to_string(nt.text.size()));
  return {nt.offset_map[start], nt.raw_end[end - 1]};
}

// ---------------------------------------------------------------------------
// Tokenization

/// Whitespace split, then punctuation peeled off both ends. Operators are
/// always their own token; leading-dot and signed numbers, "95%"-style
/// percentages and word-internal hyphens stay intact.
inline std::vector<Token> tokenize(std::u32string_view text, std::size_t offset = 0) {
  using detail::is_operator_char;
  std::vector<Token> tokens;
  auto emit = [&](std::size_t a, std::size_t b) {
    tokens.push_back({offset + a, offset + b, unicode::encode(text.substr(a, b - a))});
  };

  auto peel = [&](std::size_t a, std::size_t b) {
    std::vector<std::pair<std::size_t, std::size_t>> tail;
    while (a < b && !unicode::is_alnum(text[a])) {
      char32_t c = text[a];
      bool next_digit = a + 1 < b && unicode::is_digit(text[a + 1]);
      bool next_dot_digit = a + 2 < b && text[a + 1] == U'.' && unicode::is_digit(text[a + 2]);
      if (c == U'.' && next_digit) break;
      if (detail::is_sign(c) && (next_digit || next_dot_digit)) break;
      emit(a, a + 1);
      ++a;
    }
    while (b > a && !unicode::is_alnum(text[b - 1])) {
      if (text[b - 1] == U'%' && b - 1 > a && unicode::is_digit(text[b - 2])) break;
      tail.emplace_back(b - 1, b);
      --b;
    }
    if (a < b) emit(a, b);
    for (auto it = tail.rbegin(); it != tail.rend(); ++it) emit(it->first, it->second);
  };

  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && detail::is_blank(text[i])) ++i;
    std::size_t j = i;
    while (j < n && !detail::is_blank(text[j])) ++j;
    // Split the chunk around operator characters.
    std::size_t a = i;
    for (std::size_t k = i; k < j; ++k) {
      if (is_operator_char(text[k])) {
        if (a < k) peel(a, k);
        emit(k, k + 1);
        a = k + 1;
      }
    }
    if (a < j) peel(a, j);
    i = j;
  }
  return tokens;
}

inline std::vector<Token> tokenize(std::string_view utf8) {
  auto text = unicode::decode(utf8);
  return tokenize(std::u32string_view(text));
}

// ---------------------------------------------------------------------------
// Sentence segmentation

/// Protected abbreviations; a period ending one of these never ends a
/// sentence. Mirrors data/abbreviations.txt.
inline const std::vector<std::string>& default_abbreviations() {
  static const std::vector<std::string> list = {
      "vs.",  "v.",    "et al.", "e.g.", "i.e.", "dr.",   "drs.", "prof.", "fig.",
      "figs.", "no.", "nos.",   "approx.", "ca.", "cf.", "incl.", "resp.", "ref.",
      "inc.", "ltd.", "st.",    "jr.",  "sr.",  "etc.", "vol.", "eq.",  "mr.", "mrs.", "ms."};
  return list;
}

/// One abbreviation per line; blank lines and '#' comments are skipped.
inline std::vector<std::string> load_abbreviations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open abbreviation list: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    out.push_back(unicode::lower_utf8(line.substr(b, e - b + 1)));
  }
  return out;
}

namespace detail {

inline bool ends_with_abbreviation(std::u32string_view text, std::size_t period,
                                   const std::vector<std::u32string>& abbreviations) {
  for (const auto& abbr : abbreviations) {
    if (abbr.size() > period + 1) continue;
    std::size_t begin = period + 1 - abbr.size();
    bool match = true;
    for (std::size_t k = 0; k < abbr.size() && match; ++k)
      match = unicode::to_lower(text[begin + k]) == abbr[k];
    if (match && (begin == 0 || !unicode::is_alnum(text[begin - 1]))) return true;
  }
  return false;
}

}  // namespace detail

/// Splits on ". ", "? ", "! " and end of text. A period never ends a
/// sentence inside an unclosed parenthesis, as a decimal point, or as the
/// final character of a protected abbreviation. Tokens are filled in.
inline std::vector<Sentence> split_sentences(
    const NormalizedText& nt,
    const std::vector<std::string>& abbreviations = default_abbreviations()) {
  std::vector<std::u32string> abbrs;
  abbrs.reserve(abbreviations.size());
  for (const auto& a : abbreviations) abbrs.push_back(unicode::lower(unicode::decode(a)));

  const std::u32string_view text(nt.text);
  const std::size_t n = text.size();
  std::vector<Sentence> out;
  auto push = [&](std::size_t a, std::size_t b) {
    while (b > a && text[b - 1] == U' ') --b;
    if (a >= b) return;
    Sentence s;
    s.index = static_cast<int>(out.size());
    s.start = a;
    s.end = b;
    s.tokens = tokenize(text.substr(a, b - a), a);
    out.push_back(std::move(s));
  };

  std::size_t start = 0;
  while (start < n && text[start] == U' ') ++start;
  int depth = 0;
  for (std::size_t i = start; i < n; ++i) {
    char32_t c = text[i];
    if (c == U'(') {
      ++depth;
    } else if (c == U')') {
      depth = std::max(0, depth - 1);
    } else if (c == U'.' || c == U'?' || c == U'!') {
      bool boundary = i + 1 == n || text[i + 1] == U' ';
      if (!boundary || depth > 0) continue;
      if (c == U'.') {
        bool decimal = i > 0 && i + 1 < n && unicode::is_digit(text[i - 1]) &&
                       unicode::is_digit(text[i + 1]);
        if (decimal || detail::ends_with_abbreviation(text, i, abbrs)) continue;
      }
      push(start, i + 1);
      start = i + 1;
      while (start < n && text[start] == U' ') ++start;
      i = start - 1;
    }
  }
  if (start < n) push(start, n);
  return out;
}

}  // namespace icoe
