#pragma once

// Token-level grammar for statistical effect expressions:
//
//   indicator := HEAD SEP? NUM [SEP? CI-CLAUSE] [SEP? P-CLAUSE]
//   CI-CLAUSE := [LEVEL "%"] "CI" SEP? NUM "to" NUM
//   P-CLAUSE  := P-HEAD OP NUM
//
// SEP is one of , ; : = ( [ and the region closes at the first token the
// grammar does not accept. Input tokens come from textproc, so dash ranges
// have already been rewritten to "to".

#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "icoe/error.hpp"
#include "icoe/textproc.hpp"
#include "icoe/unicode.hpp"

namespace icoe {

enum class PValueOp { Eq, Lt, Gt, Le, Ge };

inline constexpr PValueOp kAllOps[] = {PValueOp::Eq, PValueOp::Gt, PValueOp::Lt, PValueOp::Ge,
                                       PValueOp::Le};

inline std::string_view to_string(PValueOp op) {
  switch (op) {
    case PValueOp::Eq: return "=";
    case PValueOp::Lt: return "<";
    case PValueOp::Gt: return ">";
    case PValueOp::Le: return "≤";
    case PValueOp::Ge: return "≥";
  }
  return "?";
}

inline PValueOp parse_pvalue_op(std::string_view s) {
  if (s == "=") return PValueOp::Eq;
  if (s == "<") return PValueOp::Lt;
  if (s == ">") return PValueOp::Gt;
  if (s == "≤" || s == "<=") return PValueOp::Le;
  if (s == "≥" || s == ">=") return PValueOp::Ge;
  throw Error("unknown p-value operator: " + std::string(s));
}

struct PValueConstraint {
  PValueOp op = PValueOp::Eq;
  double value = 0.0;
  /// Normalized-text offsets.
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const PValueConstraint&) const = default;
};

struct IndicatorKind {
  enum class Tag { HR, OR, RR, RateRatio, Other };
  Tag tag = Tag::OR;
  /// Verbatim measure phrase, set only for Other.
  std::string other;

  bool operator==(const IndicatorKind&) const = default;
};

inline std::string to_string(const IndicatorKind& k) {
  switch (k.tag) {
    case IndicatorKind::Tag::HR: return "HR";
    case IndicatorKind::Tag::OR: return "OR";
    case IndicatorKind::Tag::RR: return "RR";
    case IndicatorKind::Tag::RateRatio: return "rate ratio";
    case IndicatorKind::Tag::Other: return k.other;
  }
  return "?";
}

struct ConfidenceInterval {
  double level = 95.0;
  double low = 0.0;
  double high = 0.0;

  bool operator==(const ConfidenceInterval&) const = default;
};

struct EffectIndicator {
  IndicatorKind kind;
  double estimate = 0.0;
  std::optional<ConfidenceInterval> ci;
  std::optional<PValueConstraint> p;
  /// Normalized-text offsets.
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const EffectIndicator&) const = default;
};

/// Equality of the parsed content, ignoring character spans.
inline bool equivalent(const EffectIndicator& a, const EffectIndicator& b) {
  auto same_p = [](const std::optional<PValueConstraint>& x, const std::optional<PValueConstraint>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || (x->op == y->op && x->value == y->value);
  };
  return a.kind == b.kind && a.estimate == b.estimate && a.ci == b.ci && same_p(a.p, b.p);
}

// ---------------------------------------------------------------------------
// Numbers

namespace detail {

inline std::optional<double> try_number(std::string_view token) {
  std::string s(token);
  if (s.rfind("−", 0) == 0) s.replace(0, 3, "-");
  if (!s.empty() && s[0] == '+') s.erase(0, 1);
  bool negative = !s.empty() && s[0] == '-';
  std::string body = negative ? s.substr(1) : s;
  if (body.empty()) return std::nullopt;
  bool digit = false;
  int dots = 0;
  for (char c : body) {
    if (c >= '0' && c <= '9') digit = true;
    else if (c == '.') ++dots;
    else return std::nullopt;
  }
  if (!digit || dots > 1 || body.back() == '.') return std::nullopt;
  if (body[0] == '.') body.insert(0, "0");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
  if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(v)) return std::nullopt;
  return negative ? -v : v;
}

}  // namespace detail

/// ".81" -> 0.81; plain decimals parse exactly.
inline double normalize_number(std::string_view token) {
  auto v = detail::try_number(token);
  if (!v) throw Error("not a number: \"" + std::string(token) + "\"");
  return *v;
}

/// Shortest round-tripping fixed notation, at least `min_decimals` digits
/// after the point.
inline std::string format_number(double v, int min_decimals = 2) {
  char buf[512];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc()) throw Error("cannot format number");
  std::string s(buf, ptr);
  auto dot = s.find('.');
  int decimals = dot == std::string::npos ? 0 : static_cast<int>(s.size() - dot - 1);
  if (decimals < min_decimals) {
    if (dot == std::string::npos) s += '.';
    s.append(static_cast<std::size_t>(min_decimals - decimals), '0');
  }
  if (min_decimals == 0 && !s.empty() && s.back() == '.') s.pop_back();
  return s;
}

// ---------------------------------------------------------------------------
// Grammar

namespace detail {

struct TokenCursor {
  const std::vector<Token>& tokens;
  std::vector<std::string> lower;

  explicit TokenCursor(const std::vector<Token>& t) : tokens(t) {
    lower.reserve(t.size());
    for (const auto& tok : t) lower.push_back(unicode::lower_utf8(tok.surface));
  }
  std::size_t size() const { return tokens.size(); }
  bool is(std::size_t i, std::string_view w) const { return i < lower.size() && lower[i] == w; }
  std::optional<double> number(std::size_t i) const {
    return i < tokens.size() ? try_number(tokens[i].surface) : std::nullopt;
  }
};

struct Head {
  std::vector<std::string> words;
  IndicatorKind::Tag tag;
};

// Longest heads first so multiword measures win over their suffixes.
inline const std::vector<Head>& indicator_heads() {
  using T = IndicatorKind::Tag;
  static const std::vector<Head> heads = {
      {{"subdistribution", "hazard", "ratio"}, T::Other},
      {{"incidence", "rate", "ratio"}, T::Other},
      {{"hazard", "ratio"}, T::HR},
      {{"odds", "ratio"}, T::OR},
      {{"relative", "risk"}, T::RR},
      {{"risk", "ratio"}, T::RR},
      {{"rate", "ratio"}, T::RateRatio},
      {{"hr"}, T::HR},
      {{"ahr"}, T::HR},
      {{"or"}, T::OR},
      {{"aor"}, T::OR},
      {{"rr"}, T::RR},
      {{"irr"}, T::Other},
      {{"shr"}, T::Other},
  };
  return heads;
}

inline std::optional<std::pair<IndicatorKind, std::size_t>> match_head(const TokenCursor& c,
                                                                       std::size_t i) {
  for (const auto& h : indicator_heads()) {
    if (i + h.words.size() > c.size()) continue;
    bool ok = true;
    for (std::size_t k = 0; k < h.words.size() && ok; ++k) ok = c.is(i + k, h.words[k]);
    if (!ok) continue;
    IndicatorKind kind{h.tag, {}};
    if (h.tag == IndicatorKind::Tag::Other) {
      kind.other = c.tokens[i].surface;
      for (std::size_t k = 1; k < h.words.size(); ++k) kind.other += " " + c.tokens[i + k].surface;
    }
    return std::make_pair(kind, i + h.words.size());
  }
  return std::nullopt;
}

inline bool is_separator(const TokenCursor& c, std::size_t i) {
  return c.is(i, ",") || c.is(i, ";") || c.is(i, ":") || c.is(i, "=");
}

/// P-clause at i: returns the constraint (value unchecked) and the index
/// past it.
inline std::optional<std::pair<PValueConstraint, std::size_t>> match_p_clause(const TokenCursor& c,
                                                                              std::size_t i) {
  std::size_t j = i;
  if (c.is(j, "p") && c.is(j + 1, "value")) j += 2;
  else if (c.is(j, "p") || c.is(j, "p-value")) j += 1;
  else return std::nullopt;

  PValueOp op;
  if ((c.is(j, "<") || c.is(j, ">")) && c.is(j + 1, "=") &&
      c.tokens[j + 1].start == c.tokens[j].end) {
    op = c.is(j, "<") ? PValueOp::Le : PValueOp::Ge;
    j += 2;
  } else if (c.is(j, "=") || c.is(j, "<") || c.is(j, ">") || c.is(j, "≤") ||
             c.is(j, "≥")) {
    op = parse_pvalue_op(c.lower[j]);
    j += 1;
  } else if (c.is(j, "less") && c.is(j + 1, "than")) {
    op = PValueOp::Lt;
    j += 2;
  } else if (c.is(j, "greater") && c.is(j + 1, "than")) {
    op = PValueOp::Gt;
    j += 2;
  } else {
    return std::nullopt;
  }
  auto value = c.number(j);
  if (!value) return std::nullopt;
  PValueConstraint p{op, *value, c.tokens[i].start, c.tokens[j].end};
  return std::make_pair(p, j + 1);
}

inline bool valid_p(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

inline std::optional<double> ci_level_token(std::string_view lower) {
  // "95%" or fused "95%ci"
  auto pct = lower.find('%');
  if (pct == std::string_view::npos || pct == 0) return std::nullopt;
  auto rest = lower.substr(pct + 1);
  if (!rest.empty() && rest != "ci") return std::nullopt;
  return try_number(lower.substr(0, pct));
}

struct CiMatch {
  ConfidenceInterval ci;
  std::size_t next;
  bool swapped;
};

inline std::optional<CiMatch> match_ci_clause(const TokenCursor& c, std::size_t i) {
  std::size_t j = i;
  double level = 95.0;
  if (auto lv = c.number(j); lv && c.is(j + 1, "%") && c.is(j + 2, "ci")) {
    level = *lv;
    j += 3;
  } else if (auto fused = j < c.size() ? ci_level_token(c.lower[j]) : std::nullopt) {
    level = *fused;
    j += 1;
    if (c.lower[j - 1].find("ci") == std::string::npos) {
      if (!c.is(j, "ci")) return std::nullopt;
      j += 1;
    }
  } else if (c.is(j, "ci")) {
    j += 1;
  } else {
    return std::nullopt;
  }
  if (is_separator(c, j)) ++j;

  std::optional<double> low, high;
  if (auto lo = c.number(j); lo && c.is(j + 1, "to") && c.number(j + 2)) {
    low = lo;
    high = c.number(j + 2);
    j += 3;
  } else if (j < c.size()) {
    // Fused hyphen range "0.81-2.09".
    const auto& s = c.tokens[j].surface;
    auto dash = s.find('-', 1);
    if (dash != std::string::npos) {
      low = try_number(std::string_view(s).substr(0, dash));
      high = try_number(std::string_view(s).substr(dash + 1));
      if (low && high) j += 1;
    }
  }
  if (!low || !high) return std::nullopt;
  CiMatch m{{level, *low, *high}, j, false};
  if (m.ci.low > m.ci.high) {
    std::swap(m.ci.low, m.ci.high);
    m.swapped = true;
  }
  return m;
}

}  // namespace detail

/// Effect measures with optional confidence interval and attached p-value.
/// Warnings (swapped CI bounds, non-positive ratios) go to `warnings`.
inline std::vector<EffectIndicator> parse_indicators(const std::vector<Token>& tokens,
                                                     std::vector<std::string>* warnings = nullptr) {
  using namespace detail;
  TokenCursor c(tokens);
  std::vector<EffectIndicator> out;
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };

  std::size_t i = 0;
  while (i < c.size()) {
    auto head = match_head(c, i);
    if (!head) {
      ++i;
      continue;
    }
    std::size_t j = head->second;
    bool separated = is_separator(c, j);
    if (separated) ++j;
    auto estimate = c.number(j);
    if (!estimate) {
      ++i;
      continue;
    }
    std::size_t end = j;
    j += 1;

    EffectIndicator e;
    e.kind = head->first;
    e.estimate = *estimate;
    e.start = tokens[i].start;

    // Optional CI clause, possibly bracketed.
    std::size_t k = j;
    std::optional<std::string> opened;
    if (c.is(k, "(") || c.is(k, "[")) opened = c.lower[k++];
    else if (c.is(k, ";") || c.is(k, ",")) ++k;
    bool swapped = false;
    if (auto ci = match_ci_clause(c, k)) {
      e.ci = ci->ci;
      swapped = ci->swapped;
      end = ci->next - 1;
      j = ci->next;
      if (opened && c.is(j, *opened == "(" ? ")" : "]")) ++j;
    }
    if (!separated && !e.ci) {
      // "or 3 patients": a bare head and number is English, not a measure.
      ++i;
      continue;
    }

    // Optional attached p-value.
    std::size_t q = j;
    if (c.is(q, ";") || c.is(q, ",")) ++q;
    if (auto p = match_p_clause(c, q); p && valid_p(p->first.value)) {
      e.p = p->first;
      end = p->second - 1;
    }
    e.end = tokens[end].end;

    bool finite = std::isfinite(e.estimate) && (!e.ci || (std::isfinite(e.ci->low) && std::isfinite(e.ci->high)));
    bool positive = e.estimate > 0.0 && (!e.ci || e.ci->low > 0.0);
    if (!finite || !positive) {
      warn("discarded " + to_string(e.kind) + " with non-positive or non-finite value at offset " +
           std::to_string(e.start));
      i = end + 1;
      continue;
    }
    if (swapped)
      warn("reversed confidence interval bounds swapped for " + to_string(e.kind) + " at offset " +
           std::to_string(e.start));
    out.push_back(std::move(e));
    i = end + 1;
  }
  return out;
}

/// Standalone p-value constraints outside every indicator span. Values
/// outside [0, 1] are discarded with a warning.
inline std::vector<PValueConstraint> parse_pvalues(const std::vector<Token>& tokens,
                                                   const std::vector<EffectIndicator>& indicators = {},
                                                   std::vector<std::string>* warnings = nullptr) {
  using namespace detail;
  TokenCursor c(tokens);
  std::vector<PValueConstraint> out;
  std::size_t i = 0;
  while (i < c.size()) {
    auto p = match_p_clause(c, i);
    if (!p) {
      ++i;
      continue;
    }
    bool consumed = false;
    for (const auto& e : indicators)
      consumed = consumed || (p->first.start < e.end && e.start < p->first.end);
    if (!consumed) {
      if (valid_p(p->first.value)) {
        out.push_back(p->first);
      } else if (warnings) {
        warnings->push_back("discarded p-value " + tokens[p->second - 1].surface +
                            " outside [0, 1] at offset " + std::to_string(p->first.start));
      }
    }
    i = p->second;
  }
  return out;
}

/// Canonical "KIND, EST; L% CI, LO to HI; P OP VAL" with absent clauses
/// omitted.
inline std::string render_indicator(const EffectIndicator& e) {
  std::string s = to_string(e.kind) + ", " + format_number(e.estimate);
  if (e.ci) {
    s += "; " + format_number(e.ci->level, 0) + "% CI, " + format_number(e.ci->low) + " to " +
         format_number(e.ci->high);
  }
  if (e.p) s += "; P " + std::string(to_string(e.p->op)) + " " + format_number(e.p->value);
  return s;
}

inline std::string render_pvalue(const PValueConstraint& p) {
  return "P " + std::string(to_string(p.op)) + " " + format_number(p.value);
}

}  // namespace icoe
