#pragma once

// Abstracts, span annotations and their JSONL interchange formats.
//
// Span offsets are code-point offsets into the raw (pre-normalization)
// abstract body.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "icoe/error.hpp"
#include "icoe/textproc.hpp"
#include "icoe/unicode.hpp"

namespace icoe {

using json = nlohmann::json;

enum class EntityKind { I, C, O, EDesc };

inline constexpr EntityKind kAllKinds[] = {EntityKind::I, EntityKind::C, EntityKind::O,
                                           EntityKind::EDesc};

inline std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::I: return "I";
    case EntityKind::C: return "C";
    case EntityKind::O: return "O";
    case EntityKind::EDesc: return "EDesc";
  }
  return "?";
}

inline EntityKind parse_entity_kind(std::string_view s) {
  if (s == "I") return EntityKind::I;
  if (s == "C") return EntityKind::C;
  if (s == "O") return EntityKind::O;
  if (s == "EDesc") return EntityKind::EDesc;
  throw Error("unknown entity kind: " + std::string(s));
}

struct AbstractRecord {
  std::string id;
  std::string title;
  std::string body;

  bool operator==(const AbstractRecord&) const = default;
};

struct AnnotatedSpan {
  EntityKind kind = EntityKind::O;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const AnnotatedSpan&) const = default;
};

struct AnnotatedDocument {
  AbstractRecord record;
  std::vector<AnnotatedSpan> spans;
  std::optional<int> design_sentence_index;

  bool operator==(const AnnotatedDocument&) const = default;
};

struct ValidationFinding {
  std::string invariant;
  std::string detail;
};

namespace detail {

inline std::string span_label(const AnnotatedSpan& s) {
  return std::string(to_string(s.kind)) + "[" + std::to_string(s.start) + "," +
         std::to_string(s.end) + ")";
}

template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(line, number);
  }
}

inline json parse_line(const std::string& line, std::size_t number, const std::string& path) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(path + ": line " + std::to_string(number) + ": malformed JSON: " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Records

inline json to_json(const AbstractRecord& r) {
  return json{{"id", r.id}, {"title", r.title}, {"body", r.body}};
}

inline AbstractRecord record_from_json(const json& j) {
  if (!j.is_object() || j.size() != 3 || !j.contains("id") || !j.contains("title") ||
      !j.contains("body"))
    throw Error("record must have exactly the fields id, title, body");
  if (!j["id"].is_string() || !j["title"].is_string() || !j["body"].is_string())
    throw Error("record fields must be strings");
  AbstractRecord r{j["id"].get<std::string>(), j["title"].get<std::string>(),
                   j["body"].get<std::string>()};
  if (r.id.empty()) throw Error("record id is empty");
  if (r.body.empty()) throw Error("record " + r.id + " has an empty body");
  unicode::decode(r.body);  // rejects invalid UTF-8
  return r;
}

/// Reads a JSONL corpus in file order. Duplicate ids are rejected.
inline std::vector<AbstractRecord> load_corpus(const std::string& path) {
  std::vector<AbstractRecord> records;
  std::set<std::string> seen;
  detail::for_each_line(path, [&](const std::string& line, std::size_t number) {
    auto j = detail::parse_line(line, number, path);
    AbstractRecord r;
    try {
      r = record_from_json(j);
    } catch (const json::exception& e) {
      throw Error(path + ": line " + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path + ": line " + std::to_string(number) + ": " + e.what());
    }
    if (!seen.insert(r.id).second) throw Error(path + ": duplicate record id \"" + r.id + "\"");
    records.push_back(std::move(r));
  });
  return records;
}

inline void write_corpus(std::ostream& out, const std::vector<AbstractRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Annotations

/// Empty iff every document invariant holds.
inline std::vector<ValidationFinding> validate_annotations(const AnnotatedDocument& doc) {
  std::vector<ValidationFinding> findings;
  const auto body = unicode::decode(doc.record.body);
  if (doc.record.id.empty()) findings.push_back({"empty id", "record id is empty"});
  if (body.empty()) findings.push_back({"empty body", "record " + doc.record.id});

  for (const auto& s : doc.spans) {
    if (s.start >= s.end) {
      findings.push_back({"empty or inverted span", detail::span_label(s)});
      continue;
    }
    if (s.end > body.size()) {
      findings.push_back({"span out of bounds", detail::span_label(s) + " beyond body length " +
                                                     std::to_string(body.size())});
      continue;
    }
    bool blank = std::all_of(body.begin() + static_cast<std::ptrdiff_t>(s.start),
                             body.begin() + static_cast<std::ptrdiff_t>(s.end),
                             [](char32_t c) { return detail::is_blank(c); });
    if (blank) findings.push_back({"whitespace-only span", detail::span_label(s)});
  }

  for (std::size_t a = 0; a < doc.spans.size(); ++a) {
    for (std::size_t b = a + 1; b < doc.spans.size(); ++b) {
      const auto& x = doc.spans[a];
      const auto& y = doc.spans[b];
      if (x.kind == y.kind && x.start < y.end && y.start < x.end)
        findings.push_back({"overlapping same-kind spans",
                            detail::span_label(x) + " overlaps " + detail::span_label(y)});
    }
  }

  if (doc.design_sentence_index) {
    auto sentences = split_sentences(normalize(std::u32string_view(body)));
    int idx = *doc.design_sentence_index;
    if (idx < 0 || idx >= static_cast<int>(sentences.size()))
      findings.push_back({"design sentence index out of range",
                          std::to_string(idx) + " with " + std::to_string(sentences.size()) +
                              " sentences"});
  }
  return findings;
}

inline json to_json(const AnnotatedSpan& s) {
  return json{{"kind", std::string(to_string(s.kind))}, {"start", s.start}, {"end", s.end}};
}

inline AnnotatedSpan span_from_json(const json& j) {
  auto start = j.at("start").get<long long>();
  auto end = j.at("end").get<long long>();
  if (start < 0 || end < 0) throw Error("negative span offset");
  return {parse_entity_kind(j.at("kind").get<std::string>()), static_cast<std::size_t>(start),
          static_cast<std::size_t>(end)};
}

inline json annotation_to_json(const AnnotatedDocument& doc) {
  json spans = json::array();
  for (const auto& s : doc.spans) spans.push_back(to_json(s));
  json j{{"id", doc.record.id}, {"spans", spans}};
  j["design_sentence_index"] =
      doc.design_sentence_index ? json(*doc.design_sentence_index) : json(nullptr);
  return j;
}

/// Reads span annotations and binds each to its record in `corpus`.
/// Any invariant violation is an error naming the document and span.
inline std::vector<AnnotatedDocument> load_annotations(const std::string& path,
                                                       const std::vector<AbstractRecord>& corpus) {
  std::unordered_map<std::string, const AbstractRecord*> by_id;
  for (const auto& r : corpus) by_id.emplace(r.id, &r);

  std::vector<AnnotatedDocument> docs;
  std::set<std::string> seen;
  detail::for_each_line(path, [&](const std::string& line, std::size_t number) {
    auto where = path + ": line " + std::to_string(number) + ": ";
    json j = detail::parse_line(line, number, path);
    AnnotatedDocument doc;
    try {
      auto id = j.at("id").get<std::string>();
      auto it = by_id.find(id);
      if (it == by_id.end()) throw Error("annotation references unknown record id \"" + id + "\"");
      doc.record = *it->second;
      for (const auto& s : j.at("spans")) doc.spans.push_back(span_from_json(s));
      if (j.contains("design_sentence_index") && !j["design_sentence_index"].is_null())
        doc.design_sentence_index = j["design_sentence_index"].get<int>();
    } catch (const json::exception& e) {
      throw Error(where + e.what());
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    if (!seen.insert(doc.record.id).second)
      throw Error(where + "duplicate annotation id \"" + doc.record.id + "\"");
    auto findings = validate_annotations(doc);
    if (!findings.empty())
      throw Error(where + "document " + doc.record.id + ": " + findings.front().invariant + ": " +
                  findings.front().detail);
    docs.push_back(std::move(doc));
  });
  return docs;
}

inline void write_annotations(std::ostream& out, const std::vector<AnnotatedDocument>& docs) {
  for (const auto& d : docs) out << annotation_to_json(d).dump() << '\n';
}

/// Raw body slice for a code-point interval.
inline std::string raw_slice(const std::string& body, std::size_t start, std::size_t end) {
  auto text = unicode::decode(body);
  return unicode::encode(std::u32string_view(text).substr(start, end - start));
}

}  // namespace icoe
