#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icoe/commands.hpp"

namespace icoe::test {

inline std::string fixture(const std::string& name) { return std::string(ICOE_FIXTURES_DIR) + "/" + name; }
inline std::string data_file(const std::string& name) { return std::string(ICOE_DATA_DIR) + "/" + name; }

inline const std::vector<AbstractRecord>& gold_corpus() {
  static const auto corpus = load_corpus(fixture("gold_corpus.jsonl"));
  return corpus;
}

inline const std::vector<AnnotatedDocument>& gold_documents() {
  static const auto docs = load_annotations(fixture("gold_annotations.jsonl"), gold_corpus());
  return docs;
}

/// Models trained on the whole gold fixture with default settings.
inline const Models& fixture_models() {
  static const Models models = train_models(gold_documents(), TrainerConfig{}).models;
  return models;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("icoe_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline AnnotatedDocument make_document(const std::string& id, const std::string& body,
                                       std::vector<AnnotatedSpan> spans = {},
                                       std::optional<int> design = std::nullopt) {
  return AnnotatedDocument{AbstractRecord{id, "", body}, std::move(spans), design};
}

/// Offsets of the first occurrence of `needle` in `body`, in code points.
inline AnnotatedSpan span_of(EntityKind kind, const std::string& body, const std::string& needle) {
  auto byte = body.find(needle);
  if (byte == std::string::npos) throw Error("needle not found: " + needle);
  auto start = unicode::decode(body.substr(0, byte)).size();
  return AnnotatedSpan{kind, start, start + unicode::decode(needle).size()};
}

/// Tokens of the first sentence of `text` after normalization.
inline std::vector<Token> tokens_of(const std::string& text) {
  auto sentences = split_sentences(normalize(text));
  if (sentences.empty()) return {};
  return sentences.front().tokens;
}

/// A valid indicator with two-decimal values, as a report would print them.
inline EffectIndicator random_indicator(std::mt19937_64& rng) {
  using T = IndicatorKind::Tag;
  static const std::vector<IndicatorKind> kinds = {
      {T::HR, {}}, {T::OR, {}}, {T::RR, {}}, {T::RateRatio, {}}, {T::Other, "IRR"}, {T::Other, "incidence rate ratio"}};
  std::uniform_int_distribution<std::size_t> kind(0, kinds.size() - 1);
  std::uniform_int_distribution<int> hundredths(1, 30000), coin(0, 1), op(0, 4), p_hundredths(0, 100),
      p_thousandths(0, 1000);
  auto value = [&] { return hundredths(rng) / 100.0; };
  EffectIndicator e;
  e.kind = kinds[kind(rng)];
  e.estimate = value();
  if (coin(rng)) {
    double a = value(), b = value();
    e.ci = ConfidenceInterval{coin(rng) ? 95.0 : 90.0, std::min(a, b), std::max(a, b)};
  }
  if (!e.ci || coin(rng)) {
    double v = coin(rng) ? p_hundredths(rng) / 100.0 : p_thousandths(rng) / 1000.0;
    e.p = PValueConstraint{kAllOps[op(rng)], v, 0, 0};
  }
  return e;
}

/// Brute-force matcher: every predicted span is checked against every gold
/// span of the same kind.
inline PRF brute_force_prf(const std::vector<Entity>& gold, const std::vector<Entity>& predicted, MatchMode mode) {
  auto match = [&](const Entity& a, const Entity& b) {
    if (a.kind != b.kind) return false;
    if (mode == MatchMode::Exact) return a.start == b.start && a.end == b.end;
    return a.start < b.end && b.start < a.end;
  };
  PRF r;
  for (const auto& p : predicted) {
    bool hit = false;
    for (const auto& g : gold) hit = hit || match(p, g);
    if (hit) ++r.predicted_matched;
    else ++r.fp;
  }
  for (const auto& g : gold) {
    bool hit = false;
    for (const auto& p : predicted) hit = hit || match(p, g);
    if (hit) ++r.tp;
    else ++r.fn;
  }
  r.precision = predicted.empty() ? 0.0 : static_cast<double>(r.predicted_matched) / static_cast<double>(predicted.size());
  r.recall = gold.empty() ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(gold.size());
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace icoe::test
