#pragma once

// BIO sequence labeling of I, C, O and EDesc entities with a greedy
// averaged perceptron.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icoe/corpus.hpp"
#include "icoe/error.hpp"
#include "icoe/shuffle.hpp"
#include "icoe/textproc.hpp"
#include "icoe/unicode.hpp"

namespace icoe {

struct Entity {
  EntityKind kind = EntityKind::O;
  int sentence_index = 0;
  /// Normalized-text offsets.
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;
  /// Raw-body offsets; filled in by the pipeline via project_span.
  std::size_t raw_start = 0;
  std::size_t raw_end = 0;
  /// Smallest per-token score margin of the decoded span.
  double margin = 0.0;
};

inline constexpr std::string_view kOutsideTag = "O";
inline constexpr int kOutside = 0;

/// Which entity kinds one tagger model is responsible for.
enum class TaggerGroup { InterventionComparison, OutcomeEffect };

inline std::vector<EntityKind> group_kinds(TaggerGroup g) {
  if (g == TaggerGroup::InterventionComparison) return {EntityKind::I, EntityKind::C};
  return {EntityKind::O, EntityKind::EDesc};
}

/// {"O", "B-k", "I-k", ...} for the given kinds.
inline std::vector<std::string> make_tagset(const std::vector<EntityKind>& kinds) {
  std::vector<std::string> tags{std::string(kOutsideTag)};
  for (auto k : kinds) {
    tags.push_back("B-" + std::string(to_string(k)));
    tags.push_back("I-" + std::string(to_string(k)));
  }
  return tags;
}

struct TaggerModel {
  std::vector<std::string> tagset;
  /// Averaged weights, feature -> one value per tag.
  std::unordered_map<std::string, std::vector<double>> weights;
  int epochs = 0;
  std::uint64_t seed = 0;

  int tag_index(std::string_view tag) const {
    for (std::size_t i = 0; i < tagset.size(); ++i)
      if (tagset[i] == tag) return static_cast<int>(i);
    throw Error("tag not in tag set: " + std::string(tag));
  }

  bool operator==(const TaggerModel&) const = default;
};

/// One sentence with gold tags, as produced by spans_to_bio.
struct TaggedSentence {
  std::vector<Token> tokens;
  std::vector<std::string> tags;
};

// ---------------------------------------------------------------------------
// Features

namespace detail {

inline std::string token_shape(std::u32string_view w) {
  if (w.empty()) return "empty";
  bool has_digit = false, has_alpha = false, has_other = false;
  bool all_lower = true, all_upper = true;
  for (char32_t c : w) {
    if (unicode::is_digit(c)) {
      has_digit = true;
    } else if (unicode::is_alpha(c)) {
      has_alpha = true;
      if (unicode::is_upper(c)) all_lower = false;
      else all_upper = false;
    } else {
      has_other = true;
    }
  }
  if (has_digit && !has_alpha) {
    if (!has_other) return "dd";
    if (w[0] == U'.') return ".dd";
    if (w.back() == U'%') return "d%";
    return "d.d";
  }
  if (has_alpha && !has_digit && !has_other) {
    if (all_lower) return "xx";
    if (all_upper) return w.size() == 1 ? "Xx" : "XX";
    bool rest_lower = true;
    for (std::size_t i = 1; i < w.size(); ++i)
      if (unicode::is_upper(w[i])) rest_lower = false;
    return unicode::is_upper(w[0]) && rest_lower ? "Xx" : "mixed";
  }
  if (!has_alpha && !has_digit) return "punct";
  return "mixed";
}

inline bool is_group_word(std::string_view lower) {
  return lower == "group" || lower == "groups" || lower == "arm" || lower == "arms";
}

inline bool is_unit_word(std::string_view lower) {
  static const std::set<std::string, std::less<>> units = {
      "mg", "g", "ml", "mcg", "µg", "μg", "mg/kg", "µg/kg", "μg/kg", "iu"};
  return units.count(lower) > 0;
}

}  // namespace detail

inline constexpr std::string_view kBoundaryBefore = "<s>";
inline constexpr std::string_view kBoundaryAfter = "</s>";

/// Position-local features; the previous-tag feature is added at decode time
/// (see previous_tag_feature).
inline std::vector<std::string> extract_features(const std::vector<Token>& tokens,
                                                 std::size_t position) {
  if (position >= tokens.size()) throw Error("extract_features: position out of range");
  auto lower_at = [&](std::ptrdiff_t i) -> std::string {
    if (i < 0) return std::string(kBoundaryBefore);
    if (i >= static_cast<std::ptrdiff_t>(tokens.size())) return std::string(kBoundaryAfter);
    return unicode::lower_utf8(tokens[static_cast<std::size_t>(i)].surface);
  };
  const auto pos = static_cast<std::ptrdiff_t>(position);
  const auto word = unicode::decode(tokens[position].surface);
  const auto lw = unicode::lower(word);
  const auto lw8 = unicode::encode(lw);

  std::vector<std::string> f;
  f.reserve(20);
  f.emplace_back("bias");
  f.push_back("w=" + lw8);
  f.push_back("shape=" + detail::token_shape(word));
  for (std::size_t n = 1; n <= 3 && n <= lw.size(); ++n) {
    f.push_back("p" + std::to_string(n) + "=" + unicode::encode(lw.substr(0, n)));
    f.push_back("s" + std::to_string(n) + "=" + unicode::encode(lw.substr(lw.size() - n)));
  }
  auto prev = lower_at(pos - 1);
  auto next = lower_at(pos + 1);
  f.push_back("pw=" + prev);
  f.push_back("nw=" + next);
  f.push_back("pw2=" + lower_at(pos - 2));
  f.push_back("nw2=" + lower_at(pos + 2));
  f.push_back("pw|w=" + prev + "|" + lw8);
  f.push_back("w|nw=" + lw8 + "|" + next);

  if (detail::is_unit_word(lw8)) f.emplace_back("is-dose-unit");
  if (detail::is_group_word(lw8)) f.emplace_back("is-group-word");
  if (detail::is_group_word(next)) f.emplace_back("next-is-group-word");
  int depth = 0;
  for (std::size_t i = 0; i < position; ++i) {
    if (tokens[i].surface == "(") ++depth;
    else if (tokens[i].surface == ")") depth = std::max(0, depth - 1);
  }
  if (depth > 0) f.emplace_back("in-parenthetical");
  return f;
}

inline std::string previous_tag_feature(std::string_view prev_tag) {
  return "pt=" + std::string(prev_tag);
}

// ---------------------------------------------------------------------------
// Span <-> BIO conversion

struct BioSpan {
  EntityKind kind;
  std::size_t first;  // token index, inclusive
  std::size_t last;   // token index, inclusive

  bool operator==(const BioSpan&) const = default;
};

/// Decodes a tag sequence into spans. An I-k that does not continue a
/// B-k/I-k run is treated as B-k.
inline std::vector<BioSpan> bio_to_spans(const std::vector<std::string>& tags) {
  std::vector<BioSpan> spans;
  std::optional<EntityKind> open;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    if (t == kOutsideTag || t.size() < 3) {
      open.reset();
      continue;
    }
    bool inside = t[0] == 'I';
    auto kind = parse_entity_kind(std::string_view(t).substr(2));
    if (inside && open == kind) {
      spans.back().last = i;
    } else {
      spans.push_back({kind, i, i});
      open = kind;
    }
  }
  return spans;
}

/// Per-sentence BIO tags for the annotated spans of the given kinds.
/// Spans are snapped outward to the tokens they touch.
inline std::vector<std::vector<std::string>> spans_to_bio(const AnnotatedDocument& doc,
                                                          const NormalizedText& nt,
                                                          const std::vector<Sentence>& sentences,
                                                          const std::vector<EntityKind>& kinds) {
  std::vector<std::vector<std::string>> tags;
  tags.reserve(sentences.size());
  for (const auto& s : sentences) tags.emplace_back(s.tokens.size(), std::string(kOutsideTag));

  for (const auto& span : doc.spans) {
    if (std::find(kinds.begin(), kinds.end(), span.kind) == kinds.end()) continue;
    std::optional<std::size_t> sentence;
    std::size_t first = 0, last = 0;
    for (const auto& s : sentences) {
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        auto [rs, re] = project_span(nt, s.tokens[t].start, s.tokens[t].end);
        if (!(rs < span.end && span.start < re)) continue;
        if (sentence && *sentence != static_cast<std::size_t>(s.index))
          throw Error("span " + detail::span_label(span) + " in " + doc.record.id +
                      " crosses a sentence boundary");
        if (!sentence) {
          sentence = static_cast<std::size_t>(s.index);
          first = t;
        }
        last = t;
      }
    }
    if (!sentence)
      throw Error("span " + detail::span_label(span) + " in " + doc.record.id + " covers no token");
    auto& seq = tags[*sentence];
    for (std::size_t t = first; t <= last; ++t) {
      if (seq[t] != kOutsideTag)
        throw Error("span " + detail::span_label(span) + " in " + doc.record.id +
                    " collides with another span after token snapping");
      seq[t] = (t == first ? "B-" : "I-") + std::string(to_string(span.kind));
    }
  }
  return tags;
}

/// Training sentences for one tagger group. The I/C group trains on labeled
/// design sentences only; the O/EDesc group on every sentence.
inline std::vector<TaggedSentence> tagger_examples(
    const std::vector<AnnotatedDocument>& docs, TaggerGroup group,
    const std::vector<std::string>& abbreviations = default_abbreviations()) {
  std::vector<TaggedSentence> out;
  for (const auto& doc : docs) {
    if (group == TaggerGroup::InterventionComparison && !doc.design_sentence_index) continue;
    auto nt = normalize(doc.record.body);
    auto sentences = split_sentences(nt, abbreviations);
    auto tags = spans_to_bio(doc, nt, sentences, group_kinds(group));
    for (const auto& s : sentences) {
      if (group == TaggerGroup::InterventionComparison && s.index != *doc.design_sentence_index)
        continue;
      out.push_back({s.tokens, tags[static_cast<std::size_t>(s.index)]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

namespace detail {

inline void add_scores(const TaggerModel& m, const std::string& feature, std::vector<double>& scores) {
  auto it = m.weights.find(feature);
  if (it == m.weights.end()) return;
  for (std::size_t t = 0; t < scores.size(); ++t) scores[t] += it->second[t];
}

inline std::size_t argmax(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < scores.size(); ++t)
    if (scores[t] > scores[best]) best = t;
  return best;
}

struct Decoded {
  std::vector<std::string> tags;
  std::vector<double> margins;
};

inline Decoded greedy_decode(const TaggerModel& m, const std::vector<Token>& tokens) {
  Decoded d;
  std::string prev(kBoundaryBefore);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<double> scores(m.tagset.size(), 0.0);
    for (const auto& f : extract_features(tokens, i)) add_scores(m, f, scores);
    add_scores(m, previous_tag_feature(prev), scores);
    auto best = argmax(scores);
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < scores.size(); ++t)
      if (t != best) second = std::max(second, scores[t]);
    d.tags.push_back(m.tagset[best]);
    d.margins.push_back(scores.size() > 1 ? scores[best] - second : 0.0);
    prev = m.tagset[best];
  }
  return d;
}

inline std::string join_tokens(const std::vector<Token>& tokens, std::size_t first, std::size_t last) {
  std::string out = tokens[first].surface;
  for (std::size_t i = first + 1; i <= last; ++i) {
    if (tokens[i].start > tokens[i - 1].end) out += ' ';
    out += tokens[i].surface;
  }
  return out;
}

}  // namespace detail

/// Decoded tag sequence (before span repair).
inline std::vector<std::string> decode_tags(const TaggerModel& m, const std::vector<Token>& tokens) {
  return detail::greedy_decode(m, tokens).tags;
}

inline std::vector<Entity> spans_to_entities(const std::vector<BioSpan>& spans,
                                             const std::vector<Token>& tokens, int sentence_index,
                                             const std::vector<double>& margins = {}) {
  std::vector<Entity> out;
  for (const auto& s : spans) {
    Entity e;
    e.kind = s.kind;
    e.sentence_index = sentence_index;
    e.start = tokens[s.first].start;
    e.end = tokens[s.last].end;
    e.surface = detail::join_tokens(tokens, s.first, s.last);
    if (!margins.empty()) {
      e.margin = margins[s.first];
      for (std::size_t i = s.first; i <= s.last; ++i) e.margin = std::min(e.margin, margins[i]);
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Greedy left-to-right decode, BIO repair, conversion to entities.
inline std::vector<Entity> tag(const TaggerModel& m, const std::vector<Token>& tokens,
                               int sentence_index = 0) {
  if (tokens.empty()) return {};
  auto d = detail::greedy_decode(m, tokens);
  return spans_to_entities(bio_to_spans(d.tags), tokens, sentence_index, d.margins);
}

inline std::vector<Entity> tag(const TaggerModel& m, const Sentence& s) {
  return tag(m, s.tokens, s.index);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

/// Perceptron weights with lazily maintained running sums for averaging.
class AveragingWeights {
 public:
  explicit AveragingWeights(std::size_t tags) : tags_(tags) {}

  void score(const std::string& feature, std::vector<double>& scores) const {
    auto it = slots_.find(feature);
    if (it == slots_.end()) return;
    for (std::size_t t = 0; t < tags_; ++t) scores[t] += it->second.w[t];
  }

  void update(const std::string& feature, std::size_t tag, double delta) {
    auto it = slots_.find(feature);
    if (it == slots_.end()) it = slots_.emplace(feature, Slot(tags_)).first;
    auto& s = it->second;
    s.acc[tag] += static_cast<double>(clock_ - s.stamp[tag]) * s.w[tag];
    s.stamp[tag] = clock_;
    s.w[tag] += delta;
  }

  void tick() { ++clock_; }

  std::unordered_map<std::string, std::vector<double>> averaged() const {
    std::unordered_map<std::string, std::vector<double>> out;
    const double n = static_cast<double>(std::max<long long>(clock_, 1));
    for (const auto& [f, s] : slots_) {
      std::vector<double> avg(tags_);
      bool nonzero = false;
      for (std::size_t t = 0; t < tags_; ++t) {
        double acc = s.acc[t] + static_cast<double>(clock_ - s.stamp[t]) * s.w[t];
        avg[t] = acc / n;
        nonzero = nonzero || avg[t] != 0.0;
      }
      if (nonzero) out.emplace(f, std::move(avg));
    }
    return out;
  }

 private:
  struct Slot {
    explicit Slot(std::size_t n) : w(n, 0.0), acc(n, 0.0), stamp(n, 0) {}
    std::vector<double> w;
    std::vector<double> acc;
    std::vector<long long> stamp;
  };

  std::size_t tags_;
  long long clock_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace detail

/// Averaged perceptron over greedy left-to-right decoding. Each epoch visits
/// the sentences in an order shuffled from `seed`; every mistaken token
/// triggers an additive update. Deterministic in (examples, epochs, seed).
/// `mistakes_per_epoch`, when given, receives the per-epoch error count.
inline TaggerModel train_tagger(const std::vector<TaggedSentence>& examples,
                                const std::vector<std::string>& tagset, int epochs, std::uint64_t seed,
                                std::vector<int>* mistakes_per_epoch = nullptr) {
  if (epochs < 1) throw Error("epochs must be >= 1");
  TaggerModel model;
  model.tagset = tagset;
  model.epochs = epochs;
  model.seed = seed;

  std::vector<std::vector<int>> gold;
  std::vector<std::vector<std::vector<std::string>>> features;
  bool any_entity = false;
  for (const auto& ex : examples) {
    if (ex.tags.size() != ex.tokens.size()) throw Error("tag/token length mismatch");
    std::vector<int> g;
    std::vector<std::vector<std::string>> f;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      g.push_back(model.tag_index(ex.tags[i]));
      any_entity = any_entity || g.back() != kOutside;
      f.push_back(extract_features(ex.tokens, i));
    }
    gold.push_back(std::move(g));
    features.push_back(std::move(f));
  }
  if (!any_entity) throw Error("no entities to learn");

  detail::AveragingWeights w(tagset.size());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    seeded_shuffle(order, rng);
    int mistakes = 0;
    for (std::size_t idx : order) {
      std::string prev(kBoundaryBefore);
      for (std::size_t i = 0; i < gold[idx].size(); ++i) {
        auto pt = previous_tag_feature(prev);
        std::vector<double> scores(tagset.size(), 0.0);
        for (const auto& f : features[idx][i]) w.score(f, scores);
        w.score(pt, scores);
        auto pred = detail::argmax(scores);
        auto truth = static_cast<std::size_t>(gold[idx][i]);
        if (pred != truth) {
          ++mistakes;
          for (const auto& f : features[idx][i]) {
            w.update(f, truth, 1.0);
            w.update(f, pred, -1.0);
          }
          w.update(pt, truth, 1.0);
          w.update(pt, pred, -1.0);
        }
        w.tick();
        prev = tagset[pred];
      }
    }
    if (mistakes_per_epoch) mistakes_per_epoch->push_back(mistakes);
  }
  model.weights = w.averaged();
  return model;
}

inline TaggerModel train_tagger(const std::vector<TaggedSentence>& examples, TaggerGroup group,
                                int epochs, std::uint64_t seed,
                                std::vector<int>* mistakes_per_epoch = nullptr) {
  return train_tagger(examples, make_tagset(group_kinds(group)), epochs, seed, mistakes_per_epoch);
}

// ---------------------------------------------------------------------------
// I/C disambiguation on the design sentence

namespace detail {

// Cue phrases as lowercase token sequences.
inline const std::vector<std::vector<std::string>>& comparator_cues() {
  static const std::vector<std::vector<std::string>> cues = {
      {"versus"}, {"vs"}, {"or", "standard"}, {"placebo"}, {"alone"}};
  return cues;
}

}  // namespace detail

/// When the tagger found exactly two I entities and no C entity in a design
/// sentence, the entity closest to a comparator cue, at or to the right of
/// the cue, becomes the comparison.
inline void disambiguate_comparison(std::vector<Entity>& entities, const std::vector<Token>& tokens) {
  std::vector<std::size_t> interventions;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].kind == EntityKind::C) return;
    if (entities[i].kind == EntityKind::I) interventions.push_back(i);
  }
  if (interventions.size() != 2) return;

  std::vector<std::string> lower;
  for (const auto& t : tokens) lower.push_back(unicode::lower_utf8(t.surface));
  std::optional<std::size_t> chosen;
  std::size_t best_distance = std::numeric_limits<std::size_t>::max();
  for (const auto& cue : detail::comparator_cues()) {
    for (std::size_t p = 0; p + cue.size() <= lower.size(); ++p) {
      if (!std::equal(cue.begin(), cue.end(), lower.begin() + static_cast<std::ptrdiff_t>(p)))
        continue;
      const std::size_t cue_start = tokens[p].start;
      for (std::size_t idx : interventions) {
        const auto& e = entities[idx];
        if (e.end <= cue_start) continue;  // entity entirely left of the cue
        std::size_t distance = e.start > cue_start ? e.start - cue_start : 0;
        if (distance < best_distance) {
          best_distance = distance;
          chosen = idx;
        }
      }
    }
  }
  if (chosen) entities[*chosen].kind = EntityKind::C;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const TaggerModel& m) {
  using nlohmann::json;
  std::vector<std::string> features;
  features.reserve(m.weights.size());
  for (const auto& [f, _] : m.weights) features.push_back(f);
  std::sort(features.begin(), features.end());
  json entries = json::array();
  for (const auto& f : features) {
    const auto& w = m.weights.at(f);
    for (std::size_t t = 0; t < w.size(); ++t)
      if (w[t] != 0.0) entries.push_back(json::array({f, m.tagset[t], w[t]}));
  }
  return json{{"tagset", m.tagset}, {"seed", m.seed}, {"epochs", m.epochs}, {"weights", entries}};
}

inline TaggerModel tagger_model_from_json(const nlohmann::json& j) {
  TaggerModel m;
  try {
    m.tagset = j.at("tagset").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    if (m.tagset.empty() || m.tagset[0] != kOutsideTag) throw Error("tag set must start with O");
    for (const auto& e : j.at("weights")) {
      auto feature = e.at(0).get<std::string>();
      auto t = static_cast<std::size_t>(m.tag_index(e.at(1).get<std::string>()));
      double v = e.at(2).get<double>();
      if (!std::isfinite(v)) throw Error("non-finite weight for " + feature);
      auto& w = m.weights[feature];
      if (w.empty()) w.assign(m.tagset.size(), 0.0);
      w[t] = v;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed tagger model: ") + e.what());
  }
  return m;
}

}  // namespace icoe
