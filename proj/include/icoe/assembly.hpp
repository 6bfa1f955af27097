#pragma once

// Per-abstract ICOE assembly: I/C from the design sentence, outcome-effect
// linking by sentence co-occurrence, and p-value polarity.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "icoe/corpus.hpp"
#include "icoe/design_classifier.hpp"
#include "icoe/effect_grammar.hpp"
#include "icoe/entity_tagger.hpp"
#include "icoe/error.hpp"
#include "icoe/textproc.hpp"

namespace icoe {

enum class Polarity { Positive, Negative, Indeterminate, Unscored };

/// Strict keeps Indeterminate; PaperCompat folds it into Negative so that
/// every scored effect is either positive or negative.
enum class PolarityMode { Strict, PaperCompat };

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "positive";
    case Polarity::Negative: return "negative";
    case Polarity::Indeterminate: return "indeterminate";
    case Polarity::Unscored: return "unscored";
  }
  return "?";
}

inline Polarity parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::Positive;
  if (s == "negative") return Polarity::Negative;
  if (s == "indeterminate") return Polarity::Indeterminate;
  if (s == "unscored") return Polarity::Unscored;
  throw Error("unknown polarity: " + std::string(s));
}

inline std::string_view to_string(PolarityMode m) {
  return m == PolarityMode::Strict ? "strict" : "compat";
}

inline PolarityMode parse_polarity_mode(std::string_view s) {
  if (s == "strict") return PolarityMode::Strict;
  if (s == "compat" || s == "paper-compat") return PolarityMode::PaperCompat;
  throw Error("unknown polarity mode: " + std::string(s));
}

inline constexpr double kDefaultThreshold = 0.05;

/// Significance of a p-value constraint at `threshold`:
///   =      positive iff value < threshold, else negative
///   < , ≤  positive iff value <= threshold, else indeterminate
///   > , ≥  negative iff value >= threshold, else indeterminate
inline Polarity classify_polarity(const PValueConstraint& p, double threshold = kDefaultThreshold,
                                  PolarityMode mode = PolarityMode::Strict) {
  Polarity out = Polarity::Indeterminate;
  switch (p.op) {
    case PValueOp::Eq:
      out = p.value < threshold ? Polarity::Positive : Polarity::Negative;
      break;
    case PValueOp::Lt:
    case PValueOp::Le:
      if (p.value <= threshold) out = Polarity::Positive;
      break;
    case PValueOp::Gt:
    case PValueOp::Ge:
      if (p.value >= threshold) out = Polarity::Negative;
      break;
  }
  if (mode == PolarityMode::PaperCompat && out == Polarity::Indeterminate) out = Polarity::Negative;
  return out;
}

// ---------------------------------------------------------------------------
// Effects and records

struct DescriptionEffect {
  Entity description;
  std::optional<PValueConstraint> p;
};

struct Effect {
  std::variant<EffectIndicator, DescriptionEffect, PValueConstraint> value;
  /// Raw-body offsets; filled in by assemble.
  std::size_t raw_start = 0;
  std::size_t raw_end = 0;
  std::string raw_text;

  std::size_t start() const {
    return std::visit(
        [](const auto& v) -> std::size_t {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, DescriptionEffect>) return v.description.start;
          else return v.start;
        },
        value);
  }
  std::size_t end() const {
    return std::visit(
        [](const auto& v) -> std::size_t {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, DescriptionEffect>) return v.description.end;
          else return v.end;
        },
        value);
  }
  std::optional<PValueConstraint> p() const {
    if (auto* i = std::get_if<EffectIndicator>(&value)) return i->p;
    if (auto* d = std::get_if<DescriptionEffect>(&value)) return d->p;
    return std::get<PValueConstraint>(value);
  }
  const EffectIndicator* indicator() const { return std::get_if<EffectIndicator>(&value); }
  const DescriptionEffect* description() const { return std::get_if<DescriptionEffect>(&value); }
  std::string_view type_name() const {
    if (indicator()) return "indicator";
    if (description()) return "description";
    return "pvalue";
  }
};

struct OutcomeEffectPair {
  Entity outcome;
  Effect effect;
  int sentence_index = 0;
  Polarity polarity = Polarity::Unscored;
};

/// Entities carry raw offsets (raw_start/raw_end) and raw surface text.
struct ICOERecord {
  std::string id;
  std::vector<Entity> interventions;
  std::vector<Entity> comparisons;
  std::vector<OutcomeEffectPair> pairs;
  std::optional<int> design_sentence_index;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::size_t gap(std::size_t a_start, std::size_t a_end, std::size_t b_start, std::size_t b_end) {
  if (a_end <= b_start) return b_start - a_end;
  if (b_end <= a_start) return a_start - b_end;
  return 0;
}

}  // namespace detail

/// Links every effect in one sentence to an outcome. An effect is an
/// indicator, an EDesc entity (with the nearest standalone p-value not
/// separated from it by an outcome), or a leftover standalone p-value. Its
/// outcome is the closest O entity starting left of it, else the closest O
/// entity anywhere; effects in sentences without outcomes are dropped.
inline std::vector<OutcomeEffectPair> link_outcome_effects(
    const Sentence& sentence, const std::vector<Entity>& entities,
    const std::vector<EffectIndicator>& indicators, const std::vector<PValueConstraint>& pvals,
    double threshold = kDefaultThreshold, PolarityMode mode = PolarityMode::Strict,
    std::vector<std::string>* warnings = nullptr) {
  std::vector<const Entity*> outcomes;
  std::vector<const Entity*> descriptions;
  for (const auto& e : entities) {
    if (e.kind == EntityKind::O) outcomes.push_back(&e);
    else if (e.kind == EntityKind::EDesc) descriptions.push_back(&e);
  }
  std::sort(outcomes.begin(), outcomes.end(),
            [](const Entity* a, const Entity* b) { return a->start < b->start; });

  std::vector<PValueConstraint> standalone;
  for (const auto& p : pvals) {
    bool inside = std::any_of(indicators.begin(), indicators.end(), [&](const EffectIndicator& i) {
      return p.start < i.end && i.start < p.end;
    });
    if (!inside) standalone.push_back(p);
  }

  std::vector<DescriptionEffect> desc_effects;
  for (const auto* d : descriptions) desc_effects.push_back({*d, std::nullopt});
  std::vector<bool> claimed(standalone.size(), false);
  for (std::size_t pi = 0; pi < standalone.size(); ++pi) {
    const auto& p = standalone[pi];
    std::optional<std::size_t> best;
    std::size_t best_gap = 0;
    for (std::size_t di = 0; di < desc_effects.size(); ++di) {
      auto& d = desc_effects[di];
      if (d.p) continue;
      auto lo = std::min(d.description.end, p.end);
      auto hi = std::max(d.description.start, p.start);
      bool blocked = std::any_of(outcomes.begin(), outcomes.end(), [&](const Entity* o) {
        return o->start >= lo && o->end <= hi;
      });
      if (blocked) continue;
      auto g = detail::gap(d.description.start, d.description.end, p.start, p.end);
      if (!best || g < best_gap) {
        best = di;
        best_gap = g;
      }
    }
    if (best) {
      desc_effects[*best].p = p;
      claimed[pi] = true;
    }
  }

  std::vector<Effect> effects;
  for (const auto& i : indicators) effects.push_back(Effect{i, 0, 0, {}});
  for (auto& d : desc_effects) effects.push_back(Effect{std::move(d), 0, 0, {}});
  for (std::size_t pi = 0; pi < standalone.size(); ++pi)
    if (!claimed[pi]) effects.push_back(Effect{standalone[pi], 0, 0, {}});
  std::stable_sort(effects.begin(), effects.end(),
                   [](const Effect& a, const Effect& b) { return a.start() < b.start(); });

  std::vector<OutcomeEffectPair> pairs;
  for (auto& effect : effects) {
    const Entity* bound = nullptr;
    for (const auto* o : outcomes)
      if (o->start < effect.start()) bound = o;
    if (!bound) {
      std::size_t best_gap = 0;
      for (const auto* o : outcomes) {
        auto g = detail::gap(o->start, o->end, effect.start(), effect.end());
        if (!bound || g < best_gap) {
          bound = o;
          best_gap = g;
        }
      }
    }
    if (!bound) {
      if (warnings)
        warnings->push_back("sentence " + std::to_string(sentence.index) + ": " +
                            std::string(effect.type_name()) + " effect at offset " +
                            std::to_string(effect.start()) + " dropped, no outcome in sentence");
      continue;
    }
    OutcomeEffectPair pair{*bound, std::move(effect), sentence.index, Polarity::Unscored};
    if (auto p = pair.effect.p()) pair.polarity = classify_polarity(*p, threshold, mode);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Pipeline

struct Models {
  NBModel classifier;
  TaggerModel intervention_comparison;
  TaggerModel outcome_effect;
};

struct PipelineOptions {
  double threshold = kDefaultThreshold;
  PolarityMode mode = PolarityMode::Strict;
  std::vector<std::string> abbreviations = default_abbreviations();
  std::set<std::string> cues = default_design_cues();
};

/// Everything assemble computed for one abstract, including the
/// intermediate design decision (used for self-training confidences).
struct Assembly {
  ICOERecord record;
  std::optional<DesignSelection> design;
  /// Every O and EDesc entity tagged, linked or not, in raw offsets.
  std::vector<Entity> outcome_effect_entities;
};

namespace detail {

inline void project(Entity& e, const NormalizedText& nt, const std::u32string& raw) {
  auto [rs, re] = project_span(nt, e.start, e.end);
  e.raw_start = rs;
  e.raw_end = re;
  e.surface = unicode::encode(std::u32string_view(raw).substr(rs, re - rs));
}

}  // namespace detail

inline Assembly assemble_detailed(const AbstractRecord& record, const Models& models,
                                  const PipelineOptions& options = {}) {
  Assembly out;
  auto& rec = out.record;
  rec.id = record.id;
  const auto raw = unicode::decode(record.body);
  const auto nt = normalize(std::u32string_view(raw));
  const auto sentences = split_sentences(nt, options.abbreviations);

  out.design = select_design_sentence(models.classifier, sentences, options.cues);
  if (out.design) {
    rec.design_sentence_index = out.design->index;
    const auto& s = sentences[static_cast<std::size_t>(out.design->index)];
    auto ic = tag(models.intervention_comparison, s);
    disambiguate_comparison(ic, s.tokens);
    for (auto& e : ic) {
      detail::project(e, nt, raw);
      if (e.kind == EntityKind::I) rec.interventions.push_back(e);
      else if (e.kind == EntityKind::C) rec.comparisons.push_back(e);
    }
    if (rec.interventions.empty())
      rec.warnings.push_back("design sentence " + std::to_string(s.index) +
                             ": no intervention tagged");
    if (rec.interventions.size() > 1)
      rec.warnings.push_back("multi-arm: " + std::to_string(rec.interventions.size()) +
                             " interventions tagged; pairings not resolved");
  } else {
    rec.warnings.push_back("no design sentence found; interventions and comparisons left empty");
  }

  for (const auto& s : sentences) {
    auto entities = tag(models.outcome_effect, s);
    for (auto e : entities) {
      detail::project(e, nt, raw);
      out.outcome_effect_entities.push_back(std::move(e));
    }
    std::vector<std::string> sentence_warnings;
    auto indicators = parse_indicators(s.tokens, &sentence_warnings);
    auto pvals = parse_pvalues(s.tokens, indicators, &sentence_warnings);
    auto pairs = link_outcome_effects(s, entities, indicators, pvals, options.threshold, options.mode,
                                      &sentence_warnings);
    for (auto& w : sentence_warnings) {
      if (w.rfind("sentence ", 0) != 0) w = "sentence " + std::to_string(s.index) + ": " + w;
      rec.warnings.push_back(std::move(w));
    }
    for (auto& pair : pairs) {
      detail::project(pair.outcome, nt, raw);
      if (auto* d = std::get_if<DescriptionEffect>(&pair.effect.value))
        detail::project(d->description, nt, raw);
      auto [rs, re] = project_span(nt, pair.effect.start(), pair.effect.end());
      pair.effect.raw_start = rs;
      pair.effect.raw_end = re;
      pair.effect.raw_text = unicode::encode(std::u32string_view(raw).substr(rs, re - rs));
      rec.pairs.push_back(std::move(pair));
    }
  }
  return out;
}

/// normalize -> segment -> design sentence -> I/C -> O/EDesc -> effects ->
/// link -> polarity. Never fails on well-formed input; degraded results
/// carry warnings.
inline ICOERecord assemble(const AbstractRecord& record, const Models& models,
                           const PipelineOptions& options = {}) {
  return assemble_detailed(record, models, options).record;
}

// ---------------------------------------------------------------------------
// JSONL output

namespace detail {

inline nlohmann::json span_json(const std::string& text, std::size_t start, std::size_t end) {
  return nlohmann::json{{"text", text}, {"start", start}, {"end", end}};
}

inline nlohmann::json p_json(const std::optional<PValueConstraint>& p) {
  if (!p) return nullptr;
  return nlohmann::json{{"op", std::string(to_string(p->op))}, {"value", p->value}};
}

inline std::optional<PValueConstraint> p_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return PValueConstraint{parse_pvalue_op(j.at("op").get<std::string>()), j.at("value").get<double>()};
}

inline IndicatorKind indicator_kind_from_string(const std::string& s) {
  using T = IndicatorKind::Tag;
  if (s == "HR") return {T::HR, {}};
  if (s == "OR") return {T::OR, {}};
  if (s == "RR") return {T::RR, {}};
  if (s == "rate ratio") return {T::RateRatio, {}};
  return {T::Other, s};
}

inline Entity entity_from_json(const nlohmann::json& j, EntityKind kind, int sentence_index) {
  Entity e;
  e.kind = kind;
  e.sentence_index = sentence_index;
  e.surface = j.at("text").get<std::string>();
  e.raw_start = j.at("start").get<std::size_t>();
  e.raw_end = j.at("end").get<std::size_t>();
  return e;
}

}  // namespace detail

inline nlohmann::json to_json(const ICOERecord& r) {
  using nlohmann::json;
  json interventions = json::array();
  for (const auto& e : r.interventions) interventions.push_back(detail::span_json(e.surface, e.raw_start, e.raw_end));
  json comparisons = json::array();
  for (const auto& e : r.comparisons) comparisons.push_back(detail::span_json(e.surface, e.raw_start, e.raw_end));
  json pairs = json::array();
  for (const auto& pair : r.pairs) {
    const auto& eff = pair.effect;
    json effect{{"type", std::string(eff.type_name())}};
    if (const auto* i = eff.indicator()) {
      effect["kind"] = to_string(i->kind);
      effect["estimate"] = i->estimate;
      effect["ci_level"] = i->ci ? json(i->ci->level) : json(nullptr);
      effect["ci_low"] = i->ci ? json(i->ci->low) : json(nullptr);
      effect["ci_high"] = i->ci ? json(i->ci->high) : json(nullptr);
    }
    effect["p"] = detail::p_json(eff.p());
    effect["text"] = eff.raw_text;
    effect["start"] = eff.raw_start;
    effect["end"] = eff.raw_end;
    pairs.push_back(json{{"outcome", detail::span_json(pair.outcome.surface, pair.outcome.raw_start,
                                                      pair.outcome.raw_end)},
                         {"effect", effect},
                         {"sentence_index", pair.sentence_index},
                         {"polarity", std::string(to_string(pair.polarity))}});
  }
  return json{{"id", r.id},
              {"interventions", interventions},
              {"comparisons", comparisons},
              {"pairs", pairs},
              {"design_sentence_index",
               r.design_sentence_index ? json(*r.design_sentence_index) : json(nullptr)},
              {"warnings", r.warnings}};
}

/// Inverse of to_json. Normalized offsets are not serialized and come back
/// as zero.
inline ICOERecord icoe_record_from_json(const nlohmann::json& j) {
  ICOERecord r;
  try {
    r.id = j.at("id").get<std::string>();
    if (j.contains("design_sentence_index") && !j["design_sentence_index"].is_null())
      r.design_sentence_index = j["design_sentence_index"].get<int>();
    const int design = r.design_sentence_index.value_or(0);
    for (const auto& e : j.at("interventions"))
      r.interventions.push_back(detail::entity_from_json(e, EntityKind::I, design));
    for (const auto& e : j.at("comparisons"))
      r.comparisons.push_back(detail::entity_from_json(e, EntityKind::C, design));
    for (const auto& pj : j.at("pairs")) {
      OutcomeEffectPair pair;
      pair.sentence_index = pj.at("sentence_index").get<int>();
      pair.outcome = detail::entity_from_json(pj.at("outcome"), EntityKind::O, pair.sentence_index);
      pair.polarity = parse_polarity(pj.at("polarity").get<std::string>());
      const auto& ej = pj.at("effect");
      auto type = ej.at("type").get<std::string>();
      auto p = detail::p_from_json(ej.at("p"));
      Effect effect;
      if (type == "indicator") {
        EffectIndicator ind;
        ind.kind = detail::indicator_kind_from_string(ej.at("kind").get<std::string>());
        ind.estimate = ej.at("estimate").get<double>();
        if (!ej.at("ci_low").is_null())
          ind.ci = ConfidenceInterval{ej.at("ci_level").get<double>(), ej.at("ci_low").get<double>(),
                                      ej.at("ci_high").get<double>()};
        ind.p = p;
        effect.value = ind;
      } else if (type == "description") {
        DescriptionEffect d{detail::entity_from_json(ej, EntityKind::EDesc, pair.sentence_index), p};
        effect.value = d;
      } else if (type == "pvalue") {
        if (!p) throw Error("pvalue effect without p");
        effect.value = *p;
      } else {
        throw Error("unknown effect type: " + type);
      }
      effect.raw_text = ej.at("text").get<std::string>();
      effect.raw_start = ej.at("start").get<std::size_t>();
      effect.raw_end = ej.at("end").get<std::size_t>();
      pair.effect = std::move(effect);
      r.pairs.push_back(std::move(pair));
    }
    for (const auto& w : j.at("warnings")) r.warnings.push_back(w.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed ICOE record: ") + e.what());
  }
  return r;
}

}  // namespace icoe
