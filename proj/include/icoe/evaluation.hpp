#pragma once

// Entity-level precision/recall/F1, k-fold cross-validation, the
// operator-wise positive/negative census, and the self-training loop
// (propose -> review -> merge).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icoe/assembly.hpp"
#include "icoe/corpus.hpp"
#include "icoe/design_classifier.hpp"
#include "icoe/entity_tagger.hpp"
#include "icoe/error.hpp"
#include "icoe/shuffle.hpp"

namespace icoe {

// ---------------------------------------------------------------------------
// Precision / recall / F1

enum class MatchMode { Exact, Overlap };

inline std::string_view to_string(MatchMode m) { return m == MatchMode::Exact ? "exact" : "overlap"; }

inline MatchMode parse_match_mode(std::string_view s) {
  if (s == "exact") return MatchMode::Exact;
  if (s == "overlap") return MatchMode::Overlap;
  throw Error("unknown match mode: " + std::string(s));
}

/// Counts: tp = gold spans matched by some prediction, fn = gold spans
/// unmatched, fp = predictions matching no gold span, predicted_matched =
/// predictions matching some gold span (equals tp in exact mode on
/// duplicate-free input).
struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long predicted_matched = 0;

  /// Recomputes the ratios from the counts. Precision is 0 with no
  /// predictions.
  void finalize() {
    const long long predicted = predicted_matched + fp;
    precision = predicted > 0 ? static_cast<double>(predicted_matched) / static_cast<double>(predicted) : 0.0;
    recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }

  PRF& operator+=(const PRF& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    predicted_matched += o.predicted_matched;
    finalize();
    return *this;
  }
};

struct PRFReport {
  std::map<EntityKind, PRF> per_kind;
  /// Micro average over all kinds.
  PRF overall;

  PRFReport& operator+=(const PRFReport& o) {
    for (const auto& [k, prf] : o.per_kind) per_kind[k] += prf;
    overall += o.overall;
    return *this;
  }
};

namespace detail {

using Interval = std::pair<std::size_t, std::size_t>;

// For each query: does it match any interval of `against`?
inline long long count_matched(const std::vector<Interval>& queries, std::vector<Interval> against,
                               MatchMode mode) {
  std::sort(against.begin(), against.end());
  long long matched = 0;
  if (mode == MatchMode::Exact) {
    for (const auto& q : queries)
      if (std::binary_search(against.begin(), against.end(), q)) ++matched;
    return matched;
  }
  // Prefix maximum of interval ends over intervals sorted by start.
  std::vector<std::size_t> max_end(against.size());
  for (std::size_t i = 0; i < against.size(); ++i)
    max_end[i] = std::max(i ? max_end[i - 1] : 0, against[i].second);
  for (const auto& [s, e] : queries) {
    // Intervals starting before e ...
    auto it = std::lower_bound(against.begin(), against.end(), Interval{e, 0});
    auto n = static_cast<std::size_t>(it - against.begin());
    // ... of which one ends after s.
    if (n > 0 && max_end[n - 1] > s) ++matched;
  }
  return matched;
}

}  // namespace detail

/// Per-kind and micro-averaged scores. Entities are compared on
/// (kind, start, end); both lists must come from the same document.
inline PRFReport entity_prf(const std::vector<Entity>& gold, const std::vector<Entity>& predicted,
                            MatchMode mode = MatchMode::Exact) {
  PRFReport report;
  for (auto kind : kAllKinds) {
    std::vector<detail::Interval> g, p;
    for (const auto& e : gold)
      if (e.kind == kind) g.emplace_back(e.start, e.end);
    for (const auto& e : predicted)
      if (e.kind == kind) p.emplace_back(e.start, e.end);
    if (g.empty() && p.empty()) continue;
    PRF prf;
    prf.tp = detail::count_matched(g, p, mode);
    prf.fn = static_cast<long long>(g.size()) - prf.tp;
    prf.predicted_matched = detail::count_matched(p, g, mode);
    prf.fp = static_cast<long long>(p.size()) - prf.predicted_matched;
    prf.finalize();
    report.per_kind[kind] = prf;
    report.overall += prf;
  }
  report.overall.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Folds

struct FoldAssignment {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  /// Fold of ids[i].
  std::vector<int> fold;

  int fold_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return fold[i];
    throw Error("id not in fold assignment: " + id);
  }
  std::vector<std::size_t> members(int f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i)
      if (fold[i] == f) out.push_back(i);
    return out;
  }
};

/// Seeded shuffle, then round-robin; fold sizes differ by at most one.
inline FoldAssignment kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw Error("k must be at least 2");
  if (static_cast<std::size_t>(k) > ids.size())
    throw Error("k = " + std::to_string(k) + " exceeds the " + std::to_string(ids.size()) +
                " available documents");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  seeded_shuffle(order, rng);
  FoldAssignment a{k, seed, ids, std::vector<int>(ids.size(), 0)};
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    a.fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return a;
}

// ---------------------------------------------------------------------------
// Training

struct TrainerConfig {
  double alpha = 1.0;
  int epochs = 10;
  std::uint64_t seed = 42;
  MatchMode match = MatchMode::Exact;
  std::vector<std::string> abbreviations = default_abbreviations();
  std::set<std::string> cues = default_design_cues();
};

/// Model that predicts nothing: every sentence non-design.
inline NBModel untrained_classifier() {
  NBModel m;
  m.class_log_prior = {0.0, -std::numeric_limits<double>::infinity()};
  return m;
}

/// Model that predicts nothing: every token outside.
inline TaggerModel untrained_tagger(TaggerGroup g) {
  TaggerModel m;
  m.tagset = make_tagset(group_kinds(g));
  return m;
}

struct TrainedModels {
  Models models;
  bool classifier_trained = false;
  bool ic_trained = false;
  bool oe_trained = false;
};

/// Trains all three models. With `strict`, a degenerate training set is an
/// error; otherwise the affected model is left untrained.
inline TrainedModels train_models(const std::vector<AnnotatedDocument>& docs, const TrainerConfig& cfg,
                                  bool strict = true) {
  TrainedModels out;
  std::vector<LabeledFeatures> sentences;
  for (const auto& d : docs) {
    auto ex = design_examples(d, cfg.abbreviations, cfg.cues);
    sentences.insert(sentences.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  auto guarded = [&](auto&& fn, auto&& fallback, bool& trained) {
    try {
      auto m = fn();
      trained = true;
      return m;
    } catch (const Error&) {
      if (strict) throw;
      return fallback();
    }
  };
  out.models.classifier = guarded([&] { return train_nb(sentences, cfg.alpha); }, untrained_classifier,
                                  out.classifier_trained);
  out.models.intervention_comparison = guarded(
      [&] {
        return train_tagger(tagger_examples(docs, TaggerGroup::InterventionComparison, cfg.abbreviations),
                            TaggerGroup::InterventionComparison, cfg.epochs, cfg.seed);
      },
      [] { return untrained_tagger(TaggerGroup::InterventionComparison); }, out.ic_trained);
  out.models.outcome_effect = guarded(
      [&] {
        return train_tagger(tagger_examples(docs, TaggerGroup::OutcomeEffect, cfg.abbreviations),
                            TaggerGroup::OutcomeEffect, cfg.epochs, cfg.seed);
      },
      [] { return untrained_tagger(TaggerGroup::OutcomeEffect); }, out.oe_trained);
  return out;
}

/// Gold entities of a document in raw offsets.
inline std::vector<Entity> gold_entities(const AnnotatedDocument& doc) {
  std::vector<Entity> out;
  for (const auto& s : doc.spans) {
    Entity e;
    e.kind = s.kind;
    e.start = e.raw_start = s.start;
    e.end = e.raw_end = s.end;
    out.push_back(e);
  }
  return out;
}

/// Predicted entities of a document in raw offsets.
inline std::vector<Entity> predicted_entities(const AbstractRecord& record, const Models& models,
                                              const PipelineOptions& options) {
  auto a = assemble_detailed(record, models, options);
  std::vector<Entity> out;
  auto add = [&](const std::vector<Entity>& es) {
    for (auto e : es) {
      e.start = e.raw_start;
      e.end = e.raw_end;
      out.push_back(std::move(e));
    }
  };
  add(a.record.interventions);
  add(a.record.comparisons);
  add(a.outcome_effect_entities);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldResult {
  int fold = 0;
  std::vector<std::string> test_ids;
  /// nullopt: the fold has no gold entity of that kind.
  std::map<EntityKind, std::optional<PRF>> per_kind;
  PRF overall;
  /// Fraction of test documents whose predicted design sentence equals the
  /// labeled one (absent label must be predicted absent).
  double design_accuracy = 0.0;
};

struct BestFold {
  int fold = 0;
  PRF prf;
};

struct MeanPRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int folds = 0;
};

struct CrossValidationReport {
  int k = 0;
  std::uint64_t seed = 0;
  MatchMode match = MatchMode::Exact;
  std::vector<FoldResult> folds;
  std::map<EntityKind, std::optional<BestFold>> best;
  std::map<EntityKind, std::optional<MeanPRF>> mean;
};

inline FoldResult evaluate_fold(const std::vector<AnnotatedDocument>& docs, const FoldAssignment& folds,
                                int f, const TrainerConfig& cfg) {
  std::vector<AnnotatedDocument> train, test;
  for (std::size_t i = 0; i < docs.size(); ++i) (folds.fold[i] == f ? test : train).push_back(docs[i]);

  auto trained = train_models(train, cfg, /*strict=*/false);
  PipelineOptions options;
  options.abbreviations = cfg.abbreviations;
  options.cues = cfg.cues;

  FoldResult r;
  r.fold = f;
  PRFReport total;
  std::map<EntityKind, long long> gold_count;
  int design_hits = 0;
  for (const auto& doc : test) {
    r.test_ids.push_back(doc.record.id);
    auto gold = gold_entities(doc);
    for (const auto& g : gold) ++gold_count[g.kind];
    auto predicted = predicted_entities(doc.record, trained.models, options);
    total += entity_prf(gold, predicted, cfg.match);

    auto sentences = split_sentences(normalize(doc.record.body), cfg.abbreviations);
    auto design = select_design_sentence(trained.models.classifier, sentences, cfg.cues);
    std::optional<int> predicted_index;
    if (design) predicted_index = design->index;
    if (predicted_index == doc.design_sentence_index) ++design_hits;
  }
  for (auto kind : kAllKinds) {
    if (gold_count[kind] == 0) {
      r.per_kind[kind] = std::nullopt;
      continue;
    }
    auto it = total.per_kind.find(kind);
    r.per_kind[kind] = it != total.per_kind.end() ? it->second : PRF{};
  }
  r.overall = total.overall;
  r.design_accuracy = test.empty() ? 0.0 : static_cast<double>(design_hits) / static_cast<double>(test.size());
  return r;
}

/// Trains on k-1 folds and scores the held-out fold, for every fold.
/// Folds run concurrently; results are assembled in fold order.
inline CrossValidationReport cross_validate(const std::vector<AnnotatedDocument>& docs, int k,
                                            const TrainerConfig& cfg) {
  if (docs.empty()) throw Error("cross-validation needs a non-empty corpus");
  std::vector<std::string> ids;
  for (const auto& d : docs) ids.push_back(d.record.id);
  auto folds = kfold_split(ids, k, cfg.seed);

  std::vector<std::future<FoldResult>> pending;
  for (int f = 0; f < k; ++f)
    pending.push_back(std::async(std::launch::async, [&, f] { return evaluate_fold(docs, folds, f, cfg); }));

  CrossValidationReport report;
  report.k = k;
  report.seed = cfg.seed;
  report.match = cfg.match;
  for (auto& p : pending) report.folds.push_back(p.get());

  for (auto kind : kAllKinds) {
    std::optional<BestFold> best;
    MeanPRF mean;
    for (const auto& fr : report.folds) {
      const auto& prf = fr.per_kind.at(kind);
      if (!prf) continue;
      if (!best || prf->f1 > best->prf.f1) best = BestFold{fr.fold, *prf};
      mean.precision += prf->precision;
      mean.recall += prf->recall;
      mean.f1 += prf->f1;
      ++mean.folds;
    }
    report.best[kind] = best;
    if (mean.folds > 0) {
      mean.precision /= mean.folds;
      mean.recall /= mean.folds;
      mean.f1 /= mean.folds;
      report.mean[kind] = mean;
    } else {
      report.mean[kind] = std::nullopt;
    }
  }
  return report;
}

inline nlohmann::json to_json(const PRF& p) {
  return nlohmann::json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
                        {"tp", p.tp},               {"fp", p.fp},         {"fn", p.fn}};
}

inline nlohmann::json to_json(const CrossValidationReport& r) {
  using nlohmann::json;
  json per_fold = json::array();
  for (const auto& f : r.folds) {
    json kinds = json::object();
    for (const auto& [kind, prf] : f.per_kind) kinds[std::string(to_string(kind))] = prf ? to_json(*prf) : json(nullptr);
    per_fold.push_back(json{{"fold", f.fold},
                            {"test_ids", f.test_ids},
                            {"kinds", kinds},
                            {"overall", to_json(f.overall)},
                            {"design_accuracy", f.design_accuracy}});
  }
  json best = json::object();
  json mean = json::object();
  for (auto kind : kAllKinds) {
    auto name = std::string(to_string(kind));
    const auto& b = r.best.at(kind);
    if (b) {
      auto j = to_json(b->prf);
      j["fold"] = b->fold;
      best[name] = j;
    } else {
      best[name] = nullptr;
    }
    const auto& m = r.mean.at(kind);
    mean[name] = m ? json{{"precision", m->precision}, {"recall", m->recall}, {"f1", m->f1}, {"folds", m->folds}}
                   : json(nullptr);
  }
  return json{{"k", r.k},       {"seed", r.seed}, {"match", std::string(to_string(r.match))},
              {"per_fold", per_fold}, {"best", best},   {"mean", mean}};
}

inline std::string render_table(const CrossValidationReport& r) {
  std::ostringstream out;
  out << "Cross-validation: k=" << r.k << " seed=" << r.seed << " match=" << to_string(r.match) << "\n";
  out << std::left << std::setw(8) << "Kind" << std::right << std::setw(10) << "Mean P" << std::setw(10)
      << "Mean R" << std::setw(10) << "Mean F1" << std::setw(10) << "Best F1" << std::setw(7) << "Fold"
      << std::setw(7) << "Folds" << "\n";
  out << std::fixed << std::setprecision(3);
  for (auto kind : kAllKinds) {
    out << std::left << std::setw(8) << to_string(kind) << std::right;
    const auto& m = r.mean.at(kind);
    const auto& b = r.best.at(kind);
    if (!m || !b) {
      out << std::setw(10) << "n/a" << std::setw(10) << "n/a" << std::setw(10) << "n/a" << std::setw(10)
          << "n/a" << std::setw(7) << "-" << std::setw(7) << 0 << "\n";
      continue;
    }
    out << std::setw(10) << m->precision << std::setw(10) << m->recall << std::setw(10) << m->f1
        << std::setw(10) << b->prf.f1 << std::setw(7) << b->fold << std::setw(7) << m->folds << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Positive / negative census by p-value operator

struct OperatorRow {
  PValueOp op = PValueOp::Eq;
  long long total = 0;
  long long positive = 0;
  long long negative = 0;
  long long indeterminate = 0;
};

struct OperatorStats {
  PolarityMode mode = PolarityMode::Strict;
  double threshold = kDefaultThreshold;
  /// Rows in the order =, >, <, ≥, ≤.
  std::vector<OperatorRow> rows;
  OperatorRow totals;
};

inline std::string_view operator_label(PValueOp op) {
  switch (op) {
    case PValueOp::Eq: return "Equal to (=)";
    case PValueOp::Gt: return "Greater than (>)";
    case PValueOp::Lt: return "Less than (<)";
    case PValueOp::Ge: return "Greater than or equal to (≥)";
    case PValueOp::Le: return "Less than or equal to (≤)";
  }
  return "?";
}

/// Percentage with one decimal, rounded half up; "—" for an empty total.
inline std::string format_percent(long long count, long long total) {
  if (total <= 0) return "—";
  // Tenths of a percent, half up, in exact integer arithmetic.
  long long tenths = (count * 2000 + total) / (2 * total);
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10) + "%";
}

/// Tallies every pair that carries a p-value constraint. Polarity is
/// recomputed from the constraint under `mode` and `threshold`.
inline OperatorStats polarity_table(const std::vector<ICOERecord>& records, PolarityMode mode,
                                    double threshold = kDefaultThreshold) {
  OperatorStats stats;
  stats.mode = mode;
  stats.threshold = threshold;
  for (auto op : kAllOps) stats.rows.push_back(OperatorRow{op});
  for (const auto& r : records) {
    for (const auto& pair : r.pairs) {
      auto p = pair.effect.p();
      if (!p) continue;
      auto& row = *std::find_if(stats.rows.begin(), stats.rows.end(),
                                [&](const OperatorRow& x) { return x.op == p->op; });
      ++row.total;
      switch (classify_polarity(*p, threshold, mode)) {
        case Polarity::Positive: ++row.positive; break;
        case Polarity::Negative: ++row.negative; break;
        default: ++row.indeterminate; break;
      }
    }
  }
  for (const auto& row : stats.rows) {
    stats.totals.total += row.total;
    stats.totals.positive += row.positive;
    stats.totals.negative += row.negative;
    stats.totals.indeterminate += row.indeterminate;
  }
  return stats;
}

inline std::string render_table(const OperatorStats& s) {
  const bool strict = s.mode == PolarityMode::Strict;
  std::ostringstream out;
  out << "P-value census (" << (strict ? "strict" : "paper-compat") << ", threshold "
      << format_number(s.threshold) << ")\n";
  auto cell = [](const std::string& text, std::size_t width) {
    // Pad by code points so "≥"/"≤" labels align.
    std::size_t length = unicode::decode(text).size();
    return text + std::string(width > length ? width - length : 0, ' ');
  };
  // The negative column is last in compat mode and stays unpadded.
  const std::size_t negative_width = strict ? 16 : 0;
  out << cell("Operator", 32) << cell("Count", 8) << cell("Positive", 16) << cell("Negative", negative_width);
  if (strict) out << "Indeterminate";
  out << "\n";
  for (const auto& row : s.rows) {
    out << cell(std::string(operator_label(row.op)), 32) << cell(std::to_string(row.total), 8)
        << cell(std::to_string(row.positive), 16) << cell(std::to_string(row.negative), negative_width);
    if (strict) out << row.indeterminate;
    out << "\n";
  }
  const auto& t = s.totals;
  out << cell("Total", 32) << cell(std::to_string(t.total), 8)
      << cell(std::to_string(t.positive) + " (" + format_percent(t.positive, t.total) + ")", 16)
      << cell(std::to_string(t.negative) + " (" + format_percent(t.negative, t.total) + ")", negative_width);
  if (strict) out << t.indeterminate << " (" << format_percent(t.indeterminate, t.total) << ")";
  out << "\n";
  return out.str();
}

inline nlohmann::json to_json(const OperatorStats& s) {
  using nlohmann::json;
  auto row_json = [](const OperatorRow& r) {
    return json{{"total", r.total}, {"positive", r.positive}, {"negative", r.negative},
                {"indeterminate", r.indeterminate}};
  };
  json rows = json::array();
  for (const auto& r : s.rows) {
    auto j = row_json(r);
    j["op"] = std::string(to_string(r.op));
    rows.push_back(j);
  }
  auto totals = row_json(s.totals);
  totals["positive_percent"] = format_percent(s.totals.positive, s.totals.total);
  totals["negative_percent"] = format_percent(s.totals.negative, s.totals.total);
  return json{{"mode", std::string(to_string(s.mode))}, {"threshold", s.threshold}, {"rows", rows},
              {"totals", totals}};
}

// ---------------------------------------------------------------------------
// Corpus statistics in the shape of the annotation-count table

struct AnnotationCounts {
  long long abstracts = 0;
  long long design_sentences = 0;
  long long ic_entities = 0;
  long long outcome_entities = 0;
  long long description_entities = 0;

  bool operator==(const AnnotationCounts&) const = default;
};

inline AnnotationCounts count_annotations(const std::vector<AnnotatedDocument>& docs) {
  AnnotationCounts c;
  for (const auto& d : docs) {
    ++c.abstracts;
    if (d.design_sentence_index) ++c.design_sentences;
    for (const auto& s : d.spans) {
      if (s.kind == EntityKind::I || s.kind == EntityKind::C) ++c.ic_entities;
      else if (s.kind == EntityKind::O) ++c.outcome_entities;
      else ++c.description_entities;
    }
  }
  return c;
}

inline std::string render_counts(const std::vector<std::pair<std::string, AnnotationCounts>>& columns) {
  std::ostringstream out;
  out << std::left << std::setw(36) << "";
  for (const auto& [name, _] : columns) out << std::right << std::setw(16) << name;
  out << "\n";
  auto row = [&](const char* label, auto field) {
    out << std::left << std::setw(36) << label;
    for (const auto& [_, c] : columns) out << std::right << std::setw(16) << c.*field;
    out << "\n";
  };
  row("RCT abstracts", &AnnotationCounts::abstracts);
  row("Labeled sentences for classification", &AnnotationCounts::design_sentences);
  row("Labeled I/C entities", &AnnotationCounts::ic_entities);
  row("Labeled outcome entities", &AnnotationCounts::outcome_entities);
  row("Labeled effect-description entities", &AnnotationCounts::description_entities);
  return out.str();
}

// ---------------------------------------------------------------------------
// Self-training

enum class ReviewStatus { Pending, Accepted, Rejected };

inline std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Rejected: return "rejected";
  }
  return "?";
}

inline ReviewStatus parse_review_status(std::string_view s) {
  if (s == "pending") return ReviewStatus::Pending;
  if (s == "accepted") return ReviewStatus::Accepted;
  if (s == "rejected") return ReviewStatus::Rejected;
  throw Error("unknown review status: " + std::string(s));
}

struct ProposedSpan {
  AnnotatedSpan span;
  /// Smallest per-token perceptron margin of the span.
  double confidence = 0.0;
  ReviewStatus status = ReviewStatus::Pending;
};

struct ProposedDocument {
  std::string id;
  std::vector<ProposedSpan> spans;
  std::optional<int> design_sentence_index;
  /// Design posterior of the selected sentence.
  double design_confidence = 0.0;
  ReviewStatus design_status = ReviewStatus::Pending;
};

using ProposedAnnotations = std::vector<ProposedDocument>;

/// Runs the pipeline over unlabeled abstracts; everything comes back
/// pending.
inline ProposedAnnotations selftrain_propose(const Models& models, const std::vector<AbstractRecord>& corpus,
                                             const PipelineOptions& options = {}) {
  ProposedAnnotations out;
  for (const auto& record : corpus) {
    auto a = assemble_detailed(record, models, options);
    ProposedDocument doc;
    doc.id = record.id;
    if (a.design) {
      doc.design_sentence_index = a.design->index;
      doc.design_confidence = a.design->posterior;
    }
    auto add = [&](const std::vector<Entity>& es) {
      for (const auto& e : es) doc.spans.push_back({{e.kind, e.raw_start, e.raw_end}, e.margin, ReviewStatus::Pending});
    };
    add(a.record.interventions);
    add(a.record.comparisons);
    add(a.outcome_effect_entities);
    out.push_back(std::move(doc));
  }
  return out;
}

inline nlohmann::json to_json(const ProposedDocument& d) {
  using nlohmann::json;
  json spans = json::array();
  for (const auto& s : d.spans) {
    auto j = to_json(s.span);
    j["confidence"] = s.confidence;
    j["status"] = std::string(to_string(s.status));
    spans.push_back(j);
  }
  return json{{"id", d.id},
              {"spans", spans},
              {"design_sentence_index", d.design_sentence_index ? json(*d.design_sentence_index) : json(nullptr)},
              {"design_confidence", d.design_confidence},
              {"design_status", std::string(to_string(d.design_status))}};
}

inline ProposedDocument proposed_document_from_json(const nlohmann::json& j) {
  ProposedDocument d;
  try {
    d.id = j.at("id").get<std::string>();
    for (const auto& s : j.at("spans")) {
      ProposedSpan p;
      p.span = span_from_json(s);
      p.confidence = s.value("confidence", 0.0);
      p.status = parse_review_status(s.value("status", std::string("pending")));
      d.spans.push_back(p);
    }
    if (j.contains("design_sentence_index") && !j["design_sentence_index"].is_null())
      d.design_sentence_index = j["design_sentence_index"].get<int>();
    d.design_confidence = j.value("design_confidence", 0.0);
    d.design_status = parse_review_status(j.value("design_status", std::string("pending")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed proposal: ") + e.what());
  }
  return d;
}

inline ProposedAnnotations load_proposals(const std::string& path) {
  ProposedAnnotations out;
  detail::for_each_line(path, [&](const std::string& line, std::size_t number) {
    auto j = detail::parse_line(line, number, path);
    try {
      out.push_back(proposed_document_from_json(j));
    } catch (const Error& e) {
      throw Error(path + ": line " + std::to_string(number) + ": " + e.what());
    }
  });
  return out;
}

inline void write_proposals(std::ostream& out, const ProposedAnnotations& proposals) {
  for (const auto& d : proposals) out << to_json(d).dump() << '\n';
}

/// Every reviewed document and span must exist among `proposals`.
inline void check_review(const ProposedAnnotations& proposals, const ProposedAnnotations& review) {
  std::unordered_map<std::string, const ProposedDocument*> by_id;
  for (const auto& d : proposals) by_id.emplace(d.id, &d);
  for (const auto& r : review) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw Error("review references unknown document \"" + r.id + "\"");
    for (const auto& s : r.spans) {
      bool known = std::any_of(it->second->spans.begin(), it->second->spans.end(),
                               [&](const ProposedSpan& p) { return p.span == s.span; });
      if (!known)
        throw Error("review references unknown span " + detail::span_label(s.span) + " in \"" + r.id + "\"");
    }
    if (r.design_sentence_index != it->second->design_sentence_index)
      throw Error("review changes the proposed design sentence of \"" + r.id + "\"");
  }
}

/// Annotated documents built from accepted spans only. Documents with
/// nothing accepted are left out.
inline std::vector<AnnotatedDocument> accepted_annotations(const ProposedAnnotations& reviewed,
                                                           const std::vector<AbstractRecord>& corpus) {
  std::unordered_map<std::string, const AbstractRecord*> by_id;
  for (const auto& r : corpus) by_id.emplace(r.id, &r);
  std::vector<AnnotatedDocument> out;
  for (const auto& d : reviewed) {
    auto it = by_id.find(d.id);
    if (it == by_id.end()) throw Error("proposal for unknown record \"" + d.id + "\"");
    AnnotatedDocument doc;
    doc.record = *it->second;
    for (const auto& s : d.spans)
      if (s.status == ReviewStatus::Accepted) doc.spans.push_back(s.span);
    if (d.design_status == ReviewStatus::Accepted) doc.design_sentence_index = d.design_sentence_index;
    if (doc.spans.empty() && !doc.design_sentence_index) continue;
    auto findings = validate_annotations(doc);
    if (!findings.empty())
      throw Error("accepted proposal " + d.id + ": " + findings.front().invariant + ": " + findings.front().detail);
    out.push_back(std::move(doc));
  }
  return out;
}

enum class DataSource { Gold, SemiAutomatic };

inline std::string_view to_string(DataSource s) { return s == DataSource::Gold ? "gold" : "semi-automatic"; }

struct TrainingSet {
  std::vector<AnnotatedDocument> documents;
  /// Source of documents[i].
  std::vector<DataSource> sources;

  std::vector<AnnotatedDocument> from(DataSource s) const {
    std::vector<AnnotatedDocument> out;
    for (std::size_t i = 0; i < documents.size(); ++i)
      if (sources[i] == s) out.push_back(documents[i]);
    return out;
  }
};

inline TrainingSet merge_training_sets(const std::vector<AnnotatedDocument>& gold,
                                       const std::vector<AnnotatedDocument>& accepted) {
  TrainingSet out;
  std::set<std::string> ids;
  for (const auto& d : gold) {
    if (!ids.insert(d.record.id).second) throw Error("duplicate document id \"" + d.record.id + "\" in gold set");
    out.documents.push_back(d);
    out.sources.push_back(DataSource::Gold);
  }
  for (const auto& d : accepted) {
    if (!ids.insert(d.record.id).second)
      throw Error("document id \"" + d.record.id + "\" occurs in both training sets");
    out.documents.push_back(d);
    out.sources.push_back(DataSource::SemiAutomatic);
  }
  return out;
}

}  // namespace icoe
