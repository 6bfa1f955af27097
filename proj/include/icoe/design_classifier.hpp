#pragma once

// Grouping-design sentence detection with a multinomial Naive Bayes model
// over lexical, cue-lexicon and protocol-pattern features.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icoe/corpus.hpp"
#include "icoe/error.hpp"
#include "icoe/textproc.hpp"
#include "icoe/unicode.hpp"

namespace icoe {

enum class SentenceLabel { NonDesign = 0, Design = 1 };

inline std::string_view to_string(SentenceLabel l) {
  return l == SentenceLabel::Design ? "design" : "non_design";
}

/// Sparse feature counts; every stored count is >= 1.
using FeatureVector = std::map<std::string, int>;

/// Words whose presence marks a grouping-design sentence. Mirrors
/// data/design_cues.txt.
inline const std::set<std::string>& default_design_cues() {
  static const std::set<std::string> cues = {
      "patients", "participants", "randomized", "randomised", "assigned", "group",
      "groups",   "versus",       "vs",         "arm",        "arms",     "placebo"};
  return cues;
}

inline std::set<std::string> load_cue_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open cue lexicon: " + path);
  std::set<std::string> cues;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    cues.insert(unicode::lower_utf8(line.substr(b, e - b + 1)));
  }
  return cues;
}

namespace detail {

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline bool is_number_token(std::string_view s) {
  if (s.empty()) return false;
  bool digit = false;
  for (char c : s) {
    if (c >= '0' && c <= '9') digit = true;
    else if (c != '.' && c != ',') return false;
  }
  return digit;
}

inline bool is_ratio_token(std::string_view s) {
  auto colon = s.find(':');
  return colon != std::string_view::npos && all_digits(s.substr(0, colon)) &&
         all_digits(s.substr(colon + 1));
}

inline bool is_dose_unit(std::string_view lower) {
  static const std::set<std::string, std::less<>> units = {
      "mg", "g", "ml", "mcg", "µg", "μg", "mg/kg", "µg/kg", "μg/kg", "iu"};
  return units.count(lower) > 0;
}

// "1800mg", "5ml"
inline bool is_fused_dose(std::string_view lower) {
  std::size_t i = 0;
  while (i < lower.size() && ((lower[i] >= '0' && lower[i] <= '9') || lower[i] == '.')) ++i;
  return i > 0 && i < lower.size() && is_dose_unit(lower.substr(i));
}

inline bool is_frequency_word(std::string_view lower) {
  static const std::set<std::string, std::less<>> words = {
      "daily", "twice", "thrice", "bid", "tid", "qid", "qd", "b.i.d", "t.i.d", "q.d", "nightly"};
  if (words.count(lower)) return true;
  auto ends_with = [&](std::string_view suffix) {
    return lower.size() > suffix.size() &&
           lower.substr(lower.size() - suffix.size()) == suffix;
  };
  return ends_with("/day") || ends_with("/d") || ends_with("/daily");
}

inline bool is_count_word(std::string_view lower) {
  static const std::set<std::string, std::less<>> words = {
      "one",  "two",    "three",    "four",     "five",    "six",     "seven",
      "eight", "nine",  "ten",      "eleven",   "twelve",  "fourteen", "twenty", "thirty"};
  return is_number_token(lower) || words.count(lower) > 0;
}

inline bool is_duration_unit(std::string_view lower) {
  static const std::set<std::string, std::less<>> units = {
      "day", "days", "week", "weeks", "month", "months", "hours", "consecutive"};
  return units.count(lower) > 0;
}

}  // namespace detail

/// Unigrams ("w="), cue-lexicon hits ("CUE=") and protocol patterns
/// (HAS_DOSE, HAS_FREQ, HAS_DURATION, HAS_RATIO).
inline FeatureVector featurize_sentence(const std::vector<Token>& tokens,
                                        const std::set<std::string>& cues = default_design_cues()) {
  using namespace detail;
  FeatureVector fv;
  std::vector<std::string> lower;
  lower.reserve(tokens.size());
  for (const auto& t : tokens) lower.push_back(unicode::lower_utf8(t.surface));

  bool dose = false, freq = false, duration = false, ratio = false;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    const auto& w = lower[i];
    ++fv["w=" + w];
    if (cues.count(w)) ++fv["CUE=" + w];
    if (is_ratio_token(w)) {
      ++fv["CUE=ratio"];
      ratio = true;
    }
    const std::string* next = i + 1 < lower.size() ? &lower[i + 1] : nullptr;
    if (is_fused_dose(w) || (is_number_token(w) && next && is_dose_unit(*next))) dose = true;
    if (is_frequency_word(w)) freq = true;
    if ((w == "a" || w == "per" || w == "each") && next && *next == "day" && i > 0 &&
        (lower[i - 1] == "times" || lower[i - 1] == "once" || lower[i - 1] == "twice"))
      freq = true;
    if (w == "every" && next && is_count_word(*next)) freq = true;
    if (w == "for" && next && is_count_word(*next) && i + 2 < lower.size() &&
        is_duration_unit(lower[i + 2]))
      duration = true;
  }
  if (dose) fv["HAS_DOSE"] = 1;
  if (freq) fv["HAS_FREQ"] = 1;
  if (duration) fv["HAS_DURATION"] = 1;
  if (ratio) fv["HAS_RATIO"] = 1;
  return fv;
}

inline FeatureVector featurize_sentence(const Sentence& s,
                                        const std::set<std::string>& cues = default_design_cues()) {
  return featurize_sentence(s.tokens, cues);
}

struct NBModel {
  double smoothing_alpha = 1.0;
  /// Indexed by SentenceLabel.
  std::array<double, 2> class_log_prior{};
  /// feature -> per-label log likelihood; the key set is the vocabulary.
  std::map<std::string, std::array<double, 2>> feature_log_likelihood;

  bool operator==(const NBModel&) const = default;
};

using LabeledFeatures = std::pair<FeatureVector, SentenceLabel>;

/// Multinomial NB with additive smoothing. Parameters depend only on the
/// aggregated counts, so training order is irrelevant.
inline NBModel train_nb(const std::vector<LabeledFeatures>& labeled, double alpha = 1.0) {
  if (!(alpha > 0.0)) throw Error("smoothing alpha must be positive");
  std::array<long long, 2> docs{};
  std::array<long long, 2> totals{};
  std::map<std::string, std::array<long long, 2>> counts;
  for (const auto& [fv, label] : labeled) {
    auto c = static_cast<std::size_t>(label);
    ++docs[c];
    for (const auto& [f, n] : fv) {
      counts[f][c] += n;
      totals[c] += n;
    }
  }
  if (docs[0] == 0 || docs[1] == 0) throw Error("degenerate label set");

  NBModel m;
  m.smoothing_alpha = alpha;
  const double n_docs = static_cast<double>(docs[0] + docs[1]);
  const double v = static_cast<double>(counts.size());
  for (std::size_t c = 0; c < 2; ++c) {
    m.class_log_prior[c] = std::log(static_cast<double>(docs[c]) / n_docs);
  }
  for (const auto& [f, per] : counts) {
    auto& ll = m.feature_log_likelihood[f];
    for (std::size_t c = 0; c < 2; ++c)
      ll[c] = std::log((static_cast<double>(per[c]) + alpha) /
                       (static_cast<double>(totals[c]) + alpha * v));
  }
  return m;
}

struct Classification {
  SentenceLabel label = SentenceLabel::NonDesign;
  /// Posterior of the design label.
  double design_posterior = 0.0;

  double posterior() const {
    return label == SentenceLabel::Design ? design_posterior : 1.0 - design_posterior;
  }
};

/// Features outside the vocabulary are ignored. Exact score ties go to
/// non-design.
inline Classification classify(const NBModel& m, const FeatureVector& fv) {
  std::array<double, 2> score = m.class_log_prior;
  for (const auto& [f, n] : fv) {
    auto it = m.feature_log_likelihood.find(f);
    if (it == m.feature_log_likelihood.end()) continue;
    for (std::size_t c = 0; c < 2; ++c) score[c] += n * it->second[c];
  }
  // Two-class softmax, written to stay finite for large score gaps.
  double diff = score[0] - score[1];
  double p_design = 1.0 / (1.0 + std::exp(diff));
  Classification out;
  out.design_posterior = p_design;
  out.label = score[1] > score[0] ? SentenceLabel::Design : SentenceLabel::NonDesign;
  return out;
}

inline Classification classify(const NBModel& m, const Sentence& s,
                               const std::set<std::string>& cues = default_design_cues()) {
  return classify(m, featurize_sentence(s, cues));
}

struct DesignSelection {
  int index = 0;
  double posterior = 0.0;
};

/// Highest design posterior among design-classified sentences; earliest
/// index wins ties.
inline std::optional<DesignSelection> select_design_sentence(
    const NBModel& m, const std::vector<Sentence>& sentences,
    const std::set<std::string>& cues = default_design_cues()) {
  std::optional<DesignSelection> best;
  for (const auto& s : sentences) {
    auto c = classify(m, s, cues);
    if (c.label != SentenceLabel::Design) continue;
    if (!best || c.design_posterior > best->posterior) best = DesignSelection{s.index, c.design_posterior};
  }
  return best;
}

/// One labeled example per sentence of an annotated document.
inline std::vector<LabeledFeatures> design_examples(
    const AnnotatedDocument& doc, const std::vector<std::string>& abbreviations = default_abbreviations(),
    const std::set<std::string>& cues = default_design_cues()) {
  auto sentences = split_sentences(normalize(doc.record.body), abbreviations);
  std::vector<LabeledFeatures> out;
  for (const auto& s : sentences) {
    auto label = doc.design_sentence_index && *doc.design_sentence_index == s.index
                     ? SentenceLabel::Design
                     : SentenceLabel::NonDesign;
    out.emplace_back(featurize_sentence(s, cues), label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const NBModel& m) {
  using nlohmann::json;
  json vocab = json::array();
  json design = json::object();
  json non_design = json::object();
  for (const auto& [f, ll] : m.feature_log_likelihood) {
    vocab.push_back(f);
    design[f] = ll[1];
    non_design[f] = ll[0];
  }
  return json{{"alpha", m.smoothing_alpha},
              {"priors", {{"design", m.class_log_prior[1]}, {"non_design", m.class_log_prior[0]}}},
              {"vocabulary", vocab},
              {"log_likelihoods", {{"design", design}, {"non_design", non_design}}}};
}

inline NBModel nb_model_from_json(const nlohmann::json& j) {
  NBModel m;
  try {
    m.smoothing_alpha = j.at("alpha").get<double>();
    m.class_log_prior[1] = j.at("priors").at("design").get<double>();
    m.class_log_prior[0] = j.at("priors").at("non_design").get<double>();
    const auto& design = j.at("log_likelihoods").at("design");
    const auto& non_design = j.at("log_likelihoods").at("non_design");
    for (const auto& f : j.at("vocabulary")) {
      auto key = f.get<std::string>();
      m.feature_log_likelihood[key] = {non_design.at(key).get<double>(), design.at(key).get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed classifier model: ") + e.what());
  }
  if (!(m.smoothing_alpha > 0.0)) throw Error("malformed classifier model: alpha must be positive");
  return m;
}

}  // namespace icoe
