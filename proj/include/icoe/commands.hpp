#pragma once

// The train / extract / eval / stats / selftrain workflows behind the
// command-line tool. Each command returns a process exit code and writes
// only to the streams it is given, so tests can drive them directly.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "icoe/assembly.hpp"
#include "icoe/corpus.hpp"
#include "icoe/design_classifier.hpp"
#include "icoe/entity_tagger.hpp"
#include "icoe/error.hpp"
#include "icoe/evaluation.hpp"

namespace icoe {

struct RunConfig {
  std::string corpus;
  std::string annotations;
  std::string models;
  std::string out;
  /// Abstracts to extract from, or extracted records to tally.
  std::string input;
  std::string unlabeled;
  std::string review;
  /// Empty: the built-in lists.
  std::string abbreviations;
  std::string cues;
  double threshold = kDefaultThreshold;
  PolarityMode mode = PolarityMode::Strict;
  int k = 5;
  std::uint64_t seed = 42;
  int epochs = 10;
  double alpha = 1.0;
  MatchMode match = MatchMode::Exact;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitMissingInput = 2;

/// A required input file or directory is absent.
class MissingInput : public Error {
 public:
  using Error::Error;
};

inline void validate(const RunConfig& c) {
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw Error("threshold must lie in (0, 1)");
  if (c.k < 2) throw Error("k must be at least 2");
  if (c.epochs < 1) throw Error("epochs must be at least 1");
  if (!(c.alpha > 0.0)) throw Error("alpha must be positive");
}

namespace detail {

inline const std::string& require_file(const std::string& path, const char* what) {
  if (path.empty()) throw MissingInput(std::string(what) + " not given");
  if (!std::filesystem::is_regular_file(path)) throw MissingInput(std::string(what) + " not found: " + path);
  return path;
}

inline std::vector<AnnotatedDocument> load_gold(const RunConfig& c) {
  auto corpus = load_corpus(require_file(c.corpus, "corpus"));
  return load_annotations(require_file(c.annotations, "annotations"), corpus);
}

inline std::vector<std::string> abbreviations(const RunConfig& c) {
  return c.abbreviations.empty() ? default_abbreviations() : load_abbreviations(c.abbreviations);
}

inline std::set<std::string> cues(const RunConfig& c) {
  return c.cues.empty() ? default_design_cues() : load_cue_lexicon(c.cues);
}

inline TrainerConfig trainer_config(const RunConfig& c) {
  TrainerConfig t;
  t.alpha = c.alpha;
  t.epochs = c.epochs;
  t.seed = c.seed;
  t.match = c.match;
  t.abbreviations = abbreviations(c);
  t.cues = cues(c);
  return t;
}

inline PipelineOptions pipeline_options(const RunConfig& c) {
  PipelineOptions o;
  o.threshold = c.threshold;
  o.mode = c.mode;
  o.abbreviations = abbreviations(c);
  o.cues = cues(c);
  return o;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

// Runs `fn` with a stream bound to `path`, or to `fallback` if empty.
template <typename Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn&& fn) {
  if (path.empty()) {
    fn(fallback);
    return;
  }
  auto out = open_output(path);
  fn(out);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("model file not found: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace detail

inline constexpr const char* kClassifierFile = "classifier.json";
inline constexpr const char* kTaggerICFile = "tagger_ic.json";
inline constexpr const char* kTaggerOEFile = "tagger_oe.json";

inline void save_models(const Models& m, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const nlohmann::json& j) {
    auto out = detail::open_output((std::filesystem::path(dir) / name).string());
    out << j.dump() << '\n';
  };
  write(kClassifierFile, to_json(m.classifier));
  write(kTaggerICFile, to_json(m.intervention_comparison));
  write(kTaggerOEFile, to_json(m.outcome_effect));
}

inline Models load_models(const std::string& dir) {
  if (dir.empty()) throw MissingInput("models directory not given");
  if (!std::filesystem::is_directory(dir)) throw MissingInput("models not found: " + dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  Models m;
  m.classifier = nb_model_from_json(detail::read_json_file(path(kClassifierFile)));
  m.intervention_comparison = tagger_model_from_json(detail::read_json_file(path(kTaggerICFile)));
  m.outcome_effect = tagger_model_from_json(detail::read_json_file(path(kTaggerOEFile)));
  return m;
}

/// Assembles every record; work is spread over threads, output keeps input
/// order.
inline std::vector<ICOERecord> extract_all(const std::vector<AbstractRecord>& corpus, const Models& models,
                                           const PipelineOptions& options) {
  std::vector<ICOERecord> out(corpus.size());
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(corpus.size(), 1));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < corpus.size(); i += workers) out[i] = assemble(corpus[i], models, options);
    }));
  for (auto& j : jobs) j.get();
  return out;
}

/// Runs a command body, mapping failures to exit codes and a message on
/// `err`.
template <typename Fn>
int run_command(std::ostream& err, Fn&& body) {
  try {
    body();
    return kExitOk;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

/// Trains on the full annotated corpus and writes the model directory.
inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    validate(c);
    if (c.models.empty()) throw Error("--models directory not given");
    auto gold = detail::load_gold(c);
    auto trained = train_models(gold, detail::trainer_config(c));
    save_models(trained.models, c.models);
    out << render_counts({{"Gold standards", count_annotations(gold)}});
    out << "models written to " << c.models << '\n';
  });
}

/// One ICOERecord line per input abstract.
inline int cmd_extract(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    validate(c);
    auto models = load_models(c.models);
    const auto& path = c.input.empty() ? c.corpus : c.input;
    auto corpus = load_corpus(detail::require_file(path, "input corpus"));
    auto records = extract_all(corpus, models, detail::pipeline_options(c));
    for (const auto& r : records)
      for (const auto& w : r.warnings) err << "warning: " << r.id << ": " << w << '\n';
    detail::with_output(c.out, out, [&](std::ostream& o) {
      for (const auto& r : records) o << to_json(r).dump() << '\n';
    });
  });
}

/// Cross-validation. The JSON report goes to --out (or `out`); the table
/// goes to `out` when the report went to a file, else to `err`.
inline int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    validate(c);
    auto gold = detail::load_gold(c);
    auto report = cross_validate(gold, c.k, detail::trainer_config(c));
    detail::with_output(c.out, out, [&](std::ostream& o) { o << to_json(report).dump(2) << '\n'; });
    (c.out.empty() ? err : out) << render_table(report);
  });
}

inline std::vector<ICOERecord> load_records(const std::string& path) {
  std::vector<ICOERecord> out;
  detail::for_each_line(path, [&](const std::string& line, std::size_t number) {
    auto j = detail::parse_line(line, number, path);
    try {
      out.push_back(icoe_record_from_json(j));
    } catch (const Error& e) {
      throw Error(path + ": line " + std::to_string(number) + ": " + e.what());
    }
  });
  return out;
}

/// Operator census over extracted records in both polarity modes.
inline int cmd_stats(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    validate(c);
    auto records = load_records(detail::require_file(c.input, "records"));
    auto strict = polarity_table(records, PolarityMode::Strict, c.threshold);
    auto compat = polarity_table(records, PolarityMode::PaperCompat, c.threshold);
    out << render_table(strict) << '\n' << render_table(compat);
    if (!c.out.empty()) {
      auto o = detail::open_output(c.out);
      o << nlohmann::json{{"strict", to_json(strict)}, {"compat", to_json(compat)}}.dump(2) << '\n';
    }
  });
}

/// Without --review: proposals for the unlabeled corpus. With --review:
/// accepted spans merged with gold, second-round models written to --out.
inline int cmd_selftrain(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    validate(c);
    auto models = load_models(c.models);
    auto unlabeled = load_corpus(detail::require_file(c.unlabeled, "unlabeled corpus"));
    auto proposals = selftrain_propose(models, unlabeled, detail::pipeline_options(c));
    if (c.review.empty()) {
      detail::with_output(c.out, out, [&](std::ostream& o) { write_proposals(o, proposals); });
      return;
    }
    if (c.out.empty()) throw Error("--out directory for second-round models not given");
    auto review = load_proposals(detail::require_file(c.review, "review file"));
    check_review(proposals, review);
    auto accepted = accepted_annotations(review, unlabeled);
    auto merged = merge_training_sets(detail::load_gold(c), accepted);
    auto trained = train_models(merged.documents, detail::trainer_config(c));
    save_models(trained.models, c.out);
    out << render_counts({{"Gold standards", count_annotations(merged.from(DataSource::Gold))},
                          {"Semi-automatic", count_annotations(merged.from(DataSource::SemiAutomatic))},
                          {"Combined", count_annotations(merged.documents)}});
    out << "second-round models written to " << c.out << '\n';
  });
}

}  // namespace icoe
