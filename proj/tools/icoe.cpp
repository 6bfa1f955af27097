// icoe: train / extract / eval / stats / selftrain over JSONL files.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "icoe/commands.hpp"

namespace {

struct Flags {
  icoe::RunConfig config;
  std::string mode = "strict";
  std::string match = "exact";
};

void add_common(CLI::App& cmd, Flags& f) {
  auto& c = f.config;
  cmd.add_option("--corpus", c.corpus, "Abstract corpus (JSONL)");
  cmd.add_option("--annotations", c.annotations, "Gold annotations (JSONL)");
  cmd.add_option("--models", c.models, "Model directory");
  cmd.add_option("--out", c.out, "Output file or directory");
  cmd.add_option("--input", c.input, "Input abstracts (extract) or records (stats)");
  cmd.add_option("--unlabeled", c.unlabeled, "Unlabeled corpus for self-training");
  cmd.add_option("--review", c.review, "Reviewed proposals (JSONL)");
  cmd.add_option("--abbreviations", c.abbreviations, "Abbreviation list (default: built-in)");
  cmd.add_option("--cues", c.cues, "Design cue lexicon (default: built-in)");
  cmd.add_option("--seed", c.seed, "Random seed");
  cmd.add_option("--threshold", c.threshold, "P-value threshold");
  cmd.add_option("--mode", f.mode, "Polarity mode")->check(CLI::IsMember({"strict", "compat", "paper-compat"}));
  cmd.add_option("--k", c.k, "Cross-validation folds");
  cmd.add_option("--epochs", c.epochs, "Perceptron epochs");
  cmd.add_option("--alpha", c.alpha, "Naive Bayes smoothing");
  cmd.add_option("--match", f.match, "Span matching for evaluation")->check(CLI::IsMember({"exact", "overlap"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICOE extraction from randomized controlled trial abstracts"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key-value configuration file; flags override it");

  Flags flags;
  using Command = int (*)(const icoe::RunConfig&, std::ostream&, std::ostream&);
  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"train", {"Train all models on the annotated corpus", icoe::cmd_train}},
      {"extract", {"Extract ICOE records as JSONL", icoe::cmd_extract}},
      {"eval", {"Cross-validate the extraction models", icoe::cmd_eval}},
      {"stats", {"Tally polarity by p-value operator", icoe::cmd_stats}},
      {"selftrain", {"Propose labels, or retrain on reviewed proposals", icoe::cmd_selftrain}},
  };
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    add_common(*sub, flags);
    sub->configurable();
  }

  CLI11_PARSE(app, argc, argv);

  flags.config.mode = icoe::parse_polarity_mode(flags.mode);
  flags.config.match = icoe::parse_match_mode(flags.match);
  for (const auto& [name, entry] : commands)
    if (app.got_subcommand(name)) return entry.second(flags.config, std::cout, std::cerr);
  return icoe::kExitError;
}
