#include <gtest/gtest.h>

#include <random>
#include <set>

#include "icoe/evaluation.hpp"
#include "support.hpp"

using namespace icoe;
using icoe::test::brute_force_prf;

namespace {

Entity ent(EntityKind kind, std::size_t start, std::size_t end) {
  Entity e;
  e.kind = kind;
  e.start = start;
  e.end = end;
  return e;
}

std::vector<Entity> random_entities(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 6), kind(0, 3), start(0, 30), length(1, 6);
  std::vector<Entity> out;
  for (int i = count(rng); i > 0; --i) {
    auto s = static_cast<std::size_t>(start(rng));
    out.push_back(ent(kAllKinds[kind(rng)], s, s + static_cast<std::size_t>(length(rng))));
  }
  return out;
}

std::vector<Entity> of_kind(const std::vector<Entity>& es, EntityKind k) {
  std::vector<Entity> out;
  for (const auto& e : es)
    if (e.kind == k) out.push_back(e);
  return out;
}

void expect_same(const PRF& a, const PRF& b) {
  EXPECT_EQ(a.tp, b.tp);
  EXPECT_EQ(a.fp, b.fp);
  EXPECT_EQ(a.fn, b.fn);
  EXPECT_EQ(a.predicted_matched, b.predicted_matched);
  EXPECT_EQ(a.precision, b.precision);
  EXPECT_EQ(a.recall, b.recall);
  EXPECT_EQ(a.f1, b.f1);
}

std::vector<std::string> ids_of(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("D" + std::to_string(i));
  return ids;
}

// Documents whose entities follow one rigid frame, so every split is learnable.
std::vector<AnnotatedDocument> separable_corpus(int n) {
  static const std::vector<std::string> drugs = {"alphavir", "betamab", "gammacin", "deltazole", "epsilonib",
                                                 "zetastat", "etaprine", "thetavir", "iotamab", "kappacin"};
  static const std::vector<std::string> outcomes = {"Mortality", "Readmission", "Ventilation", "Relapse",
                                                    "Hospitalization"};
  std::vector<AnnotatedDocument> docs;
  for (int i = 0; i < n; ++i) {
    const auto& drug = drugs[static_cast<std::size_t>(i) % drugs.size()];
    const auto& outcome = outcomes[static_cast<std::size_t>(i) % outcomes.size()];
    std::string body = "Background: treatment options remain limited. Methods: Patients were randomized to " + drug +
                       " or placebo. Results: " + outcome + " was lower (OR, 0.50; 95% CI, 0.30 to 0.80; P = 0.01).";
    auto doc = test::make_document("S" + std::to_string(i), body,
                                      {test::span_of(EntityKind::I, body, drug),
                                       test::span_of(EntityKind::C, body, "placebo"),
                                       test::span_of(EntityKind::O, body, outcome),
                                       test::span_of(EntityKind::EDesc, body, "lower")},
                                      1);
    docs.push_back(doc);
  }
  return docs;
}

ICOERecord record_with_pvalues(const std::vector<PValueConstraint>& ps) {
  ICOERecord r;
  r.id = "R";
  for (const auto& p : ps) {
    OutcomeEffectPair pair;
    pair.effect.value = p;
    r.pairs.push_back(pair);
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scoring

TEST(EntityPrf, AgreesWithBruteForceOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    auto gold = random_entities(rng);
    auto predicted = random_entities(rng);
    for (auto mode : {MatchMode::Exact, MatchMode::Overlap}) {
      auto report = entity_prf(gold, predicted, mode);
      expect_same(report.overall, brute_force_prf(gold, predicted, mode));
      for (auto k : kAllKinds) {
        auto g = of_kind(gold, k), p = of_kind(predicted, k);
        if (g.empty() && p.empty()) {
          EXPECT_EQ(report.per_kind.count(k), 0u);
          continue;
        }
        expect_same(report.per_kind.at(k), brute_force_prf(g, p, mode));
      }
    }
  }
}

TEST(EntityPrf, TwoOfThreeWithOneSpurious) {
  std::vector<Entity> gold = {ent(EntityKind::O, 0, 5), ent(EntityKind::O, 10, 15), ent(EntityKind::O, 20, 25)};
  std::vector<Entity> predicted = {ent(EntityKind::O, 0, 5), ent(EntityKind::O, 10, 15), ent(EntityKind::O, 30, 35)};
  auto r = entity_prf(gold, predicted).per_kind.at(EntityKind::O);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(EntityPrf, OverlapCreditsPartialMatches) {
  std::vector<Entity> gold = {ent(EntityKind::I, 0, 10)};
  std::vector<Entity> predicted = {ent(EntityKind::I, 2, 4), ent(EntityKind::I, 5, 12)};
  EXPECT_EQ(entity_prf(gold, predicted, MatchMode::Exact).overall.f1, 0.0);
  auto r = entity_prf(gold, predicted, MatchMode::Overlap).overall;
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  // Kinds never match across each other.
  EXPECT_EQ(entity_prf(gold, {ent(EntityKind::C, 0, 10)}, MatchMode::Overlap).overall.f1, 0.0);
}

TEST(EntityPrf, IdentityAndEmpty) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    auto gold = random_entities(rng);
    if (gold.empty()) continue;
    auto r = entity_prf(gold, gold).overall;
    EXPECT_EQ(r.f1, 1.0);
    auto none = entity_prf(gold, {}).overall;
    EXPECT_EQ(none.precision, 0.0);
    EXPECT_EQ(none.recall, 0.0);
    EXPECT_EQ(none.f1, 0.0);
  }
  EXPECT_TRUE(entity_prf({}, {}).per_kind.empty());
}

TEST(MatchModeNames, RoundTrip) {
  for (auto m : {MatchMode::Exact, MatchMode::Overlap}) EXPECT_EQ(parse_match_mode(to_string(m)), m);
  EXPECT_THROW(parse_match_mode("fuzzy"), Error);
}

// ---------------------------------------------------------------------------
// Folds

TEST(KFold, SizesDifferByAtMostOne) {
  auto even = kfold_split(ids_of(10), 5, 42);
  for (int f = 0; f < 5; ++f) EXPECT_EQ(even.members(f).size(), 2u);
  auto odd = kfold_split(ids_of(11), 5, 42);
  std::vector<std::size_t> sizes;
  for (int f = 0; f < 5; ++f) sizes.push_back(odd.members(f).size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(KFold, DeterministicPartition) {
  auto ids = ids_of(23);
  auto a = kfold_split(ids, 4, 7);
  EXPECT_EQ(a.fold, kfold_split(ids, 4, 7).fold);
  std::multiset<std::size_t> seen;
  for (int f = 0; f < 4; ++f)
    for (auto i : a.members(f)) seen.insert(i);
  EXPECT_EQ(seen.size(), ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(seen.count(i), 1u);
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 5 && !differs; ++seed) differs = kfold_split(ids, 4, seed).fold != a.fold;
  EXPECT_TRUE(differs);
}

TEST(KFold, Errors) {
  EXPECT_THROW(kfold_split(ids_of(10), 1, 0), Error);
  EXPECT_THROW(kfold_split(ids_of(3), 5, 0), Error);
  EXPECT_NO_THROW(kfold_split(ids_of(5), 5, 0));
}

// ---------------------------------------------------------------------------
// Cross-validation

TEST(CrossValidate, DeterministicAndEveryDocumentTestedOnce) {
  const auto& docs = test::gold_documents();
  TrainerConfig cfg;
  auto a = cross_validate(docs, 5, cfg);
  auto b = cross_validate(docs, 5, cfg);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  std::multiset<std::string> tested;
  for (const auto& f : a.folds) tested.insert(f.test_ids.begin(), f.test_ids.end());
  EXPECT_EQ(tested.size(), docs.size());
  for (const auto& d : docs) EXPECT_EQ(tested.count(d.record.id), 1u);
}

TEST(CrossValidate, FoldScoresMatchOracle) {
  const auto& docs = test::gold_documents();
  TrainerConfig cfg;
  auto report = cross_validate(docs, 5, cfg);
  std::vector<std::string> ids;
  for (const auto& d : docs) ids.push_back(d.record.id);
  auto folds = kfold_split(ids, 5, cfg.seed);
  for (const auto& fr : report.folds) {
    std::vector<AnnotatedDocument> train;
    std::vector<const AnnotatedDocument*> test;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (folds.fold[i] == fr.fold) test.push_back(&docs[i]);
      else train.push_back(docs[i]);
    }
    auto models = train_models(train, cfg, false).models;
    // Oracle: pool per-document brute-force counts for each kind.
    for (auto k : kAllKinds) {
      PRF pooled;
      long long gold_total = 0;
      for (const auto* d : test) {
        auto g = of_kind(gold_entities(*d), k);
        auto p = of_kind(predicted_entities(d->record, models, PipelineOptions{}), k);
        gold_total += static_cast<long long>(g.size());
        pooled += brute_force_prf(g, p, cfg.match);
      }
      if (gold_total == 0) {
        EXPECT_FALSE(fr.per_kind.at(k).has_value());
        continue;
      }
      ASSERT_TRUE(fr.per_kind.at(k).has_value());
      expect_same(*fr.per_kind.at(k), pooled);
    }
  }
}

TEST(CrossValidate, PinnedFixtureScores) {
  auto pinned = nlohmann::json::parse(test::read_file(test::fixture("expected_cv.json")));
  auto got = to_json(cross_validate(test::gold_documents(), 5, TrainerConfig{}));
  EXPECT_EQ(got["per_fold"], pinned["per_fold"]);
  EXPECT_EQ(got["best"], pinned["best"]);
  EXPECT_EQ(got["mean"], pinned["mean"]);
}

TEST(CrossValidate, SeparableCorpusIsPerfect) {
  auto docs = separable_corpus(10);
  auto report = cross_validate(docs, 5, TrainerConfig{});
  for (auto k : kAllKinds) {
    ASSERT_TRUE(report.mean.at(k).has_value()) << to_string(k);
    EXPECT_EQ(report.mean.at(k)->f1, 1.0) << to_string(k);
  }
  for (const auto& f : report.folds) EXPECT_EQ(f.design_accuracy, 1.0);
}

TEST(CrossValidate, LeaveOneOut) {
  auto docs = separable_corpus(6);
  auto report = cross_validate(docs, 6, TrainerConfig{});
  ASSERT_EQ(report.folds.size(), 6u);
  for (const auto& f : report.folds) EXPECT_EQ(f.test_ids.size(), 1u);
}

TEST(CrossValidate, BestFoldTieGoesToEarliest) {
  auto docs = separable_corpus(10);
  auto report = cross_validate(docs, 5, TrainerConfig{});
  for (auto k : kAllKinds) {
    ASSERT_TRUE(report.best.at(k).has_value());
    EXPECT_EQ(report.best.at(k)->fold, 0);
  }
}

TEST(CrossValidate, Errors) {
  EXPECT_THROW(cross_validate({}, 5, TrainerConfig{}), Error);
  EXPECT_THROW(cross_validate(separable_corpus(3), 5, TrainerConfig{}), Error);
}

TEST(TrainModels, StrictModeFailsOnUnlearnableSet) {
  auto docs = separable_corpus(2);
  for (auto& d : docs) d.spans.clear();
  EXPECT_THROW(train_models(docs, TrainerConfig{}), Error);
  auto lenient = train_models(docs, TrainerConfig{}, false);
  EXPECT_FALSE(lenient.ic_trained);
  EXPECT_FALSE(lenient.oe_trained);
  EXPECT_TRUE(predicted_entities(docs[0].record, lenient.models, PipelineOptions{}).empty());
}

// ---------------------------------------------------------------------------
// Operator census

TEST(PolarityTable, TotalsPercentages) {
  std::vector<PValueConstraint> ps;
  for (int i = 0; i < 642; ++i) ps.push_back({PValueOp::Eq, 0.01, 0, 0});
  for (int i = 0; i < 393; ++i) ps.push_back({PValueOp::Eq, 0.5, 0, 0});
  auto stats = polarity_table({record_with_pvalues(ps)}, PolarityMode::PaperCompat);
  EXPECT_EQ(stats.totals.positive, 642);
  EXPECT_EQ(stats.totals.negative, 393);
  EXPECT_EQ(format_percent(stats.totals.positive, stats.totals.total), "62.0%");
  EXPECT_EQ(format_percent(stats.totals.negative, stats.totals.total), "38.0%");
  auto table = render_table(stats);
  EXPECT_NE(table.find("62.0%"), std::string::npos);
  EXPECT_NE(table.find("38.0%"), std::string::npos);
}

TEST(PolarityTable, FormatPercent) {
  EXPECT_EQ(format_percent(0, 0), "\xE2\x80\x94");
  EXPECT_EQ(format_percent(1, 3), "33.3%");
  EXPECT_EQ(format_percent(2, 3), "66.7%");
  EXPECT_EQ(format_percent(1, 8), "12.5%");  // half up
  EXPECT_EQ(format_percent(5, 5), "100.0%");
  EXPECT_EQ(format_percent(0, 7), "0.0%");
}

TEST(PolarityTable, EmptyInput) {
  auto stats = polarity_table({}, PolarityMode::Strict);
  EXPECT_EQ(stats.totals.total, 0);
  EXPECT_NE(render_table(stats).find("\xE2\x80\x94"), std::string::npos);
}

TEST(PolarityTable, GreaterThanRowShape) {
  std::vector<PValueConstraint> ps;
  for (int i = 0; i < 31; ++i) ps.push_back({PValueOp::Gt, 0.05 + 0.01 * i, 0, 0});
  for (int i = 0; i < 8; ++i) ps.push_back({PValueOp::Le, 0.05, 0, 0});
  auto stats = polarity_table({record_with_pvalues(ps)}, PolarityMode::PaperCompat);
  for (const auto& row : stats.rows) {
    if (row.op == PValueOp::Gt) {
      EXPECT_EQ(row.positive, 0);
      EXPECT_EQ(row.negative, 31);
    }
    if (row.op == PValueOp::Le) {
      EXPECT_EQ(row.positive, 8);
      EXPECT_EQ(row.negative, 0);
    }
  }
}

TEST(PolarityTable, RowsReconcileWithTotals) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> op(0, 4);
  std::uniform_real_distribution<double> v(0.0, 1.0);
  std::vector<PValueConstraint> ps;
  for (int i = 0; i < 400; ++i) ps.push_back({kAllOps[op(rng)], v(rng), 0, 0});
  std::vector<ICOERecord> records = {record_with_pvalues(ps)};
  OutcomeEffectPair unscored;
  unscored.effect.value = DescriptionEffect{};
  records[0].pairs.push_back(unscored);
  for (auto mode : {PolarityMode::Strict, PolarityMode::PaperCompat}) {
    auto stats = polarity_table(records, mode);
    ASSERT_EQ(stats.rows.size(), 5u);
    long long sum = 0;
    for (const auto& row : stats.rows) {
      EXPECT_EQ(row.positive + row.negative + row.indeterminate, row.total);
      sum += row.total;
    }
    EXPECT_EQ(sum, 400);
    EXPECT_EQ(stats.totals.total, 400);
    if (mode == PolarityMode::PaperCompat) {
      EXPECT_EQ(stats.totals.indeterminate, 0);
    }
  }
}

TEST(PolarityTable, CompatRenderHasNoTrailingSpaces) {
  auto stats = polarity_table({record_with_pvalues({{PValueOp::Eq, 0.01, 0, 0}})}, PolarityMode::PaperCompat);
  std::istringstream lines(render_table(stats));
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) {
      EXPECT_NE(line.back(), ' ') << line;
    }
}

// ---------------------------------------------------------------------------
// Annotation counts

TEST(AnnotationCounts, FixtureTotals) {
  auto c = count_annotations(test::gold_documents());
  EXPECT_EQ(c.abstracts, 14);
  EXPECT_EQ(c.design_sentences, 13);
  EXPECT_EQ(c.ic_entities, 26);
  EXPECT_EQ(c.outcome_entities, 46);
  EXPECT_EQ(c.description_entities, 28);
  auto table = render_counts({{"Gold standards", c}});
  EXPECT_NE(table.find("RCT abstracts"), std::string::npos);
  EXPECT_NE(table.find("Labeled effect-description entities"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Self-training

class SelfTraining : public ::testing::Test {
 protected:
  void SetUp() override {
    unlabeled = load_corpus(test::fixture("unlabeled_corpus.jsonl"));
    proposals = selftrain_propose(test::fixture_models(), unlabeled);
  }
  std::vector<AbstractRecord> unlabeled;
  ProposedAnnotations proposals;
};

TEST_F(SelfTraining, ProposalsArePendingAndWithinBodies) {
  ASSERT_EQ(proposals.size(), unlabeled.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    EXPECT_EQ(proposals[i].id, unlabeled[i].id);
    auto length = unicode::decode(unlabeled[i].body).size();
    for (const auto& s : proposals[i].spans) {
      EXPECT_EQ(s.status, ReviewStatus::Pending);
      EXPECT_LT(s.span.start, s.span.end);
      EXPECT_LE(s.span.end, length);
    }
  }
}

TEST_F(SelfTraining, OnlyAcceptedSpansReachTraining) {
  auto it = std::max_element(proposals.begin(), proposals.end(), [](const auto& a, const auto& b) {
    return a.spans.size() < b.spans.size();
  });
  ASSERT_GE(it->spans.size(), 3u);
  ProposedDocument reviewed = *it;
  for (auto& s : reviewed.spans) s.status = ReviewStatus::Rejected;
  reviewed.spans[0].status = ReviewStatus::Accepted;
  reviewed.spans[1].status = ReviewStatus::Accepted;
  ProposedAnnotations review = {reviewed};
  EXPECT_NO_THROW(check_review(proposals, review));
  auto accepted = accepted_annotations(review, unlabeled);
  ASSERT_EQ(accepted.size(), 1u);
  EXPECT_EQ(accepted[0].spans, (std::vector<AnnotatedSpan>{reviewed.spans[0].span, reviewed.spans[1].span}));
  EXPECT_FALSE(accepted[0].design_sentence_index.has_value());

  auto merged = merge_training_sets(test::gold_documents(), accepted);
  EXPECT_EQ(merged.documents.size(), test::gold_documents().size() + 1);
  EXPECT_EQ(merged.from(DataSource::SemiAutomatic).size(), 1u);
  EXPECT_EQ(merged.from(DataSource::Gold).size(), test::gold_documents().size());
}

TEST_F(SelfTraining, NothingAcceptedLeavesDocumentOut) {
  EXPECT_TRUE(accepted_annotations(proposals, unlabeled).empty());
}

TEST_F(SelfTraining, ReviewMustMatchProposals) {
  auto bad = proposals;
  bad[0].spans.push_back({{EntityKind::O, 0, 1}, 0.0, ReviewStatus::Accepted});
  EXPECT_THROW(check_review(proposals, bad), Error);
  auto unknown = proposals;
  unknown[0].id = "nope";
  EXPECT_THROW(check_review(proposals, unknown), Error);
  auto moved = proposals;
  moved[0].design_sentence_index = moved[0].design_sentence_index ? std::nullopt : std::optional<int>(0);
  EXPECT_THROW(check_review(proposals, moved), Error);
}

TEST_F(SelfTraining, MergeRejectsIdCollision) {
  auto gold = test::gold_documents();
  EXPECT_THROW(merge_training_sets(gold, {gold[0]}), Error);
}

TEST_F(SelfTraining, ProposalJsonRoundTrip) {
  std::ostringstream out;
  write_proposals(out, proposals);
  auto dir = test::scratch_dir("proposals");
  test::write_file((dir / "p.jsonl").string(), out.str());
  auto back = load_proposals((dir / "p.jsonl").string());
  ASSERT_EQ(back.size(), proposals.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(proposals[i]));
}
