#include <gtest/gtest.h>

#include <sstream>

#include "icoe/corpus.hpp"
#include "support.hpp"

using namespace icoe;
using icoe::test::make_document;
using icoe::test::scratch_dir;
using icoe::test::span_of;
using icoe::test::write_file;

namespace {

const std::string kDied = "One patient in the favipiravir group and two patients in the CQ group died (p = 1.00).";

std::vector<std::string> invariants(const AnnotatedDocument& doc) {
  std::vector<std::string> out;
  for (const auto& f : validate_annotations(doc)) out.push_back(f.invariant);
  return out;
}

std::string expect_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected an error";
  return {};
}

}  // namespace

TEST(LoadCorpus, FavipiravirRecord) {
  auto dir = scratch_dir("corpus_one");
  write_file(dir / "c.jsonl",
             R"({"id":"34849615","title":"Efficacy of Early Treatment","body":"Background: The role of favipiravir."})"
             "\n");
  auto records = load_corpus((dir / "c.jsonl").string());
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].id, "34849615");
}

TEST(LoadCorpus, EmptyFile) {
  auto dir = scratch_dir("corpus_empty");
  write_file(dir / "c.jsonl", "");
  EXPECT_TRUE(load_corpus((dir / "c.jsonl").string()).empty());
}

TEST(LoadCorpus, DuplicateIdNamesTheId) {
  auto dir = scratch_dir("corpus_dup");
  write_file(dir / "c.jsonl", R"({"id":"X","title":"","body":"a"})" "\n" R"({"id":"X","title":"","body":"b"})" "\n");
  auto what = expect_error([&] { load_corpus((dir / "c.jsonl").string()); });
  EXPECT_NE(what.find("\"X\""), std::string::npos) << what;
}

TEST(LoadCorpus, MalformedLineNamesLineNumber) {
  auto dir = scratch_dir("corpus_bad");
  write_file(dir / "c.jsonl", R"({"id":"A","title":"","body":"a"})" "\n" "{not json\n");
  auto what = expect_error([&] { load_corpus((dir / "c.jsonl").string()); });
  EXPECT_NE(what.find("line 2"), std::string::npos) << what;
  EXPECT_EQ(what.find("line 2: " + (dir / "c.jsonl").string()), std::string::npos) << "prefixed twice: " << what;
}

TEST(LoadCorpus, RejectsExtraOrMissingFields) {
  auto dir = scratch_dir("corpus_fields");
  write_file(dir / "a.jsonl", R"({"id":"A","title":"","body":"a","x":1})" "\n");
  write_file(dir / "b.jsonl", R"({"id":"A","body":"a"})" "\n");
  write_file(dir / "c.jsonl", R"({"id":"","title":"","body":"a"})" "\n");
  write_file(dir / "d.jsonl", R"({"id":"A","title":"","body":""})" "\n");
  for (auto name : {"a.jsonl", "b.jsonl", "c.jsonl", "d.jsonl"})
    EXPECT_THROW(load_corpus((dir / name).string()), Error) << name;
}

TEST(LoadCorpus, RoundTripIdentity) {
  const auto& corpus = test::gold_corpus();
  std::ostringstream out;
  write_corpus(out, corpus);
  auto dir = scratch_dir("corpus_roundtrip");
  write_file(dir / "c.jsonl", out.str());
  auto again = load_corpus((dir / "c.jsonl").string());
  ASSERT_EQ(again.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(again[i].id, corpus[i].id);
    EXPECT_EQ(again[i].title, corpus[i].title);
    EXPECT_EQ(again[i].body, corpus[i].body);
  }
}

TEST(LoadAnnotations, AcceptsDiedOutcome) {
  auto dir = scratch_dir("ann_died");
  write_file(dir / "c.jsonl", nlohmann::json{{"id", "D"}, {"title", ""}, {"body", kDied}}.dump() + "\n");
  auto span = span_of(EntityKind::O, kDied, "died");
  write_file(dir / "a.jsonl",
             annotation_to_json(make_document("D", kDied, {span})).dump() + "\n");
  auto corpus = load_corpus((dir / "c.jsonl").string());
  auto docs = load_annotations((dir / "a.jsonl").string(), corpus);
  ASSERT_EQ(docs.size(), 1u);
  ASSERT_EQ(docs[0].spans.size(), 1u);
  EXPECT_EQ(raw_slice(kDied, docs[0].spans[0].start, docs[0].spans[0].end), "died");
}

TEST(LoadAnnotations, RejectsEmptySpanAndOverlapAndUnknownId) {
  auto dir = scratch_dir("ann_bad");
  write_file(dir / "c.jsonl", nlohmann::json{{"id", "D"}, {"title", ""}, {"body", kDied}}.dump() + "\n");
  auto corpus = load_corpus((dir / "c.jsonl").string());
  auto write_and_load = [&](const std::string& line) {
    write_file(dir / "a.jsonl", line + "\n");
    return load_annotations((dir / "a.jsonl").string(), corpus);
  };
  EXPECT_THROW(write_and_load(R"({"id":"D","spans":[{"kind":"O","start":3,"end":3}],"design_sentence_index":null})"),
               Error);
  EXPECT_THROW(write_and_load(
                   R"({"id":"D","spans":[{"kind":"O","start":0,"end":10},{"kind":"O","start":5,"end":12}],"design_sentence_index":null})"),
               Error);
  EXPECT_THROW(write_and_load(R"({"id":"Q","spans":[],"design_sentence_index":null})"), Error);
  auto what = expect_error([&] {
    write_and_load(R"({"id":"D","spans":[{"kind":"O","start":80,"end":900}],"design_sentence_index":null})");
  });
  EXPECT_NE(what.find("D"), std::string::npos);
  EXPECT_NE(what.find("900"), std::string::npos) << what;
}

TEST(LoadAnnotations, DifferentKindsMayOverlap) {
  auto doc = make_document("D", kDied, {span_of(EntityKind::O, kDied, "died"), span_of(EntityKind::EDesc, kDied, "died")});
  EXPECT_TRUE(validate_annotations(doc).empty());
}

TEST(Validate, FullyValidDocument) {
  auto doc = make_document("D", kDied, {span_of(EntityKind::O, kDied, "died")}, 0);
  EXPECT_TRUE(validate_annotations(doc).empty());
}

TEST(Validate, WhitespaceOnlySpan) {
  auto doc = make_document("D", "a   b", {AnnotatedSpan{EntityKind::O, 1, 4}});
  EXPECT_EQ(invariants(doc), std::vector<std::string>{"whitespace-only span"});
}

TEST(Validate, DesignIndexOutOfRange) {
  auto doc = make_document("D", "First sentence here. Second one.", {}, 5);
  EXPECT_EQ(invariants(doc), std::vector<std::string>{"design sentence index out of range"});
  doc.design_sentence_index = 1;
  EXPECT_TRUE(validate_annotations(doc).empty());
}

TEST(Validate, EveryFixtureDocumentIsValid) {
  for (const auto& doc : test::gold_documents()) EXPECT_TRUE(validate_annotations(doc).empty()) << doc.record.id;
}

TEST(Annotations, RoundTripIdentity) {
  const auto& docs = test::gold_documents();
  std::ostringstream out;
  write_annotations(out, docs);
  auto dir = scratch_dir("ann_roundtrip");
  write_file(dir / "a.jsonl", out.str());
  auto again = load_annotations((dir / "a.jsonl").string(), test::gold_corpus());
  ASSERT_EQ(again.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    EXPECT_EQ(again[i].record.id, docs[i].record.id);
    EXPECT_EQ(again[i].spans, docs[i].spans);
    EXPECT_EQ(again[i].design_sentence_index, docs[i].design_sentence_index);
  }
}

TEST(EntityKinds, ClosedEnumeration) {
  EXPECT_EQ(std::size(kAllKinds), 4u);
  for (auto k : kAllKinds) EXPECT_EQ(parse_entity_kind(to_string(k)), k);
  EXPECT_THROW(parse_entity_kind("P"), Error);
}
