#include <fstream>

#include <gtest/gtest.h>

#include "dialingle/corpus.hpp"
#include "dialingle/error.hpp"
#include "fixtures.hpp"

using namespace dialingle;
using namespace dialingle::testing;

namespace {

class StoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store.register_family(make_registry());
    store.set_divisions("fam", make_divisions());
    ingest_lines(store, "fam",
                 {corpus_line("g1", "Good morning.", {{"guete morge", {"a"}}, {"gueten morgen", {"b"}}}),
                  corpus_line("g2", "Thank you.", {{"merci", {"a", "b"}}}),
                  corpus_line("g3", "See you.", {})});
    store.open_session("s1", "fam");
  }

  ManualClock clock;
  CorpusStore store{clock};
};

}  // namespace

TEST_F(StoreTest, IngestCountsGroups) {
  const auto view = store.snapshot("fam");
  EXPECT_EQ(view->groups.size(), 3u);
  EXPECT_EQ(view->variant_count(), 3u);
  EXPECT_EQ(view->find_group("g2")->variants[0].labels, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(view->find_group("g1")->variants[0].variant_id, "g1#1");
}

TEST_F(StoreTest, LabelSetIncludesUnobservedRegisteredLabels) {
  EXPECT_EQ(store.snapshot("fam")->label_set, (std::set<std::string>{"a", "b", "c"}));
}

TEST_F(StoreTest, IngestRejectsUnknownLabelAtomically) {
  const auto before = store.canonical_dump();
  EXPECT_EQ(code_of([&] {
              ingest_lines(store, "fam",
                           {corpus_line("g4", "Fine.", {{"guet", {"a"}}}), corpus_line("g5", "Yes.", {{"jo", {"zz"}}})});
            }),
            ErrorCode::UnknownLabel);
  EXPECT_EQ(store.canonical_dump(), before);
}

TEST_F(StoreTest, IngestRejectsDuplicateGroup) {
  const auto before = store.canonical_dump();
  EXPECT_EQ(code_of([&] { ingest_lines(store, "fam", {corpus_line("g1", "Again.", {})}); }), ErrorCode::DuplicateGroup);
  EXPECT_EQ(store.canonical_dump(), before);
}

TEST_F(StoreTest, MalformedLineReportsLineNumber) {
  try {
    ingest_lines(store, "fam", {corpus_line("g7", "Ok.", {}), "{not json"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST_F(StoreTest, AddVariantWithTwoLabels) {
  const auto r = store.add_variant("g3", "  bis  spöter ", {"b", "c"}, Provenance::User);
  EXPECT_TRUE(r.added);
  const auto view = store.snapshot("fam");
  const auto* g = view->find_group("g3");
  ASSERT_EQ(g->variants.size(), 1u);
  EXPECT_EQ(g->variants[0].text, "bis spöter");
  EXPECT_EQ(g->variants_with_label("b").size(), 1u);
  EXPECT_EQ(g->variants_with_label("c").size(), 1u);
  EXPECT_EQ(g->observed_labels(), (std::set<std::string>{"b", "c"}));
}

TEST_F(StoreTest, AddVariantIsIdempotent) {
  const auto first = store.add_variant("g1", "guete morge", {"a"}, Provenance::User);
  EXPECT_FALSE(first.added);
  EXPECT_EQ(first.variant_id, "g1#1");
  EXPECT_EQ(store.snapshot("fam")->variant_count(), 3u);
}

TEST_F(StoreTest, AddVariantValidates) {
  EXPECT_EQ(code_of([&] { store.add_variant("g1", "   ", {"a"}, Provenance::User); }), ErrorCode::EmptyText);
  EXPECT_EQ(code_of([&] { store.add_variant("nope", "x", {"a"}, Provenance::User); }), ErrorCode::UnknownGroup);
  EXPECT_EQ(code_of([&] { store.add_variant("g1", "x", {"zz"}, Provenance::User); }), ErrorCode::UnknownLabel);
}

TEST_F(StoreTest, SnapshotsAreImmutable) {
  const auto before = store.snapshot("fam");
  store.add_variant("g3", "bis spöter", {"c"}, Provenance::User);
  EXPECT_TRUE(before->find_group("g3")->variants.empty());
  EXPECT_EQ(store.snapshot("fam")->find_group("g3")->variants.size(), 1u);
}

TEST_F(StoreTest, EventIdsAreSequential) {
  const auto e1 = store.record_event({"s1", FeedbackKind::Confirm, {{"group_id", "g3"}, {"text", "tschüss"}, {"labels", {"a"}}}});
  const auto e2 = store.record_event({"s1", FeedbackKind::Relabel, {{"group_id", "g3"}, {"text", "ciao"}, {"label", "c"}}});
  EXPECT_EQ(e1.event_id, 1u);
  EXPECT_EQ(e2.event_id, 2u);
  EXPECT_EQ(store.events().size(), 2u);
  EXPECT_EQ(store.snapshot("fam")->find_group("g3")->variants.size(), 2u);
  EXPECT_EQ(e1.payload.at("variant_id"), "g3#1");
}

TEST_F(StoreTest, RecordEventValidates) {
  EXPECT_EQ(code_of([&] { store.record_event({"ghost", FeedbackKind::Confirm, {{"group_id", "g1"}}}); }),
            ErrorCode::UnknownSession);
  EXPECT_EQ(code_of([&] { store.record_event({"s1", FeedbackKind::Confirm, {{"group_id", "g1"}}}); }),
            ErrorCode::InvalidPayload);
  EXPECT_EQ(store.last_event_id(), 0u);
}

TEST_F(StoreTest, GeoEditForeignLabelIsInvalid) {
  store.register_family(make_registry("other", {"x"}));
  EXPECT_EQ(code_of([&] { store.apply_geo_edit("s1", "x", {{1, 1}}, {}); }), ErrorCode::InvalidPayload);
}

TEST_F(StoreTest, GeoEditUpdatesRegionOnly) {
  const auto region = store.apply_geo_edit("s1", "a", {{1, 1}}, {{2, 2}});
  EXPECT_EQ(region.cells, (CellSet{{1, 1}, {3, 2}}));
  const auto* label = store.snapshot("fam")->find_label("a");
  EXPECT_EQ(label->name, "Alpha");
  EXPECT_EQ(label->affiliation, "fam");
  EXPECT_EQ(label->region.cells, region.cells);
}

TEST_F(StoreTest, NewDialectCreatesLabel) {
  const auto e = store.record_event({"s1", FeedbackKind::NewDialect, {{"group_id", "g1"}, {"text", "guata morga"}, {"name", "Upper Valley"}}});
  EXPECT_EQ(e.payload.at("label_id"), "upper-valley");
  const auto view = store.snapshot("fam");
  EXPECT_TRUE(view->label_set.count("upper-valley"));
  EXPECT_TRUE(view->find_label("upper-valley")->region.cells.empty());
  EXPECT_EQ(code_of([&] {
              store.record_event({"s1", FeedbackKind::NewDialect, {{"group_id", "g1"}, {"text", "x"}, {"name", "upper VALLEY"}}});
            }),
            ErrorCode::DuplicateDialectName);
}

TEST_F(StoreTest, MatchCorrectionIsStoredNotApplied) {
  const auto before = store.canonical_dump();
  EXPECT_EQ(code_of([&] {
              store.record_event({"s1", FeedbackKind::MatchCorrection, {{"variant_id", "g1#1"}, {"divisions", {"zz"}}}});
            }),
            ErrorCode::UnknownDivision);
  store.record_event({"s1", FeedbackKind::MatchCorrection, {{"variant_id", "g1#1"}, {"divisions", {"ne"}}}});
  EXPECT_EQ(store.canonical_dump(), before);
  EXPECT_EQ(store.events().back().kind, FeedbackKind::MatchCorrection);
}

TEST_F(StoreTest, UnknownFamily) {
  EXPECT_EQ(code_of([&] { store.snapshot("nope"); }), ErrorCode::UnknownFamily);
  EXPECT_EQ(code_of([&] { store.register_family(make_registry()); }), ErrorCode::DuplicateFamily);
}

TEST(StorePersistence, ReplayIsByteIdentical) {
  TempDir dir;
  std::string dump;
  {
    ManualClock clock;
    CorpusStore store(clock, dir.path(), false);
    store.register_family(make_registry());
    store.set_divisions("fam", make_divisions());
    ingest_lines(store, "fam", {corpus_line("g1", "Hello.", {{"hoi", {"a"}}})});
    store.open_session("s1", "fam");
    store.record_event({"s1", FeedbackKind::Confirm, {{"group_id", "g1"}, {"text", "sali"}, {"labels", {"a", "b"}}}});
    store.record_event({"s1", FeedbackKind::NewDialect, {{"group_id", "g1"}, {"text", "hallo"}, {"name", "Lowland"}}});
    store.apply_geo_edit("s1", "lowland", {{4, 4}, {5, 4}}, {});
    dump = store.canonical_dump();
  }
  ManualClock clock;
  CorpusStore reopened(clock, dir.path(), false);
  EXPECT_EQ(reopened.canonical_dump(), dump);
  EXPECT_EQ(reopened.snapshot("fam")->divisions.size(), 4u);
  EXPECT_EQ(reopened.last_event_id(), 3u);
  EXPECT_TRUE(reopened.has_session("s1"));
}

TEST(StorePersistence, CompactionKeepsState) {
  TempDir dir;
  std::string dump;
  {
    ManualClock clock;
    CorpusStore store(clock, dir.path(), false);
    store.register_family(make_registry());
    ingest_lines(store, "fam", {corpus_line("g1", "Hello.", {{"hoi", {"a"}}})});
    store.open_session("s1", "fam");
    store.record_event({"s1", FeedbackKind::Relabel, {{"group_id", "g1"}, {"text", "sali"}, {"label", "c"}}});
    store.compact();
    store.record_event({"s1", FeedbackKind::Relabel, {{"group_id", "g1"}, {"text", "hallo"}, {"label", "b"}}});
    dump = store.canonical_dump();
  }
  ManualClock clock;
  CorpusStore reopened(clock, dir.path(), false);
  EXPECT_EQ(reopened.canonical_dump(), dump);
  EXPECT_EQ(reopened.last_event_id(), 2u);
}

TEST(StorePersistence, TornFinalLineIsDropped) {
  TempDir dir;
  std::string dump;
  {
    ManualClock clock;
    CorpusStore store(clock, dir.path(), false);
    store.register_family(make_registry());
    ingest_lines(store, "fam", {corpus_line("g1", "Hello.", {})});
    store.open_session("s1", "fam");
    store.record_event({"s1", FeedbackKind::Relabel, {{"group_id", "g1"}, {"text", "sali"}, {"label", "c"}}});
    dump = store.canonical_dump();
  }
  {
    std::ofstream log(dir.path() / "events.jsonl", std::ios::app);
    log << R"({"event_id":2,"session_id":"s1","kind":"REL)";
  }
  ManualClock clock;
  CorpusStore reopened(clock, dir.path(), false);
  EXPECT_EQ(reopened.canonical_dump(), dump);
  const auto next = reopened.record_event({"s1", FeedbackKind::Relabel, {{"group_id", "g1"}, {"text", "hoi"}, {"label", "a"}}});
  EXPECT_EQ(next.event_id, 2u);
}

TEST(StoreNotifications, ListenersSeeLabelGrowth) {
  ManualClock clock;
  CorpusStore store(clock);
  store.register_family(make_registry());
  ingest_lines(store, "fam", {corpus_line("g1", "Hello.", {})});
  std::vector<CorpusChange> seen;
  store.subscribe([&](const CorpusChange& c) { seen.push_back(c); });
  store.add_variant("g1", "hoi", {"a"}, Provenance::User);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0].variant_id, "g1#1");
}

TEST(Slugify, LowercasesAndDashes) {
  EXPECT_EQ(slugify("Upper Valley"), "upper-valley");
  EXPECT_EQ(slugify("  Zürich-Oberland "), "z-rich-oberland");
  EXPECT_EQ(slugify("한국"), "");
}
