#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"

#include "rulegen/errors.hpp"
#include "rulegen/store.hpp"

using namespace rulegen;
using testsupport::fixture_record;
using testsupport::read_fixture;

namespace {

CandidateRule candidate(const std::string& cve, int idx, bool queued) {
  CandidateRule c;
  c.cve_id = cve;
  c.candidate_index = idx;
  c.attempt = 1;
  c.temperature = 0.75;
  c.rule = parse_rule(read_fixture("rules/CVE-2023-26256.json"));
  c.status = CandidateStatus::kPassed;
  ValidationReport v;
  v.passed = true;
  v.stage_reached = queued ? Stage::kReview : Stage::kTraffic;
  if (queued) v.review = ReviewOutcome{};
  c.validation = v;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(CandidateRef, TextForm) {
  const CandidateRef ref{"CVE-2023-26256", "r0003", 2};
  EXPECT_EQ(ref.str(), "CVE-2023-26256/r0003-c2");
  EXPECT_EQ(CandidateRef::parse(ref.str()), ref);
  EXPECT_FALSE(CandidateRef::parse("CVE-2023-26256"));
  EXPECT_FALSE(CandidateRef::parse("CVE-2023-26256/r0003"));
  EXPECT_FALSE(CandidateRef::parse("CVE-2023-26256/r0003-cx"));
}

TEST(Store, RecordsUpsertKeepsSelection) {
  Store store(testsupport::scratch_dir("store-records"));
  auto rec = fixture_record("CVE-2023-26256.yaml");
  EXPECT_EQ(store.put_record(rec, "yaml v1"), UpsertResult::kInserted);
  AuditTrail audit;
  audit.entries.push_back({"cisa_kev", "listed", 50.0});
  audit.total = 50.0;
  audit.selected = true;
  store.put_selection_audit(rec.cve_id, audit);
  rec.tmpl.name = "renamed";
  EXPECT_EQ(store.put_record(rec, "yaml v2"), UpsertResult::kUpdated);
  const auto back = store.get_record(rec.cve_id).value();
  EXPECT_EQ(back.tmpl.name, "renamed");
  EXPECT_EQ(back.priority_score, 50.0);
  EXPECT_EQ(back.score_audit, audit);
  EXPECT_EQ(store.get_selection_audit(rec.cve_id), audit);
  EXPECT_EQ(slurp(store.root() / "cves" / "CVE-2023-26256.yaml"), "yaml v2");

  store.put_record(fixture_record("CVE-2018-13379.yaml"), "");
  const auto all = store.records();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].cve_id, "CVE-2018-13379");
  EXPECT_FALSE(store.get_record("CVE-1999-0001"));
  EXPECT_THROW(store.get_record("../etc"), StoreError);
}

TEST(Store, RunIdsIncrease) {
  Store store(testsupport::scratch_dir("store-runs"));
  EXPECT_EQ(store.next_run_id(), "r0001");
  store.put_run_manifest("r0001", "CVE-2023-26256", {{"x", 1}});
  EXPECT_EQ(store.next_run_id(), "r0002");
}

TEST(Store, ReviewLifecycle) {
  Store store(testsupport::scratch_dir("store-review"));
  const auto a = store.put_candidate("r0001", candidate("CVE-2023-26256", 0, true));
  const auto b = store.put_candidate("r0001", candidate("CVE-2023-26256", 1, true));
  const auto c = store.put_candidate("r0001", candidate("CVE-2023-26256", 2, false));
  EXPECT_EQ(store.candidates("CVE-2023-26256").size(), 3u);
  EXPECT_EQ(store.pending_reviews(), (std::vector<CandidateRef>{a, b}));

  EXPECT_FALSE(store.has_approved_rule("CVE-2023-26256"));
  const auto path = store.approve(a, "looks right");
  EXPECT_EQ(path, store.rule_path(a));
  EXPECT_EQ(parse_rule(slurp(path)), *candidate("CVE-2023-26256", 0, true).rule);
  EXPECT_TRUE(store.has_approved_rule("CVE-2023-26256"));
  EXPECT_EQ(store.get_candidate(a)->validation->review->decision, ReviewDecision::kApproved);
  EXPECT_THROW(store.approve(a, ""), ReviewStateError);
  EXPECT_THROW(store.reject(a, "changed my mind"), ReviewStateError);
  EXPECT_THROW(store.approve(c, ""), ReviewStateError);

  EXPECT_THROW(store.reject(b, ""), ReviewStateError);
  store.reject(b, "misses double-encoded dots");
  EXPECT_EQ(store.human_feedback("CVE-2023-26256"), (std::vector<std::string>{"misses double-encoded dots"}));
  EXPECT_TRUE(store.pending_reviews().empty());

  const auto log = slurp(store.root() / "audit" / "review.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
  EXPECT_NE(log.find("\"to\":\"rejected\""), std::string::npos);
  EXPECT_THROW(store.approve({"CVE-2023-26256", "r0009", 0}, ""), StoreError);
}

TEST(Store, FeedbackKinds) {
  Store store(testsupport::scratch_dir("store-feedback"));
  store.append_feedback("CVE-2021-44228", {"2024-01-01T00:00:00Z", "systemic", "x/r0001-c0", "too broad"});
  store.append_feedback("CVE-2021-44228", {"2024-01-02T00:00:00Z", "human", "x/r0001-c1", "wrong field"});
  const auto all = store.feedback("CVE-2021-44228");
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].kind, "systemic");
  EXPECT_EQ(store.human_feedback("CVE-2021-44228"), (std::vector<std::string>{"wrong field"}));
  EXPECT_TRUE(store.feedback("CVE-2000-0001").empty());
}

TEST(StoreLock, SerializesHolders) {
  const auto root = testsupport::scratch_dir("store-lock");
  Store store(root);
  std::atomic<bool> held{false};
  std::atomic<bool> overlap{false};
  auto worker = [&] {
    for (int i = 0; i < 5; ++i) {
      auto lock = store.lock();
      if (held.exchange(true)) overlap = true;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      held = false;
    }
  };
  std::thread t1(worker), t2(worker);
  t1.join();
  t2.join();
  EXPECT_FALSE(overlap);
}
