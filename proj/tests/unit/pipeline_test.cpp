#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

#include "rulegen/errors.hpp"

using namespace rulegen;
using testsupport::fixture_record;
using testsupport::read_fixture;

namespace {

std::string block(int n, const char* label, const std::string& request) {
  return "### TEST " + std::to_string(n) + " [" + label + "]\n" + request + "\n";
}

std::string ten_tests(int malicious = 7) {
  std::string out = "Here are the tests.\n\n";
  for (int i = 1; i <= 10; ++i)
    out += block(i, i <= malicious ? "malicious" : "benign",
                 "GET /t?n=" + std::to_string(i) + " HTTP/1.1\nHost: a\n");
  return out;
}

DetectionRule rule_of(const std::string& var, const std::string& cmp, const std::string& constant) {
  nlohmann::json j = {{"conditions", {{{"var", var}, {"comparison", cmp}, {"constant", constant}}}},
                      {"conditions_match", "and"}};
  return rule_from_json(j);
}

std::shared_ptr<MockBackend> mock() { return std::make_shared<MockBackend>(MockBehavior{}); }

}  // namespace

TEST(SyntheticParse, AcceptsTenTests) {
  const auto tests = parse_synthetic_tests(ten_tests());
  ASSERT_EQ(tests.size(), 10u);
  EXPECT_EQ(tests[6].label, TestLabel::kMalicious);
  EXPECT_EQ(tests[7].label, TestLabel::kBenign);
}

TEST(SyntheticParse, RejectsWrongShapes) {
  EXPECT_THROW(parse_synthetic_tests("nothing"), SyntheticGenerationFailed);
  EXPECT_THROW(parse_synthetic_tests(ten_tests(6)), SyntheticGenerationFailed);
  std::string nine = ten_tests();
  nine.resize(nine.find("### TEST 10"));
  EXPECT_THROW(parse_synthetic_tests(nine), SyntheticGenerationFailed);
  std::string broken = ten_tests();
  broken.replace(broken.find("GET /t?n=3"), 3, "G@T");
  EXPECT_THROW(parse_synthetic_tests(broken), SyntheticGenerationFailed);
}

TEST(SyntheticGenerate, RerequestsTwiceThenFails) {
  auto bad = std::make_shared<testsupport::ScriptedBackend>(std::vector<std::string>{"junk", "junk", ten_tests()});
  Gateway gw(bad);
  EXPECT_EQ(generate_synthetic_tests(fixture_record("CVE-2023-26256.yaml"), gw).size(), 10u);
  const auto reqs = bad->requests();
  ASSERT_EQ(reqs.size(), 3u);
  EXPECT_EQ(reqs[0].tag, "synthetic/CVE-2023-26256");
  EXPECT_EQ(reqs[2].tag, "synthetic/CVE-2023-26256/retry2");

  auto worse = std::make_shared<testsupport::ScriptedBackend>(std::vector<std::string>{"junk"});
  Gateway gw2(worse);
  EXPECT_THROW(generate_synthetic_tests(fixture_record("CVE-2023-26256.yaml"), gw2),
               SyntheticGenerationFailed);
  EXPECT_EQ(worse->requests().size(), 3u);
}

TEST(SyntheticGate, FailureLinesNameTheTest) {
  const auto tests = parse_synthetic_tests(ten_tests());
  // Matches n=1 (correct) and n=8 (a benign test, wrong); misses the other malicious ones.
  nlohmann::json j = {{"conditions",
                       {{{"var", "query_string"}, {"comparison", "equals"}, {"constant", "n=1"}},
                        {{"var", "query_string"}, {"comparison", "equals"}, {"constant", "n=8"}}}},
                      {"conditions_match", "or"}};
  const auto out = run_synthetic_gate(rule_from_json(j), tests);
  EXPECT_EQ(out.correct_count, 1 + 2);
  EXPECT_FALSE(out.passed);
  ASSERT_EQ(out.failures.size(), 7u);
  EXPECT_NE(out.failures[0].find("Test 2 (malicious) was not flagged"), std::string::npos);
  EXPECT_NE(out.failures.back().find("Test 8 (benign) was flagged"), std::string::npos);
  EXPECT_NE(out.failures.back().find("GET /t?n=8"), std::string::npos);
}

TEST(Reputation, Loading) {
  std::istringstream in("{\"ip\":\"1.1.1.1\",\"label\":\"malicious\"}\n\n{\"ip\":\"2.2.2.2\",\"label\":\"benign\"}\n");
  const auto rep = load_reputation(in);
  EXPECT_EQ(rep.at("1.1.1.1"), Reputation::kMalicious);
  EXPECT_EQ(rep.at("2.2.2.2"), Reputation::kBenign);
  std::istringstream bad("{\"ip\":\"1.1.1.1\",\"label\":\"evil\"}\n");
  EXPECT_THROW(load_reputation(bad), FeedFormatError);
  std::istringstream junk("nope\n");
  EXPECT_THROW(load_reputation(junk), FeedFormatError);
}

TEST(IpValidation, UnknownCountsAgainstAndFeedbackExplains) {
  const auto rule = rule_of("path", "equals", "/v");
  std::vector<HttpEvent> corpus;
  ReputationMap rep;
  for (int i = 0; i < 20; ++i) {
    const std::string ip = "10.0.0." + std::to_string(i);
    corpus.emplace_back("GET", "/v", "", HeaderMap{}, "", ip, std::nullopt);
    if (i < 14) rep[ip] = Reputation::kMalicious;  // 70%, six unlabeled
  }
  const auto out = run_ip_validation(rule, corpus, rep, {});
  EXPECT_FALSE(out.passed);
  EXPECT_EQ(out.malicious_ip_count, 14u);
  EXPECT_NE(out.feedback.find("14 of 20"), std::string::npos);
  const auto sharded = run_ip_validation(rule, corpus, rep, {}, 4);
  EXPECT_EQ(sharded.malicious_ip_count, out.malicious_ip_count);
  IpValidationConfig bad;
  bad.min_matches = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Validate, StagesInOrder) {
  const auto record = fixture_record("CVE-2023-26256.yaml");
  const auto good = parse_rule(read_fixture("rules/CVE-2023-26256.json"));
  Gateway gw(mock());
  ConfidenceJudge judge(gw);
  PipelineOptions opts;
  ValidationPipeline pipeline(gw, &judge, opts);
  const auto r = pipeline.validate(record, good);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.stage_reached, Stage::kTraffic);
  ASSERT_TRUE(r.traffic);
  EXPECT_EQ(r.traffic->skipped_reason, "no traffic corpus configured");
  ASSERT_TRUE(r.confidence);
  EXPECT_GT(r.confidence->confidence, 0.7);
  EXPECT_FALSE(r.review);

  const auto queued = pipeline.run_pipeline(record, good);
  EXPECT_EQ(queued.stage_reached, Stage::kReview);
  ASSERT_TRUE(queued.review);
  EXPECT_EQ(queued.review->decision, ReviewDecision::kPending);
}

TEST(Validate, SyntheticFeedbackDetailIsConfigurable) {
  const auto record = fixture_record("CVE-2023-26256.yaml");
  const auto never = rule_of("path", "equals", "/nowhere");
  Gateway gw(mock());
  PipelineOptions opts;
  opts.confidence_stage = false;
  opts.detailed_synthetic_feedback = false;
  ValidationPipeline terse(gw, nullptr, opts);
  const auto a = terse.validate(record, never);
  EXPECT_FALSE(a.passed);
  EXPECT_EQ(a.stage_reached, Stage::kSynthetic);
  EXPECT_EQ(a.feedback, "Synthetic tests: 3 of 10 classified correctly; at least 8 are required.");

  opts.detailed_synthetic_feedback = true;
  ValidationPipeline detailed(gw, nullptr, opts);
  const auto b = detailed.validate(record, never);
  EXPECT_NE(b.feedback.find("\n- Test 1 (malicious) was not flagged"), std::string::npos);
}

TEST(Validate, ConfidenceGateFeedsBackReasoning) {
  const auto record = fixture_record("CVE-2023-26256.yaml");
  const auto loose = rule_of("query_string_decoded", "contains", "../");
  Gateway gw(mock());
  ConfidenceJudge judge(gw);
  ValidationPipeline pipeline(gw, &judge, {});
  const auto r = pipeline.validate(record, loose);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.stage_reached, Stage::kConfidence);
  EXPECT_NE(r.feedback.find("Specificity concern"), std::string::npos);
  EXPECT_EQ(r.feedback.find("Sensitivity concern"), std::string::npos);
}

TEST(Validate, TrafficStageWithCorpus) {
  const auto record = fixture_record("CVE-2023-26256.yaml");
  const auto good = parse_rule(read_fixture("rules/CVE-2023-26256.json"));
  std::vector<HttpEvent> corpus;
  ReputationMap rep;
  const auto exploit = normalize_raw_http(read_fixture("raw/cve-2023-26256-exploit.http"));
  for (int i = 0; i < 12; ++i) {
    const std::string ip = "45.0.0." + std::to_string(i);
    corpus.emplace_back(exploit.method(), exploit.path(), exploit.query_string(), exploit.headers(), "",
                        ip, std::nullopt);
    rep[ip] = Reputation::kMalicious;
  }
  Gateway gw(mock());
  ConfidenceJudge judge(gw);
  ValidationPipeline ok(gw, &judge, {}, TrafficSource{corpus, &rep});
  const auto r = ok.validate(record, good);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.traffic->distinct_ip_count, 12u);

  ValidationPipeline sparse(gw, &judge, {}, TrafficSource{std::span(corpus).first(5), &rep});
  const auto s = sparse.validate(record, good);
  EXPECT_FALSE(s.passed);
  EXPECT_EQ(s.stage_reached, Stage::kTraffic);
  EXPECT_NE(s.feedback.find("5 distinct source IPs"), std::string::npos);
}

TEST(Validate, SyntheticTestsGeneratedOncePerCve) {
  auto recording = std::make_shared<testsupport::RecordingBackend>(mock());
  Gateway gw(recording);
  PipelineOptions opts;
  opts.confidence_stage = false;
  ValidationPipeline pipeline(gw, nullptr, opts);
  const auto record = fixture_record("CVE-2023-26256.yaml");
  for (int i = 0; i < 4; ++i) pipeline.validate(record, rule_of("path", "contains", "x"));
  EXPECT_EQ(recording->requests().size(), 1u);
}

TEST(Validate, SyntheticFailureIsReportedNotThrown) {
  Gateway gw(std::make_shared<testsupport::ScriptedBackend>(std::vector<std::string>{"junk"}));
  PipelineOptions opts;
  opts.confidence_stage = false;
  ValidationPipeline pipeline(gw, nullptr, opts);
  const auto r = pipeline.validate(fixture_record("CVE-2023-26256.yaml"), rule_of("path", "contains", "x"));
  EXPECT_FALSE(r.passed);
  EXPECT_TRUE(r.error);
  EXPECT_THROW(pipeline.synthetic_tests_for(fixture_record("CVE-2023-26256.yaml")),
               SyntheticGenerationFailed);
}

TEST(Validate, ConfidenceStageNeedsJudge) {
  Gateway gw(mock());
  EXPECT_THROW(ValidationPipeline(gw, nullptr, {}), ConfigError);
}

TEST(ValidationReport, JsonRoundTrip) {
  const auto record = fixture_record("CVE-2023-26256.yaml");
  Gateway gw(mock());
  ConfidenceJudge judge(gw);
  ValidationPipeline pipeline(gw, &judge, {});
  const auto r = pipeline.run_pipeline(record, parse_rule(read_fixture("rules/CVE-2023-26256.json")));
  const auto back = validation_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}
