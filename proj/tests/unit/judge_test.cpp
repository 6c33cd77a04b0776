#include <functional>
#include <mutex>

#include <gtest/gtest.h>

#include "support.hpp"

#include "rulegen/errors.hpp"
#include "rulegen/hashing.hpp"

using namespace rulegen;

namespace {

class TagBackend final : public Backend {
 public:
  explicit TagBackend(std::function<std::string(const GenerationRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const GenerationRequest& r) override {
    std::lock_guard lock(mu_);
    tags.push_back(r.tag);
    return fn_(r);
  }
  std::vector<std::string> tags;

 private:
  std::mutex mu_;
  std::function<std::string(const GenerationRequest&)> fn_;
};

DetectionRule appendix_rule() {
  return parse_rule(testsupport::read_fixture("rules/CVE-2023-26256.json"));
}

std::string answer(const GenerationRequest& r, const char* sens, const char* spec) {
  return r.tag.find("/sensitivity/") != std::string::npos ? sens : spec;
}

}  // namespace

TEST(ScoreAnswer, Parsing) {
  auto a = parse_score_answer("Looks fine.\nMore words.\n\nSCORE: 0.25\n\n");
  ASSERT_TRUE(a);
  EXPECT_DOUBLE_EQ(a->score, 0.25);
  EXPECT_EQ(a->reasoning, "Looks fine.\nMore words.");
  EXPECT_DOUBLE_EQ(parse_score_answer("SCORE: 1").value().score, 1.0);
  EXPECT_DOUBLE_EQ(parse_score_answer("  SCORE:0").value().score, 0.0);
  EXPECT_FALSE(parse_score_answer(""));
  EXPECT_FALSE(parse_score_answer("SCORE: 1.2"));
  EXPECT_FALSE(parse_score_answer("SCORE: -0.1"));
  EXPECT_FALSE(parse_score_answer("SCORE: high"));
  EXPECT_FALSE(parse_score_answer("SCORE: 0.5 maybe"));
  EXPECT_FALSE(parse_score_answer("SCORE: 0.5\nthen more text"));
  EXPECT_FALSE(parse_score_answer("score: 0.5"));
  EXPECT_FALSE(parse_score_answer("SCORE: nan"));
}

TEST(Gate, OnlyFailingDimensionReasoning) {
  const auto r = make_confidence_report(0.2, 0.5, "SENS", "SPEC", PhrasingVariant::kNegativeSpecific);
  const auto v = gate(r, {});
  EXPECT_FALSE(v.pass);
  EXPECT_EQ(v.feedback.find("SENS"), std::string::npos);
  EXPECT_NE(v.feedback.find("Specificity concern"), std::string::npos);
  EXPECT_NE(v.feedback.find("SPEC"), std::string::npos);
  JudgeThresholds lax{0.0, 0.0};
  EXPECT_TRUE(gate(make_confidence_report(1.0, 1.0, "", "", PhrasingVariant::kNegativeSpecific), lax).pass);
  JudgeThresholds bad{1.2, 0.5};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ConfidenceJudge, NegativeVariantScoresAreProblemProbabilities) {
  Gateway gw(std::make_shared<TagBackend>([](const GenerationRequest& r) {
               return answer(r, "misses some encodings\nSCORE: 0.2", "endpoint anchored\nSCORE: 0.1");
             }),
             {}, std::make_shared<testsupport::FakeClock>());
  ConfidenceJudge judge(gw);
  const auto rep = judge.judge_rule(testsupport::fixture_record("CVE-2023-26256.yaml"), appendix_rule());
  EXPECT_DOUBLE_EQ(rep.sensitivity_score, 0.8);
  EXPECT_DOUBLE_EQ(rep.specificity_score, 0.9);
  EXPECT_DOUBLE_EQ(rep.confidence, 0.8 * 0.9);
  EXPECT_EQ(rep.sensitivity_reasoning, "misses some encodings");
  EXPECT_EQ(rep.specificity_reasoning, "endpoint anchored");
  EXPECT_EQ(gw.total_calls(), 2u);
}

TEST(ConfidenceJudge, PositiveVariantIsInverted) {
  Gateway gw(std::make_shared<TagBackend>([](const GenerationRequest& r) {
               return answer(r, "SCORE: 0.9", "SCORE: 0.6");
             }),
             {}, std::make_shared<testsupport::FakeClock>());
  ConfidenceJudge judge(gw, PhrasingVariant::kPositiveSpecific);
  const auto rep = judge.judge_rule(testsupport::fixture_record("CVE-2023-26256.yaml"), appendix_rule());
  EXPECT_NEAR(rep.sensitivity_score, 0.9, 1e-12);
  EXPECT_NEAR(rep.specificity_score, 0.6, 1e-12);
  EXPECT_EQ(rep.phrasing_variant, PhrasingVariant::kPositiveSpecific);
}

TEST(ConfidenceJudge, ReasksThenGivesUp) {
  auto backend = std::make_shared<TagBackend>([](const GenerationRequest& r) -> std::string {
    if (r.tag.find("/sensitivity/") != std::string::npos)
      return r.tag.ends_with("/reask1") ? "ok now\nSCORE: 0.3" : "no score here";
    return "never a score";
  });
  Gateway gw(backend, {}, std::make_shared<testsupport::FakeClock>());
  ConfidenceJudge judge(gw);
  EXPECT_THROW(judge.judge_rule(testsupport::fixture_record("CVE-2023-26256.yaml"), appendix_rule()),
               ScoreParseError);
  std::size_t spec_calls = 0;
  std::size_t sens_calls = 0;
  for (const auto& t : backend->tags) {
    spec_calls += t.find("/specificity/") != std::string::npos;
    sens_calls += t.find("/sensitivity/") != std::string::npos;
  }
  EXPECT_EQ(spec_calls, 3u);  // first ask + two re-asks
  EXPECT_EQ(sens_calls, 2u);
}

TEST(ConfidenceJudge, RenderedPromptCarriesContextAndBareRule) {
  Gateway gw(std::make_shared<testsupport::ScriptedBackend>(std::vector<std::string>{"SCORE: 0"}));
  auto rule = appendix_rule();
  rule.rule_id = "secret-id";
  const auto rec = testsupport::fixture_record("CVE-2023-26256.yaml");
  for (auto v : {PhrasingVariant::kNegativeSpecific, PhrasingVariant::kPositiveSpecific,
                 PhrasingVariant::kGenericConfidence, PhrasingVariant::kGenericFpFn}) {
    ConfidenceJudge judge(gw, v);
    for (bool sens : {true, false}) {
      const auto p = judge.render(rec, rule, sens);
      EXPECT_EQ(p.find("{{"), std::string::npos) << to_string(v);
      EXPECT_NE(p.find("CVE-2023-26256"), std::string::npos);
      EXPECT_NE(p.find("snjFooterNavigationConfig"), std::string::npos);
      EXPECT_NE(p.find("SCORE:"), std::string::npos);
      EXPECT_EQ(p.find("secret-id"), std::string::npos);
      if (v != PhrasingVariant::kGenericConfidence)
        EXPECT_NE(judge.render(rec, rule, true), judge.render(rec, rule, false));
    }
  }
}

TEST(JudgePrompts, EmbeddedMatchFilesOnDisk) {
  const std::filesystem::path dir = std::string(RULEGEN_SOURCE_DIR) + "/prompts/judge";
  for (auto v : {PhrasingVariant::kNegativeSpecific, PhrasingVariant::kPositiveSpecific,
                 PhrasingVariant::kGenericConfidence, PhrasingVariant::kGenericFpFn}) {
    const auto a = default_judge_prompts(v);
    const auto b = load_judge_prompts(dir, v);
    EXPECT_EQ(a.sensitivity, b.sensitivity);
    EXPECT_EQ(a.specificity, b.specificity);
  }
  EXPECT_THROW(load_judge_prompts("/nonexistent", PhrasingVariant::kGenericFpFn), ConfigError);
}

TEST(ConfidenceReport, JsonRoundTrip) {
  const auto r = make_confidence_report(0.125, 0.25, "a", "b", PhrasingVariant::kGenericFpFn);
  EXPECT_EQ(confidence_report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}

TEST(ConfidenceReport, ComplementProperty) {
  SeededStream rng(99);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    const auto r = make_confidence_report(a, b, "", "", PhrasingVariant::kNegativeSpecific);
    EXPECT_GE(r.confidence, 0.0);
    EXPECT_LE(r.confidence, std::min(r.sensitivity_score, r.specificity_score) + 1e-15);
  }
}
