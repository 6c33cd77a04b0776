#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/event.hpp"
#include "rulegen/gateway.hpp"
#include "rulegen/judge.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/rule.hpp"

namespace rulegen {

enum class TestLabel { kMalicious, kBenign };
std::string_view to_string(TestLabel l) noexcept;

struct SyntheticTest {
  std::string raw_request;
  TestLabel label = TestLabel::kMalicious;

  friend bool operator==(const SyntheticTest&, const SyntheticTest&) = default;
};

inline constexpr std::size_t kSyntheticTestCount = 10;
inline constexpr std::size_t kSyntheticMaliciousCount = 7;
inline constexpr std::size_t kSyntheticBenignCount = 3;
inline constexpr int kSyntheticPassMinimum = 8;

std::string build_synthetic_prompt(const CveRecord& record);

/// Parses "### TEST <n> [malicious|benign]" blocks. Throws
/// SyntheticGenerationFailed when the count or the 7/3 split is wrong or a
/// request does not normalize.
std::vector<SyntheticTest> parse_synthetic_tests(std::string_view completion);

/// Asks the model for the ten tests, re-requesting up to twice on a bad reply.
std::vector<SyntheticTest> generate_synthetic_tests(const CveRecord& record, Gateway& gateway);

struct SyntheticResult {
  TestLabel label = TestLabel::kMalicious;
  bool rule_matched = false;
  bool correct = false;
};

struct SyntheticOutcome {
  std::vector<SyntheticResult> results;
  int correct_count = 0;
  bool passed = false;
  std::vector<std::string> failures;  // one line per misclassified test
};

/// correct = malicious & matched, or benign & not matched; passes with >= 8 correct.
SyntheticOutcome run_synthetic_gate(const DetectionRule& rule, std::span<const SyntheticTest> tests);

enum class Reputation { kMalicious, kBenign, kUnknown };
using ReputationMap = std::unordered_map<std::string, Reputation>;

/// JSONL lines {"ip": ..., "label": "malicious"|"benign"|"unknown"}. Throws FeedFormatError.
ReputationMap load_reputation(std::istream& in);

struct IpValidationConfig {
  std::size_t min_matches = 10;
  std::size_t max_matches = 500;
  double min_malicious_fraction = 0.70;

  void validate() const;  // ConfigError
};

struct TrafficOutcome {
  std::size_t matched_events = 0;
  std::size_t distinct_ip_count = 0;
  std::size_t malicious_ip_count = 0;
  double malicious_fraction = 0.0;
  bool passed = false;
  std::optional<std::string> skipped_reason;
  std::string feedback;
};

/// Body-inspecting rules are skipped. Otherwise the distinct matching IPs must
/// fall within [min_matches, max_matches] and strictly more than
/// min_malicious_fraction of them must be labeled malicious (unknown counts
/// against).
TrafficOutcome run_ip_validation(const DetectionRule& rule, std::span<const HttpEvent> corpus,
                                 const ReputationMap& reputation,
                                 const IpValidationConfig& config, unsigned workers = 1);

enum class ReviewDecision { kPending, kApproved, kRejected };
std::string_view to_string(ReviewDecision d) noexcept;
std::optional<ReviewDecision> review_decision_from_string(std::string_view s) noexcept;

struct ReviewOutcome {
  ReviewDecision decision = ReviewDecision::kPending;
  std::string reviewer_comment;
};

enum class Stage { kSynthetic, kConfidence, kTraffic, kReview };
std::string_view to_string(Stage s) noexcept;

struct ValidationReport {
  std::optional<SyntheticOutcome> synthetic;
  std::optional<ConfidenceReport> confidence;
  std::optional<TrafficOutcome> traffic;
  std::optional<ReviewOutcome> review;
  Stage stage_reached = Stage::kSynthetic;
  bool passed = false;  // every automated stage passed or was skipped
  std::string feedback;  // the failing stage's feedback, empty on pass
  std::optional<std::string> error;  // stage-internal error text
};

nlohmann::ordered_json to_json(const ValidationReport& r);
ValidationReport validation_report_from_json(const nlohmann::json& j);

/// What the generation engine needs from validation.
class CandidateValidator {
 public:
  virtual ~CandidateValidator() = default;
  /// Runs the automated stages. report.passed and report.feedback carry the verdict.
  virtual ValidationReport validate(const CveRecord& record, const DetectionRule& rule) = 0;
};

struct PipelineOptions {
  bool confidence_stage = true;
  bool traffic_stage = true;
  /// When false, synthetic failures feed back only the correct count.
  bool detailed_synthetic_feedback = true;
  JudgeThresholds thresholds;
  IpValidationConfig ip;
  unsigned corpus_workers = 1;
};

struct TrafficSource {
  std::span<const HttpEvent> corpus;
  const ReputationMap* reputation = nullptr;
};

/// Sequential stages: synthetic -> confidence -> traffic -> review queue.
/// Synthetic tests are generated once per CVE and cached. Safe to call from
/// several candidate lanes at once.
class ValidationPipeline final : public CandidateValidator {
 public:
  ValidationPipeline(Gateway& gateway, const ConfidenceJudge* judge, PipelineOptions options,
                     std::optional<TrafficSource> traffic = std::nullopt);

  ValidationReport validate(const CveRecord& record, const DetectionRule& rule) override;

  /// Automated stages, then enqueue for human review (decision pending) on pass.
  ValidationReport run_pipeline(const CveRecord& record, const DetectionRule& rule);

  /// Throws SyntheticGenerationFailed (cached per CVE as well).
  std::vector<SyntheticTest> synthetic_tests_for(const CveRecord& record);

  const PipelineOptions& options() const noexcept { return options_; }

 private:
  struct CachedTests {
    std::vector<SyntheticTest> tests;
    std::optional<std::string> error;
  };

  Gateway& gateway_;
  const ConfidenceJudge* judge_;
  PipelineOptions options_;
  std::optional<TrafficSource> traffic_;

  std::mutex mu_;  // held while a CVE's tests are generated
  std::map<std::string, CachedTests> cache_;
};

}  // namespace rulegen
