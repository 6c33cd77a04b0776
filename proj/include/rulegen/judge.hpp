#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rulegen/gateway.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/rule.hpp"

namespace rulegen {

/// How the two judge questions are worded. negative_specific asks for the
/// probability of a problem and is the default; the other three exist for
/// calibration comparisons.
enum class PhrasingVariant { kNegativeSpecific, kPositiveSpecific, kGenericConfidence, kGenericFpFn };

std::string_view to_string(PhrasingVariant v) noexcept;
std::optional<PhrasingVariant> phrasing_variant_from_string(std::string_view s) noexcept;

/// True when the variant's raw answer is a problem probability (p_miss /
/// p_correlate); otherwise the answer is a probability of being right and
/// the problem probability is its complement.
bool answer_is_problem_probability(PhrasingVariant v) noexcept;

struct ConfidenceReport {
  double sensitivity_score = 0.0;
  double specificity_score = 0.0;
  double confidence = 0.0;
  std::string sensitivity_reasoning;
  std::string specificity_reasoning;
  PhrasingVariant phrasing_variant = PhrasingVariant::kNegativeSpecific;

  friend bool operator==(const ConfidenceReport&, const ConfidenceReport&) = default;
};

/// sensitivity = 1 - p_miss, specificity = 1 - p_correlate, confidence = product.
ConfidenceReport make_confidence_report(double p_miss, double p_correlate,
                                        std::string sensitivity_reasoning,
                                        std::string specificity_reasoning,
                                        PhrasingVariant variant);

nlohmann::ordered_json to_json(const ConfidenceReport& r);
ConfidenceReport confidence_report_from_json(const nlohmann::json& j);

struct JudgeThresholds {
  double min_sensitivity = 0.5;
  double min_specificity = 0.7;

  void validate() const;  // both in [0, 1], else ConfigError
};

struct GateVerdict {
  bool pass = false;
  std::string feedback;  // empty on pass
};

/// Inclusive thresholds. Feedback carries only the failing dimensions'
/// reasoning, each under its own heading.
GateVerdict gate(const ConfidenceReport& report, const JudgeThresholds& thresholds);

struct JudgePrompts {
  std::string sensitivity;
  std::string specificity;
};

/// Templates shipped under prompts/judge/, embedded at build time.
JudgePrompts default_judge_prompts(PhrasingVariant v);
/// Reads <dir>/<variant>.sensitivity.txt and <dir>/<variant>.specificity.txt.
JudgePrompts load_judge_prompts(const std::filesystem::path& dir, PhrasingVariant v);

struct ScoredAnswer {
  double score = 0.0;
  std::string reasoning;
};

/// Expects the last non-blank line to be "SCORE: <x>" with x in [0, 1];
/// everything before it is the reasoning.
std::optional<ScoredAnswer> parse_score_answer(std::string_view completion);

class ConfidenceJudge {
 public:
  static constexpr int kMaxReasks = 2;

  explicit ConfidenceJudge(Gateway& gateway,
                           PhrasingVariant variant = PhrasingVariant::kNegativeSpecific,
                           std::optional<JudgePrompts> prompts = std::nullopt);

  /// Two completions, one per question. Throws ScoreParseError when an
  /// answer is still malformed after kMaxReasks re-asks.
  ConfidenceReport judge_rule(const CveRecord& record, const DetectionRule& rule) const;

  std::string render(const CveRecord& record, const DetectionRule& rule,
                     bool sensitivity) const;
  PhrasingVariant variant() const noexcept { return variant_; }

 private:
  ScoredAnswer ask(const std::string& prompt, const std::string& tag) const;

  Gateway& gateway_;
  PhrasingVariant variant_;
  JudgePrompts prompts_;
};

}  // namespace rulegen
