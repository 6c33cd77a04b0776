#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/gateway.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/pipeline.hpp"
#include "rulegen/rule.hpp"

namespace rulegen {

struct GenerationConfig {
  int num_candidates = 5;
  int max_attempts = 5;
  double temp_low = 0.7;
  double temp_high = 0.9;
  std::uint64_t rng_seed = 0;

  void validate() const;  // ConfigError
};

nlohmann::ordered_json to_json(const GenerationConfig& c);
GenerationConfig generation_config_from_json(const nlohmann::json& j);

/// `n` temperatures drawn uniformly from [temp_low, temp_high], seeded by
/// (rng_seed, cve_id). Candidate i uses element i for all of its attempts.
std::vector<double> sample_temperatures(const GenerationConfig& config, std::string_view cve_id,
                                        std::size_t n);

/// The generation prompt. Human feedback from earlier reviews and this
/// lane's attempt feedback (oldest first) are each included verbatim under
/// their own heading; neither heading appears when its list is empty.
std::string build_prompt(const CveRecord& record, const std::vector<std::string>& feedback_history,
                         const std::vector<std::string>& human_feedback = {});

enum class CandidateStatus { kPending, kPassed, kFailed, kRefused };
std::string_view to_string(CandidateStatus s) noexcept;

enum class AttemptOutcome { kPassed, kFailed, kParseError, kRefused };
std::string_view to_string(AttemptOutcome o) noexcept;

struct AttemptRecord {
  int attempt = 1;
  std::string prompt_sha256;
  AttemptOutcome outcome = AttemptOutcome::kFailed;
  std::optional<DetectionRule> rule;
  std::optional<ValidationReport> validation;
  std::string feedback;  // what the next attempt was (or would have been) told
};

struct CandidateRule {
  std::string cve_id;
  int candidate_index = 0;
  int attempt = 0;  // 1-based, the last attempt made
  double temperature = 0.0;
  std::optional<DetectionRule> rule;  // absent on refusal or when nothing parsed
  bool refused = false;
  std::vector<std::string> feedback_history;  // size == attempt - 1
  std::optional<ValidationReport> validation;
  CandidateStatus status = CandidateStatus::kPending;
  std::vector<AttemptRecord> attempts;
};

struct GenerationOutcome {
  std::vector<CandidateRule> candidates;  // ordered by candidate_index
  std::optional<std::size_t> best_index;

  const CandidateRule* best() const {
    return best_index ? &candidates[*best_index] : nullptr;
  }
};

/// Best = passed candidate with the highest confidence (absent counts as 0),
/// then higher specificity, then lower index.
std::optional<std::size_t> select_best(const std::vector<CandidateRule>& candidates);

/// Runs num_candidates independent lanes concurrently. Gateway errors
/// propagate once every lane has stopped. The best candidate, if any, is
/// marked pending human review.
GenerationOutcome generate_for_cve(const CveRecord& record, const GenerationConfig& config,
                                   Gateway& gateway, CandidateValidator& validator,
                                   const std::vector<std::string>& human_feedback = {});

/// The per-CVE audit artifact. Contains no wall-clock data.
nlohmann::ordered_json run_manifest(const CveRecord& record, const GenerationConfig& config,
                                    const GenerationOutcome& outcome,
                                    const std::vector<std::string>& human_feedback = {});

nlohmann::ordered_json to_json(const CandidateRule& c);
CandidateRule candidate_from_json(const nlohmann::json& j);

}  // namespace rulegen
