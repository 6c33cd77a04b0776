#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rulegen/gateway.hpp"
#include "rulegen/judge.hpp"
#include "rulegen/nuclei.hpp"

namespace rulegen {

struct MockBehavior {
  std::uint64_t seed = 42;
  double defect_rate = 0.0;
  double feedback_sensitivity = 1.0;
  std::optional<std::filesystem::path> fixture_dir;  // scripted replays by prompt hash

  void validate() const;  // ConfigError
};

enum class FlawClass { kNone, kOverBroad, kMissingEndpoint };
std::string_view to_string(FlawClass f) noexcept;

/// defect_rate * feedback_sensitivity^feedback_rounds.
double planted_flaw_probability(const MockBehavior& behavior, int feedback_rounds);

/// One uniform draw per (seed, cve_id, candidate) compared against the
/// probability above, so a lane's draws are consistent across attempts.
FlawClass planted_flaw(const MockBehavior& behavior, std::string_view cve_id, int candidate_index,
                       int feedback_rounds);

/// Index of the example request carrying a recognisable exploit payload,
/// else 0. Throws MalformedRequest only if that request does not normalize.
std::size_t exploit_request_index(const std::vector<std::string>& raw_requests);

/// Rule JSON text inside a ```json fence, or a refusal line when the record
/// has no HTTP requests.
std::string mock_generate_rule(const CveRecord& cve, int candidate_index, int feedback_rounds,
                               const MockBehavior& behavior);

/// Ten "### TEST n [label]" blocks: seven exploit variants, three benign
/// requests to the same endpoint.
std::string mock_synthetic_tests(const CveRecord& cve);

/// Reasoning followed by "SCORE: x". `sensitivity` selects the question.
std::string mock_judge_answer(const CveRecord& cve, std::string_view rule_json,
                              PhrasingVariant variant, bool sensitivity,
                              const MockBehavior& behavior);

/// Offline backend. Scripted mode replays <fixture_dir>/<sha256(prompt)>.txt
/// when it exists; otherwise the reply is synthesized from the prompt and
/// the request tag ("generate/...", "synthetic/...", "judge/...").
class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockBehavior behavior);
  std::string complete(const GenerationRequest& request) override;
  const MockBehavior& behavior() const noexcept { return behavior_; }

 private:
  MockBehavior behavior_;
};

}  // namespace rulegen
