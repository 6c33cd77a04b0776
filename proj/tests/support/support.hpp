#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/calibration.hpp"
#include "rulegen/engine.hpp"
#include "rulegen/event.hpp"
#include "rulegen/gateway.hpp"
#include "rulegen/judge.hpp"
#include "rulegen/mock_backend.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/pipeline.hpp"

namespace testsupport {

std::filesystem::path fixture(std::string_view relative);
std::string read_fixture(std::string_view relative);
rulegen::CveRecord fixture_record(std::string_view template_file);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(std::string_view tag);

// ------------------------------------------------------------------ oracles

/// Plain event shape for the naive evaluator; fields are taken as given.
struct NaiveEvent {
  std::string method;
  std::string path;
  std::string query;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

/// Straight-line rule evaluation over the JSON form, using std::regex for
/// regex conditions. Independent of rulegen's rule engine and decoder.
bool naive_evaluate(const nlohmann::json& rule, const NaiveEvent& event);

double brute_force_auroc(const std::vector<rulegen::ScoredOutcome>& samples);
double rank_sum_auroc(const std::vector<rulegen::ScoredOutcome>& samples);
double brute_force_ece(const std::vector<rulegen::ScoredOutcome>& samples, std::size_t bins);

struct BruteBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};
std::vector<BruteBin> brute_force_bins(const std::vector<rulegen::ScoredOutcome>& samples,
                                       std::size_t bins);

// ------------------------------------------------------------------ fakes

/// Records sleeps and advances its own time instead of blocking.
class FakeClock final : public rulegen::Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::milliseconds d) override;
  std::vector<std::chrono::milliseconds> sleeps() const;

 private:
  mutable std::mutex mu_;
  time_point now_{};
  std::vector<std::chrono::milliseconds> sleeps_;
};

/// Returns scripted replies in order; the final reply repeats.
class ScriptedBackend final : public rulegen::Backend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const rulegen::GenerationRequest& request) override;
  std::vector<rulegen::GenerationRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::vector<rulegen::GenerationRequest> seen_;
};

/// Wraps another backend and records every request.
class RecordingBackend final : public rulegen::Backend {
 public:
  explicit RecordingBackend(std::shared_ptr<rulegen::Backend> inner) : inner_(std::move(inner)) {}
  std::string complete(const rulegen::GenerationRequest& request) override;
  std::vector<rulegen::GenerationRequest> requests() const;

 private:
  std::shared_ptr<rulegen::Backend> inner_;
  mutable std::mutex mu_;
  std::vector<rulegen::GenerationRequest> seen_;
};

// ------------------------------------------------------------------ labeled world

/// Generated CVE fixtures with a labeled traffic corpus. For each CVE:
/// exploit traffic from 12 malicious IPs, benign traffic to the same
/// endpoint (some values contain quotes), and the same payload aimed at an
/// unrelated endpoint from mostly unlabeled IPs.
struct LabeledWorld {
  std::vector<rulegen::CveRecord> records;
  std::vector<rulegen::HttpEvent> corpus;
  std::vector<std::string> exploit_of;  // per corpus event: CVE id, or "" when not an exploit
  rulegen::ReputationMap reputation;
};

LabeledWorld make_labeled_world(std::size_t num_cves, std::uint64_t seed);

struct RuleVerdict {
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  bool misclassifies() const { return false_positives + false_negatives > 0; }
  /// Flags every exploit event of its own CVE.
  bool true_positive() const { return false_negatives == 0; }
};

RuleVerdict judge_against_corpus(const rulegen::DetectionRule& rule, const std::string& cve_id,
                                 const LabeledWorld& world);

struct BatchOptions {
  rulegen::MockBehavior mock;
  rulegen::GenerationConfig generation;
  bool confidence_stage = false;
  bool detailed_synthetic_feedback = false;
  rulegen::JudgeThresholds thresholds;
};

struct BatchCve {
  std::string cve_id;
  rulegen::GenerationOutcome outcome;
  std::optional<rulegen::DetectionRule> accepted;
  RuleVerdict verdict;
};

struct BatchResult {
  std::vector<BatchCve> cves;
  std::size_t accepted = 0;
  std::size_t misclassifying = 0;
  std::size_t true_positive = 0;
  std::size_t gateway_calls = 0;
};

/// Runs generation over every record of the world (no traffic stage).
BatchResult run_batch(const LabeledWorld& world, const BatchOptions& options);

struct SweepPoint {
  double threshold = 0.0;
  std::size_t surviving = 0;
  std::size_t ip_failures = 0;
};

/// Scores every synthetic-passing candidate of `batch` with the mock judge,
/// runs IP validation on it, and counts IP failures among candidates whose
/// confidence is at least each threshold.
std::vector<SweepPoint> confidence_sweep(const LabeledWorld& world, const BatchResult& batch,
                                         const rulegen::MockBehavior& mock,
                                         const std::vector<double>& thresholds);

}  // namespace testsupport
