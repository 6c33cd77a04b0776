#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rulegen {

struct ScoredOutcome {
  double confidence = 0.0;
  bool correct = false;
  std::string variant;  // phrasing-variant tag, may be empty
};

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double accuracy = 0.0;         // 0 for empty bins
  std::size_t count = 0;
};

/// Equal-width bins over [0, 1]. Bin 0 is [0, 1/B]; bin b > 0 is (b/B, (b+1)/B].
std::size_t bin_index(double confidence, std::size_t num_bins);

/// Throws EmptyInput on no samples, std::invalid_argument on num_bins == 0
/// or a confidence outside [0, 1].
std::vector<ReliabilityBin> reliability_table(std::span<const ScoredOutcome> samples,
                                              std::size_t num_bins = 10);

double compute_ece(std::span<const ScoredOutcome> samples, std::size_t num_bins = 10);

/// Mean over (correct, incorrect) pairs of [s_c > s_i] with ties as 0.5.
/// Throws EmptyInput or DegenerateLabels.
double compute_auroc(std::span<const ScoredOutcome> samples);

/// JSONL {"confidence": x, "correct": bool, "variant": "..."}. Throws FeedFormatError.
std::vector<ScoredOutcome> load_outcomes(std::istream& in);

/// {"auroc", "ece", "n", "num_bins", "bins": [...]}. auroc is null when
/// only one label is present.
nlohmann::ordered_json metrics_json(std::span<const ScoredOutcome> samples,
                                    std::size_t num_bins = 10);

/// Header "bin_lower,bin_upper,mean_conf,accuracy,count", one row per bin.
std::string reliability_csv(const std::vector<ReliabilityBin>& bins);

std::map<std::string, std::vector<ScoredOutcome>> group_by_variant(
    std::span<const ScoredOutcome> samples);

}  // namespace rulegen
