#include "rulegen/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

void check_samples(std::span<const ScoredOutcome> samples) {
  if (samples.empty()) throw EmptyInput("no scored outcomes");
  for (const auto& s : samples)
    if (!(s.confidence >= 0.0 && s.confidence <= 1.0))
      throw std::invalid_argument("confidence outside [0, 1]: " + std::to_string(s.confidence));
}

}  // namespace

std::size_t bin_index(double confidence, std::size_t num_bins) {
  // Smallest b with confidence <= (b + 1) / B; computed by comparison so the
  // edges do not depend on floating-point division rounding.
  auto b = static_cast<std::size_t>(std::ceil(confidence * static_cast<double>(num_bins)));
  b = b == 0 ? 0 : b - 1;
  while (b > 0 && confidence <= static_cast<double>(b) / static_cast<double>(num_bins)) --b;
  while (b + 1 < num_bins && confidence > static_cast<double>(b + 1) / static_cast<double>(num_bins))
    ++b;
  return std::min(b, num_bins - 1);
}

std::vector<ReliabilityBin> reliability_table(std::span<const ScoredOutcome> samples,
                                              std::size_t num_bins) {
  if (num_bins == 0) throw std::invalid_argument("num_bins must be at least 1");
  check_samples(samples);
  std::vector<ReliabilityBin> bins(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<std::size_t> hits(num_bins, 0);
  for (std::size_t b = 0; b < num_bins; ++b) {
    bins[b].lower = static_cast<double>(b) / static_cast<double>(num_bins);
    bins[b].upper = static_cast<double>(b + 1) / static_cast<double>(num_bins);
  }
  for (const auto& s : samples) {
    const auto b = bin_index(s.confidence, num_bins);
    ++bins[b].count;
    conf_sum[b] += s.confidence;
    hits[b] += s.correct;
  }
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (bins[b].count == 0) continue;
    const auto n = static_cast<double>(bins[b].count);
    bins[b].mean_confidence = conf_sum[b] / n;
    bins[b].accuracy = static_cast<double>(hits[b]) / n;
  }
  return bins;
}

double compute_ece(std::span<const ScoredOutcome> samples, std::size_t num_bins) {
  const auto bins = reliability_table(samples, num_bins);
  const auto n = static_cast<double>(samples.size());
  double ece = 0.0;
  for (const auto& b : bins)
    ece += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.mean_confidence);
  return ece;
}

double compute_auroc(std::span<const ScoredOutcome> samples) {
  check_samples(samples);
  std::vector<double> pos;
  std::vector<double> neg;
  for (const auto& s : samples) (s.correct ? pos : neg).push_back(s.confidence);
  if (pos.empty() || neg.empty())
    throw DegenerateLabels("AUROC needs at least one correct and one incorrect sample");
  std::sort(neg.begin(), neg.end());
  // For each positive score: negatives strictly below count 1, equal ones 0.5.
  // Sums are kept in integer half-units so the result is exact until the division.
  unsigned long long half_units = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    half_units += 2ULL * static_cast<unsigned long long>(lo - neg.begin()) +
                  static_cast<unsigned long long>(hi - lo);
  }
  return static_cast<double>(half_units) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<ScoredOutcome> load_outcomes(std::istream& in) {
  std::vector<ScoredOutcome> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ScoredOutcome s;
      s.confidence = j.at("confidence").get<double>();
      s.correct = j.at("correct").get<bool>();
      s.variant = j.value("variant", std::string());
      if (!(s.confidence >= 0.0 && s.confidence <= 1.0))
        throw FeedFormatError("confidence outside [0, 1]");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FeedFormatError("outcomes line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FeedFormatError& e) {
      throw FeedFormatError("outcomes line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::ordered_json metrics_json(std::span<const ScoredOutcome> samples, std::size_t num_bins) {
  nlohmann::ordered_json j;
  try {
    j["auroc"] = compute_auroc(samples);
  } catch (const DegenerateLabels&) {
    j["auroc"] = nullptr;
  }
  j["ece"] = compute_ece(samples, num_bins);
  j["n"] = samples.size();
  j["num_bins"] = num_bins;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : reliability_table(samples, num_bins))
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy},
                    {"count", b.count}});
  j["bins"] = std::move(bins);
  return j;
}

std::string reliability_csv(const std::vector<ReliabilityBin>& bins) {
  std::string out = "bin_lower,bin_upper,mean_conf,accuracy,count\n";
  char buf[160];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.10g,%.10g,%zu\n", b.lower, b.upper,
                  b.mean_confidence, b.accuracy, b.count);
    out += buf;
  }
  return out;
}

std::map<std::string, std::vector<ScoredOutcome>> group_by_variant(
    std::span<const ScoredOutcome> samples) {
  std::map<std::string, std::vector<ScoredOutcome>> out;
  for (const auto& s : samples) out[s.variant].push_back(s);
  return out;
}

}  // namespace rulegen
