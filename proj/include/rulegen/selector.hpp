#pragma once

#include <istream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/nuclei.hpp"

namespace rulegen {

/// Keyword weights are matched as case-insensitive substrings of the
/// description; each configured phrase contributes at most once.
struct ScoringConfig {
  std::map<std::string, double> keyword_weights;
  double kev_bonus = 50.0;
  double news_bonus = 20.0;
  double selection_threshold = 40.0;

  /// The shipped table. Every number is a tunable, not a measured value.
  static ScoringConfig defaults();

  /// Throws ConfigError unless there is at least one positive and one negative
  /// weight and every keyword is non-empty lowercase.
  void validate() const;
};

nlohmann::ordered_json to_json(const ScoringConfig& c);
ScoringConfig scoring_config_from_json(const nlohmann::json& j);

using CveIdSet = std::set<std::string>;

struct ScoreResult {
  double score = 0.0;
  AuditTrail audit;
};

ScoreResult score_cve(const CveRecord& record, const CveIdSet& kev_ids, const CveIdSet& news_ids,
                      const ScoringConfig& config, Timestamp decided_at);

/// Sort key: score descending, then newer CVE year, then id ascending.
bool ranks_before(const CveRecord& a, const CveRecord& b);

struct Ranking {
  /// Every input record with priority_score and score_audit filled in.
  std::vector<CveRecord> scored;
  /// Records at or above the threshold, in rank order.
  std::vector<CveRecord> selected;
};

Ranking rank_and_select(std::vector<CveRecord> records, const ScoringConfig& config,
                        const CveIdSet& kev_ids, const CveIdSet& news_ids, Timestamp decided_at);

/// CISA KEV JSON: {"vulnerabilities": [{"cveID": ...}, ...]}. Throws FeedFormatError.
CveIdSet load_kev_catalog(std::istream& in);
/// One CVE id per line; blank lines and '#' comments ignored.
CveIdSet load_news_ids(std::istream& in);
/// Pulls every CVE id mentioned in RSS/Atom <title> elements.
CveIdSet extract_cve_ids_from_rss(std::string_view feed_xml);

}  // namespace rulegen
