#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/event.hpp"

namespace rulegen {

enum class Severity { kInfo, kLow, kMedium, kHigh, kCritical };

std::string_view to_string(Severity s) noexcept;
std::optional<Severity> severity_from_string(std::string_view s) noexcept;

/// The slice of a Nuclei template the pipeline consumes. Placeholders in raw
/// requests are already substituted.
struct NucleiTemplate {
  std::string template_id;
  std::optional<std::string> cve_id;
  std::string name;
  std::string description;
  Severity severity = Severity::kInfo;
  std::optional<double> cvss_score;
  std::vector<std::string> raw_requests;
  std::vector<std::string> matcher_summaries;

  friend bool operator==(const NucleiTemplate&, const NucleiTemplate&) = default;
};

/// Fixed substitutes for the request-line placeholders we understand.
inline constexpr std::string_view kPlaceholderHost = "target.example";
inline constexpr std::string_view kPlaceholderBaseUrl = "http://target.example";

std::string substitute_placeholders(std::string_view text);

/// Parses a Nuclei YAML document. `http` (or legacy `requests`) entries
/// contribute their `raw` blocks, and `method` + `path` entries are rendered
/// as raw requests. Throws YamlError, MissingField, or MalformedRequest when a
/// raw block does not normalize.
NucleiTemplate parse_template(std::string_view yaml_text);

struct ScoreEntry {
  std::string criterion;
  std::string evidence;
  double weight = 0.0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct AuditTrail {
  std::vector<ScoreEntry> entries;
  double total = 0.0;
  bool selected = false;
  Timestamp decided_at{};

  friend bool operator==(const AuditTrail&, const AuditTrail&) = default;
};

struct CveRecord {
  std::string cve_id;
  NucleiTemplate tmpl;
  std::optional<double> priority_score;
  std::optional<AuditTrail> score_audit;
  Timestamp ingested_at{};

  friend bool operator==(const CveRecord&, const CveRecord&) = default;
};

/// Builds a record from a template: the classification CVE id, else the
/// template id when it is itself a CVE id. Throws MissingField otherwise.
CveRecord make_record(NucleiTemplate tmpl, Timestamp ingested_at);

nlohmann::ordered_json to_json(const NucleiTemplate& t);
NucleiTemplate template_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const AuditTrail& a);
AuditTrail audit_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const CveRecord& r);
CveRecord record_from_json(const nlohmann::json& j);

}  // namespace rulegen
