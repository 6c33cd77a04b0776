#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rulegen/nuclei.hpp"

// Section layout shared by every prompt the pipeline sends. Builders live
// with their stages; the parser exists for the offline mock backend, which
// has to recover the CVE context from prompt text alone.
namespace rulegen::prompt {

inline constexpr std::string_view kCveHeading = "## CVE";
inline constexpr std::string_view kDescriptionHeading = "## Description";
inline constexpr std::string_view kExamplesHeading = "## Example requests";
inline constexpr std::string_view kReviewerFeedbackHeading = "## Reviewer feedback";
inline constexpr std::string_view kAttemptFeedbackHeading = "## Previous attempt feedback";
inline constexpr std::string_view kAttemptItemPrefix = "### Attempt ";
inline constexpr std::string_view kRequestOpen = "<<<REQUEST ";
inline constexpr std::string_view kRequestClose = ">>>";
inline constexpr std::string_view kRefusalPrefix = "REFUSE:";

/// "<<<REQUEST n" ... ">>>" blocks, or "(none)" when there are no requests.
std::string render_examples(const std::vector<std::string>& raw_requests);

/// The common context header: CVE id, description, example requests.
std::string render_context(const CveRecord& record);

/// Replaces every "{{key}}" occurrence.
std::string fill(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& vars);

struct Sections {
  std::string cve_id;
  std::string description;
  std::vector<std::string> examples;
  int attempt_feedback_items = 0;
  std::optional<std::string> rule_json;  // first ```json fenced block
};

Sections parse_sections(std::string_view prompt);

/// First ```json fenced block, else the span from the first '{' to the last '}'.
std::optional<std::string> extract_json_object(std::string_view text);

}  // namespace rulegen::prompt
