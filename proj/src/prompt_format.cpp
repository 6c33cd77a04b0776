#include "rulegen/prompt_format.hpp"

namespace rulegen::prompt {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Body of the section starting at `heading` up to the next "\n## " heading.
std::optional<std::string_view> section(std::string_view text, std::string_view heading) {
  const std::string needle = std::string(heading) + "\n";
  std::size_t pos = text.starts_with(needle) ? 0 : text.find("\n" + needle);
  if (pos == std::string_view::npos) return std::nullopt;
  if (pos != 0 || !text.starts_with(needle)) pos += 1;
  const auto start = pos + needle.size();
  const auto end = text.find("\n## ", start);
  return text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
}

}  // namespace

std::string render_examples(const std::vector<std::string>& raw_requests) {
  if (raw_requests.empty()) return "(none)\n";
  std::string out;
  for (std::size_t i = 0; i < raw_requests.size(); ++i) {
    out += std::string(kRequestOpen) + std::to_string(i + 1) + "\n";
    out += raw_requests[i];
    if (out.back() != '\n') out += '\n';
    out += std::string(kRequestClose) + "\n";
  }
  return out;
}

std::string render_context(const CveRecord& record) {
  std::string out;
  out += std::string(kCveHeading) + "\n" + record.cve_id + "\n\n";
  out += std::string(kDescriptionHeading) + "\n" + record.tmpl.description + "\n\n";
  out += std::string(kExamplesHeading) + "\n" + render_examples(record.tmpl.raw_requests);
  return out;
}

std::string fill(std::string_view tmpl,
                 const std::vector<std::pair<std::string, std::string>>& vars) {
  std::string out(tmpl);
  for (const auto& [key, value] : vars) {
    const std::string needle = "{{" + key + "}}";
    for (std::size_t pos = 0; (pos = out.find(needle, pos)) != std::string::npos;
         pos += value.size())
      out.replace(pos, needle.size(), value);
  }
  return out;
}

Sections parse_sections(std::string_view prompt) {
  Sections s;
  if (auto cve = section(prompt, kCveHeading)) s.cve_id = std::string(trim(*cve));
  if (auto d = section(prompt, kDescriptionHeading)) s.description = std::string(trim(*d));
  if (auto ex = section(prompt, kExamplesHeading)) {
    std::string_view rest = *ex;
    for (;;) {
      const auto open = rest.find(kRequestOpen);
      if (open == std::string_view::npos) break;
      const auto body = rest.find('\n', open);
      if (body == std::string_view::npos) break;
      const std::string close = "\n" + std::string(kRequestClose) + "\n";
      auto end = rest.find(close, body);
      if (end == std::string_view::npos) break;
      s.examples.emplace_back(rest.substr(body + 1, end - body));
      rest.remove_prefix(end + close.size() - 1);
    }
  }
  if (auto fb = prompt.find(std::string(kAttemptFeedbackHeading) + "\n");
      fb != std::string_view::npos) {
    const std::string item = "\n" + std::string(kAttemptItemPrefix);
    for (auto pos = prompt.find(item, fb); pos != std::string_view::npos;
         pos = prompt.find(item, pos + 1))
      ++s.attempt_feedback_items;
  }
  if (auto fence = prompt.find("```json\n"); fence != std::string_view::npos) {
    const auto start = fence + 8;
    const auto end = prompt.find("\n```", start);
    if (end != std::string_view::npos) s.rule_json = std::string(prompt.substr(start, end - start));
  }
  return s;
}

std::optional<std::string> extract_json_object(std::string_view text) {
  if (auto fence = text.find("```json"); fence != std::string_view::npos) {
    const auto start = text.find('\n', fence);
    const auto end = start == std::string_view::npos ? start : text.find("```", start);
    if (end != std::string_view::npos)
      return std::string(trim(text.substr(start + 1, end - start - 1)));
  }
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    return std::nullopt;
  return std::string(text.substr(open, close - open + 1));
}

}  // namespace rulegen::prompt
