#include "rulegen/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rulegen/errors.hpp"
#include "rulegen/hashing.hpp"
#include "rulegen/prompt_format.hpp"
#include "rulegen/regex.hpp"
#include "rulegen/rule.hpp"

namespace rulegen {

namespace {

struct Signature {
  Comparison comparison;
  std::string_view constant;
};

// Payload markers the mock recognises, most specific first.
constexpr Signature kSignatures[] = {
    {Comparison::kContains, "../"},
    {Comparison::kContains, "/etc/passwd"},
    {Comparison::kContainsIgnoreCase, "${jndi:"},
    {Comparison::kContainsIgnoreCase, "<script"},
    {Comparison::kRegex, R"((?i)union(\s|\+|/\*\*/)+select)"},
    {Comparison::kRegex, R"((;|\||&&|\$\(|`)\s*(id|cat|whoami|uname|wget|curl|sh)\b)"},
    {Comparison::kContainsIgnoreCase, "sleep("},
};

constexpr std::string_view kBenignValues[] = {"welcome", "report-2024.pdf", "en-US"};

struct Payload {
  Variable var{Variable::Kind::kQueryStringDecoded};
  Comparison comparison = Comparison::kContains;
  std::string constant;
  bool field_has_quote = false;
  std::size_t path_offset = 0;  // decoded-path position, path payloads only
};

bool signature_hits(const Signature& s, std::string_view field) {
  switch (s.comparison) {
    case Comparison::kContains:
      return field.find(s.constant) != std::string_view::npos;
    case Comparison::kContainsIgnoreCase: {
      std::string lower(field);
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      return lower.find(s.constant) != std::string::npos;
    }
    default:
      return LinearRegex::compile(s.constant).search(field);
  }
}

std::optional<Payload> find_signature(const HttpEvent& e) {
  const std::pair<Variable::Kind, const std::string*> fields[] = {
      {Variable::Kind::kQueryStringDecoded, &e.query_string_decoded()},
      {Variable::Kind::kBody, &e.body()},
      {Variable::Kind::kPathDecoded, &e.path_decoded()},
  };
  for (const auto& sig : kSignatures) {
    for (const auto& [kind, text] : fields) {
      if (!signature_hits(sig, *text)) continue;
      Payload p;
      p.var = Variable(kind);
      p.comparison = sig.comparison;
      p.constant = std::string(sig.constant);
      p.field_has_quote = text->find('\'') != std::string::npos;
      if (kind == Variable::Kind::kPathDecoded) {
        const auto at = sig.comparison == Comparison::kContains ? text->find(sig.constant) : 0;
        const auto slash = text->rfind('/', at == 0 ? 0 : at - 1);
        p.path_offset = slash == std::string::npos ? 1 : slash + 1;
      }
      return p;
    }
  }
  return std::nullopt;
}

std::vector<std::pair<std::string, std::string>> split_params(std::string_view s) {
  std::vector<std::pair<std::string, std::string>> out;
  while (!s.empty()) {
    const auto amp = s.find('&');
    const auto part = s.substr(0, amp);
    const auto eq = part.find('=');
    if (!part.empty())
      out.emplace_back(std::string(part.substr(0, eq)),
                       eq == std::string_view::npos ? "" : std::string(part.substr(eq + 1)));
    if (amp == std::string_view::npos) break;
    s.remove_prefix(amp + 1);
  }
  return out;
}

bool form_like(std::string_view body) {
  return !body.empty() && body.find('=') != std::string_view::npos &&
         body.find_first_of("{}<") == std::string_view::npos;
}

std::optional<Payload> fallback_payload(const HttpEvent& e) {
  std::optional<Payload> best;
  auto consider = [&](Variable::Kind kind, std::string_view source) {
    for (const auto& [k, v] : split_params(source)) {
      const auto decoded = percent_decode(v);
      if (decoded.size() < 3) continue;
      if (!best || decoded.size() > best->constant.size()) {
        Payload p;
        p.var = Variable(kind);
        p.constant = decoded;
        p.field_has_quote = decoded.find('\'') != std::string::npos;
        best = p;
      }
    }
  };
  consider(Variable::Kind::kQueryStringDecoded, e.query_string());
  if (form_like(e.body())) consider(Variable::Kind::kBody, e.body());
  return best;
}

std::string fenced(const DetectionRule& rule) {
  return "Here is the rule.\n\n```json\n" + serialize_rule(rule, WireFormat::kStrict) + "\n```\n";
}

HttpEvent with_fields(const HttpEvent& base, std::string path, std::string query,
                      HeaderMap headers, std::string body) {
  return HttpEvent(base.method(), std::move(path), std::move(query), std::move(headers),
                   std::move(body), std::nullopt, std::nullopt);
}

HeaderMap replace_header(const HeaderMap& headers, std::string_view name, std::string value) {
  HeaderMap out;
  bool replaced = false;
  for (const auto& [k, v] : headers.entries()) {
    if (k == name) {
      out.add(k, value);
      replaced = true;
    } else {
      out.add(k, v);
    }
  }
  if (!replaced) out.add(name, value);
  return out;
}

std::string benign_params(std::string_view source, std::string_view value) {
  std::string out;
  for (const auto& [k, v] : split_params(source)) {
    if (!out.empty()) out += '&';
    out += k + "=" + std::string(value);
  }
  return out;
}

CveRecord record_from_sections(const prompt::Sections& s) {
  CveRecord r;
  r.cve_id = s.cve_id;
  r.tmpl.template_id = s.cve_id;
  r.tmpl.cve_id = s.cve_id;
  r.tmpl.description = s.description;
  r.tmpl.raw_requests = s.examples;
  return r;
}

bool endpoint_anchored(const DetectionRule& rule) {
  if (rule.conditions_match != Conjunction::kAnd) return false;
  return std::any_of(rule.conditions.begin(), rule.conditions.end(), [](const Condition& c) {
    const auto k = c.var().kind();
    const auto cmp = c.comparison();
    return (k == Variable::Kind::kPath || k == Variable::Kind::kPathDecoded) &&
           (cmp == Comparison::kEquals || cmp == Comparison::kStartsWith ||
            cmp == Comparison::kEqualsIgnoreCase) &&
           c.constant().size() > 1;
  });
}

std::optional<std::string> generic_constant(const DetectionRule& rule) {
  for (const auto& c : rule.conditions) {
    if (c.var().kind() == Variable::Kind::kMethod) continue;
    if (c.constant().size() <= 2) return c.constant();
  }
  return std::nullopt;
}

std::string score_line(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "SCORE: %.4f", std::clamp(v, 0.0, 1.0));
  return buf;
}

int tag_number(std::string_view tag, std::string_view marker) {
  const auto pos = tag.find(marker);
  if (pos == std::string_view::npos) return 0;
  int n = 0;
  for (auto i = pos + marker.size(); i < tag.size() && std::isdigit(static_cast<unsigned char>(tag[i])); ++i)
    n = n * 10 + (tag[i] - '0');
  return n;
}

}  // namespace

void MockBehavior::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(defect_rate) || !in_unit(feedback_sensitivity))
    throw ConfigError("mock defect_rate and feedback_sensitivity must lie in [0, 1]");
}

std::string_view to_string(FlawClass f) noexcept {
  switch (f) {
    case FlawClass::kNone: return "none";
    case FlawClass::kOverBroad: return "over_broad";
    case FlawClass::kMissingEndpoint: return "missing_endpoint";
  }
  return "none";
}

double planted_flaw_probability(const MockBehavior& behavior, int feedback_rounds) {
  return behavior.defect_rate * std::pow(behavior.feedback_sensitivity, feedback_rounds);
}

FlawClass planted_flaw(const MockBehavior& behavior, std::string_view cve_id, int candidate_index,
                       int feedback_rounds) {
  const std::string lane = "c" + std::to_string(candidate_index);
  const double u = unit_interval(mix_seed(behavior.seed, cve_id, lane, std::string_view("flaw")));
  if (!(u < planted_flaw_probability(behavior, feedback_rounds))) return FlawClass::kNone;
  const double k = unit_interval(mix_seed(behavior.seed, cve_id, lane, std::string_view("class")));
  return k < 0.5 ? FlawClass::kOverBroad : FlawClass::kMissingEndpoint;
}

std::size_t exploit_request_index(const std::vector<std::string>& raw_requests) {
  for (std::size_t i = 0; i < raw_requests.size(); ++i) {
    try {
      if (find_signature(normalize_raw_http(raw_requests[i]))) return i;
    } catch (const MalformedRequest&) {
    }
  }
  return 0;
}

std::string mock_generate_rule(const CveRecord& cve, int candidate_index, int feedback_rounds,
                               const MockBehavior& behavior) {
  if (cve.tmpl.raw_requests.empty())
    return std::string(prompt::kRefusalPrefix) +
           " This is not describing a web vulnerability or HTTP-based attack.\n";

  const auto e = normalize_raw_http(cve.tmpl.raw_requests[exploit_request_index(cve.tmpl.raw_requests)]);
  auto payload = find_signature(e);
  if (!payload) payload = fallback_payload(e);

  std::vector<Condition> conds;
  if (payload && payload->var.kind() == Variable::Kind::kPathDecoded) {
    conds.emplace_back(Variable(Variable::Kind::kPathDecoded), Comparison::kStartsWith,
                       e.path_decoded().substr(0, payload->path_offset));
  } else {
    conds.emplace_back(Variable(Variable::Kind::kPath), Comparison::kEquals, e.path());
  }

  switch (planted_flaw(behavior, cve.cve_id, candidate_index, feedback_rounds)) {
    case FlawClass::kNone:
      if (payload) conds.emplace_back(payload->var, payload->comparison, payload->constant);
      break;
    case FlawClass::kOverBroad: {
      const Variable var = payload ? payload->var : Variable(Variable::Kind::kQueryString);
      const bool quote = payload && payload->field_has_quote;
      conds.emplace_back(var, Comparison::kContains, quote ? "'" : "=");
      break;
    }
    case FlawClass::kMissingEndpoint:
      if (payload) conds.front() = Condition(payload->var, payload->comparison, payload->constant);
      break;
  }
  DetectionRule rule;
  rule.conditions = std::move(conds);
  rule.conditions_match = Conjunction::kAnd;
  return fenced(rule);
}

std::string mock_synthetic_tests(const CveRecord& cve) {
  if (cve.tmpl.raw_requests.empty()) return "No example requests were provided.\n";
  const auto e = normalize_raw_http(cve.tmpl.raw_requests[exploit_request_index(cve.tmpl.raw_requests)]);
  const auto payload = find_signature(e);

  std::string out;
  for (int k = 1; k <= 7; ++k) {
    std::string query = e.query_string();
    query += (query.empty() ? "" : "&") + std::string("ts=") + std::to_string(1000 + k);
    auto headers = replace_header(e.headers(), "user-agent", "scanner/" + std::to_string(k));
    out += "### TEST " + std::to_string(k) + " [malicious]\n";
    out += render_raw_http(with_fields(e, e.path(), query, std::move(headers), e.body()));
    out += "\n\n";
  }
  for (int k = 0; k < 3; ++k) {
    const auto value = kBenignValues[k];
    std::string path = e.path();
    if (payload && payload->var.kind() == Variable::Kind::kPathDecoded)
      path = e.path_decoded().substr(0, payload->path_offset) + "index.html";
    std::string body = e.body();
    if (form_like(body)) {
      body = benign_params(body, value);
    } else if (!body.empty()) {
      body = "{\"q\":\"" + std::string(value) + "\"}";
    }
    auto headers = replace_header(e.headers(), "user-agent", "Mozilla/5.0");
    if (headers.contains("content-length"))
      headers = replace_header(headers, "content-length", std::to_string(body.size()));
    out += "### TEST " + std::to_string(8 + k) + " [benign]\n";
    out += render_raw_http(
        with_fields(e, std::move(path), benign_params(e.query_string(), value), std::move(headers),
                    std::move(body)));
    out += "\n\n";
  }
  return out;
}

std::string mock_judge_answer(const CveRecord& cve, std::string_view rule_json,
                              PhrasingVariant variant, bool sensitivity,
                              const MockBehavior& behavior) {
  DetectionRule rule;
  try {
    rule = parse_rule(rule_json, WireFormat::kStrict);
  } catch (const Error&) {
    return "The rule could not be read.\n" + score_line(0.9);
  }

  std::string reasoning;
  double p = 0.0;
  if (sensitivity) {
    bool hit = false;
    for (const auto& raw : cve.tmpl.raw_requests) {
      try {
        hit = hit || evaluate(rule, normalize_raw_http(raw));
      } catch (const MalformedRequest&) {
      }
    }
    if (hit) {
      p = 0.08;
      reasoning =
          "The rule fires on the documented exploit request. Its payload test should also catch "
          "the usual variations of this attack, though a heavily re-encoded payload might slip "
          "through.";
    } else {
      p = 0.65;
      reasoning =
          "The rule does not fire on the documented exploit request, so it would miss the attack "
          "as published. The conditions need to follow what the exploit actually sends.";
    }
  } else if (const auto g = generic_constant(rule)) {
    p = 0.75;
    reasoning = "The condition on \"" + *g +
                "\" keys on a character that appears in plenty of harmless input and in attacks "
                "on unrelated software. That is far broader than this vulnerability.";
    if (*g == "'")
      reasoning = "The rule keys on a single quote, which appears in plenty of harmless input "
                  "and in attacks on unrelated software. That is far broader than this "
                  "vulnerability.";
  } else if (endpoint_anchored(rule)) {
    p = 0.10;
    reasoning =
        "The rule requires both the vulnerable endpoint and an exploit-specific payload. Requests "
        "to other pages, or to this endpoint without the payload, will not trigger it.";
  } else {
    p = 0.60;
    reasoning =
        "Nothing in the rule ties it to the vulnerable endpoint. The payload pattern on its own "
        "is shared by attacks on many other applications, so the rule would also fire on probes "
        "that have nothing to do with this CVE.";
  }

  const std::string dim = sensitivity ? "sensitivity" : "specificity";
  const auto canonical = serialize_rule(rule, WireFormat::kStrict);
  SeededStream noise(mix_seed(behavior.seed, to_string(variant), std::string_view(dim), canonical));
  double answer = 0.0;
  switch (variant) {
    case PhrasingVariant::kNegativeSpecific:
      answer = p + noise.uniform(-0.07, 0.07);
      break;
    case PhrasingVariant::kGenericFpFn:
      answer = p + noise.uniform(-0.25, 0.25);
      break;
    case PhrasingVariant::kPositiveSpecific:
      answer = 1.0 - 0.4 * p + noise.uniform(-0.05, 0.05);
      break;
    case PhrasingVariant::kGenericConfidence:
      answer = noise.uniform(0.7, 0.9);
      break;
  }
  return reasoning + "\n\n" + score_line(answer) + "\n";
}

MockBackend::MockBackend(MockBehavior behavior) : behavior_(std::move(behavior)) {
  behavior_.validate();
}

std::string MockBackend::complete(const GenerationRequest& request) {
  request.validate();
  if (behavior_.fixture_dir) {
    const auto path = *behavior_.fixture_dir / (sha256_hex(request.prompt) + ".txt");
    if (std::ifstream in{path}) {
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    }
  }

  const std::string_view tag = request.tag;
  const auto sections = prompt::parse_sections(request.prompt);
  const auto record = record_from_sections(sections);
  if (tag.starts_with("generate/"))
    return mock_generate_rule(record, tag_number(tag, "/c"), sections.attempt_feedback_items,
                              behavior_);
  if (tag.starts_with("synthetic/")) return mock_synthetic_tests(record);
  if (tag.starts_with("judge/")) {
    const auto rest = tag.substr(6);
    const auto variant = phrasing_variant_from_string(rest.substr(0, rest.find('/')));
    if (!variant || !sections.rule_json)
      throw BackendError("mock backend cannot interpret judge request " + request.tag);
    const bool sensitivity = rest.find("/sensitivity/") != std::string_view::npos;
    return mock_judge_answer(record, *sections.rule_json, *variant, sensitivity, behavior_);
  }
  throw BackendError("mock backend has no behaviour for tag '" + request.tag + "'");
}

}  // namespace rulegen
