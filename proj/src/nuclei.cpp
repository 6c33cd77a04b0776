#include "rulegen/nuclei.hpp"

#include <array>
#include <cmath>

#include <yaml-cpp/yaml.h>

#include "rulegen/errors.hpp"
#include "rulegen/rule.hpp"

namespace rulegen {

namespace {

constexpr std::array<std::pair<Severity, std::string_view>, 5> kSeverities{{
    {Severity::kInfo, "info"},
    {Severity::kLow, "low"},
    {Severity::kMedium, "medium"},
    {Severity::kHigh, "high"},
    {Severity::kCritical, "critical"},
}};

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
}

std::string scalar_or_empty(const YAML::Node& n) {
  return n && n.IsScalar() ? n.as<std::string>() : std::string{};
}

std::string summarize_matcher(const YAML::Node& m) {
  std::string out = "type=" + scalar_or_empty(m["type"]);
  if (auto part = scalar_or_empty(m["part"]); !part.empty()) out += " part=" + part;
  for (const char* key : {"words", "regex", "status", "dsl"}) {
    const auto list = m[key];
    if (!list || !list.IsSequence()) continue;
    out += std::string(" ") + key + "=[";
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i) out += ", ";
      out += list[i].as<std::string>();
    }
    out += "]";
  }
  if (auto cond = scalar_or_empty(m["condition"]); !cond.empty()) out += " condition=" + cond;
  return out;
}

std::string trim_block(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  s.remove_prefix(b);
  // Keep the body verbatim but drop trailing blank space so that the
  // request ends with a single newline terminator.
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(0, e + 1)) + "\n";
}

}  // namespace

std::string_view to_string(Severity s) noexcept {
  for (const auto& [k, n] : kSeverities)
    if (k == s) return n;
  return "info";
}

std::optional<Severity> severity_from_string(std::string_view s) noexcept {
  for (const auto& [k, n] : kSeverities)
    if (n == s) return k;
  return std::nullopt;
}

std::string substitute_placeholders(std::string_view text) {
  std::string out(text);
  replace_all(out, "{{BaseURL}}", kPlaceholderBaseUrl);
  replace_all(out, "{{RootURL}}", kPlaceholderBaseUrl);
  replace_all(out, "{{Hostname}}", kPlaceholderHost);
  return out;
}

NucleiTemplate parse_template(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw YamlError(std::string("invalid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw YamlError("template root must be a mapping");

  NucleiTemplate t;
  try {
    t.template_id = scalar_or_empty(root["id"]);
    if (t.template_id.empty()) throw MissingField("template has no 'id'");
    const auto info = root["info"];
    if (!info || !info.IsMap()) throw MissingField("template has no 'info' section");
    t.name = scalar_or_empty(info["name"]);
    t.description = scalar_or_empty(info["description"]);
    while (!t.description.empty() && (t.description.back() == '\n' || t.description.back() == ' '))
      t.description.pop_back();
    if (t.description.empty()) throw MissingField("template has no 'info.description'");
    const auto sev = scalar_or_empty(info["severity"]);
    const auto parsed = severity_from_string(sev);
    if (!parsed) throw MissingField("template has missing or unknown 'info.severity': '" + sev + "'");
    t.severity = *parsed;

    if (const auto cls = info["classification"]; cls && cls.IsMap()) {
      if (const auto cve = cls["cve-id"]; cve) {
        if (cve.IsSequence() && cve.size() > 0) {
          t.cve_id = cve[0].as<std::string>();
        } else if (cve.IsScalar()) {
          t.cve_id = cve.as<std::string>();
        }
        if (t.cve_id) {
          for (auto& ch : *t.cve_id) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        }
      }
      if (const auto score = cls["cvss-score"]; score && score.IsScalar()) {
        const double v = score.as<double>();
        if (!(v >= 0.0 && v <= 10.0)) throw YamlError("cvss-score outside [0, 10]");
        t.cvss_score = v;
      }
    }

    for (const char* section : {"http", "requests"}) {
      const auto http = root[section];
      if (!http || !http.IsSequence()) continue;
      for (const auto& item : http) {
        if (const auto raws = item["raw"]; raws && raws.IsSequence()) {
          for (const auto& raw : raws)
            t.raw_requests.push_back(trim_block(substitute_placeholders(raw.as<std::string>())));
        }
        if (const auto paths = item["path"]; paths && paths.IsSequence()) {
          std::string method = scalar_or_empty(item["method"]);
          if (method.empty()) method = "GET";
          const std::string body = scalar_or_empty(item["body"]);
          for (const auto& p : paths) {
            std::string req = method + " " + substitute_placeholders(p.as<std::string>()) +
                              " HTTP/1.1\nHost: " + std::string(kPlaceholderHost) + "\n";
            if (!body.empty()) req += "\n" + body + "\n";
            t.raw_requests.push_back(std::move(req));
          }
        }
        if (const auto matchers = item["matchers"]; matchers && matchers.IsSequence())
          for (const auto& m : matchers) t.matcher_summaries.push_back(summarize_matcher(m));
      }
    }
  } catch (const YAML::Exception& e) {
    throw YamlError(std::string("unexpected template structure: ") + e.what());
  }

  for (std::size_t i = 0; i < t.raw_requests.size(); ++i) {
    try {
      (void)normalize_raw_http(t.raw_requests[i]);
    } catch (const MalformedRequest& e) {
      throw MalformedRequest("raw request " + std::to_string(i) + ": " + e.what());
    }
  }
  return t;
}

CveRecord make_record(NucleiTemplate tmpl, Timestamp ingested_at) {
  CveRecord r;
  if (tmpl.cve_id && is_valid_cve_id(*tmpl.cve_id)) {
    r.cve_id = *tmpl.cve_id;
  } else if (is_valid_cve_id(tmpl.template_id)) {
    r.cve_id = tmpl.template_id;
  } else {
    throw MissingField("template '" + tmpl.template_id + "' carries no CVE id");
  }
  r.tmpl = std::move(tmpl);
  r.ingested_at = ingested_at;
  return r;
}

nlohmann::ordered_json to_json(const NucleiTemplate& t) {
  nlohmann::ordered_json j;
  j["template_id"] = t.template_id;
  j["cve_id"] = t.cve_id ? nlohmann::ordered_json(*t.cve_id) : nlohmann::ordered_json(nullptr);
  j["name"] = t.name;
  j["description"] = t.description;
  j["severity"] = std::string(to_string(t.severity));
  j["cvss_score"] = t.cvss_score ? nlohmann::ordered_json(*t.cvss_score) : nlohmann::ordered_json(nullptr);
  j["raw_requests"] = t.raw_requests;
  j["matcher_summaries"] = t.matcher_summaries;
  return j;
}

NucleiTemplate template_from_json(const nlohmann::json& j) {
  NucleiTemplate t;
  t.template_id = j.at("template_id").get<std::string>();
  if (!j.at("cve_id").is_null()) t.cve_id = j.at("cve_id").get<std::string>();
  t.name = j.at("name").get<std::string>();
  t.description = j.at("description").get<std::string>();
  const auto sev = severity_from_string(j.at("severity").get<std::string>());
  if (!sev) throw StoreError("stored template has unknown severity");
  t.severity = *sev;
  if (!j.at("cvss_score").is_null()) t.cvss_score = j.at("cvss_score").get<double>();
  t.raw_requests = j.at("raw_requests").get<std::vector<std::string>>();
  t.matcher_summaries = j.at("matcher_summaries").get<std::vector<std::string>>();
  return t;
}

nlohmann::ordered_json to_json(const AuditTrail& a) {
  nlohmann::ordered_json j;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : a.entries)
    entries.push_back({{"criterion", e.criterion}, {"evidence", e.evidence}, {"weight", e.weight}});
  j["entries"] = std::move(entries);
  j["total"] = a.total;
  j["selected"] = a.selected;
  j["decided_at"] = format_rfc3339(a.decided_at);
  return j;
}

AuditTrail audit_from_json(const nlohmann::json& j) {
  AuditTrail a;
  for (const auto& e : j.at("entries"))
    a.entries.push_back({e.at("criterion").get<std::string>(), e.at("evidence").get<std::string>(),
                         e.at("weight").get<double>()});
  a.total = j.at("total").get<double>();
  a.selected = j.at("selected").get<bool>();
  const auto ts = parse_rfc3339(j.at("decided_at").get<std::string>());
  if (!ts) throw StoreError("audit decided_at is not RFC 3339");
  a.decided_at = *ts;
  return a;
}

nlohmann::ordered_json to_json(const CveRecord& r) {
  nlohmann::ordered_json j;
  j["cve_id"] = r.cve_id;
  j["template"] = to_json(r.tmpl);
  j["priority_score"] = r.priority_score ? nlohmann::ordered_json(*r.priority_score) : nlohmann::ordered_json(nullptr);
  j["score_audit"] = r.score_audit ? to_json(*r.score_audit) : nlohmann::ordered_json(nullptr);
  j["ingested_at"] = format_rfc3339(r.ingested_at);
  return j;
}

CveRecord record_from_json(const nlohmann::json& j) {
  CveRecord r;
  r.cve_id = j.at("cve_id").get<std::string>();
  r.tmpl = template_from_json(j.at("template"));
  if (!j.at("priority_score").is_null()) r.priority_score = j.at("priority_score").get<double>();
  if (!j.at("score_audit").is_null()) r.score_audit = audit_from_json(j.at("score_audit"));
  const auto ts = parse_rfc3339(j.at("ingested_at").get<std::string>());
  if (!ts) throw StoreError("record ingested_at is not RFC 3339");
  r.ingested_at = *ts;
  return r;
}

}  // namespace rulegen
