#include "rulegen/rule.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <thread>
#include <utility>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

constexpr std::array<std::pair<Comparison, std::string_view>, 7> kComparisonNames{{
    {Comparison::kEquals, "equals"},
    {Comparison::kContains, "contains"},
    {Comparison::kStartsWith, "starts_with"},
    {Comparison::kEndsWith, "ends_with"},
    {Comparison::kRegex, "regex"},
    {Comparison::kEqualsIgnoreCase, "equals_ignore_case"},
    {Comparison::kContainsIgnoreCase, "contains_ignore_case"},
}};

constexpr std::array<std::pair<Variable::Kind, std::string_view>, 6> kFieldNames{{
    {Variable::Kind::kMethod, "method"},
    {Variable::Kind::kPath, "path"},
    {Variable::Kind::kPathDecoded, "path_decoded"},
    {Variable::Kind::kQueryString, "query_string"},
    {Variable::Kind::kQueryStringDecoded, "query_string_decoded"},
    {Variable::Kind::kBody, "body"},
}};

constexpr std::string_view kHeaderPrefix = "header:";

unsigned char fold(unsigned char c) { return static_cast<unsigned char>(std::tolower(c)); }

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return fold(static_cast<unsigned char>(x)) == fold(static_cast<unsigned char>(y));
         });
}

bool icontains(std::string_view hay, std::string_view needle) {
  if (needle.empty()) return true;
  const auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end(),
                              [](char x, char y) {
                                return fold(static_cast<unsigned char>(x)) ==
                                       fold(static_cast<unsigned char>(y));
                              });
  return it != hay.end();
}

bool valid_header_token(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::islower(c) || std::isdigit(c) || c == '-' || c == '_';
  });
}

std::string describe_type(const nlohmann::json& j) { return j.type_name(); }

}  // namespace

std::string_view to_string(Comparison c) noexcept {
  for (const auto& [k, name] : kComparisonNames)
    if (k == c) return name;
  return "?";
}

std::optional<Comparison> comparison_from_string(std::string_view name) noexcept {
  for (const auto& [k, n] : kComparisonNames)
    if (n == name) return k;
  return std::nullopt;
}

std::string allowed_comparisons() {
  std::string out;
  for (const auto& [k, n] : kComparisonNames) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

std::optional<Variable> Variable::parse(std::string_view name) {
  for (const auto& [k, n] : kFieldNames)
    if (n == name) return Variable(k);
  if (name.starts_with(kHeaderPrefix)) {
    const auto header_name = name.substr(kHeaderPrefix.size());
    if (valid_header_token(header_name)) return header(std::string(header_name));
  }
  return std::nullopt;
}

Variable Variable::header(std::string lowercase_name) {
  Variable v(Kind::kHeader);
  v.header_ = std::move(lowercase_name);
  return v;
}

std::string Variable::name() const {
  if (kind_ == Kind::kHeader) return std::string(kHeaderPrefix) + header_;
  for (const auto& [k, n] : kFieldNames)
    if (k == kind_) return std::string(n);
  return {};
}

std::string_view Variable::read(const HttpEvent& event) const noexcept {
  switch (kind_) {
    case Kind::kMethod: return event.method();
    case Kind::kPath: return event.path();
    case Kind::kPathDecoded: return event.path_decoded();
    case Kind::kQueryString: return event.query_string();
    case Kind::kQueryStringDecoded: return event.query_string_decoded();
    case Kind::kBody: return event.body();
    case Kind::kHeader: return event.headers().get(header_);
  }
  return {};
}

Condition::Condition(Variable var, Comparison comparison, std::string constant)
    : var_(std::move(var)), comparison_(comparison), constant_(std::move(constant)) {
  if (comparison_ == Comparison::kRegex)
    regex_ = std::make_shared<const LinearRegex>(LinearRegex::compile(constant_));
}

bool Condition::test(const HttpEvent& event) const {
  const std::string_view value = var_.read(event);
  switch (comparison_) {
    case Comparison::kEquals: return value == constant_;
    case Comparison::kContains: return value.find(constant_) != std::string_view::npos;
    case Comparison::kStartsWith: return value.starts_with(constant_);
    case Comparison::kEndsWith: return value.ends_with(constant_);
    case Comparison::kRegex: return regex_->search(value);
    case Comparison::kEqualsIgnoreCase: return iequals(value, constant_);
    case Comparison::kContainsIgnoreCase: return icontains(value, constant_);
  }
  return false;
}

bool is_valid_cve_id(std::string_view id) {
  static const std::regex pattern(R"(CVE-\d{4}-\d{4,})");
  return std::regex_match(id.begin(), id.end(), pattern);
}

DetectionRule parse_rule(std::string_view json_text, WireFormat format) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("rule is not valid JSON: ") + e.what());
  }
  return rule_from_json(j, format);
}

DetectionRule rule_from_json(const nlohmann::json& j, WireFormat format) {
  if (!j.is_object()) throw SchemaError("rule must be a JSON object, got " + describe_type(j));
  for (const auto& [key, value] : j.items()) {
    const bool core = key == "conditions" || key == "conditions_match";
    const bool envelope = key == "rule_id" || key == "cve_id";
    if (!core && !(envelope && format == WireFormat::kEnvelope))
      throw SchemaError("unknown top-level key '" + key + "'");
  }
  if (!j.contains("conditions")) throw SchemaError("missing key 'conditions'");
  if (!j.contains("conditions_match")) throw SchemaError("missing key 'conditions_match'");

  DetectionRule rule;
  const auto& match = j.at("conditions_match");
  if (!match.is_string()) throw SchemaError("'conditions_match' must be a string");
  if (match == "and") {
    rule.conditions_match = Conjunction::kAnd;
  } else if (match == "or") {
    rule.conditions_match = Conjunction::kOr;
  } else {
    throw SchemaError("'conditions_match' must be \"and\" or \"or\", got \"" +
                      match.get<std::string>() + "\"");
  }

  const auto& conds = j.at("conditions");
  if (!conds.is_array()) throw SchemaError("'conditions' must be an array");
  if (conds.empty()) throw SchemaError("'conditions' must contain at least one condition");
  for (std::size_t i = 0; i < conds.size(); ++i) {
    const auto& c = conds[i];
    const std::string where = "condition " + std::to_string(i);
    if (!c.is_object()) throw SchemaError(where + " must be an object");
    for (const auto& [key, value] : c.items())
      if (key != "var" && key != "comparison" && key != "constant")
        throw SchemaError(where + ": unknown key '" + key + "'");
    for (const char* key : {"var", "comparison", "constant"}) {
      if (!c.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
      if (!c.at(key).is_string()) throw SchemaError(where + ": '" + key + "' must be a string");
    }
    const auto var_name = c.at("var").get<std::string>();
    auto var = Variable::parse(var_name);
    if (!var)
      throw SchemaError(where + ": unknown var '" + var_name +
                        "'; allowed: method, path, path_decoded, query_string, "
                        "query_string_decoded, body, header:<lowercase-name>");
    const auto cmp_name = c.at("comparison").get<std::string>();
    const auto cmp = comparison_from_string(cmp_name);
    if (!cmp)
      throw SchemaError(where + ": unknown comparison '" + cmp_name +
                        "'; allowed: " + allowed_comparisons());
    try {
      rule.conditions.emplace_back(std::move(*var), *cmp, c.at("constant").get<std::string>());
    } catch (const RegexError& e) {
      throw RegexError(where + ": " + e.what(), i);
    }
  }

  if (format == WireFormat::kEnvelope) {
    if (auto it = j.find("rule_id"); it != j.end()) {
      if (!it->is_string()) throw SchemaError("'rule_id' must be a string");
      rule.rule_id = it->get<std::string>();
    }
    if (auto it = j.find("cve_id"); it != j.end()) {
      if (!it->is_string()) throw SchemaError("'cve_id' must be a string");
      rule.cve_id = it->get<std::string>();
      if (!is_valid_cve_id(rule.cve_id))
        throw SchemaError("'cve_id' must look like CVE-YYYY-NNNN, got '" + rule.cve_id + "'");
    }
  }
  return rule;
}

nlohmann::ordered_json rule_to_json(const DetectionRule& rule, WireFormat format) {
  nlohmann::ordered_json j;
  auto conds = nlohmann::ordered_json::array();
  for (const auto& c : rule.conditions) {
    nlohmann::ordered_json cj;
    cj["var"] = c.var().name();
    cj["comparison"] = std::string(to_string(c.comparison()));
    cj["constant"] = c.constant();
    conds.push_back(std::move(cj));
  }
  j["conditions"] = std::move(conds);
  j["conditions_match"] = rule.conditions_match == Conjunction::kAnd ? "and" : "or";
  if (format == WireFormat::kEnvelope) {
    if (!rule.rule_id.empty()) j["rule_id"] = rule.rule_id;
    if (!rule.cve_id.empty()) j["cve_id"] = rule.cve_id;
  }
  return j;
}

std::string serialize_rule(const DetectionRule& rule, WireFormat format) {
  return rule_to_json(rule, format).dump(2);
}

bool evaluate(const DetectionRule& rule, const HttpEvent& event) {
  if (rule.conditions_match == Conjunction::kAnd)
    return std::all_of(rule.conditions.begin(), rule.conditions.end(),
                       [&](const Condition& c) { return c.test(event); });
  return std::any_of(rule.conditions.begin(), rule.conditions.end(),
                     [&](const Condition& c) { return c.test(event); });
}

namespace {

TrafficStats scan(const DetectionRule& rule, std::span<const HttpEvent> events) {
  TrafficStats stats;
  for (const auto& ev : events) {
    if (!evaluate(rule, ev)) continue;
    ++stats.matched;
    if (ev.source_ip()) stats.distinct_ips.insert(*ev.source_ip());
  }
  return stats;
}

}  // namespace

TrafficStats match_corpus(const DetectionRule& rule, std::span<const HttpEvent> events,
                          unsigned workers) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(events.size() / 1024 + 1)));
  if (workers == 1) return scan(rule, events);

  std::vector<TrafficStats> partial(workers);
  {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (events.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(events.size(), w * chunk);
      const std::size_t end = std::min(events.size(), begin + chunk);
      threads.emplace_back([&, w, begin, end] {
        partial[w] = scan(rule, events.subspan(begin, end - begin));
      });
    }
  }
  TrafficStats total;
  for (auto& p : partial) {
    total.matched += p.matched;
    total.distinct_ips.merge(p.distinct_ips);
  }
  return total;
}

bool rule_inspects_body(const DetectionRule& rule) noexcept {
  return std::any_of(rule.conditions.begin(), rule.conditions.end(), [](const Condition& c) {
    return c.var().kind() == Variable::Kind::kBody;
  });
}

}  // namespace rulegen
