#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/event.hpp"
#include "rulegen/regex.hpp"

namespace rulegen {

enum class Comparison {
  kEquals,
  kContains,
  kStartsWith,
  kEndsWith,
  kRegex,
  kEqualsIgnoreCase,
  kContainsIgnoreCase,
};

std::string_view to_string(Comparison c) noexcept;
std::optional<Comparison> comparison_from_string(std::string_view name) noexcept;
/// Comma-separated list of accepted comparison names, in declaration order.
std::string allowed_comparisons();

enum class Conjunction { kAnd, kOr };

/// A rule variable: one of the fixed event fields or `header:<name>`.
class Variable {
 public:
  enum class Kind { kMethod, kPath, kPathDecoded, kQueryString, kQueryStringDecoded, kBody, kHeader };

  static std::optional<Variable> parse(std::string_view name);
  static Variable header(std::string lowercase_name);
  explicit Variable(Kind kind) : kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& header_name() const noexcept { return header_; }
  std::string name() const;
  /// Field value in `event`; absent headers read as the empty string.
  std::string_view read(const HttpEvent& event) const noexcept;

  friend bool operator==(const Variable&, const Variable&) = default;

 private:
  Kind kind_;
  std::string header_;
};

/// One (var, comparison, constant) test. Regex constants are compiled once
/// at construction.
class Condition {
 public:
  /// Throws RegexError when comparison is kRegex and the constant does not compile.
  Condition(Variable var, Comparison comparison, std::string constant);

  const Variable& var() const noexcept { return var_; }
  Comparison comparison() const noexcept { return comparison_; }
  const std::string& constant() const noexcept { return constant_; }

  bool test(const HttpEvent& event) const;

  friend bool operator==(const Condition& a, const Condition& b) {
    return a.var_ == b.var_ && a.comparison_ == b.comparison_ && a.constant_ == b.constant_;
  }

 private:
  Variable var_;
  Comparison comparison_;
  std::string constant_;
  std::shared_ptr<const LinearRegex> regex_;
};

struct DetectionRule {
  std::vector<Condition> conditions;
  Conjunction conditions_match = Conjunction::kAnd;
  std::string rule_id;  // empty when absent
  std::string cve_id;   // empty when absent

  friend bool operator==(const DetectionRule&, const DetectionRule&) = default;
};

/// kEnvelope accepts/emits the optional top-level "rule_id" and "cve_id";
/// kStrict is the bare {"conditions", "conditions_match"} document.
enum class WireFormat { kEnvelope, kStrict };

/// Throws SchemaError (shape, enum values, unknown keys) or RegexError.
DetectionRule parse_rule(std::string_view json_text, WireFormat format = WireFormat::kEnvelope);
DetectionRule rule_from_json(const nlohmann::json& j, WireFormat format = WireFormat::kEnvelope);

/// Canonical form: keys in the order conditions, conditions_match, rule_id, cve_id;
/// two-space indentation. parse_rule(serialize_rule(r)) == r.
std::string serialize_rule(const DetectionRule& rule, WireFormat format = WireFormat::kEnvelope);
nlohmann::ordered_json rule_to_json(const DetectionRule& rule,
                                    WireFormat format = WireFormat::kEnvelope);

bool is_valid_cve_id(std::string_view id);

bool evaluate(const DetectionRule& rule, const HttpEvent& event);

struct TrafficStats {
  std::size_t matched = 0;
  std::set<std::string> distinct_ips;

  friend bool operator==(const TrafficStats&, const TrafficStats&) = default;
};

/// Scans `events`; with workers > 1 the corpus is split into contiguous shards
/// and the partial results are merged (same result as the sequential fold).
TrafficStats match_corpus(const DetectionRule& rule, std::span<const HttpEvent> events,
                          unsigned workers = 1);

bool rule_inspects_body(const DetectionRule& rule) noexcept;

}  // namespace rulegen
