#include "rulegen/pipeline.hpp"

#include <cstdio>
#include <regex>

#include "rulegen/errors.hpp"
#include "rulegen/prompt_format.hpp"

namespace rulegen {

namespace {

std::string first_line(std::string_view raw) {
  const auto b = raw.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  raw.remove_prefix(b);
  const auto e = raw.find_first_of("\r\n");
  return std::string(raw.substr(0, e));
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", v * 100.0);
  return buf;
}

}  // namespace

std::string_view to_string(TestLabel l) noexcept {
  return l == TestLabel::kMalicious ? "malicious" : "benign";
}

std::string build_synthetic_prompt(const CveRecord& record) {
  std::string p =
      "You are writing test traffic for a detection rule. Based on the vulnerability and the "
      "example exploit requests below, write exactly 10 raw HTTP/1.1 requests: 7 malicious "
      "requests that exploit this vulnerability (vary payloads, encodings and parameters) and "
      "3 benign requests to the same application that a precise rule must not flag.\n\n";
  p += prompt::render_context(record);
  p +=
      "\n## Output format\n"
      "Emit each request under its own header line, with no other text:\n"
      "### TEST <n> [malicious]\n"
      "<raw request>\n"
      "### TEST <n> [benign]\n"
      "<raw request>\n";
  return p;
}

std::vector<SyntheticTest> parse_synthetic_tests(std::string_view completion) {
  static const std::regex header(R"(^### TEST (\d+) \[(malicious|benign)\]\s*$)");
  std::vector<SyntheticTest> tests;
  std::string current;
  std::optional<TestLabel> label;
  auto flush = [&] {
    if (!label) return;
    tests.push_back({current, *label});
    current.clear();
  };
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    const auto nl = completion.find('\n', pos);
    std::string line(completion.substr(pos, nl == std::string_view::npos ? std::string_view::npos
                                                                          : nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, header)) {
      flush();
      label = m[2] == "malicious" ? TestLabel::kMalicious : TestLabel::kBenign;
    } else if (label) {
      current += line;
      current += '\n';
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();

  std::size_t malicious = 0;
  for (auto& t : tests) {
    // Trailing blank lines belong to the separator, not the request body.
    while (t.raw_request.size() >= 2 && t.raw_request.ends_with("\n\n")) t.raw_request.pop_back();
    malicious += t.label == TestLabel::kMalicious;
  }
  if (tests.size() != kSyntheticTestCount || malicious != kSyntheticMaliciousCount)
    throw SyntheticGenerationFailed("expected 10 tests (7 malicious, 3 benign), got " +
                                    std::to_string(tests.size()) + " (" +
                                    std::to_string(malicious) + " malicious)");
  for (std::size_t i = 0; i < tests.size(); ++i) {
    try {
      (void)normalize_raw_http(tests[i].raw_request);
    } catch (const MalformedRequest& e) {
      throw SyntheticGenerationFailed("test " + std::to_string(i + 1) +
                                      " is not a parseable request: " + e.what());
    }
  }
  return tests;
}

std::vector<SyntheticTest> generate_synthetic_tests(const CveRecord& record, Gateway& gateway) {
  const std::string base = build_synthetic_prompt(record);
  std::string prompt = base;
  std::string last_error;
  for (int round = 0; round < 3; ++round) {
    GenerationRequest req;
    req.prompt = prompt;
    req.temperature = 0.7;
    req.max_tokens = 4096;
    req.tag = "synthetic/" + record.cve_id + (round ? "/retry" + std::to_string(round) : "");
    try {
      return parse_synthetic_tests(gateway.complete(req));
    } catch (const SyntheticGenerationFailed& e) {
      last_error = e.what();
      prompt = base + "\n## Problem with your previous answer\n" + last_error +
               "\nFollow the output format exactly.\n";
    }
  }
  throw SyntheticGenerationFailed("synthetic test generation for " + record.cve_id +
                                  " failed after 2 re-requests: " + last_error);
}

SyntheticOutcome run_synthetic_gate(const DetectionRule& rule, std::span<const SyntheticTest> tests) {
  SyntheticOutcome out;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& t = tests[i];
    SyntheticResult r;
    r.label = t.label;
    r.rule_matched = evaluate(rule, normalize_raw_http(t.raw_request));
    r.correct = (t.label == TestLabel::kMalicious) == r.rule_matched;
    out.correct_count += r.correct;
    if (!r.correct) {
      out.failures.push_back("Test " + std::to_string(i + 1) + " (" +
                             std::string(to_string(t.label)) + ") was " +
                             (r.rule_matched ? "flagged" : "not flagged") +
                             " by the rule: " + first_line(t.raw_request));
    }
    out.results.push_back(r);
  }
  out.passed = out.correct_count >= kSyntheticPassMinimum;
  return out;
}

ReputationMap load_reputation(std::istream& in) {
  ReputationMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto ip = j.at("ip").get<std::string>();
      const auto label = j.at("label").get<std::string>();
      Reputation r;
      if (label == "malicious") {
        r = Reputation::kMalicious;
      } else if (label == "benign") {
        r = Reputation::kBenign;
      } else if (label == "unknown") {
        r = Reputation::kUnknown;
      } else {
        throw FeedFormatError("unknown label '" + label + "'");
      }
      map[ip] = r;
    } catch (const FeedFormatError& e) {
      throw FeedFormatError("reputation line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw FeedFormatError("reputation line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return map;
}

void IpValidationConfig::validate() const {
  if (min_matches == 0 || min_matches > max_matches)
    throw ConfigError("IP validation needs 0 < min_matches <= max_matches");
  if (!(min_malicious_fraction >= 0.0 && min_malicious_fraction <= 1.0))
    throw ConfigError("min_malicious_fraction must lie in [0, 1]");
}

TrafficOutcome run_ip_validation(const DetectionRule& rule, std::span<const HttpEvent> corpus,
                                 const ReputationMap& reputation,
                                 const IpValidationConfig& config, unsigned workers) {
  TrafficOutcome out;
  if (rule_inspects_body(rule)) {
    out.skipped_reason = "body rule";
    return out;
  }
  const auto stats = match_corpus(rule, corpus, workers);
  out.matched_events = stats.matched;
  out.distinct_ip_count = stats.distinct_ips.size();
  if (out.distinct_ip_count < config.min_matches || out.distinct_ip_count > config.max_matches) {
    out.feedback = "Traffic validation: the rule matched requests from " +
                   std::to_string(out.distinct_ip_count) +
                   " distinct source IPs; the accepted window is " +
                   std::to_string(config.min_matches) + "-" + std::to_string(config.max_matches) +
                   (out.distinct_ip_count < config.min_matches
                        ? ". The rule is probably too narrow or targets the wrong field."
                        : ". The rule is probably too broad.");
    return out;
  }
  for (const auto& ip : stats.distinct_ips) {
    const auto it = reputation.find(ip);
    if (it != reputation.end() && it->second == Reputation::kMalicious) ++out.malicious_ip_count;
  }
  out.malicious_fraction =
      static_cast<double>(out.malicious_ip_count) / static_cast<double>(out.distinct_ip_count);
  out.passed = out.malicious_fraction > config.min_malicious_fraction;
  if (!out.passed) {
    out.feedback = "Traffic validation: only " + std::to_string(out.malicious_ip_count) + " of " +
                   std::to_string(out.distinct_ip_count) + " matched source IPs (" +
                   percent(out.malicious_fraction) + ") are known malicious; more than " +
                   percent(config.min_malicious_fraction) +
                   " is required. The rule likely matches legitimate traffic.";
  }
  return out;
}

std::string_view to_string(ReviewDecision d) noexcept {
  switch (d) {
    case ReviewDecision::kPending: return "pending";
    case ReviewDecision::kApproved: return "approved";
    case ReviewDecision::kRejected: return "rejected";
  }
  return "pending";
}

std::optional<ReviewDecision> review_decision_from_string(std::string_view s) noexcept {
  if (s == "pending") return ReviewDecision::kPending;
  if (s == "approved") return ReviewDecision::kApproved;
  if (s == "rejected") return ReviewDecision::kRejected;
  return std::nullopt;
}

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::kSynthetic: return "synthetic";
    case Stage::kConfidence: return "confidence";
    case Stage::kTraffic: return "traffic";
    case Stage::kReview: return "review";
  }
  return "synthetic";
}

namespace {

std::optional<Stage> stage_from_string(std::string_view s) {
  for (Stage st : {Stage::kSynthetic, Stage::kConfidence, Stage::kTraffic, Stage::kReview})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

template <typename T>
nlohmann::ordered_json opt_string(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const ValidationReport& r) {
  nlohmann::ordered_json j;
  if (r.synthetic) {
    nlohmann::ordered_json s;
    auto results = nlohmann::ordered_json::array();
    for (const auto& t : r.synthetic->results)
      results.push_back({{"label", std::string(to_string(t.label))},
                         {"rule_matched", t.rule_matched},
                         {"correct", t.correct}});
    s["results"] = std::move(results);
    s["correct_count"] = r.synthetic->correct_count;
    s["passed"] = r.synthetic->passed;
    s["failures"] = r.synthetic->failures;
    j["synthetic"] = std::move(s);
  } else {
    j["synthetic"] = nullptr;
  }
  j["confidence"] = r.confidence ? to_json(*r.confidence) : nlohmann::ordered_json(nullptr);
  if (r.traffic) {
    const auto& t = *r.traffic;
    j["traffic"] = {{"matched_events", t.matched_events},
                    {"distinct_ip_count", t.distinct_ip_count},
                    {"malicious_ip_count", t.malicious_ip_count},
                    {"malicious_fraction", t.malicious_fraction},
                    {"passed", t.passed},
                    {"skipped_reason", opt_string(t.skipped_reason)},
                    {"feedback", t.feedback}};
  } else {
    j["traffic"] = nullptr;
  }
  if (r.review) {
    j["review"] = {{"decision", std::string(to_string(r.review->decision))},
                   {"reviewer_comment", r.review->reviewer_comment}};
  } else {
    j["review"] = nullptr;
  }
  j["stage_reached"] = std::string(to_string(r.stage_reached));
  j["passed"] = r.passed;
  j["feedback"] = r.feedback;
  j["error"] = opt_string(r.error);
  return j;
}

ValidationReport validation_report_from_json(const nlohmann::json& j) {
  ValidationReport r;
  if (!j.at("synthetic").is_null()) {
    const auto& s = j.at("synthetic");
    SyntheticOutcome o;
    for (const auto& t : s.at("results"))
      o.results.push_back({t.at("label") == "malicious" ? TestLabel::kMalicious : TestLabel::kBenign,
                           t.at("rule_matched").get<bool>(), t.at("correct").get<bool>()});
    o.correct_count = s.at("correct_count").get<int>();
    o.passed = s.at("passed").get<bool>();
    o.failures = s.at("failures").get<std::vector<std::string>>();
    r.synthetic = std::move(o);
  }
  if (!j.at("confidence").is_null()) r.confidence = confidence_report_from_json(j.at("confidence"));
  if (!j.at("traffic").is_null()) {
    const auto& t = j.at("traffic");
    TrafficOutcome o;
    o.matched_events = t.at("matched_events").get<std::size_t>();
    o.distinct_ip_count = t.at("distinct_ip_count").get<std::size_t>();
    o.malicious_ip_count = t.at("malicious_ip_count").get<std::size_t>();
    o.malicious_fraction = t.at("malicious_fraction").get<double>();
    o.passed = t.at("passed").get<bool>();
    if (!t.at("skipped_reason").is_null()) o.skipped_reason = t.at("skipped_reason").get<std::string>();
    o.feedback = t.at("feedback").get<std::string>();
    r.traffic = std::move(o);
  }
  if (!j.at("review").is_null()) {
    const auto d = review_decision_from_string(j.at("review").at("decision").get<std::string>());
    if (!d) throw StoreError("unknown review decision");
    r.review = ReviewOutcome{*d, j.at("review").at("reviewer_comment").get<std::string>()};
  }
  const auto st = stage_from_string(j.at("stage_reached").get<std::string>());
  if (!st) throw StoreError("unknown stage in validation report");
  r.stage_reached = *st;
  r.passed = j.at("passed").get<bool>();
  r.feedback = j.at("feedback").get<std::string>();
  if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  return r;
}

ValidationPipeline::ValidationPipeline(Gateway& gateway, const ConfidenceJudge* judge,
                                       PipelineOptions options,
                                       std::optional<TrafficSource> traffic)
    : gateway_(gateway), judge_(judge), options_(options), traffic_(traffic) {
  options_.thresholds.validate();
  options_.ip.validate();
  if (options_.confidence_stage && judge_ == nullptr)
    throw ConfigError("confidence stage enabled without a judge");
  if (traffic_ && traffic_->reputation == nullptr)
    throw ConfigError("traffic source needs a reputation map");
}

std::vector<SyntheticTest> ValidationPipeline::synthetic_tests_for(const CveRecord& record) {
  std::lock_guard lock(mu_);
  auto it = cache_.find(record.cve_id);
  if (it == cache_.end()) {
    CachedTests entry;
    try {
      entry.tests = generate_synthetic_tests(record, gateway_);
    } catch (const SyntheticGenerationFailed& e) {
      entry.error = e.what();
    }
    it = cache_.emplace(record.cve_id, std::move(entry)).first;
  }
  if (it->second.error) throw SyntheticGenerationFailed(*it->second.error);
  return it->second.tests;
}

ValidationReport ValidationPipeline::validate(const CveRecord& record, const DetectionRule& rule) {
  ValidationReport report;

  report.stage_reached = Stage::kSynthetic;
  std::vector<SyntheticTest> tests;
  try {
    tests = synthetic_tests_for(record);
  } catch (const SyntheticGenerationFailed& e) {
    report.error = e.what();
    report.feedback = std::string("Synthetic testing could not run: ") + e.what();
    return report;
  }
  report.synthetic = run_synthetic_gate(rule, tests);
  if (!report.synthetic->passed) {
    report.feedback = "Synthetic tests: " + std::to_string(report.synthetic->correct_count) +
                      " of 10 classified correctly; at least 8 are required.";
    if (options_.detailed_synthetic_feedback)
      for (const auto& f : report.synthetic->failures) report.feedback += "\n- " + f;
    return report;
  }

  if (options_.confidence_stage) {
    report.stage_reached = Stage::kConfidence;
    try {
      report.confidence = judge_->judge_rule(record, rule);
    } catch (const ScoreParseError& e) {
      report.error = e.what();
      report.feedback = std::string("Confidence scoring failed: ") + e.what();
      return report;
    }
    const auto verdict = gate(*report.confidence, options_.thresholds);
    if (!verdict.pass) {
      report.feedback = verdict.feedback;
      return report;
    }
  }

  if (options_.traffic_stage) {
    report.stage_reached = Stage::kTraffic;
    if (!traffic_) {
      TrafficOutcome skipped;
      skipped.skipped_reason = "no traffic corpus configured";
      report.traffic = std::move(skipped);
    } else {
      report.traffic = run_ip_validation(rule, traffic_->corpus, *traffic_->reputation,
                                         options_.ip, options_.corpus_workers);
      if (!report.traffic->skipped_reason && !report.traffic->passed) {
        report.feedback = report.traffic->feedback;
        return report;
      }
    }
  }

  report.passed = true;
  return report;
}

ValidationReport ValidationPipeline::run_pipeline(const CveRecord& record,
                                                  const DetectionRule& rule) {
  auto report = validate(record, rule);
  if (report.passed) {
    report.stage_reached = Stage::kReview;
    report.review = ReviewOutcome{ReviewDecision::kPending, {}};
  }
  return report;
}

}  // namespace rulegen
