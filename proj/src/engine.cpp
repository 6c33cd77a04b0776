#include "rulegen/engine.hpp"

#include <algorithm>
#include <exception>
#include <future>

#include "rulegen/errors.hpp"
#include "rulegen/hashing.hpp"
#include "rulegen/prompt_format.hpp"

namespace rulegen {

namespace {

constexpr std::string_view kInstructions =
    "Write a detection rule for the web vulnerability described below. The rule is applied "
    "to individual HTTP requests and must flag requests that exploit this vulnerability "
    "while leaving ordinary traffic to the same application alone.\n\n";

constexpr std::string_view kGrammar =
    "## Rule format\n"
    "Answer with one JSON object inside a ```json fence:\n"
    "{\"conditions\": [{\"var\": V, \"comparison\": C, \"constant\": S}, ...],\n"
    " \"conditions_match\": \"and\" | \"or\"}\n"
    "V is one of method, path, path_decoded, query_string, query_string_decoded, body, or\n"
    "header:<lowercase-name>. C is one of equals, contains, starts_with, ends_with, regex,\n"
    "equals_ignore_case, contains_ignore_case. Regexes must not use backreferences or\n"
    "lookaround. Anchor the rule on the vulnerable endpoint and on the exploit itself.\n";

constexpr std::string_view kRefusal =
    "If the material above does not describe a vulnerability that can be detected in HTTP "
    "requests, do not write a rule; reply with a single line starting with \"REFUSE:\" and "
    "the reason.\n";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct LaneResult {
  CandidateRule candidate;
  std::exception_ptr error;
};

CandidateRule run_lane(const CveRecord& record, const GenerationConfig& config, Gateway& gateway,
                       CandidateValidator& validator,
                       const std::vector<std::string>& human_feedback, int index,
                       double temperature) {
  CandidateRule c;
  c.cve_id = record.cve_id;
  c.candidate_index = index;
  c.temperature = temperature;

  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    c.attempt = attempt;
    AttemptRecord rec;
    rec.attempt = attempt;
    const std::string prompt = build_prompt(record, c.feedback_history, human_feedback);
    rec.prompt_sha256 = sha256_hex(prompt);

    GenerationRequest req;
    req.prompt = prompt;
    req.temperature = temperature;
    req.max_tokens = 2048;
    req.tag = "generate/" + record.cve_id + "/c" + std::to_string(index) + "/a" +
              std::to_string(attempt);
    const std::string completion = gateway.complete(req);

    if (trim(completion).starts_with(prompt::kRefusalPrefix)) {
      rec.outcome = AttemptOutcome::kRefused;
      rec.feedback = std::string(trim(completion));
      c.refused = true;
      c.rule.reset();
      c.validation.reset();
      c.status = CandidateStatus::kRefused;
      c.attempts.push_back(std::move(rec));
      return c;
    }

    std::optional<DetectionRule> rule;
    try {
      const auto json = prompt::extract_json_object(completion);
      if (!json) throw SchemaError("no JSON object found in the answer");
      rule = parse_rule(*json, WireFormat::kEnvelope);
      if (rule->cve_id.empty()) rule->cve_id = record.cve_id;
      if (rule->rule_id.empty())
        rule->rule_id = record.cve_id + "-c" + std::to_string(index);
    } catch (const Error& e) {
      rec.outcome = AttemptOutcome::kParseError;
      rec.feedback = std::string("The previous answer was not a valid rule: ") + e.what();
    }

    if (rule) {
      rec.rule = rule;
      c.rule = rule;
      auto report = validator.validate(record, *rule);
      rec.outcome = report.passed ? AttemptOutcome::kPassed : AttemptOutcome::kFailed;
      rec.feedback = report.feedback;
      rec.validation = report;
      c.validation = std::move(report);
    } else {
      c.rule.reset();
      c.validation.reset();
    }

    const bool passed = rec.outcome == AttemptOutcome::kPassed;
    const std::string feedback = rec.feedback;
    c.attempts.push_back(std::move(rec));
    if (passed) {
      c.status = CandidateStatus::kPassed;
      return c;
    }
    if (attempt < config.max_attempts) c.feedback_history.push_back(feedback);
  }
  c.status = CandidateStatus::kFailed;
  return c;
}

nlohmann::ordered_json opt_rule(const std::optional<DetectionRule>& r) {
  return r ? rule_to_json(*r) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json opt_report(const std::optional<ValidationReport>& r) {
  return r ? to_json(*r) : nlohmann::ordered_json(nullptr);
}

}  // namespace

void GenerationConfig::validate() const {
  if (num_candidates < 1) throw ConfigError("num_candidates must be at least 1");
  if (max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  if (!(temp_low >= 0.0 && temp_low <= temp_high && temp_high <= 1.0))
    throw ConfigError("temperatures need 0 <= temp_low <= temp_high <= 1");
}

nlohmann::ordered_json to_json(const GenerationConfig& c) {
  return {{"num_candidates", c.num_candidates},
          {"max_attempts", c.max_attempts},
          {"temp_low", c.temp_low},
          {"temp_high", c.temp_high},
          {"rng_seed", c.rng_seed}};
}

GenerationConfig generation_config_from_json(const nlohmann::json& j) {
  GenerationConfig c;
  c.num_candidates = j.value("num_candidates", c.num_candidates);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.temp_low = j.value("temp_low", c.temp_low);
  c.temp_high = j.value("temp_high", c.temp_high);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

std::vector<double> sample_temperatures(const GenerationConfig& config, std::string_view cve_id,
                                        std::size_t n) {
  SeededStream stream(mix_seed(config.rng_seed, cve_id));
  std::vector<double> out(n);
  for (auto& t : out) t = stream.uniform(config.temp_low, config.temp_high);
  return out;
}

std::string build_prompt(const CveRecord& record, const std::vector<std::string>& feedback_history,
                         const std::vector<std::string>& human_feedback) {
  std::string p(kInstructions);
  p += prompt::render_context(record);
  p += "\n";
  p += kGrammar;
  if (!human_feedback.empty()) {
    p += "\n";
    p += prompt::kReviewerFeedbackHeading;
    p += "\nSecurity engineers rejected earlier rules for this CVE with these comments:\n";
    for (const auto& f : human_feedback) p += "- " + f + "\n";
  }
  if (!feedback_history.empty()) {
    p += "\n";
    p += prompt::kAttemptFeedbackHeading;
    p += "\n";
    for (std::size_t i = 0; i < feedback_history.size(); ++i) {
      p += std::string(prompt::kAttemptItemPrefix) + std::to_string(i + 1) + "\n";
      p += feedback_history[i];
      p += "\n";
    }
  }
  p += "\n";
  p += kRefusal;
  return p;
}

std::string_view to_string(CandidateStatus s) noexcept {
  switch (s) {
    case CandidateStatus::kPending: return "pending";
    case CandidateStatus::kPassed: return "passed";
    case CandidateStatus::kFailed: return "failed";
    case CandidateStatus::kRefused: return "refused";
  }
  return "pending";
}

std::string_view to_string(AttemptOutcome o) noexcept {
  switch (o) {
    case AttemptOutcome::kPassed: return "passed";
    case AttemptOutcome::kFailed: return "failed";
    case AttemptOutcome::kParseError: return "parse_error";
    case AttemptOutcome::kRefused: return "refused";
  }
  return "failed";
}

std::optional<std::size_t> select_best(const std::vector<CandidateRule>& candidates) {
  std::optional<std::size_t> best;
  auto key = [](const CandidateRule& c) {
    const auto& conf = c.validation ? c.validation->confidence : std::nullopt;
    return std::pair{conf ? conf->confidence : 0.0, conf ? conf->specificity_score : 0.0};
  };
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].status != CandidateStatus::kPassed) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto a = key(candidates[i]);
    const auto b = key(candidates[*best]);
    if (a > b || (a == b && candidates[i].candidate_index < candidates[*best].candidate_index))
      best = i;
  }
  return best;
}

GenerationOutcome generate_for_cve(const CveRecord& record, const GenerationConfig& config,
                                   Gateway& gateway, CandidateValidator& validator,
                                   const std::vector<std::string>& human_feedback) {
  config.validate();
  const auto temps = sample_temperatures(config, record.cve_id,
                                         static_cast<std::size_t>(config.num_candidates));
  std::vector<std::future<CandidateRule>> lanes;
  lanes.reserve(temps.size());
  for (int i = 0; i < config.num_candidates; ++i) {
    lanes.push_back(std::async(std::launch::async, run_lane, std::cref(record), std::cref(config),
                               std::ref(gateway), std::ref(validator), std::cref(human_feedback),
                               i, temps[static_cast<std::size_t>(i)]));
  }
  GenerationOutcome out;
  std::exception_ptr first_error;
  for (auto& f : lanes) {
    try {
      out.candidates.push_back(f.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  out.best_index = select_best(out.candidates);
  if (out.best_index) {
    auto& v = *out.candidates[*out.best_index].validation;
    v.stage_reached = Stage::kReview;
    v.review = ReviewOutcome{ReviewDecision::kPending, {}};
  }
  return out;
}

nlohmann::ordered_json to_json(const CandidateRule& c) {
  nlohmann::ordered_json j;
  j["cve_id"] = c.cve_id;
  j["candidate_index"] = c.candidate_index;
  j["attempt"] = c.attempt;
  j["temperature"] = c.temperature;
  j["status"] = std::string(to_string(c.status));
  j["refused"] = c.refused;
  j["rule"] = opt_rule(c.rule);
  j["feedback_history"] = c.feedback_history;
  j["validation"] = opt_report(c.validation);
  auto attempts = nlohmann::ordered_json::array();
  for (const auto& a : c.attempts) {
    attempts.push_back({{"attempt", a.attempt},
                        {"prompt_sha256", a.prompt_sha256},
                        {"outcome", std::string(to_string(a.outcome))},
                        {"rule", opt_rule(a.rule)},
                        {"validation", opt_report(a.validation)},
                        {"feedback", a.feedback}});
  }
  j["attempts"] = std::move(attempts);
  return j;
}

CandidateRule candidate_from_json(const nlohmann::json& j) {
  auto status_of = [](const std::string& s) {
    for (auto st : {CandidateStatus::kPending, CandidateStatus::kPassed, CandidateStatus::kFailed,
                    CandidateStatus::kRefused})
      if (to_string(st) == s) return st;
    throw StoreError("unknown candidate status '" + s + "'");
  };
  auto outcome_of = [](const std::string& s) {
    for (auto o : {AttemptOutcome::kPassed, AttemptOutcome::kFailed, AttemptOutcome::kParseError,
                   AttemptOutcome::kRefused})
      if (to_string(o) == s) return o;
    throw StoreError("unknown attempt outcome '" + s + "'");
  };
  CandidateRule c;
  c.cve_id = j.at("cve_id").get<std::string>();
  c.candidate_index = j.at("candidate_index").get<int>();
  c.attempt = j.at("attempt").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.status = status_of(j.at("status").get<std::string>());
  c.refused = j.at("refused").get<bool>();
  if (!j.at("rule").is_null()) c.rule = rule_from_json(j.at("rule"));
  c.feedback_history = j.at("feedback_history").get<std::vector<std::string>>();
  if (!j.at("validation").is_null()) c.validation = validation_report_from_json(j.at("validation"));
  for (const auto& a : j.at("attempts")) {
    AttemptRecord r;
    r.attempt = a.at("attempt").get<int>();
    r.prompt_sha256 = a.at("prompt_sha256").get<std::string>();
    r.outcome = outcome_of(a.at("outcome").get<std::string>());
    if (!a.at("rule").is_null()) r.rule = rule_from_json(a.at("rule"));
    if (!a.at("validation").is_null()) r.validation = validation_report_from_json(a.at("validation"));
    r.feedback = a.at("feedback").get<std::string>();
    c.attempts.push_back(std::move(r));
  }
  return c;
}

nlohmann::ordered_json run_manifest(const CveRecord& record, const GenerationConfig& config,
                                    const GenerationOutcome& outcome,
                                    const std::vector<std::string>& human_feedback) {
  nlohmann::ordered_json j;
  j["cve_id"] = record.cve_id;
  j["config"] = to_json(config);
  j["human_feedback"] = human_feedback;
  auto cands = nlohmann::ordered_json::array();
  for (const auto& c : outcome.candidates) cands.push_back(to_json(c));
  j["candidates"] = std::move(cands);
  if (const auto* b = outcome.best()) {
    j["best"] = {{"candidate_index", b->candidate_index},
                 {"attempt", b->attempt},
                 {"confidence", b->validation && b->validation->confidence
                                    ? nlohmann::ordered_json(b->validation->confidence->confidence)
                                    : nlohmann::ordered_json(nullptr)}};
  } else {
    j["best"] = nullptr;
  }
  return j;
}

}  // namespace rulegen
