#include "rulegen/judge.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include "judge_prompts_embedded.hpp"
#include "rulegen/errors.hpp"
#include "rulegen/prompt_format.hpp"

namespace rulegen {

namespace {

constexpr std::array<std::pair<PhrasingVariant, std::string_view>, 4> kVariants{{
    {PhrasingVariant::kNegativeSpecific, "negative_specific"},
    {PhrasingVariant::kPositiveSpecific, "positive_specific"},
    {PhrasingVariant::kGenericConfidence, "generic_confidence"},
    {PhrasingVariant::kGenericFpFn, "generic_fp_fn"},
}};

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read prompt template " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(PhrasingVariant v) noexcept {
  for (const auto& [k, n] : kVariants)
    if (k == v) return n;
  return "negative_specific";
}

std::optional<PhrasingVariant> phrasing_variant_from_string(std::string_view s) noexcept {
  for (const auto& [k, n] : kVariants)
    if (n == s) return k;
  return std::nullopt;
}

bool answer_is_problem_probability(PhrasingVariant v) noexcept {
  return v == PhrasingVariant::kNegativeSpecific || v == PhrasingVariant::kGenericFpFn;
}

ConfidenceReport make_confidence_report(double p_miss, double p_correlate,
                                        std::string sensitivity_reasoning,
                                        std::string specificity_reasoning,
                                        PhrasingVariant variant) {
  ConfidenceReport r;
  r.sensitivity_score = 1.0 - p_miss;
  r.specificity_score = 1.0 - p_correlate;
  r.confidence = r.sensitivity_score * r.specificity_score;
  r.sensitivity_reasoning = std::move(sensitivity_reasoning);
  r.specificity_reasoning = std::move(specificity_reasoning);
  r.phrasing_variant = variant;
  return r;
}

nlohmann::ordered_json to_json(const ConfidenceReport& r) {
  nlohmann::ordered_json j;
  j["sensitivity_score"] = r.sensitivity_score;
  j["specificity_score"] = r.specificity_score;
  j["confidence"] = r.confidence;
  j["sensitivity_reasoning"] = r.sensitivity_reasoning;
  j["specificity_reasoning"] = r.specificity_reasoning;
  j["phrasing_variant"] = std::string(to_string(r.phrasing_variant));
  return j;
}

ConfidenceReport confidence_report_from_json(const nlohmann::json& j) {
  ConfidenceReport r;
  r.sensitivity_score = j.at("sensitivity_score").get<double>();
  r.specificity_score = j.at("specificity_score").get<double>();
  r.confidence = j.at("confidence").get<double>();
  r.sensitivity_reasoning = j.at("sensitivity_reasoning").get<std::string>();
  r.specificity_reasoning = j.at("specificity_reasoning").get<std::string>();
  const auto v = phrasing_variant_from_string(j.at("phrasing_variant").get<std::string>());
  if (!v) throw StoreError("unknown phrasing variant in confidence report");
  r.phrasing_variant = *v;
  return r;
}

void JudgeThresholds::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(min_sensitivity) || !in_unit(min_specificity))
    throw ConfigError("judge thresholds must lie in [0, 1]");
}

GateVerdict gate(const ConfidenceReport& report, const JudgeThresholds& thresholds) {
  const bool sens_ok = report.sensitivity_score >= thresholds.min_sensitivity;
  const bool spec_ok = report.specificity_score >= thresholds.min_specificity;
  GateVerdict v;
  v.pass = sens_ok && spec_ok;
  if (!sens_ok) {
    v.feedback += "Sensitivity concern (score " + format_score(report.sensitivity_score) +
                  ", required " + format_score(thresholds.min_sensitivity) + "):\n" +
                  report.sensitivity_reasoning;
  }
  if (!spec_ok) {
    if (!v.feedback.empty()) v.feedback += "\n\n";
    v.feedback += "Specificity concern (score " + format_score(report.specificity_score) +
                  ", required " + format_score(thresholds.min_specificity) + "):\n" +
                  report.specificity_reasoning;
  }
  return v;
}

JudgePrompts default_judge_prompts(PhrasingVariant v) {
  const auto name = to_string(v);
  return {std::string(embedded::judge_prompt(std::string(name) + ".sensitivity")),
          std::string(embedded::judge_prompt(std::string(name) + ".specificity"))};
}

JudgePrompts load_judge_prompts(const std::filesystem::path& dir, PhrasingVariant v) {
  const std::string name(to_string(v));
  return {read_file(dir / (name + ".sensitivity.txt")),
          read_file(dir / (name + ".specificity.txt"))};
}

std::optional<ScoredAnswer> parse_score_answer(std::string_view completion) {
  auto end = completion.find_last_not_of(" \t\r\n");
  if (end == std::string_view::npos) return std::nullopt;
  const auto line_start = completion.rfind('\n', end);
  const auto begin = line_start == std::string_view::npos ? 0 : line_start + 1;
  std::string_view line = completion.substr(begin, end - begin + 1);
  const auto lead = line.find_first_not_of(" \t");
  if (lead == std::string_view::npos) return std::nullopt;
  line.remove_prefix(lead);
  if (!line.starts_with("SCORE:")) return std::nullopt;
  line.remove_prefix(6);
  const std::string number(line);
  char* parse_end = nullptr;
  const double value = std::strtod(number.c_str(), &parse_end);
  if (parse_end == number.c_str()) return std::nullopt;
  for (const char* p = parse_end; *p; ++p)
    if (*p != ' ' && *p != '\t') return std::nullopt;
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) return std::nullopt;

  std::string_view reasoning = completion.substr(0, begin);
  const auto r_end = reasoning.find_last_not_of(" \t\r\n");
  reasoning = r_end == std::string_view::npos ? std::string_view{} : reasoning.substr(0, r_end + 1);
  const auto r_begin = reasoning.find_first_not_of(" \t\r\n");
  if (r_begin != std::string_view::npos) reasoning.remove_prefix(r_begin);
  return ScoredAnswer{value, std::string(reasoning)};
}

ConfidenceJudge::ConfidenceJudge(Gateway& gateway, PhrasingVariant variant,
                                 std::optional<JudgePrompts> prompts)
    : gateway_(gateway),
      variant_(variant),
      prompts_(prompts ? std::move(*prompts) : default_judge_prompts(variant)) {}

std::string ConfidenceJudge::render(const CveRecord& record, const DetectionRule& rule,
                                    bool sensitivity) const {
  DetectionRule bare = rule;
  return prompt::fill(sensitivity ? prompts_.sensitivity : prompts_.specificity,
                      {{"cve_id", record.cve_id},
                       {"description", record.tmpl.description},
                       {"examples", prompt::render_examples(record.tmpl.raw_requests)},
                       {"rule", serialize_rule(bare, WireFormat::kStrict)}});
}

ScoredAnswer ConfidenceJudge::ask(const std::string& prompt, const std::string& tag) const {
  std::string current = prompt;
  for (int round = 0; round <= kMaxReasks; ++round) {
    GenerationRequest req;
    req.prompt = current;
    req.temperature = 0.0;
    req.max_tokens = 1024;
    req.tag = round == 0 ? tag : tag + "/reask" + std::to_string(round);
    const std::string answer = gateway_.complete(req);
    if (auto parsed = parse_score_answer(answer)) return *parsed;
    current = prompt +
              "\n\nYour previous reply did not end with a line of the form "
              "\"SCORE: <number between 0 and 1>\". Answer again and finish with that line.\n";
  }
  throw ScoreParseError("judge answer for " + tag + " had no valid SCORE line after " +
                        std::to_string(kMaxReasks) + " re-asks");
}

ConfidenceReport ConfidenceJudge::judge_rule(const CveRecord& record,
                                             const DetectionRule& rule) const {
  const std::string base = "judge/" + std::string(to_string(variant_));
  auto sens = std::async(std::launch::async, [&] {
    return ask(render(record, rule, true), base + "/sensitivity/" + record.cve_id);
  });
  const ScoredAnswer spec = ask(render(record, rule, false), base + "/specificity/" + record.cve_id);
  const ScoredAnswer sen = sens.get();

  const bool problem = answer_is_problem_probability(variant_);
  const double p_miss = problem ? sen.score : 1.0 - sen.score;
  const double p_correlate = problem ? spec.score : 1.0 - spec.score;
  return make_confidence_report(p_miss, p_correlate, sen.reasoning, spec.reasoning, variant_);
}

}  // namespace rulegen
