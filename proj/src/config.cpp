#include "rulegen/config.hpp"

#include <fstream>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

std::optional<std::filesystem::path> opt_path(const nlohmann::json& j, const char* key,
                                              const std::filesystem::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  std::filesystem::path p = j.at(key).get<std::string>();
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

nlohmann::ordered_json path_json(const std::optional<std::filesystem::path>& p) {
  return p ? nlohmann::ordered_json(p->string()) : nlohmann::ordered_json(nullptr);
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  return j.contains(key) ? j.at(key) : empty;
}

}  // namespace

AppConfig app_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  AppConfig c;
  try {
    if (j.contains("scoring")) c.scoring = scoring_config_from_json(j.at("scoring"));
    if (j.contains("generation")) c.generation = generation_config_from_json(j.at("generation"));

    const auto& judge = section(j, "judge");
    c.thresholds.min_sensitivity = judge.value("min_sensitivity", c.thresholds.min_sensitivity);
    c.thresholds.min_specificity = judge.value("min_specificity", c.thresholds.min_specificity);
    c.thresholds.validate();
    if (judge.contains("variant")) {
      const auto v = phrasing_variant_from_string(judge.at("variant").get<std::string>());
      if (!v) throw ConfigError("unknown judge variant " + judge.at("variant").dump());
      c.judge_variant = *v;
    }
    c.judge_prompt_dir = opt_path(judge, "prompt_dir", base_dir);

    const auto& ip = section(j, "ip_validation");
    c.ip_validation.min_matches = ip.value("min_matches", c.ip_validation.min_matches);
    c.ip_validation.max_matches = ip.value("max_matches", c.ip_validation.max_matches);
    c.ip_validation.min_malicious_fraction =
        ip.value("min_malicious_fraction", c.ip_validation.min_malicious_fraction);
    c.ip_validation.validate();

    const auto& pipe = section(j, "pipeline");
    c.confidence_stage = pipe.value("confidence_stage", c.confidence_stage);
    c.traffic_stage = pipe.value("traffic_stage", c.traffic_stage);
    c.detailed_synthetic_feedback =
        pipe.value("detailed_synthetic_feedback", c.detailed_synthetic_feedback);
    c.traffic_corpus = opt_path(pipe, "traffic_corpus", base_dir);
    c.reputation = opt_path(pipe, "reputation", base_dir);

    const auto& gw = section(j, "gateway");
    c.gateway.max_attempts = gw.value("max_attempts", c.gateway.max_attempts);
    c.gateway.initial_backoff =
        std::chrono::milliseconds(gw.value("initial_backoff_ms", c.gateway.initial_backoff.count()));
    c.gateway.max_in_flight = gw.value("max_in_flight", c.gateway.max_in_flight);
    c.gateway.requests_per_minute = gw.value("requests_per_minute", c.gateway.requests_per_minute);
    c.gateway.run_budget = gw.value("run_budget", c.gateway.run_budget);
    if (c.gateway.max_attempts < 1 || c.gateway.max_in_flight < 1 || c.gateway.run_budget < 1)
      throw ConfigError("gateway limits must be positive");

    const auto& mock = section(j, "mock");
    c.mock.seed = mock.value("seed", c.mock.seed);
    c.mock.defect_rate = mock.value("defect_rate", c.mock.defect_rate);
    c.mock.feedback_sensitivity = mock.value("feedback_sensitivity", c.mock.feedback_sensitivity);
    c.mock.fixture_dir = opt_path(mock, "fixture_dir", base_dir);
    c.mock.validate();

    if (j.contains("provider")) c.provider = provider_config_from_json(j.at("provider"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

nlohmann::ordered_json to_json(const AppConfig& c) {
  nlohmann::ordered_json j;
  j["scoring"] = to_json(c.scoring);
  j["generation"] = to_json(c.generation);
  j["judge"] = {{"min_sensitivity", c.thresholds.min_sensitivity},
                {"min_specificity", c.thresholds.min_specificity},
                {"variant", std::string(to_string(c.judge_variant))},
                {"prompt_dir", path_json(c.judge_prompt_dir)}};
  j["ip_validation"] = {{"min_matches", c.ip_validation.min_matches},
                        {"max_matches", c.ip_validation.max_matches},
                        {"min_malicious_fraction", c.ip_validation.min_malicious_fraction}};
  j["pipeline"] = {{"confidence_stage", c.confidence_stage},
                   {"traffic_stage", c.traffic_stage},
                   {"detailed_synthetic_feedback", c.detailed_synthetic_feedback},
                   {"traffic_corpus", path_json(c.traffic_corpus)},
                   {"reputation", path_json(c.reputation)}};
  j["gateway"] = {{"max_attempts", c.gateway.max_attempts},
                  {"initial_backoff_ms", c.gateway.initial_backoff.count()},
                  {"max_in_flight", c.gateway.max_in_flight},
                  {"requests_per_minute", c.gateway.requests_per_minute},
                  {"run_budget", c.gateway.run_budget}};
  j["mock"] = {{"seed", c.mock.seed},
               {"defect_rate", c.mock.defect_rate},
               {"feedback_sensitivity", c.mock.feedback_sensitivity},
               {"fixture_dir", path_json(c.mock.fixture_dir)}};
  j["provider"] = to_json(c.provider);
  return j;
}

AppConfig load_app_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return app_config_from_json(j, file.parent_path());
}

}  // namespace rulegen
