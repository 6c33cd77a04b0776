#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rulegen/engine.hpp"
#include "rulegen/gateway.hpp"
#include "rulegen/judge.hpp"
#include "rulegen/mock_backend.hpp"
#include "rulegen/pipeline.hpp"
#include "rulegen/provider_backend.hpp"
#include "rulegen/selector.hpp"

namespace rulegen {

/// Everything one JSON config file controls. Missing sections take defaults.
struct AppConfig {
  ScoringConfig scoring = ScoringConfig::defaults();
  GenerationConfig generation;
  JudgeThresholds thresholds;
  PhrasingVariant judge_variant = PhrasingVariant::kNegativeSpecific;
  std::optional<std::filesystem::path> judge_prompt_dir;
  IpValidationConfig ip_validation;
  bool confidence_stage = true;
  bool traffic_stage = true;
  bool detailed_synthetic_feedback = true;
  std::optional<std::filesystem::path> traffic_corpus;
  std::optional<std::filesystem::path> reputation;
  GatewayOptions gateway;
  MockBehavior mock;
  ProviderConfig provider;
};

/// Relative paths inside the file are resolved against `base_dir`.
AppConfig app_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});
nlohmann::ordered_json to_json(const AppConfig& c);

/// Throws ConfigError for unreadable files, bad JSON or invalid values.
AppConfig load_app_config(const std::filesystem::path& file);

}  // namespace rulegen
