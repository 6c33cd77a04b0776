#pragma once

#include <chrono>
#include <string>

#include <nlohmann/json.hpp>

#include "rulegen/gateway.hpp"

namespace rulegen {

/// Messages-style HTTP API: POST {endpoint} with
/// {"model", "max_tokens", "temperature", "messages": [{"role": "user", "content": prompt}]};
/// the completion is the concatenated text of the response "content" blocks.
struct ProviderConfig {
  std::string endpoint = "https://api.anthropic.com/v1/messages";
  std::string model = "claude-3-7-sonnet-latest";
  std::string api_key_env = "ANTHROPIC_API_KEY";
  std::string api_version = "2023-06-01";
  std::chrono::seconds timeout{120};

  void validate() const;  // ConfigError
};

nlohmann::ordered_json to_json(const ProviderConfig& c);
ProviderConfig provider_config_from_json(const nlohmann::json& j);

class ProviderBackend final : public Backend {
 public:
  /// Reads the API key from the configured environment variable; an unset
  /// variable is a ConfigError. `api_key` overrides the environment.
  explicit ProviderBackend(ProviderConfig config, std::string api_key = {});

  /// 5xx, 429 and transport errors throw BackendUnavailable; other non-2xx
  /// statuses and malformed bodies throw BackendError.
  std::string complete(const GenerationRequest& request) override;

 private:
  ProviderConfig config_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace rulegen
