#include "rulegen/provider_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "rulegen/errors.hpp"

namespace rulegen {

void ProviderConfig::validate() const {
  if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://"))
    throw ConfigError("provider endpoint must be an http(s) URL: " + endpoint);
  if (model.empty()) throw ConfigError("provider model is empty");
  if (api_key_env.empty()) throw ConfigError("provider api_key_env is empty");
}

nlohmann::ordered_json to_json(const ProviderConfig& c) {
  return {{"endpoint", c.endpoint},
          {"model", c.model},
          {"api_key_env", c.api_key_env},
          {"api_version", c.api_version},
          {"timeout_seconds", c.timeout.count()}};
}

ProviderConfig provider_config_from_json(const nlohmann::json& j) {
  ProviderConfig c;
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.api_version = j.value("api_version", c.api_version);
  c.timeout = std::chrono::seconds(j.value("timeout_seconds", c.timeout.count()));
  c.validate();
  return c;
}

ProviderBackend::ProviderBackend(ProviderConfig config, std::string api_key)
    : config_(std::move(config)), api_key_(std::move(api_key)) {
  config_.validate();
  if (api_key_.empty()) {
    const char* env = std::getenv(config_.api_key_env.c_str());
    if (env == nullptr || *env == '\0')
      throw ConfigError("environment variable " + config_.api_key_env + " is not set");
    api_key_ = env;
  }
  const auto scheme_end = config_.endpoint.find("://") + 3;
  const auto slash = config_.endpoint.find('/', scheme_end);
  scheme_host_port_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

std::string ProviderBackend::complete(const GenerationRequest& request) {
  request.validate();
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  const nlohmann::json body = {
      {"model", config_.model},
      {"max_tokens", request.max_tokens},
      {"temperature", request.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})}};
  const httplib::Headers headers = {{"x-api-key", api_key_},
                                    {"anthropic-version", config_.api_version}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res)
    throw BackendUnavailable("request to " + config_.endpoint +
                             " failed: " + httplib::to_string(res.error()));
  if (res->status >= 500 || res->status == 429)
    throw BackendUnavailable("provider returned HTTP " + std::to_string(res->status));
  if (res->status < 200 || res->status >= 300)
    throw BackendError("provider returned HTTP " + std::to_string(res->status) + ": " +
                       res->body.substr(0, 500));

  try {
    const auto reply = nlohmann::json::parse(res->body);
    std::string text;
    for (const auto& block : reply.at("content"))
      if (block.value("type", "text") == "text") text += block.at("text").get<std::string>();
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed provider response: ") + e.what());
  }
}

}  // namespace rulegen
