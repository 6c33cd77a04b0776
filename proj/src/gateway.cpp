#include "rulegen/gateway.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

#include "rulegen/errors.hpp"
#include "rulegen/hashing.hpp"

namespace rulegen {

void GenerationRequest::validate() const {
  if (prompt.empty()) throw std::invalid_argument("generation request has an empty prompt");
  if (!(temperature >= 0.0 && temperature <= 1.0))
    throw std::invalid_argument("temperature must lie in [0, 1]");
  if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
}

void SystemClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options,
                 std::shared_ptr<Clock> clock)
    : backend_(std::move(backend)),
      options_(options),
      clock_(std::move(clock)),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp(options.max_in_flight, 1u, 1024u))) {
  if (!backend_) throw std::invalid_argument("gateway needs a backend");
  if (options_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

void Gateway::begin_run() {
  std::lock_guard lock(mu_);
  run_calls_ = 0;
}

std::size_t Gateway::calls_this_run() const {
  std::lock_guard lock(mu_);
  return run_calls_;
}

std::size_t Gateway::total_calls() const {
  std::lock_guard lock(mu_);
  return total_calls_;
}

std::vector<CallRecord> Gateway::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void Gateway::acquire_rate_slot() {
  if (options_.requests_per_minute == 0) return;
  const auto minute = std::chrono::minutes(1);
  for (;;) {
    std::chrono::milliseconds wait{0};
    {
      std::lock_guard lock(mu_);
      const auto now = clock_->now();
      while (!window_.empty() && now - window_.front() >= minute) window_.pop_front();
      if (window_.size() < options_.requests_per_minute) {
        window_.push_back(now);
        return;
      }
      wait = std::chrono::ceil<std::chrono::milliseconds>(window_.front() + minute - now);
    }
    clock_->sleep_for(std::max(wait, std::chrono::milliseconds(1)));
  }
}

std::string Gateway::complete(const GenerationRequest& request) {
  request.validate();
  {
    std::lock_guard lock(mu_);
    if (run_calls_ >= options_.run_budget)
      throw BudgetExceeded("completion budget of " + std::to_string(options_.run_budget) +
                           " requests for this run is spent");
    ++run_calls_;
    ++total_calls_;
  }

  CallRecord record;
  record.tag = request.tag;
  record.prompt_sha256 = sha256_hex(request.prompt);
  const auto started = clock_->now();

  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  auto backoff = options_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    record.attempts = attempt;
    acquire_rate_slot();
    try {
      std::string text = backend_->complete(request);
      record.ok = true;
      record.latency =
          std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - started);
      spdlog::debug("llm call tag={} prompt={} attempts={} latency_ms={}", record.tag,
                    record.prompt_sha256.substr(0, 16), attempt, record.latency.count());
      std::lock_guard lock(mu_);
      log_.push_back(record);
      return text;
    } catch (const BackendUnavailable& e) {
      last_error = e.what();
      spdlog::warn("llm call tag={} attempt {}/{} failed: {}", record.tag, attempt,
                   options_.max_attempts, last_error);
      if (attempt < options_.max_attempts) {
        clock_->sleep_for(backoff);
        backoff *= 2;
      }
    } catch (...) {
      record.latency =
          std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - started);
      std::lock_guard lock(mu_);
      log_.push_back(record);
      throw;
    }
  }
  record.latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - started);
  {
    std::lock_guard lock(mu_);
    log_.push_back(record);
  }
  throw BackendUnavailable("backend unavailable after " + std::to_string(options_.max_attempts) +
                           " attempts: " + last_error);
}

}  // namespace rulegen
