#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

namespace rulegen {

struct GenerationRequest {
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 2048;
  std::string tag;  // pipeline stage label, e.g. "generate/CVE-2023-26256/c0/a1"

  /// Throws std::invalid_argument on empty prompt, temperature outside [0,1]
  /// or non-positive max_tokens.
  void validate() const;
};

/// A text-generation service. Implementations throw BackendUnavailable for
/// transient failures (retried by Gateway) and BackendError for permanent ones.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const GenerationRequest& request) = 0;
};

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::milliseconds d) override;
};

struct GatewayOptions {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};  // doubles after each failure
  unsigned max_in_flight = 5;
  unsigned requests_per_minute = 0;  // 0 = no ceiling
  std::size_t run_budget = 500;      // completions per pipeline run
};

struct CallRecord {
  std::string tag;
  std::string prompt_sha256;
  int attempts = 0;
  std::chrono::milliseconds latency{0};
  bool ok = false;
};

/// Shared front door to one backend: bounded concurrency, a global
/// requests-per-minute ceiling, retry with exponential backoff, and a
/// per-run completion budget. Thread-safe.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {},
          std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

  /// Returns the backend completion verbatim. Throws BudgetExceeded when the
  /// run budget is spent, BackendUnavailable after max_attempts transient
  /// failures, or BackendError.
  std::string complete(const GenerationRequest& request);

  /// Starts a new budget window.
  void begin_run();
  std::size_t calls_this_run() const;
  std::size_t total_calls() const;
  std::vector<CallRecord> call_log() const;

  const GatewayOptions& options() const noexcept { return options_; }

 private:
  void acquire_rate_slot();

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::shared_ptr<Clock> clock_;
  std::counting_semaphore<1024> in_flight_;

  mutable std::mutex mu_;
  std::size_t run_calls_ = 0;
  std::size_t total_calls_ = 0;
  std::deque<Clock::time_point> window_;
  std::vector<CallRecord> log_;
};

}  // namespace rulegen
