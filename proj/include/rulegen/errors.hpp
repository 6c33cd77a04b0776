#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rulegen {

/// Root of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// event_model
class MalformedRequest : public Error { using Error::Error; };
class CorpusCorrupt : public Error { using Error::Error; };

// rule_engine
class SchemaError : public Error { using Error::Error; };

class RegexError : public Error {
 public:
  RegexError(std::string message, std::size_t condition_index = npos)
      : Error(std::move(message)), condition_index_(condition_index) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t condition_index() const noexcept { return condition_index_; }

 private:
  std::size_t condition_index_;
};

// nuclei_ingest
class YamlError : public Error { using Error::Error; };
class MissingField : public Error { using Error::Error; };

// cve_selector
class FeedFormatError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

// llm_gateway
class BackendUnavailable : public Error { using Error::Error; };
class BackendError : public Error { using Error::Error; };
class BudgetExceeded : public Error { using Error::Error; };

// confidence_judge / validation_pipeline
class ScoreParseError : public Error { using Error::Error; };
class SyntheticGenerationFailed : public Error { using Error::Error; };

// calibration_metrics
class EmptyInput : public Error { using Error::Error; };
class DegenerateLabels : public Error { using Error::Error; };

// repository
class StoreError : public Error { using Error::Error; };
class ReviewStateError : public Error { using Error::Error; };

}  // namespace rulegen
