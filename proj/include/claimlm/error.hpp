#pragma once

#include <stdexcept>
#include <string>

namespace claimlm {

// Base for every domain failure. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CLAIMLM_ERROR_TYPE(Name, tag)                                 \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

CLAIMLM_ERROR_TYPE(ShapeError, "shape error")
CLAIMLM_ERROR_TYPE(NumericError, "numeric error")
CLAIMLM_ERROR_TYPE(DegenerateRowError, "degenerate row")
CLAIMLM_ERROR_TYPE(VocabError, "vocabulary error")
CLAIMLM_ERROR_TYPE(TrainingError, "training error")
CLAIMLM_ERROR_TYPE(LengthError, "length error")
CLAIMLM_ERROR_TYPE(ParameterError, "parameter error")
CLAIMLM_ERROR_TYPE(ConfigError, "config error")
CLAIMLM_ERROR_TYPE(FormatError, "format error")
CLAIMLM_ERROR_TYPE(ExampleRejected, "example rejected")
CLAIMLM_ERROR_TYPE(DegenerateExample, "degenerate example")
CLAIMLM_ERROR_TYPE(DivergenceError, "divergence")
CLAIMLM_ERROR_TYPE(InfiniteKlError, "infinite KL")
CLAIMLM_ERROR_TYPE(MetricError, "metric error")
CLAIMLM_ERROR_TYPE(ProviderMiss, "provider miss")
CLAIMLM_ERROR_TYPE(TransportError, "transport error")
CLAIMLM_ERROR_TYPE(DataConsistencyError, "data consistency error")
CLAIMLM_ERROR_TYPE(CalibrationError, "calibration error")
CLAIMLM_ERROR_TYPE(IoError, "io error")

#undef CLAIMLM_ERROR_TYPE

// Judge output that carries no rubric value; keeps the raw response for audit.
class JudgeParseError : public Error {
 public:
  explicit JudgeParseError(std::string raw)
      : Error("judge parse error", "no rubric score in response: " + raw), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

}  // namespace claimlm
