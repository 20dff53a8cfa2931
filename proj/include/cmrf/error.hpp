#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cmrf {

enum class Errc {
  invalid_argument,
  malformed_input,
  validation_failed,
  io_error,
  schema_mismatch,
  // model_backend
  script_exhausted,
  transport_error,
  endpoint_error,
  replay_mismatch,
  // rdu
  empty_decomposition,
  decomposition_unparseable,
  // cie
  non_contiguous_prefix,
  empty_answer,
  // cam
  verdict_unparseable,
  nonpositive_margin,
  no_pairs,
  // refinement_engine
  empty_trace,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library. `step()` is set when the failure is
/// attributable to one step of a chain (1-based).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<int> step = std::nullopt)
      : std::runtime_error(message), code_(code), step_(step) {}

  Errc code() const noexcept { return code_; }
  std::optional<int> step() const noexcept { return step_; }

 private:
  Errc code_;
  std::optional<int> step_;
};

/// Non-retryable (or retries exhausted) HTTP failure from a chat endpoint.
class EndpointError : public Error {
 public:
  EndpointError(int status, std::string body)
      : Error(Errc::endpoint_error,
              "endpoint returned HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

}  // namespace cmrf
