#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace algsode {

enum class ErrorCode {
  out_of_chart,
  dimension_mismatch,
  invalid_argument,
  not_composable,
  not_vertical,
  psi_singular,
  not_quadratic,
  box_too_large,
  h_too_small,
  left_domain,
  integration_failure,
  no_convergence,
  singular_jacobian,
  parse_error,
  unknown_symbol,
  evaluation_domain,
  unknown_instance,
  invalid_params,
  config_error,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::out_of_chart: return "out-of-chart";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::not_composable: return "not-composable";
    case ErrorCode::not_vertical: return "not-vertical";
    case ErrorCode::psi_singular: return "psi-singular";
    case ErrorCode::not_quadratic: return "not-quadratic";
    case ErrorCode::box_too_large: return "box-too-large";
    case ErrorCode::h_too_small: return "h-too-small";
    case ErrorCode::left_domain: return "left-domain";
    case ErrorCode::integration_failure: return "stiff/failure";
    case ErrorCode::no_convergence: return "no-convergence";
    case ErrorCode::singular_jacobian: return "singular-jacobian";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::unknown_symbol: return "unknown-symbol";
    case ErrorCode::evaluation_domain: return "evaluation-domain";
    case ErrorCode::unknown_instance: return "unknown-instance";
    case ErrorCode::invalid_params: return "invalid-params";
    case ErrorCode::config_error: return "config-error";
  }
  return "unknown";
}

/// True for failures of a numerical solver (as opposed to bad input).
[[nodiscard]] constexpr bool is_solver_failure(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::psi_singular:
    case ErrorCode::left_domain:
    case ErrorCode::integration_failure:
    case ErrorCode::no_convergence:
    case ErrorCode::singular_jacobian:
    case ErrorCode::not_vertical:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Expression parse failure with 1-based source position.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column, std::string token)
      : Error(ErrorCode::parse_error, message + " at line " + std::to_string(line) + ", column " +
                                          std::to_string(column) + " (token '" + token + "')"),
        line_(line),
        column_(column),
        token_(std::move(token)) {}

  [[nodiscard]] int line() const noexcept { return line_; }
  [[nodiscard]] int column() const noexcept { return column_; }
  [[nodiscard]] const std::string& token() const noexcept { return token_; }

 private:
  int line_;
  int column_;
  std::string token_;
};

}  // namespace algsode
