#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace assimlab {

enum class ErrorKind {
  invalid_argument,
  empty_result,
  missing_config,
  contradiction,
  invalid_targeting,
  transport,
  quota_exceeded,
  plan_too_large,
  division_by_zero,
  infeasible_scenario,
  empty_filter,
  all_zero,
  category_mismatch,
  zero_variance,
  insufficient_data,
  unknown_category,
  rank_deficient,
  partial_snapshot,
  io,
  parse,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::empty_result: return "empty_result";
    case ErrorKind::missing_config: return "missing_config";
    case ErrorKind::contradiction: return "contradiction";
    case ErrorKind::invalid_targeting: return "invalid_targeting";
    case ErrorKind::transport: return "transport";
    case ErrorKind::quota_exceeded: return "quota_exceeded";
    case ErrorKind::plan_too_large: return "plan_too_large";
    case ErrorKind::division_by_zero: return "division_by_zero";
    case ErrorKind::infeasible_scenario: return "infeasible_scenario";
    case ErrorKind::empty_filter: return "empty_filter";
    case ErrorKind::all_zero: return "all_zero";
    case ErrorKind::category_mismatch: return "category_mismatch";
    case ErrorKind::zero_variance: return "zero_variance";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::unknown_category: return "unknown_category";
    case ErrorKind::rank_deficient: return "rank_deficient";
    case ErrorKind::partial_snapshot: return "partial_snapshot";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit a structured error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Transport failures and quota rejections can be retried; everything else
  /// is final.
  bool retryable() const noexcept {
    return kind_ == ErrorKind::transport || kind_ == ErrorKind::quota_exceeded;
  }

 private:
  ErrorKind kind_;
};

}  // namespace assimlab
