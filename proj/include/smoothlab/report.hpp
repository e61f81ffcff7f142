#ifndef SMOOTHLAB_REPORT_HPP
#define SMOOTHLAB_REPORT_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "smoothlab/stats.hpp"

namespace smoothlab {

/// One line of a comparison report. `metric` names what `value` is:
///   "z"         pass iff |value| <= threshold
///   "l1", "abs_error", "max_error"   pass iff value <= threshold
///   "ratio"     pass iff lower <= value <= threshold
struct ReportRow {
  std::string criterion;
  std::optional<double> time;
  std::string statistic;
  double estimate = 0.0;
  double reference = 0.0;
  std::optional<double> standard_error;
  std::string metric;
  double value = 0.0;
  double threshold = 0.0;
  std::optional<double> lower;
  bool pass = false;
};

inline ReportRow z_row(const std::string& criterion, std::optional<double> time, const MomentRow& m,
                       double z_threshold) {
  return {criterion, time, m.statistic, m.estimate, m.reference, m.standard_error, "z", m.z, z_threshold,
          std::nullopt, std::abs(m.z) <= z_threshold};
}

inline std::vector<ReportRow> z_rows(const std::string& criterion, std::optional<double> time,
                                     const std::vector<MomentRow>& rows, double z_threshold) {
  std::vector<ReportRow> out;
  for (const auto& r : rows) out.push_back(z_row(criterion, time, r, z_threshold));
  return out;
}

/// |estimate - reference| <= threshold.
inline ReportRow abs_row(const std::string& criterion, std::optional<double> time, std::string statistic,
                         double estimate, double reference, double threshold) {
  const double err = std::abs(estimate - reference);
  return {criterion, time, std::move(statistic), estimate, reference, std::nullopt, "abs_error", err, threshold,
          std::nullopt, err <= threshold};
}

/// value <= threshold for a non-negative discrepancy measure.
inline ReportRow bound_row(const std::string& criterion, std::optional<double> time, std::string statistic,
                           std::string metric, double value, double threshold) {
  return {criterion, time, std::move(statistic), value, 0.0, std::nullopt, std::move(metric), value, threshold,
          std::nullopt, value <= threshold};
}

inline ReportRow ratio_row(const std::string& criterion, std::string statistic, double value, double lower,
                           double upper) {
  return {criterion, std::nullopt, std::move(statistic), value, 4.0, std::nullopt, "ratio", value, upper, lower,
          value >= lower && value <= upper};
}

inline bool all_pass(const std::vector<ReportRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

/// Chance that at least one of k independent z-rows exceeds `z` under the null.
inline double expected_false_fail_rate(const std::vector<ReportRow>& rows, double z = 3.0) {
  std::size_t k = 0;
  for (const auto& r : rows) k += r.metric == "z";
  const double p_single = std::erfc(z / std::sqrt(2.0));
  return 1.0 - std::pow(1.0 - p_single, static_cast<double>(k));
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_REPORT_HPP
