#pragma once

#include <filesystem>
#include <vector>

#include "operatrack/annotations.hpp"
#include "operatrack/control.hpp"

namespace operatrack {

/// Signed tracking error for one bar: error_s = t_bar - t_crossing where
/// t_crossing is the first target time whose traced reference position
/// reaches the bar (positive: the tracker reported the bar early, i.e. it
/// runs ahead of the performance).  Bars the trace never reaches are scored
/// against the end of the trace and flagged.
struct BarError {
    int bar_index = 0;
    double error_s = 0.0;
    bool reached = true;
};

/// Matches bar markers of the target stream against the trace.  Bars are
/// paired positionally and must agree on bar_index.
///
/// Throws EmptyTrace for an empty trace and DimensionMismatch when the two
/// bar lists disagree on indices.
std::vector<BarError> align_errors(const std::vector<TrackedPosition>& trace,
                                   const std::vector<BarAnnotation>& target_bars,
                                   const std::vector<BarAnnotation>& ref_bars);

struct EvaluationReport {
    double mean_s = 0.0;     // signed mean error
    double std_s = 0.0;      // population standard deviation
    double frac_le_1s = 0.0; // fraction of bars with |error| <= 1 s
    double frac_le_2s = 0.0;
    double frac_le_5s = 0.0;
    double err_max_s = 0.0;  // max |error|
    std::vector<BarError> per_bar;
};

/// Aggregates per-bar errors; EmptyTrace when the list is empty.
EvaluationReport summarize(const std::vector<BarError>& errors);

/// Error curve CSV: `bar_index,error_s`.
void write_error_curve_csv(const std::filesystem::path& path,
                           const std::vector<BarError>& errors);
std::vector<BarError> read_error_curve_csv(const std::filesystem::path& path);

/// Report JSON; numbers round-trip exactly.
void write_report_json(const std::filesystem::path& path,
                       const EvaluationReport& report);
EvaluationReport read_report_json(const std::filesystem::path& path);

} // namespace operatrack
