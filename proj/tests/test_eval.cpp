#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <vector>

#include "operatrack/eval.hpp"

using namespace operatrack;
namespace fs = std::filesystem;

namespace {

/// Diagonal trace with exact binary-fraction times so equality checks are
/// meaningful: row i covers target_time i/8 and reports ref_time i/8 + lag.
std::vector<TrackedPosition> diagonal_trace(int rows, double lag) {
    std::vector<TrackedPosition> trace;
    for (int i = 0; i < rows; ++i) {
        TrackedPosition row;
        row.target_time = i * 0.125;
        row.ref_time = i * 0.125 + lag;
        trace.push_back(row);
    }
    return trace;
}

BarAnnotation bar(int index, double time) { return {index, time}; }

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an operatrack::Error");
    return Errc::InvalidConfig;
}

} // namespace

TEST_CASE("bar errors use the first trace row that reaches the bar") {
    // ref_time = target_time exactly: the tracker is spot on.
    const auto trace = diagonal_trace(40, 0.0);

    SUBCASE("exact tracking gives zero error") {
        const std::vector<BarAnnotation> bars_ref = {bar(0, 0.5), bar(1, 2.0),
                                                     bar(2, 3.75)};
        const auto errors = align_errors(trace, bars_ref, bars_ref);
        REQUIRE(errors.size() == 3);
        for (const BarError& e : errors) {
            CHECK(e.error_s == 0.0);
            CHECK(e.reached);
        }
        CHECK(errors[0].bar_index == 0);
        CHECK(errors[2].bar_index == 2);
    }

    SUBCASE("signed errors: positive when the tracker runs ahead") {
        // The tracker crosses ref 2.0 at target 2.0; the performance reaches
        // the bar at 2.5, so the report is 0.5 s ahead.
        const auto ahead = align_errors(trace, {bar(7, 2.5)}, {bar(7, 2.0)});
        CHECK(ahead[0].error_s == 0.5);
        // Crossing at 2.0 while the performance was there at 1.25: behind.
        const auto behind = align_errors(trace, {bar(7, 1.25)}, {bar(7, 2.0)});
        CHECK(behind[0].error_s == -0.75);
    }

    SUBCASE("a bar between rows is crossed by the next row") {
        // ref 0.5625 lies between rows 4 (0.5) and 5 (0.625): row 5 crosses.
        const auto errors =
            align_errors(trace, {bar(0, 0.625)}, {bar(0, 0.5625)});
        CHECK(errors[0].error_s == 0.0);
    }

    SUBCASE("a lagging tracker crosses late") {
        const auto lagged = diagonal_trace(40, -0.25); // reports 0.25 s behind
        const auto errors = align_errors(lagged, {bar(3, 1.0)}, {bar(3, 1.0)});
        // First ref_time >= 1.0 is row 10 (target 1.25).
        CHECK(errors[0].error_s == -0.25);
    }
}

TEST_CASE("bars the trace never reaches are scored against the trace end") {
    const auto trace = diagonal_trace(16, 0.0); // covers ref up to 1.875
    const std::vector<BarAnnotation> ref_bars = {bar(0, 1.0), bar(1, 3.0),
                                                 bar(2, 5.0)};
    const std::vector<BarAnnotation> tgt_bars = {bar(0, 1.0), bar(1, 3.5),
                                                 bar(2, 6.0)};
    const auto errors = align_errors(trace, tgt_bars, ref_bars);
    REQUIRE(errors.size() == 3);
    CHECK(errors[0].reached);
    CHECK(errors[0].error_s == 0.0);
    // trace_end = last target time + hop = 1.875 + 0.125 = 2.0.
    CHECK(!errors[1].reached);
    CHECK(errors[1].error_s == 3.5 - 2.0);
    CHECK(!errors[2].reached);
    CHECK(errors[2].error_s == 6.0 - 2.0);
}

TEST_CASE("a single-row trace has no hop to extend by") {
    std::vector<TrackedPosition> trace(1);
    trace[0].target_time = 2.0;
    trace[0].ref_time = 1.0;
    const auto errors = align_errors(trace, {bar(0, 4.0)}, {bar(0, 9.0)});
    CHECK(!errors[0].reached);
    CHECK(errors[0].error_s == 2.0);
}

TEST_CASE("bar alignment validates its inputs") {
    const auto trace = diagonal_trace(10, 0.0);
    CHECK(code_of([&] {
              align_errors({}, {bar(0, 1.0)}, {bar(0, 1.0)});
          }) == Errc::EmptyTrace);
    CHECK(code_of([&] {
              align_errors(trace, {bar(0, 1.0), bar(1, 2.0)}, {bar(0, 1.0)});
          }) == Errc::DimensionMismatch);
    CHECK(code_of([&] {
              align_errors(trace, {bar(0, 1.0)}, {bar(3, 1.0)});
          }) == Errc::DimensionMismatch);
}

TEST_CASE("summaries aggregate the expected statistics") {
    const std::vector<BarError> errors = {
        {0, -1.0, true}, {1, 2.0, true}, {2, 3.0, true}};
    const EvaluationReport report = summarize(errors);
    CHECK(report.mean_s == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(report.std_s == doctest::Approx(std::sqrt(26.0) / 3.0).epsilon(1e-12));
    CHECK(report.frac_le_1s == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(report.frac_le_2s == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(report.frac_le_5s == 1.0);
    CHECK(report.err_max_s == 3.0);
    REQUIRE(report.per_bar.size() == 3);
    CHECK(report.per_bar[1].error_s == 2.0);

    // Thresholds are inclusive.
    const EvaluationReport edge = summarize({{0, 1.0, true}, {1, -5.0, true}});
    CHECK(edge.frac_le_1s == 0.5);
    CHECK(edge.frac_le_5s == 1.0);

    CHECK(code_of([] { summarize({}); }) == Errc::EmptyTrace);
}

TEST_CASE("error curves round trip through CSV") {
    std::vector<BarError> errors;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    for (int i = 0; i < 64; ++i)
        errors.push_back({i, dist(rng), (i % 5) != 0});

    const fs::path path = fs::temp_directory_path() / "operatrack_curve.csv";
    write_error_curve_csv(path, errors);
    const auto back = read_error_curve_csv(path);
    REQUIRE(back.size() == errors.size());
    for (size_t i = 0; i < errors.size(); ++i) {
        CHECK(back[i].bar_index == errors[i].bar_index);
        CHECK(back[i].error_s == errors[i].error_s); // bitwise via %.17g
    }
    fs::remove(path);

    const fs::path bad = fs::temp_directory_path() / "operatrack_curve_bad.csv";
    std::ofstream(bad) << "error_s,bar_index\n";
    CHECK(code_of([&] { read_error_curve_csv(bad); }) == Errc::ParseError);
    std::ofstream(bad) << "bar_index,error_s\n3,not-a-number\n";
    CHECK(code_of([&] { read_error_curve_csv(bad); }) == Errc::ParseError);
    fs::remove(bad);
    CHECK(code_of([&] {
              read_error_curve_csv(fs::temp_directory_path() / "gone.csv");
          }) == Errc::FileNotFound);
}

TEST_CASE("evaluation reports round trip through JSON") {
    EvaluationReport report;
    report.mean_s = 9.6;
    report.std_s = 19.1;
    report.frac_le_1s = 0.74;
    report.frac_le_2s = 0.76;
    report.frac_le_5s = 0.78;
    report.err_max_s = 72.7;
    report.per_bar = {{0, 0.3, true}, {1, -2.75, true}, {2, 70.0, false}};

    const fs::path path = fs::temp_directory_path() / "operatrack_report.json";
    write_report_json(path, report);
    const EvaluationReport back = read_report_json(path);
    CHECK(back.mean_s == report.mean_s);
    CHECK(back.std_s == report.std_s);
    CHECK(back.frac_le_1s == report.frac_le_1s);
    CHECK(back.frac_le_2s == report.frac_le_2s);
    CHECK(back.frac_le_5s == report.frac_le_5s);
    CHECK(back.err_max_s == report.err_max_s);
    REQUIRE(back.per_bar.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.per_bar[i].bar_index == report.per_bar[i].bar_index);
        CHECK(back.per_bar[i].error_s == report.per_bar[i].error_s);
        CHECK(back.per_bar[i].reached == report.per_bar[i].reached);
    }
    fs::remove(path);

    // Awkward doubles survive as well.
    EvaluationReport awkward = report;
    awkward.mean_s = 0.1 + 0.2; // 0.30000000000000004
    awkward.err_max_s = 1.0 / 3.0;
    write_report_json(path, awkward);
    CHECK(read_report_json(path).mean_s == awkward.mean_s);
    CHECK(read_report_json(path).err_max_s == awkward.err_max_s);
    fs::remove(path);

    const fs::path bad = fs::temp_directory_path() / "operatrack_report_bad.json";
    std::ofstream(bad) << "{\"mean_s\": 1.0}\n";
    CHECK(code_of([&] { read_report_json(bad); }) == Errc::ParseError);
    std::ofstream(bad) << "{nope\n";
    CHECK(code_of([&] { read_report_json(bad); }) == Errc::ParseError);
    fs::remove(bad);
    CHECK(code_of([&] {
              read_report_json(fs::temp_directory_path() / "gone.json");
          }) == Errc::FileNotFound);
}
