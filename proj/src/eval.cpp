#include "operatrack/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace operatrack {

std::vector<BarError> align_errors(const std::vector<TrackedPosition>& trace,
                                   const std::vector<BarAnnotation>& target_bars,
                                   const std::vector<BarAnnotation>& ref_bars) {
    if (trace.empty())
        raise(Errc::EmptyTrace, "bar errors: empty trace");
    const size_t n = std::min(target_bars.size(), ref_bars.size());
    if (target_bars.size() != ref_bars.size())
        raise(Errc::DimensionMismatch,
              "bar errors: target and reference bar lists differ in length");

    std::vector<BarError> errors;
    errors.reserve(n);
    size_t cursor = 0;
    // The last row's frame still covers one hop of audio, so the trace
    // observes the stream through back().target_time + hop.  Unreached bars
    // are scored against that point.
    const double hop =
        trace.size() >= 2 ? trace[1].target_time - trace[0].target_time : 0.0;
    const double trace_end = trace.back().target_time + hop;
    for (size_t i = 0; i < n; ++i) {
        if (target_bars[i].bar_index != ref_bars[i].bar_index)
            raise(Errc::DimensionMismatch,
                  "bar errors: bar lists disagree on indices");
        const double bar_ref = ref_bars[i].time_s;
        const double bar_target = target_bars[i].time_s;
        while (cursor < trace.size() && trace[cursor].ref_time < bar_ref)
            ++cursor;
        BarError e;
        e.bar_index = target_bars[i].bar_index;
        if (cursor < trace.size()) {
            e.error_s = bar_target - trace[cursor].target_time;
            e.reached = true;
        } else {
            e.error_s = bar_target - trace_end;
            e.reached = false;
            cursor = trace.size(); // later bars are unreached too
        }
        errors.push_back(e);
    }
    return errors;
}

EvaluationReport summarize(const std::vector<BarError>& errors) {
    if (errors.empty())
        raise(Errc::EmptyTrace, "summarize: no bar errors");
    EvaluationReport report;
    report.per_bar = errors;
    const double n = static_cast<double>(errors.size());
    double sum = 0.0, sum_sq = 0.0;
    long le1 = 0, le2 = 0, le5 = 0;
    double max_abs = 0.0;
    for (const BarError& e : errors) {
        sum += e.error_s;
        sum_sq += e.error_s * e.error_s;
        const double a = std::abs(e.error_s);
        le1 += a <= 1.0 ? 1 : 0;
        le2 += a <= 2.0 ? 1 : 0;
        le5 += a <= 5.0 ? 1 : 0;
        max_abs = std::max(max_abs, a);
    }
    report.mean_s = sum / n;
    const double var = std::max(0.0, sum_sq / n - report.mean_s * report.mean_s);
    report.std_s = std::sqrt(var);
    report.frac_le_1s = le1 / n;
    report.frac_le_2s = le2 / n;
    report.frac_le_5s = le5 / n;
    report.err_max_s = max_abs;
    return report;
}

void write_error_curve_csv(const std::filesystem::path& path,
                           const std::vector<BarError>& errors) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << "bar_index,error_s\n";
    out << std::setprecision(17);
    for (const BarError& e : errors)
        out << e.bar_index << ',' << e.error_s << '\n';
}

std::vector<BarError> read_error_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "bar_index,error_s")
        raise(Errc::ParseError, path.string() + ": bad error-curve header");
    std::vector<BarError> errors;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string index_text, error_text;
        if (!std::getline(ss, index_text, ',') || !std::getline(ss, error_text))
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": expected 2 fields");
        try {
            errors.push_back({std::stoi(index_text), std::stod(error_text), true});
        } catch (const std::exception&) {
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": malformed number");
        }
    }
    return errors;
}

void write_report_json(const std::filesystem::path& path,
                       const EvaluationReport& report) {
    nlohmann::json bars = nlohmann::json::array();
    for (const BarError& e : report.per_bar)
        bars.push_back({{"bar_index", e.bar_index},
                        {"error_s", e.error_s},
                        {"reached", e.reached}});
    const nlohmann::json doc{{"mean_s", report.mean_s},
                             {"std_s", report.std_s},
                             {"frac_le_1s", report.frac_le_1s},
                             {"frac_le_2s", report.frac_le_2s},
                             {"frac_le_5s", report.frac_le_5s},
                             {"err_max_s", report.err_max_s},
                             {"bars", bars}};
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << doc.dump(2) << '\n';
}

EvaluationReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception&) {
        raise(Errc::ParseError, path.string() + ": malformed report JSON");
    }
    EvaluationReport report;
    try {
        report.mean_s = doc.at("mean_s").get<double>();
        report.std_s = doc.at("std_s").get<double>();
        report.frac_le_1s = doc.at("frac_le_1s").get<double>();
        report.frac_le_2s = doc.at("frac_le_2s").get<double>();
        report.frac_le_5s = doc.at("frac_le_5s").get<double>();
        report.err_max_s = doc.at("err_max_s").get<double>();
        for (const auto& bar : doc.at("bars"))
            report.per_bar.push_back({bar.at("bar_index").get<int>(),
                                      bar.at("error_s").get<double>(),
                                      bar.at("reached").get<bool>()});
    } catch (const nlohmann::json::exception&) {
        raise(Errc::ParseError, path.string() + ": report misses a field");
    }
    return report;
}

} // namespace operatrack
