#include "operatrack/annotations.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

namespace operatrack {
namespace {

std::ifstream open_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    return in;
}

/// Splits one CSV line at commas; no quoting, annotation files never need it.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ','))
        fields.push_back(field);
    if (!line.empty() && line.back() == ',')
        fields.emplace_back();
    return fields;
}

double parse_double(const std::string& text, const std::string& where) {
    try {
        size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size())
            raise(Errc::ParseError, where + ": trailing junk in '" + text + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        raise(Errc::ParseError, where + ": expected a number, got '" + text + "'");
    }
}

int parse_int(const std::string& text, const std::string& where) {
    int value = 0;
    const auto [ptr, ec] =
        std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        raise(Errc::ParseError, where + ": expected an integer, got '" + text + "'");
    return value;
}

std::string at_line(const std::filesystem::path& path, int line) {
    return path.filename().string() + ":" + std::to_string(line);
}

} // namespace

std::vector<BarAnnotation> read_bars_csv(const std::filesystem::path& path) {
    auto in = open_text(path);
    std::string line;
    if (!std::getline(in, line) || split_csv(line) !=
            std::vector<std::string>{"bar_index", "time_s"})
        raise(Errc::ParseError,
              path.filename().string() + ": expected header 'bar_index,time_s'");

    std::vector<BarAnnotation> bars;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto fields = split_csv(line);
        if (fields.size() != 2)
            raise(Errc::ParseError, at_line(path, line_no) + ": expected 2 fields");
        BarAnnotation bar;
        bar.bar_index = parse_int(fields[0], at_line(path, line_no));
        bar.time_s = parse_double(fields[1], at_line(path, line_no));
        if (!bars.empty()) {
            if (bar.bar_index <= bars.back().bar_index)
                raise(Errc::ParseError, at_line(path, line_no) +
                                            ": bar indices must increase");
            if (bar.time_s <= bars.back().time_s)
                raise(Errc::ParseError, at_line(path, line_no) +
                                            ": bar times must increase");
        }
        bars.push_back(bar);
    }
    return bars;
}

void write_bars_csv(const std::filesystem::path& path,
                    const std::vector<BarAnnotation>& bars) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << "bar_index,time_s\n";
    out.precision(9);
    for (const auto& bar : bars)
        out << bar.bar_index << ',' << bar.time_s << '\n';
}

std::vector<Section> read_sections_csv(const std::filesystem::path& path) {
    auto in = open_text(path);
    std::string line;
    if (!std::getline(in, line) ||
        split_csv(line) != std::vector<std::string>{"section_id", "start_bar",
                                                    "ref_start_s", "voice_start"})
        raise(Errc::ParseError,
              path.filename().string() +
                  ": expected header 'section_id,start_bar,ref_start_s,voice_start'");

    std::vector<Section> sections;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto fields = split_csv(line);
        if (fields.size() != 4)
            raise(Errc::ParseError, at_line(path, line_no) + ": expected 4 fields");
        Section s;
        s.id = parse_int(fields[0], at_line(path, line_no));
        s.start_bar = parse_int(fields[1], at_line(path, line_no));
        s.ref_start_s = parse_double(fields[2], at_line(path, line_no));
        const int flag = parse_int(fields[3], at_line(path, line_no));
        if (flag != 0 && flag != 1)
            raise(Errc::ParseError,
                  at_line(path, line_no) + ": voice_start must be 0 or 1");
        s.voice_start = flag == 1;
        if (!sections.empty() && s.ref_start_s <= sections.back().ref_start_s)
            raise(Errc::ParseError,
                  at_line(path, line_no) + ": section starts must increase");
        sections.push_back(s);
    }
    return sections;
}

void write_sections_csv(const std::filesystem::path& path,
                        const std::vector<Section>& sections) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << "section_id,start_bar,ref_start_s,voice_start\n";
    out.precision(9);
    for (const auto& s : sections)
        out << s.id << ',' << s.start_bar << ',' << s.ref_start_s << ','
            << (s.voice_start ? 1 : 0) << '\n';
}

} // namespace operatrack
