#pragma once

#include <filesystem>
#include <vector>

#include "operatrack/common.hpp"

namespace operatrack {

/// One bar marker: the score bar `bar_index` starts at `time_s` in its
/// stream.  A final marker one past the last bar records the piece end.
struct BarAnnotation {
    int bar_index = 0;
    double time_s = 0.0;
};

/// A musical section of the reference.  `voice_start` marks sections that
/// open with singing (recitatives), which the interlude gate waits for.
struct Section {
    int id = 0;
    int start_bar = 0;
    double ref_start_s = 0.0;
    bool voice_start = false;
};

/// CSV with header `bar_index,time_s`.  Times must be strictly increasing
/// and bar indices strictly increasing; violations raise ParseError.
std::vector<BarAnnotation> read_bars_csv(const std::filesystem::path& path);
void write_bars_csv(const std::filesystem::path& path,
                    const std::vector<BarAnnotation>& bars);

/// CSV with header `section_id,start_bar,ref_start_s,voice_start`.
std::vector<Section> read_sections_csv(const std::filesystem::path& path);
void write_sections_csv(const std::filesystem::path& path,
                        const std::vector<Section>& sections);

} // namespace operatrack
