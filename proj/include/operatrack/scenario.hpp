#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "operatrack/annotations.hpp"
#include "operatrack/audio.hpp"
#include "operatrack/detectors.hpp"

namespace operatrack {

/// One building block of a synthetic performance.  Sections appear in both
/// the reference and the target; applause, silence and interludes are
/// inserted into the target only.
struct SegmentSpec {
    enum class Type { Section, Applause, Silence, Interlude };

    Type type = Type::Section;
    double duration_s = 0.0;
    double tempo_scale = 1.0;     // sections: target duration multiplier
    std::string style = "aria";   // sections: "aria" or "recitative"
    double cough_density = 0.05;  // silence: expected coughs per second
    int in_reference = -1;        // -1: default for the type (set explicitly
                                  // only to trigger script validation)
};

/// A deterministic performance script.  All synthesis is seeded; the same
/// script always produces the same audio.
struct ScenarioScript {
    uint64_t seed = 1;
    double bar_duration_s = 2.0;
    std::vector<SegmentSpec> segments;

    static ScenarioScript from_json(const std::string& text);
    static ScenarioScript from_json_file(const std::filesystem::path& path);
    std::string to_json() const;

    /// InvalidScript unless the script has at least one section, positive
    /// durations/scales, known styles, and only sections in the reference.
    void validate() const;
};

/// Everything generate_scenario produces: both audio streams, bar markers
/// for each (including the final end marker), and the section table with
/// ground-truth voice_start flags.
struct ScenarioBundle {
    AudioStream reference;
    AudioStream target;
    std::vector<BarAnnotation> ref_bars;
    std::vector<BarAnnotation> target_bars;
    std::vector<Section> sections;
};

ScenarioBundle generate_scenario(const ScenarioScript& script);

/// Writes reference.wav, target.wav, reference_bars.csv, target_bars.csv and
/// sections.csv into `dir`.
void write_scenario(const std::filesystem::path& dir, const ScenarioBundle& bundle);

/// Class synthesizers shared by scenarios and the training corpus.
AudioStream render_music_bars(int n_bars, double bar_s, uint64_t seed,
                              int sample_rate = kCanonicalSampleRate);
AudioStream render_speech_bars(int n_bars, double bar_s, uint64_t seed,
                               int sample_rate = kCanonicalSampleRate);
AudioStream synth_applause(double duration_s, uint64_t seed,
                           int sample_rate = kCanonicalSampleRate);
AudioStream synth_silence(double duration_s, double cough_density, uint64_t seed,
                          int sample_rate = kCanonicalSampleRate);

/// Labelled time interval of a corpus recording.
struct LabelInterval {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string label; // applause | music | speech | none
};

/// Label CSV: `start_s,end_s,label`.
std::vector<LabelInterval> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path,
                      const std::vector<LabelInterval>& intervals);

struct CorpusOptions {
    double minutes_per_class = 30.0; // labelled positive audio per class
    uint64_t seed = 1;
};

/// Synthesizes the detector training corpus: WAV + label CSV pairs, one
/// class per file family, positive spans separated by unlabeled gaps.
/// Returns the (wav, csv) pairs written.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>>
write_training_corpus(const std::filesystem::path& dir, const CorpusOptions& options);

/// The (wav, csv) pairs under `dir`, sorted by name.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>>
list_corpus(const std::filesystem::path& dir);

/// Extracts detector features from corpus files and labels every frame by
/// its centre time: 1 where the interval label equals the detector kind,
/// else 0.  One LabeledSequence per file.
std::vector<LabeledSequence> build_detector_dataset(
    const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& pairs,
    DetectorKind kind);

/// One extraction pass producing the datasets for all three detectors.
std::array<std::vector<LabeledSequence>, 3> build_all_datasets(
    const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& pairs);

} // namespace operatrack
