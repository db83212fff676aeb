#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "operatrack/detectors.hpp"
#include "operatrack/oltw.hpp"

namespace operatrack {

/// What the integrated tracker is doing right now.
///  Tracking:     consuming frames, position from the alignment window
///  HaltApplause: clamped to a transition while applause is active
///  HaltPause:    clamped to a transition while neither music nor speech is
///  AwaitVoice:   clamped at the start of a voice_start section until the
///                singer enters (or a timeout gives up waiting)
enum class GateMode { Tracking, HaltApplause, HaltPause, AwaitVoice };

const char* gate_mode_name(GateMode mode) noexcept;
GateMode gate_mode_from(const std::string& name); // ParseError

struct GateConfig {
    bool applause = true;
    bool pause = true;
    bool interlude = true;
    double transition_window_s = 1.0;    // gates engage within +- this of a transition
    double pause_min_inactive_s = 0.4;   // music and speech both quiet this long
    double await_voice_timeout_s = 120.0;
    DebounceParams debounce;
};

/// Detector probabilities for one 20 ms tick, fed alongside the 10 ms
/// alignment frames.
struct DetectorTick {
    double time = 0.0;
    double applause_p = 0.0;
    double music_p = 0.0;
    double speech_p = 0.0;
};

/// One trace row: the reported score position for one target frame, plus the
/// gate state and the most recent detector probabilities.
struct TrackedPosition {
    double target_time = 0.0;
    double ref_time = 0.0;
    GateMode mode = GateMode::Tracking;
    double applause_p = 0.0;
    double music_p = 0.0;
    double speech_p = 0.0;
};

/// Score follower with event gates.  Detector ticks arrive via observe();
/// every alignment frame passed to step() yields exactly one trace row.
/// While a gate holds, the alignment window is frozen, incoming frames are
/// discarded, and the reported position is the clamped transition time,
/// exactly.  On release the tracker restarts anchored at the clamp; a
/// release triggered by debounced speech resumes one detector latency past
/// it, since the singer demonstrably came back that long ago.
class IntegratedTracker {
  public:
    IntegratedTracker(const ReferenceIndex& ref, GateConfig gates = {},
                      TrackerOptions tracker = {}, Eigen::Index start_pos = 0);

    void observe(const DetectorTick& tick);
    TrackedPosition step(const AlignmentFeature& feature);

    GateMode mode() const { return mode_; }

  private:
    std::optional<double> nearest_transition(double ref_time) const;
    void engage(GateMode mode, double clamp_time, double now);
    void release(double now, double resume_offset_s);
    TrackedPosition clamped_row(double target_time) const;

    const ReferenceIndex* ref_;
    GateConfig gates_;
    OnlineTracker tracker_;
    Debouncer applause_deb_;
    Debouncer music_deb_;
    Debouncer speech_deb_;
    int pause_ticks_needed_;
    int pause_run_ = 0;
    GateMode mode_ = GateMode::Tracking;
    double clamp_time_ = 0.0;
    double mode_since_ = 0.0;
    int reached_section_;
    double last_ref_time_;
    DetectorTick last_tick_;
};

/// Gate subsets used in ablation runs: BASE has every gate off, A adds the
/// applause gate, AS adds the pause gate, ASI adds the interlude gate.
enum class Variant { Base, A, AS, ASI };

const char* variant_name(Variant v) noexcept;
Variant variant_from(const std::string& name); // InvalidConfig
GateConfig variant_gates(Variant v, GateConfig base);

/// A target stream reduced to what the follower consumes: alignment features
/// and detector probability ticks.
struct TargetStream {
    std::vector<AlignmentFeature> alignment;
    std::vector<DetectorTick> ticks;
};

/// Runs all three detectors over the audio and extracts alignment features.
TargetStream extract_target_stream(const AudioStream& audio,
                                   const LstmModel& applause,
                                   const LstmModel& music,
                                   const LstmModel& speech);

/// Replays a target stream through an IntegratedTracker configured for the
/// variant, interleaving ticks and frames by timestamp.  One trace row per
/// alignment frame.
std::vector<TrackedPosition> run_variant(Variant variant,
                                         const TargetStream& stream,
                                         const ReferenceIndex& ref,
                                         GateConfig base_gates = {},
                                         TrackerOptions tracker = {});

/// Marks sections that open with singing by running the speech detector over
/// the first few seconds of each section's reference audio.
std::vector<bool> annotate_reference_voice(const AudioStream& ref_audio,
                                           const std::vector<Section>& sections,
                                           const LstmModel& speech_model,
                                           double probe_s = 4.0,
                                           DebounceParams debounce = {});

/// Trace CSV: target_time_s,ref_time_s,mode,applause_p,music_p,speech_p.
void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TrackedPosition>& trace);
std::vector<TrackedPosition> read_trace_csv(const std::filesystem::path& path);

} // namespace operatrack
