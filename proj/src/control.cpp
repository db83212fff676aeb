#include "operatrack/control.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace operatrack {

const char* gate_mode_name(GateMode mode) noexcept {
    switch (mode) {
    case GateMode::Tracking: return "TRACKING";
    case GateMode::HaltApplause: return "HALT_APPLAUSE";
    case GateMode::HaltPause: return "HALT_PAUSE";
    case GateMode::AwaitVoice: return "AWAIT_VOICE";
    }
    return "UNKNOWN";
}

GateMode gate_mode_from(const std::string& name) {
    if (name == "TRACKING")
        return GateMode::Tracking;
    if (name == "HALT_APPLAUSE")
        return GateMode::HaltApplause;
    if (name == "HALT_PAUSE")
        return GateMode::HaltPause;
    if (name == "AWAIT_VOICE")
        return GateMode::AwaitVoice;
    raise(Errc::ParseError, "unknown gate mode '" + name + "'");
}

// ---------------------------------------------------------------------------
// IntegratedTracker

IntegratedTracker::IntegratedTracker(const ReferenceIndex& ref, GateConfig gates,
                                     TrackerOptions tracker,
                                     Eigen::Index start_pos)
    : ref_(&ref), gates_(gates), tracker_(ref, start_pos, tracker),
      applause_deb_(DetectorKind::Applause, gates.debounce),
      music_deb_(DetectorKind::Music, gates.debounce),
      speech_deb_(DetectorKind::Speech, gates.debounce) {
    if (gates.transition_window_s <= 0 || gates.pause_min_inactive_s <= 0 ||
        gates.await_voice_timeout_s <= 0)
        raise(Errc::InvalidConfig, "gates: non-positive timing parameter");
    pause_ticks_needed_ = std::max(
        1L, std::lround(gates.pause_min_inactive_s * 1000.0 / gates.debounce.hop_ms));
    last_ref_time_ = static_cast<double>(start_pos) * ref.hop_s;
    reached_section_ = ref.section_at(last_ref_time_);
}

void IntegratedTracker::observe(const DetectorTick& tick) {
    applause_deb_.step(tick.time, tick.applause_p);
    music_deb_.step(tick.time, tick.music_p);
    speech_deb_.step(tick.time, tick.speech_p);
    if (!music_deb_.active() && !speech_deb_.active())
        ++pause_run_;
    else
        pause_run_ = 0;
    last_tick_ = tick;
}

std::optional<double> IntegratedTracker::nearest_transition(double ref_time) const {
    std::optional<double> best;
    double best_dist = gates_.transition_window_s;
    for (const Transition& t : ref_->transitions) {
        const double dist = std::abs(t.ref_time - ref_time);
        if (dist <= best_dist + 1e-12 && (!best || dist < best_dist)) {
            best = t.ref_time;
            best_dist = dist;
        }
    }
    return best;
}

void IntegratedTracker::engage(GateMode mode, double clamp_time, double now) {
    mode_ = mode;
    clamp_time_ = clamp_time;
    mode_since_ = now;
    last_ref_time_ = clamp_time;
}

void IntegratedTracker::release(double now, double resume_offset_s) {
    // A release triggered by a debounced speech activation means the singer
    // actually came back min_active_ms ago; resuming that far past the clamp
    // avoids restarting behind content that is already moving.  Releases on
    // silence or on music keep the conservative anchor: music near a
    // transition may be an interlude rather than the next section.
    const auto frame = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(
            std::llround((clamp_time_ + resume_offset_s) / ref_->hop_s)),
        0, ref_->frame_count() - 1);
    tracker_.restart(frame, SeedMode::Anchored);
    mode_ = GateMode::Tracking;
    mode_since_ = now;
}

TrackedPosition IntegratedTracker::clamped_row(double target_time) const {
    // Hold one hop shy of the transition: the reported position reaches the
    // transition itself only once tracking resumes on real content, so a
    // halted tracker never reads as having entered the next section.
    const double held = std::max(0.0, clamp_time_ - ref_->hop_s);
    return {target_time, held,            mode_,
            last_tick_.applause_p, last_tick_.music_p, last_tick_.speech_p};
}

TrackedPosition IntegratedTracker::step(const AlignmentFeature& feature) {
    const double now = feature.time;

    // Release checks come first so a gate can hand off to the next one (or
    // back to tracking) without skipping a frame.
    const double speech_latency_s = gates_.debounce.min_active_ms * 1e-3;
    switch (mode_) {
    case GateMode::HaltApplause:
        if (!applause_deb_.active())
            release(now, 0.0);
        break;
    case GateMode::HaltPause:
        if (music_deb_.active() || speech_deb_.active())
            release(now, speech_deb_.active() ? speech_latency_s : 0.0);
        break;
    case GateMode::AwaitVoice:
        if (speech_deb_.active())
            release(now, speech_latency_s);
        else if (now - mode_since_ >= gates_.await_voice_timeout_s)
            release(now, 0.0);
        break;
    case GateMode::Tracking:
        break;
    }

    // Engagements, applause before pause.  Both only latch near a section
    // transition; the clamp asserts the score position is that transition.
    if (mode_ == GateMode::Tracking) {
        if (gates_.applause && applause_deb_.active()) {
            if (const auto t = nearest_transition(last_ref_time_))
                engage(GateMode::HaltApplause, *t, now);
        }
        if (mode_ == GateMode::Tracking && gates_.pause &&
            pause_run_ >= pause_ticks_needed_) {
            if (const auto t = nearest_transition(last_ref_time_))
                engage(GateMode::HaltPause, *t, now);
        }
    }

    if (mode_ != GateMode::Tracking)
        return clamped_row(now); // frame discarded while halted

    const AlignmentEstimate est = tracker_.step(feature);
    last_ref_time_ = est.ref_time;

    // Interlude strategy: on first crossing into a section that opens with
    // voice, wait for the singer unless speech is already there.
    const int section = ref_->section_at(est.ref_time);
    if (section > reached_section_) {
        for (int s = reached_section_ + 1; s <= section; ++s) {
            const Section& sec = ref_->sections[static_cast<size_t>(s)];
            if (gates_.interlude && sec.voice_start && !speech_deb_.active() &&
                std::abs(est.ref_time - sec.ref_start_s) <=
                    gates_.transition_window_s) {
                reached_section_ = s;
                engage(GateMode::AwaitVoice, sec.ref_start_s, now);
                return clamped_row(now);
            }
        }
        reached_section_ = section;
    }

    return {now,
            est.ref_time,
            GateMode::Tracking,
            last_tick_.applause_p,
            last_tick_.music_p,
            last_tick_.speech_p};
}

// ---------------------------------------------------------------------------
// Variants

const char* variant_name(Variant v) noexcept {
    switch (v) {
    case Variant::Base: return "base";
    case Variant::A: return "a";
    case Variant::AS: return "as";
    case Variant::ASI: return "asi";
    }
    return "unknown";
}

Variant variant_from(const std::string& name) {
    if (name == "base")
        return Variant::Base;
    if (name == "a")
        return Variant::A;
    if (name == "as")
        return Variant::AS;
    if (name == "asi")
        return Variant::ASI;
    raise(Errc::InvalidConfig, "unknown variant '" + name + "'");
}

GateConfig variant_gates(Variant v, GateConfig base) {
    base.applause = false;
    base.pause = false;
    base.interlude = false;
    switch (v) {
    case Variant::ASI:
        base.interlude = true;
        [[fallthrough]];
    case Variant::AS:
        base.pause = true;
        [[fallthrough]];
    case Variant::A:
        base.applause = true;
        break;
    case Variant::Base:
        break;
    }
    return base;
}

TargetStream extract_target_stream(const AudioStream& audio,
                                   const LstmModel& applause,
                                   const LstmModel& music,
                                   const LstmModel& speech) {
    TargetStream stream;
    stream.alignment = extract_alignment_features(audio);

    LstmState applause_state = LstmState::zero(applause.hidden_dim);
    LstmState music_state = LstmState::zero(music.hidden_dim);
    LstmState speech_state = LstmState::zero(speech.hidden_dim);
    DetectorFeatureExtractor extractor(audio.sample_rate);
    Framer framer(audio, kDetectorWindowMs, kDetectorHopMs);
    stream.ticks.reserve(static_cast<size_t>(framer.frames_total()));
    while (auto frame = framer.next()) {
        const DetectorFeatureSet set = extractor.process(*frame);
        DetectorTick tick;
        tick.time = set.time;
        tick.applause_p = forward_step(applause, applause_state, set.applause);
        tick.music_p = forward_step(music, music_state, set.music);
        tick.speech_p = forward_step(speech, speech_state, set.speech);
        stream.ticks.push_back(tick);
    }
    return stream;
}

std::vector<TrackedPosition> run_variant(Variant variant,
                                         const TargetStream& stream,
                                         const ReferenceIndex& ref,
                                         GateConfig base_gates,
                                         TrackerOptions tracker) {
    IntegratedTracker follower(ref, variant_gates(variant, base_gates), tracker);
    std::vector<TrackedPosition> trace;
    trace.reserve(stream.alignment.size());
    size_t tick_at = 0;
    for (const AlignmentFeature& feature : stream.alignment) {
        while (tick_at < stream.ticks.size() &&
               stream.ticks[tick_at].time <= feature.time + 1e-9)
            follower.observe(stream.ticks[tick_at++]);
        trace.push_back(follower.step(feature));
    }
    return trace;
}

std::vector<bool> annotate_reference_voice(const AudioStream& ref_audio,
                                           const std::vector<Section>& sections,
                                           const LstmModel& speech_model,
                                           double probe_s,
                                           DebounceParams debounce) {
    if (speech_model.kind != DetectorKind::Speech)
        raise(Errc::KindMismatch, "voice annotation needs a speech model");
    std::vector<bool> flags(sections.size(), false);
    for (size_t i = 0; i < sections.size(); ++i) {
        const double start = sections[i].ref_start_s;
        double end = std::min(start + probe_s, ref_audio.duration_s());
        if (i + 1 < sections.size())
            end = std::min(end, sections[i + 1].ref_start_s);
        const auto first =
            static_cast<Eigen::Index>(std::llround(start * ref_audio.sample_rate));
        const auto last =
            static_cast<Eigen::Index>(std::llround(end * ref_audio.sample_rate));
        if (last - first < ref_audio.sample_rate / 10)
            continue; // shorter than one detector frame

        AudioStream probe;
        probe.sample_rate = ref_audio.sample_rate;
        probe.samples = ref_audio.samples.segment(first, last - first);

        DetectorFeatureExtractor extractor(probe.sample_rate);
        LstmState state = LstmState::zero(speech_model.hidden_dim);
        Debouncer deb(DetectorKind::Speech, debounce);
        Framer framer(probe, kDetectorWindowMs, kDetectorHopMs);
        while (auto frame = framer.next()) {
            const DetectorFeatureSet set = extractor.process(*frame);
            const double p = forward_step(speech_model, state, set.speech);
            if (deb.step(set.time, p).active) {
                flags[i] = true;
                break;
            }
        }
    }
    return flags;
}

// ---------------------------------------------------------------------------
// Trace I/O

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TrackedPosition>& trace) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << "target_time_s,ref_time_s,mode,applause_p,music_p,speech_p\n";
    out << std::setprecision(17);
    for (const TrackedPosition& row : trace)
        out << row.target_time << ',' << row.ref_time << ','
            << gate_mode_name(row.mode) << ',' << row.applause_p << ','
            << row.music_p << ',' << row.speech_p << '\n';
}

std::vector<TrackedPosition> read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) ||
        line != "target_time_s,ref_time_s,mode,applause_p,music_p,speech_p")
        raise(Errc::ParseError, path.string() + ": bad trace header");

    std::vector<TrackedPosition> trace;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string fields[6];
        for (int i = 0; i < 6; ++i)
            if (!std::getline(ss, fields[i], ','))
                raise(Errc::ParseError, path.string() + ":" +
                                            std::to_string(line_no) +
                                            ": expected 6 fields");
        try {
            TrackedPosition row;
            row.target_time = std::stod(fields[0]);
            row.ref_time = std::stod(fields[1]);
            row.mode = gate_mode_from(fields[2]);
            row.applause_p = std::stod(fields[3]);
            row.music_p = std::stod(fields[4]);
            row.speech_p = std::stod(fields[5]);
            trace.push_back(row);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": malformed number");
        }
    }
    return trace;
}

} // namespace operatrack
