#include "operatrack/scenario.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace operatrack {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

double midi_to_hz(double midi) {
    return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0);
}

Eigen::Index samples_for(double duration_s, int sr) {
    return static_cast<Eigen::Index>(std::llround(duration_s * sr));
}

void add_noise_burst(Eigen::VectorXf& buf, Eigen::Index at, Eigen::Index len,
                     double amp, double decay_rate, std::mt19937_64& rng,
                     double lowpass = 0.0) {
    std::uniform_real_distribution<double> white(-1.0, 1.0);
    double state = 0.0;
    for (Eigen::Index i = 0; i < len && at + i < buf.size(); ++i) {
        double n = white(rng);
        if (lowpass > 0.0) {
            state += lowpass * (n - state);
            n = state;
        }
        const double env = std::exp(-decay_rate * static_cast<double>(i));
        buf[at + i] += static_cast<float>(amp * env * n);
    }
}

// Loop the tail of `prev` into the head of `dst` with an exponential decay:
// the hall keeps ringing with the closing chord through the first moments of
// whatever follows.  Grains are Hann-windowed at 50% overlap so the loop has
// no seams.
void mix_chord_ring(Eigen::VectorXf& dst, const Eigen::VectorXf& prev,
                    double boost, double ring_s, double tau_s, int sr) {
    const Eigen::Index grain = samples_for(0.08, sr);
    const Eigen::Index guard = samples_for(0.012, sr);
    const Eigen::Index ring =
        std::min(samples_for(ring_s, sr), dst.size());
    if (prev.size() < grain + guard || grain < 2)
        return;
    const Eigen::Index src = prev.size() - grain - guard;
    const Eigen::Index hop = grain / 2;
    const double tau = tau_s * sr;
    for (Eigen::Index at = 0; at < ring; at += hop)
        for (Eigen::Index k = 0; k < grain && at + k < ring; ++k) {
            const double w = 0.5 - 0.5 * std::cos(kTwoPi * k / (grain - 1));
            dst[at + k] += static_cast<float>(
                boost * w * std::exp(-(at + k) / tau) * prev[src + k]);
        }
}

// Short voiced burst with a falling f0 glide: the vocal ingredient of bravo
// calls and coughs.  Harmonics roll off gently so the result reads as a
// pitched human sound rather than a tone.
void add_voiced_burst(Eigen::VectorXf& buf, Eigen::Index at, Eigen::Index len,
                      double amp, double f0_start, double f0_end, int harmonics,
                      int sr, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double attack = 0.012 * sr;
    double phase = kTwoPi * unit(rng);
    for (Eigen::Index i = 0; i < len && at + i < buf.size(); ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(len);
        phase += kTwoPi * (f0_start + (f0_end - f0_start) * u) / sr;
        double s = 0.0;
        for (int m = 1; m <= harmonics; ++m)
            s += std::sin(phase * m) / std::pow(m, 1.2);
        const double env =
            std::min(1.0, static_cast<double>(i) / attack) * (1.0 - u) * (1.0 - u);
        buf[at + i] += static_cast<float>(amp * env * s);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Class synthesizers

AudioStream render_music_bars(int n_bars, double bar_s, uint64_t seed, int sr) {
    if (n_bars <= 0 || bar_s <= 0)
        raise(Errc::InvalidConfig, "music synth: non-positive geometry");
    AudioStream out;
    out.sample_rate = sr;
    const Eigen::Index bar_len = samples_for(bar_s, sr);
    out.samples = Eigen::VectorXf::Zero(bar_len * n_bars);

    constexpr int kPartials = 5;
    // Scale degrees of a major-ish pitch set the bar roots walk over.
    constexpr int kDegrees[7] = {0, 2, 4, 5, 7, 9, 11};

    for (int bar = 0; bar < n_bars; ++bar) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(bar)));
        std::uniform_int_distribution<int> degree(0, 6);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        const int root = 48 + kDegrees[degree(rng)];
        const bool minor = unit(rng) < 0.3;
        // Two half-bar melody notes keep the spectrum moving inside the bar.
        const int melody1 = root + 12 + kDegrees[degree(rng)];
        const int melody2 = root + 12 + kDegrees[degree(rng)];
        const double notes[4] = {midi_to_hz(root), midi_to_hz(root + (minor ? 3 : 4)),
                                 midi_to_hz(root + 7), 0.0};

        // The cadence bar is held at full strength instead of dying away,
        // as a closing chord would be.
        const double decay_scale = bar == n_bars - 1 ? 0.2 : 1.0;

        struct Partial {
            double freq, amp, decay, shimmer_hz, shimmer_phase;
        };
        std::vector<Partial> partials;
        auto add_note = [&](double f0, double gain) {
            for (int p = 1; p <= kPartials; ++p) {
                Partial part;
                part.freq = f0 * p;
                if (part.freq > sr / 2.0 * 0.9)
                    break;
                part.amp = gain / std::pow(p, 1.1);
                // Higher partials die faster, so the envelope's spectral
                // shape evolves within the bar and frames stay distinct.
                part.decay = (1.0 + 0.9 * p) * decay_scale;
                part.shimmer_hz = 1.5 + 3.5 * unit(rng);
                part.shimmer_phase = kTwoPi * unit(rng);
                partials.push_back(part);
            }
        };
        for (int n = 0; n < 3; ++n)
            add_note(notes[n], 0.05);

        const Eigen::Index offset = static_cast<Eigen::Index>(bar) * bar_len;
        const Eigen::Index half = bar_len / 2;
        auto render_span = [&](Eigen::Index from, Eigen::Index to) {
            for (const Partial& part : partials) {
                const double step = kTwoPi * part.freq / sr;
                double phase = 0.0;
                for (Eigen::Index i = from; i < to; ++i) {
                    const double t = static_cast<double>(i) / sr;
                    const double u = t / bar_s;
                    const double edge =
                        std::min({1.0, t / 0.01, (bar_s - t) / 0.01});
                    const double amp =
                        part.amp * std::exp(-part.decay * u) *
                        (1.0 + 0.15 * std::sin(kTwoPi * part.shimmer_hz * u +
                                               part.shimmer_phase));
                    out.samples[offset + i] +=
                        static_cast<float>(amp * edge * std::sin(phase));
                    phase += step;
                }
            }
        };
        // Chord through the whole bar, melody split at the half bar.
        render_span(0, bar_len);
        partials.clear();
        add_note(midi_to_hz(melody1), 0.06);
        render_span(0, half);
        partials.clear();
        add_note(midi_to_hz(melody2), 0.06);
        render_span(half, bar_len);

        // Downbeat transient.
        add_noise_burst(out.samples, offset, samples_for(0.008, sr), 0.25, 0.002,
                        rng);
    }
    return out;
}

AudioStream render_speech_bars(int n_bars, double bar_s, uint64_t seed, int sr) {
    if (n_bars <= 0 || bar_s <= 0)
        raise(Errc::InvalidConfig, "speech synth: non-positive geometry");
    AudioStream out;
    out.sample_rate = sr;
    const Eigen::Index bar_len = samples_for(bar_s, sr);
    out.samples = Eigen::VectorXf::Zero(bar_len * n_bars);

    constexpr int kMaxSyllables = 24;
    constexpr int kNodes = 7;
    constexpr int kHarmonics = 16;

    // Syllable rate stays near speech-like 3/s regardless of bar length.
    const int n_syll = std::clamp(
        static_cast<int>(std::llround(bar_s / 0.35)), 2, kMaxSyllables);

    for (int bar = 0; bar < n_bars; ++bar) {
        std::mt19937_64 rng(mix_seed(seed ^ 0x5eec5eec5eec5eecULL,
                                     static_cast<uint64_t>(bar)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        // Pitch contour nodes in normalized bar time; prosody wanders.
        double nodes[kNodes];
        double f0 = 160.0 + 80.0 * unit(rng);
        for (double& node : nodes) {
            node = f0;
            f0 = std::clamp(f0 + (unit(rng) - 0.5) * 90.0, 130.0, 320.0);
        }

        struct Syllable {
            bool voiced, silent;
            double onset; // fraction of the syllable taken by the consonant
            double formants[3];
            double gain;
        };
        Syllable syll[kMaxSyllables];
        for (int k = 0; k < n_syll; ++k) {
            Syllable& s = syll[k];
            s.silent = unit(rng) < 0.15;
            s.voiced = unit(rng) < 0.8;
            // Most syllables open with a fricative or plosive consonant
            // before the vowel settles in.
            s.onset = 0.2 + 0.2 * unit(rng);
            s.formants[0] = 350.0 + 500.0 * unit(rng);
            s.formants[1] = 900.0 + 1300.0 * unit(rng);
            s.formants[2] = 2300.0 + 700.0 * unit(rng);
            s.gain = 0.7 + 0.5 * unit(rng);
        }

        const Eigen::Index offset = static_cast<Eigen::Index>(bar) * bar_len;
        double phase[kHarmonics] = {};
        double amps[kHarmonics] = {};
        double noise_state = 0.0;
        std::uniform_real_distribution<double> white(-1.0, 1.0);

        for (Eigen::Index i = 0; i < bar_len; ++i) {
            const double t = static_cast<double>(i) / sr;
            const double u = t / bar_s;
            const int si = std::min(n_syll - 1, static_cast<int>(u * n_syll));
            const Syllable& s = syll[si];
            const double us = u * n_syll - si; // position inside syllable
            const double env =
                s.silent ? 0.0
                         : s.gain * std::min(1.0, us / 0.15) *
                               std::min(1.0, (1.0 - us) / 0.2 + 0.2);
            if (env <= 0.0)
                continue;

            // Piecewise-linear f0 over the bar plus vibrato.
            const double npos = u * (kNodes - 1);
            const int ni = std::min(kNodes - 2, static_cast<int>(npos));
            const double frac = npos - ni;
            const double pitch = (nodes[ni] * (1.0 - frac) + nodes[ni + 1] * frac) *
                                 (1.0 + 0.035 * std::sin(kTwoPi * 5.3 * t));

            if (s.voiced && us >= s.onset) {
                // Refresh the formant envelope only every 64 samples; the
                // 100 ms analysis windows cannot resolve anything finer.
                if (i % 64 == 0) {
                    for (int h = 0; h < kHarmonics; ++h) {
                        const double f = pitch * (h + 1);
                        double w = 0.0;
                        for (const double formant : s.formants) {
                            const double d = (f - formant) / 170.0;
                            w += std::exp(-d * d);
                        }
                        amps[h] = f < sr / 2.0 * 0.9
                                      ? 0.16 * w / std::pow(h + 1.0, 0.6)
                                      : 0.0;
                    }
                }
                double sample = 0.0;
                for (int h = 0; h < kHarmonics; ++h) {
                    phase[h] += kTwoPi * pitch * (h + 1) / sr;
                    sample += amps[h] * std::sin(phase[h]);
                }
                sample += 0.004 * white(rng); // breath
                out.samples[offset + i] = static_cast<float>(env * sample);
            } else {
                // Consonant onset or unvoiced syllable.  First-difference of
                // white noise reads as a high-passed hiss.
                const double n = white(rng);
                const double hiss = n - noise_state;
                noise_state = n;
                out.samples[offset + i] = static_cast<float>(env * 0.12 * hiss);
            }
        }
    }
    return out;
}

AudioStream synth_applause(double duration_s, uint64_t seed, int sr) {
    if (duration_s <= 0)
        raise(Errc::InvalidConfig, "applause synth: non-positive duration");
    AudioStream out;
    out.sample_rate = sr;
    out.samples = Eigen::VectorXf::Zero(samples_for(duration_s, sr));
    std::mt19937_64 rng(mix_seed(seed, 0xA11ABCDEULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Crowd bed: lightly low-passed noise well under the claps.
    double bed = 0.0;
    for (Eigen::Index i = 0; i < out.samples.size(); ++i) {
        bed += 0.25 * ((unit(rng) * 2.0 - 1.0) - bed);
        out.samples[i] = static_cast<float>(0.02 * bed);
    }

    const double rate = 22.0 + 14.0 * unit(rng); // claps per second
    const auto clap_count =
        static_cast<long>(std::llround(rate * duration_s));
    for (long c = 0; c < clap_count; ++c) {
        const auto at = static_cast<Eigen::Index>(unit(rng) *
                                                  static_cast<double>(out.samples.size()));
        const Eigen::Index len = samples_for(0.002 + 0.004 * unit(rng), sr);
        const double amp = 0.10 + 0.22 * unit(rng);
        add_noise_burst(out.samples, at, len, amp, 0.015, rng,
                        0.3 + 0.5 * unit(rng));
    }

    // Bravo shouts: pitched calls that surface over the clapping once the
    // ovation is under way.  The opening beats stay claps-only — shouters
    // need a moment to draw breath.
    const double lead_in = 1.2, tail = 0.6;
    if (duration_s > lead_in + tail + 0.5) {
        double t = lead_in + 0.4 * unit(rng);
        while (t < duration_s - tail) {
            const double dur = 0.45 + 0.4 * unit(rng);
            const double f0 = 175.0 + 105.0 * unit(rng);
            add_voiced_burst(out.samples, samples_for(t, sr),
                             samples_for(dur, sr), 0.35 + 0.15 * unit(rng), f0,
                             f0 * 0.85, 9, sr, rng);
            t += dur + 0.4 + 0.9 * unit(rng);
        }
    }
    return out;
}

AudioStream synth_silence(double duration_s, double cough_density, uint64_t seed,
                          int sr) {
    if (duration_s <= 0 || cough_density < 0)
        raise(Errc::InvalidConfig, "silence synth: bad parameters");
    AudioStream out;
    out.sample_rate = sr;
    out.samples = Eigen::VectorXf::Zero(samples_for(duration_s, sr));
    std::mt19937_64 rng(mix_seed(seed, 0x51EE7ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Hall noise floor around -55 dBFS.
    for (Eigen::Index i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<float>(0.0018 * (unit(rng) * 2.0 - 1.0));

    std::poisson_distribution<int> coughs(cough_density * duration_s);
    const int n = coughs(rng);
    for (int c = 0; c < n; ++c) {
        const auto at = static_cast<Eigen::Index>(
            unit(rng) * static_cast<double>(out.samples.size()));
        add_noise_burst(out.samples, at, samples_for(0.05 + 0.05 * unit(rng), sr),
                        0.04 + 0.06 * unit(rng), 0.0008, rng, 0.15);
        // A cough is half grunt: a low pitched kernel under the breath noise.
        const double f0 = 95.0 + 45.0 * unit(rng);
        add_voiced_burst(out.samples, at, samples_for(0.12 + 0.08 * unit(rng), sr),
                         0.05 + 0.05 * unit(rng), f0, f0 * 0.8, 6, sr, rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scripts

namespace {

SegmentSpec::Type segment_type_from(const std::string& name) {
    if (name == "section")
        return SegmentSpec::Type::Section;
    if (name == "applause")
        return SegmentSpec::Type::Applause;
    if (name == "silence")
        return SegmentSpec::Type::Silence;
    if (name == "interlude")
        return SegmentSpec::Type::Interlude;
    raise(Errc::InvalidScript, "unknown segment type '" + name + "'");
}

const char* segment_type_name(SegmentSpec::Type type) {
    switch (type) {
    case SegmentSpec::Type::Section: return "section";
    case SegmentSpec::Type::Applause: return "applause";
    case SegmentSpec::Type::Silence: return "silence";
    case SegmentSpec::Type::Interlude: return "interlude";
    }
    return "unknown";
}

} // namespace

ScenarioScript ScenarioScript::from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::ParseError, std::string("script: malformed JSON: ") + e.what());
    }
    ScenarioScript script;
    try {
        script.seed = doc.value("seed", uint64_t{1});
        script.bar_duration_s = doc.value("bar_duration_s", 2.0);
        if (!doc.contains("segments") || !doc["segments"].is_array())
            raise(Errc::InvalidScript, "script: missing segments array");
        for (const auto& seg : doc["segments"]) {
            SegmentSpec spec;
            spec.type = segment_type_from(seg.at("type").get<std::string>());
            spec.duration_s = seg.at("duration_s").get<double>();
            spec.tempo_scale = seg.value("tempo_scale", 1.0);
            spec.style = seg.value("style", std::string("aria"));
            spec.cough_density = seg.value("cough_density", 0.05);
            if (seg.contains("in_reference"))
                spec.in_reference = seg["in_reference"].get<bool>() ? 1 : 0;
            script.segments.push_back(spec);
        }
    } catch (const Error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::ParseError, std::string("script: bad field: ") + e.what());
    }
    script.validate();
    return script;
}

ScenarioScript ScenarioScript::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json(buffer.str());
}

std::string ScenarioScript::to_json() const {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["bar_duration_s"] = bar_duration_s;
    doc["segments"] = nlohmann::json::array();
    for (const SegmentSpec& seg : segments) {
        nlohmann::json entry;
        entry["type"] = segment_type_name(seg.type);
        entry["duration_s"] = seg.duration_s;
        if (seg.type == SegmentSpec::Type::Section) {
            entry["tempo_scale"] = seg.tempo_scale;
            entry["style"] = seg.style;
        } else {
            entry["cough_density"] = seg.cough_density;
        }
        if (seg.in_reference >= 0)
            entry["in_reference"] = seg.in_reference != 0;
        doc["segments"].push_back(entry);
    }
    return doc.dump(2);
}

void ScenarioScript::validate() const {
    if (bar_duration_s <= 0)
        raise(Errc::InvalidScript, "script: bar duration must be positive");
    if (segments.empty())
        raise(Errc::InvalidScript, "script: no segments");
    bool has_section = false;
    for (const SegmentSpec& seg : segments) {
        if (seg.duration_s <= 0)
            raise(Errc::InvalidScript, "script: segment duration must be positive");
        if (seg.type == SegmentSpec::Type::Section) {
            has_section = true;
            if (seg.tempo_scale <= 0 || seg.tempo_scale > 4.0)
                raise(Errc::InvalidScript, "script: tempo scale out of range");
            if (seg.style != "aria" && seg.style != "recitative")
                raise(Errc::InvalidScript,
                      "script: unknown section style '" + seg.style + "'");
            if (seg.in_reference == 0)
                raise(Errc::InvalidScript,
                      "script: sections cannot be dropped from the reference");
        } else {
            if (seg.cough_density < 0)
                raise(Errc::InvalidScript, "script: negative cough density");
            if (seg.in_reference == 1)
                raise(Errc::InvalidScript,
                      "script: the reference may contain only musical sections");
        }
    }
    if (!has_section)
        raise(Errc::InvalidScript, "script: needs at least one section");
}

// ---------------------------------------------------------------------------
// Scenario assembly

ScenarioBundle generate_scenario(const ScenarioScript& script) {
    script.validate();
    const double bar_s = script.bar_duration_s;
    const int sr = kCanonicalSampleRate;

    std::vector<AudioStream> ref_chunks, tgt_chunks;
    ScenarioBundle bundle;
    int bar_counter = 0;
    int section_ord = 0;
    double ref_t = 0.0, tgt_t = 0.0;

    for (size_t g = 0; g < script.segments.size(); ++g) {
        const SegmentSpec& seg = script.segments[g];
        const uint64_t seg_seed = mix_seed(script.seed, 2000 + g);
        switch (seg.type) {
        case SegmentSpec::Type::Section: {
            const int n_bars =
                std::max(1, static_cast<int>(std::llround(seg.duration_s / bar_s)));
            const uint64_t section_seed = mix_seed(script.seed, 1000 + section_ord);
            const double tgt_bar = bar_s * seg.tempo_scale;
            const bool voice = seg.style == "recitative";

            // A singer takes a breath and leads in with an unstressed pickup
            // before the first downbeat, so sung sections start their bar
            // grid a tenth of a second after the section itself.
            const double pickup = voice ? 0.1 : 0.0;
            auto with_pickup = [&](AudioStream bars, double pickup_s,
                                   uint64_t pickup_seed) {
                if (pickup_s <= 0.0)
                    return bars;
                const Eigen::Index shift = samples_for(pickup_s, sr);
                const Eigen::Index n = bars.samples.size();
                AudioStream shifted;
                shifted.sample_rate = sr;
                shifted.samples = Eigen::VectorXf::Zero(n);
                shifted.samples.tail(n - shift) = bars.samples.head(n - shift);
                std::mt19937_64 prng(pickup_seed);
                add_voiced_burst(shifted.samples, 0,
                                 shift + samples_for(0.04, sr), 0.1, 150.0,
                                 195.0, 6, sr, prng);
                return shifted;
            };

            auto render = voice ? render_speech_bars : render_music_bars;
            ref_chunks.push_back(with_pickup(render(n_bars, bar_s, section_seed, sr),
                                             pickup, mix_seed(section_seed, 77)));
            tgt_chunks.push_back(
                with_pickup(render(n_bars, tgt_bar, section_seed, sr),
                            pickup * seg.tempo_scale, mix_seed(section_seed, 78)));
            bundle.sections.push_back({section_ord, bar_counter, ref_t, voice});
            for (int k = 0; k < n_bars; ++k) {
                bundle.ref_bars.push_back(
                    {bar_counter + k, ref_t + pickup + k * bar_s});
                bundle.target_bars.push_back(
                    {bar_counter + k,
                     tgt_t + pickup * seg.tempo_scale + k * tgt_bar});
            }
            bar_counter += n_bars;
            ref_t += n_bars * bar_s;
            tgt_t += n_bars * tgt_bar;
            ++section_ord;
            break;
        }
        case SegmentSpec::Type::Applause: {
            AudioStream clip = synth_applause(seg.duration_s, seg_seed, sr);
            if (!tgt_chunks.empty())
                mix_chord_ring(clip.samples, tgt_chunks.back().samples, 3.2,
                               1.4, 0.40, sr);
            tgt_chunks.push_back(std::move(clip));
            tgt_t += tgt_chunks.back().duration_s();
            break;
        }
        case SegmentSpec::Type::Silence:
            tgt_chunks.push_back(
                synth_silence(seg.duration_s, seg.cough_density, seg_seed, sr));
            tgt_t += tgt_chunks.back().duration_s();
            break;
        case SegmentSpec::Type::Interlude: {
            const int n_bars =
                std::max(1, static_cast<int>(std::llround(seg.duration_s / bar_s)));
            tgt_chunks.push_back(render_music_bars(n_bars, bar_s, seg_seed, sr));
            tgt_t += tgt_chunks.back().duration_s();
            break;
        }
        }
    }

    // End-of-piece marker one past the last bar, in both streams.
    bundle.ref_bars.push_back({bar_counter, ref_t});
    bundle.target_bars.push_back({bar_counter, tgt_t});

    auto concat = [sr](const std::vector<AudioStream>& chunks) {
        Eigen::Index total = 0;
        for (const auto& c : chunks)
            total += c.samples.size();
        AudioStream out;
        out.sample_rate = sr;
        out.samples.resize(total);
        Eigen::Index at = 0;
        for (const auto& c : chunks) {
            out.samples.segment(at, c.samples.size()) = c.samples;
            at += c.samples.size();
        }
        return out;
    };
    bundle.reference = concat(ref_chunks);
    bundle.target = concat(tgt_chunks);
    return bundle;
}

void write_scenario(const std::filesystem::path& dir, const ScenarioBundle& bundle) {
    std::filesystem::create_directories(dir);
    save_wav(dir / "reference.wav", bundle.reference);
    save_wav(dir / "target.wav", bundle.target);
    write_bars_csv(dir / "reference_bars.csv", bundle.ref_bars);
    write_bars_csv(dir / "target_bars.csv", bundle.target_bars);
    write_sections_csv(dir / "sections.csv", bundle.sections);
}

// ---------------------------------------------------------------------------
// Training corpus

std::vector<LabelInterval> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "start_s,end_s,label")
        raise(Errc::ParseError, path.string() + ": bad label header");
    std::vector<LabelInterval> intervals;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string start_text, end_text, label;
        if (!std::getline(ss, start_text, ',') ||
            !std::getline(ss, end_text, ',') || !std::getline(ss, label))
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": expected 3 fields");
        LabelInterval iv;
        try {
            iv.start_s = std::stod(start_text);
            iv.end_s = std::stod(end_text);
        } catch (const std::exception&) {
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": malformed number");
        }
        iv.label = label;
        if (label != "applause" && label != "music" && label != "speech" &&
            label != "none")
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": unknown label '" + label + "'");
        if (iv.end_s <= iv.start_s ||
            (!intervals.empty() && iv.start_s < intervals.back().end_s - 1e-9))
            raise(Errc::ParseError, path.string() + ":" + std::to_string(line_no) +
                                        ": intervals must be ordered and disjoint");
        intervals.push_back(iv);
    }
    return intervals;
}

void write_labels_csv(const std::filesystem::path& path,
                      const std::vector<LabelInterval>& intervals) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    out << "start_s,end_s,label\n";
    out.precision(9);
    for (const auto& iv : intervals)
        out << iv.start_s << ',' << iv.end_s << ',' << iv.label << '\n';
}

std::vector<std::pair<std::filesystem::path, std::filesystem::path>>
write_training_corpus(const std::filesystem::path& dir,
                      const CorpusOptions& options) {
    if (options.minutes_per_class <= 0)
        raise(Errc::InvalidConfig, "corpus: minutes per class must be positive");
    std::filesystem::create_directories(dir);
    const int sr = kCanonicalSampleRate;
    std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;

    const char* class_names[3] = {"applause", "music", "speech"};
    for (int cls = 0; cls < 3; ++cls) {
        double positive_s = 0.0;
        int file_no = 0;
        uint64_t class_seed = mix_seed(options.seed, 7000 + cls);
        while (positive_s < options.minutes_per_class * 60.0) {
            std::mt19937_64 rng(mix_seed(class_seed, static_cast<uint64_t>(file_no)));
            std::uniform_real_distribution<double> unit(0.0, 1.0);

            std::vector<AudioStream> chunks;
            std::vector<LabelInterval> labels;
            double pos = 0.0;
            while (pos < 150.0) {
                const double gap = 1.2 + 1.6 * unit(rng);
                chunks.push_back(synth_silence(gap, 0.08, rng(), sr));
                labels.push_back({pos, pos + chunks.back().duration_s(), "none"});
                pos += chunks.back().duration_s();

                AudioStream clip;
                switch (cls) {
                case 0:
                    clip = synth_applause(6.0 + 8.0 * unit(rng), rng(), sr);
                    // Live applause cuts usually start while the hall still
                    // rings with the closing chord; teach the detector to
                    // hear claps through that.
                    if (unit(rng) < 0.8) {
                        const AudioStream bed =
                            render_music_bars(2, 0.8 + 0.5 * unit(rng), rng(), sr);
                        mix_chord_ring(clip.samples, bed.samples,
                                       2.2 + 1.6 * unit(rng),
                                       0.9 + 0.8 * unit(rng),
                                       0.28 + 0.24 * unit(rng), sr);
                    }
                    break;
                case 1: {
                    const double bar = 1.6 + 0.8 * unit(rng);
                    const int bars = 4 + static_cast<int>(unit(rng) * 6);
                    clip = render_music_bars(bars, bar, rng(), sr);
                    break;
                }
                default: {
                    const double bar = 1.8 + 0.6 * unit(rng);
                    const int bars = 3 + static_cast<int>(unit(rng) * 4);
                    clip = render_speech_bars(bars, bar, rng(), sr);
                    break;
                }
                }
                labels.push_back(
                    {pos, pos + clip.duration_s(), class_names[cls]});
                positive_s += clip.duration_s();
                pos += clip.duration_s();
                chunks.push_back(std::move(clip));
            }

            Eigen::Index total = 0;
            for (const auto& c : chunks)
                total += c.samples.size();
            AudioStream file_audio;
            file_audio.sample_rate = sr;
            file_audio.samples.resize(total);
            Eigen::Index at = 0;
            for (const auto& c : chunks) {
                file_audio.samples.segment(at, c.samples.size()) = c.samples;
                at += c.samples.size();
            }

            char name[64];
            std::snprintf(name, sizeof name, "%s_%02d", class_names[cls], file_no);
            const auto wav = dir / (std::string(name) + ".wav");
            const auto csv = dir / (std::string(name) + ".csv");
            save_wav(wav, file_audio);
            write_labels_csv(csv, labels);
            pairs.emplace_back(wav, csv);
            ++file_no;
        }
    }
    return pairs;
}

std::vector<std::pair<std::filesystem::path, std::filesystem::path>>
list_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        raise(Errc::FileNotFound, dir.string() + " is not a directory");
    std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".wav")
            continue;
        auto csv = entry.path();
        csv.replace_extension(".csv");
        if (std::filesystem::exists(csv))
            pairs.emplace_back(entry.path(), csv);
    }
    std::sort(pairs.begin(), pairs.end());
    if (pairs.empty())
        raise(Errc::EmptyDataset, dir.string() + ": no wav/csv pairs");
    return pairs;
}

std::array<std::vector<LabeledSequence>, 3> build_all_datasets(
    const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>&
        pairs) {
    std::array<std::vector<LabeledSequence>, 3> out;
    for (const auto& [wav, csv] : pairs) {
        const AudioStream audio = load_wav(wav);
        const auto intervals = read_labels_csv(csv);
        const auto features = extract_detector_features(audio);
        const auto t_n = static_cast<Eigen::Index>(features.size());

        const DetectorKind kinds[3] = {DetectorKind::Applause,
                                       DetectorKind::Music, DetectorKind::Speech};
        LabeledSequence seqs[3];
        for (int k = 0; k < 3; ++k) {
            seqs[k].features.resize(detector_dim(kinds[k]), t_n);
            seqs[k].labels.resize(t_n);
        }
        size_t cursor = 0;
        for (Eigen::Index t = 0; t < t_n; ++t) {
            const double centre = features[static_cast<size_t>(t)].time +
                                  kDetectorWindowMs * 1e-3 / 2.0;
            while (cursor < intervals.size() && intervals[cursor].end_s <= centre)
                ++cursor;
            std::string label = "none";
            if (cursor < intervals.size() && intervals[cursor].start_s <= centre)
                label = intervals[cursor].label;
            for (int k = 0; k < 3; ++k) {
                seqs[k].features.col(t) =
                    features[static_cast<size_t>(t)].of(kinds[k]);
                seqs[k].labels[t] = label == detector_kind_name(kinds[k]) ? 1 : 0;
            }
        }
        for (int k = 0; k < 3; ++k)
            out[static_cast<size_t>(k)].push_back(std::move(seqs[k]));
    }
    return out;
}

std::vector<LabeledSequence> build_detector_dataset(
    const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>&
        pairs,
    DetectorKind kind) {
    std::vector<LabeledSequence> out;
    for (const auto& [wav, csv] : pairs) {
        const AudioStream audio = load_wav(wav);
        const auto intervals = read_labels_csv(csv);
        const auto features = extract_detector_features(audio);
        const auto t_n = static_cast<Eigen::Index>(features.size());
        LabeledSequence seq;
        seq.features.resize(detector_dim(kind), t_n);
        seq.labels.resize(t_n);
        size_t cursor = 0;
        for (Eigen::Index t = 0; t < t_n; ++t) {
            const double centre = features[static_cast<size_t>(t)].time +
                                  kDetectorWindowMs * 1e-3 / 2.0;
            while (cursor < intervals.size() && intervals[cursor].end_s <= centre)
                ++cursor;
            std::string label = "none";
            if (cursor < intervals.size() && intervals[cursor].start_s <= centre)
                label = intervals[cursor].label;
            seq.features.col(t) = features[static_cast<size_t>(t)].of(kind);
            seq.labels[t] = label == detector_kind_name(kind) ? 1 : 0;
        }
        out.push_back(std::move(seq));
    }
    return out;
}

} // namespace operatrack
