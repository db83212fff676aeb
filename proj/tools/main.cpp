#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "operatrack/audio.hpp"
#include "operatrack/control.hpp"
#include "operatrack/detectors.hpp"
#include "operatrack/eval.hpp"
#include "operatrack/features.hpp"
#include "operatrack/oltw.hpp"
#include "operatrack/scenario.hpp"

namespace fs = std::filesystem;
using namespace operatrack;

namespace {

int log_verbosity() {
    const char* env = std::getenv("OPERATRACK_LOG");
    return env ? std::atoi(env) : 1;
}

void log_info(const std::string& message) {
    if (log_verbosity() >= 1)
        std::cerr << message << '\n';
}

// ---------------------------------------------------------------------------
// Reference bundle: features.bin + bars.csv + sections.csv in one directory.

void save_reference_dir(const fs::path& dir, const ReferenceIndex& ref) {
    fs::create_directories(dir);
    FeatureDump dump;
    dump.kind = "alignment";
    dump.hop_ms = kAlignmentHopMs;
    dump.features = ref.features;
    write_feature_dump(dir / "features.bin", dump);
    write_bars_csv(dir / "bars.csv", ref.bars);
    write_sections_csv(dir / "sections.csv", ref.sections);
}

ReferenceIndex load_reference_dir(const fs::path& dir) {
    const FeatureDump dump = read_feature_dump(dir / "features.bin");
    if (dump.kind != "alignment")
        raise(Errc::KindMismatch,
              dir.string() + ": feature dump kind '" + dump.kind +
                  "' is not an alignment dump");
    ReferenceIndex ref;
    ref.features = dump.features;
    ref.hop_s = dump.hop_ms * 1e-3;
    ref.bars = read_bars_csv(dir / "bars.csv");
    ref.sections = read_sections_csv(dir / "sections.csv");
    ref.finalize();
    return ref;
}

// ---------------------------------------------------------------------------
// Run configuration: JSON file + flag overrides, flags win.

struct RunConfig {
    double window_s = 40.0;
    std::string variant = "asi";
    int gate_applause = -1; // tri-state: -1 keep variant's setting
    int gate_pause = -1;
    int gate_interlude = -1;
    double transition_window_s = 1.0;
    double pause_min_inactive_s = 0.4;
    double await_voice_timeout_s = 120.0;
    double debounce_threshold = 0.5;
    double debounce_min_active_ms = 400.0;
    double debounce_release_ms = 200.0;
    fs::path applause_model, music_model, speech_model;
    bool realtime = false;
    double realtime_speed = 1.0;
};

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::FileNotFound, "cannot open config " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::ParseError,
              path.string() + ": malformed config JSON: " + e.what());
    }
    RunConfig config;
    try {
        config.window_s = doc.value("window_s", config.window_s);
        config.variant = doc.value("variant", config.variant);
        if (doc.contains("gates")) {
            const auto& gates = doc["gates"];
            if (gates.contains("applause"))
                config.gate_applause = gates["applause"].get<bool>() ? 1 : 0;
            if (gates.contains("pause"))
                config.gate_pause = gates["pause"].get<bool>() ? 1 : 0;
            if (gates.contains("interlude"))
                config.gate_interlude = gates["interlude"].get<bool>() ? 1 : 0;
        }
        config.transition_window_s =
            doc.value("transition_window_s", config.transition_window_s);
        config.pause_min_inactive_s =
            doc.value("pause_min_inactive_s", config.pause_min_inactive_s);
        config.await_voice_timeout_s =
            doc.value("await_voice_timeout_s", config.await_voice_timeout_s);
        if (doc.contains("debounce")) {
            const auto& deb = doc["debounce"];
            config.debounce_threshold =
                deb.value("threshold", config.debounce_threshold);
            config.debounce_min_active_ms =
                deb.value("min_active_ms", config.debounce_min_active_ms);
            config.debounce_release_ms =
                deb.value("release_ms", config.debounce_release_ms);
        }
        if (doc.contains("models")) {
            const auto& models = doc["models"];
            if (models.contains("applause"))
                config.applause_model = models["applause"].get<std::string>();
            if (models.contains("music"))
                config.music_model = models["music"].get<std::string>();
            if (models.contains("speech"))
                config.speech_model = models["speech"].get<std::string>();
        }
        config.realtime = doc.value("realtime", config.realtime);
        config.realtime_speed = doc.value("realtime_speed", config.realtime_speed);
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::ParseError, path.string() + ": bad config field: " + e.what());
    }
    return config;
}

// ---------------------------------------------------------------------------
// synth

struct SynthScenarioArgs {
    fs::path script;
    fs::path out;
    int64_t seed_override = -1;
};

void run_synth_scenario(const SynthScenarioArgs& args) {
    ScenarioScript script = ScenarioScript::from_json_file(args.script);
    if (args.seed_override >= 0)
        script.seed = static_cast<uint64_t>(args.seed_override);
    const ScenarioBundle bundle = generate_scenario(script);
    write_scenario(args.out, bundle);
    std::ofstream(args.out / "script.json") << script.to_json() << '\n';
    log_info("scenario: reference " + std::to_string(bundle.reference.duration_s()) +
             " s, target " + std::to_string(bundle.target.duration_s()) + " s, " +
             std::to_string(bundle.sections.size()) + " sections");
    std::cout << args.out.string() << '\n';
}

struct SynthCorpusArgs {
    fs::path out;
    double minutes = 30.0;
    uint64_t seed = 1;
};

void run_synth_corpus(const SynthCorpusArgs& args) {
    CorpusOptions options;
    options.minutes_per_class = args.minutes;
    options.seed = args.seed;
    const auto pairs = write_training_corpus(args.out, options);
    log_info("corpus: wrote " + std::to_string(pairs.size()) + " recordings");
    std::cout << args.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// prepare-reference

struct PrepareArgs {
    fs::path audio, bars, sections, out;
    fs::path speech_model;
    double probe_s = 4.0;
};

void run_prepare(const PrepareArgs& args) {
    const AudioStream audio = load_wav(args.audio);
    ReferenceIndex ref;
    ref.bars = read_bars_csv(args.bars);
    ref.sections = read_sections_csv(args.sections);

    if (!ref.bars.empty()) {
        const double annotated = ref.bars.back().time_s;
        if (std::abs(annotated - audio.duration_s()) > 2.0)
            raise(Errc::InvalidGeometry,
                  "annotation/audio duration mismatch: last bar at " +
                      std::to_string(annotated) + " s but audio is " +
                      std::to_string(audio.duration_s()) + " s");
    }

    const auto features = extract_alignment_features(audio);
    ref.features.resize(kAlignmentDim, static_cast<Eigen::Index>(features.size()));
    for (size_t i = 0; i < features.size(); ++i)
        ref.features.col(static_cast<Eigen::Index>(i)) = features[i].values;

    if (!args.speech_model.empty()) {
        const LstmModel speech = load_model(args.speech_model, DetectorKind::Speech);
        const auto flags =
            annotate_reference_voice(audio, ref.sections, speech, args.probe_s);
        for (size_t i = 0; i < ref.sections.size(); ++i)
            ref.sections[i].voice_start = flags[i];
        log_info("voice flags recomputed from the speech detector");
    }

    ref.finalize();
    save_reference_dir(args.out, ref);
    log_info("reference: " + std::to_string(ref.frame_count()) + " frames, " +
             std::to_string(ref.bars.size()) + " bar markers, " +
             std::to_string(ref.sections.size()) + " sections");
    std::cout << args.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// train-detector

struct TrainArgs {
    std::string kind;
    fs::path corpus, out;
    double holdout_fraction = 0.2;
    TrainOptions options;
};

void run_train(const TrainArgs& args) {
    const DetectorKind kind = detector_kind_from(args.kind);
    const auto pairs = list_corpus(args.corpus);
    auto dataset = build_detector_dataset(pairs, kind);

    // Hold out every k-th sequence (deterministic, class-balanced enough for
    // a homogeneous corpus).
    std::vector<LabeledSequence> train, holdout;
    const size_t stride = std::max<size_t>(
        2, static_cast<size_t>(std::llround(1.0 / std::max(0.05, args.holdout_fraction))));
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (i % stride == stride - 1)
            holdout.push_back(std::move(dataset[i]));
        else
            train.push_back(std::move(dataset[i]));
    }
    if (holdout.empty() && !train.empty()) {
        holdout.push_back(std::move(train.back()));
        train.pop_back();
    }

    TrainReport report;
    const LstmModel model = train_detector(kind, train, holdout, args.options, &report);
    save_model(args.out, model);
    std::cout << "kind: " << detector_kind_name(kind) << '\n'
              << "epochs: " << report.epochs_run << '\n'
              << "final_loss: " << report.final_loss << '\n'
              << "holdout_accuracy: " << report.holdout_accuracy << '\n'
              << "model: " << args.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// track

struct TrackArgs {
    fs::path reference, target, out;
    fs::path config;
    fs::path models_dir;
    RunConfig overrides;        // flag values (only ones the user set are applied)
    std::vector<std::string> set_flags; // names of flags that were set
};

GateConfig gates_from_config(const RunConfig& config) {
    GateConfig gates;
    gates = variant_gates(variant_from(config.variant), gates);
    if (config.gate_applause >= 0)
        gates.applause = config.gate_applause != 0;
    if (config.gate_pause >= 0)
        gates.pause = config.gate_pause != 0;
    if (config.gate_interlude >= 0)
        gates.interlude = config.gate_interlude != 0;
    gates.transition_window_s = config.transition_window_s;
    gates.pause_min_inactive_s = config.pause_min_inactive_s;
    gates.await_voice_timeout_s = config.await_voice_timeout_s;
    gates.debounce.threshold = config.debounce_threshold;
    gates.debounce.min_active_ms = config.debounce_min_active_ms;
    gates.debounce.release_ms = config.debounce_release_ms;
    return gates;
}

std::vector<TrackedPosition> run_stream(const TargetStream& stream,
                                        const ReferenceIndex& ref,
                                        const GateConfig& gates,
                                        const TrackerOptions& tracker_options,
                                        bool realtime, double realtime_speed) {
    IntegratedTracker follower(ref, gates, tracker_options);
    std::vector<TrackedPosition> trace;
    trace.reserve(stream.alignment.size());
    std::vector<double> latencies_ms;
    if (realtime)
        latencies_ms.reserve(stream.alignment.size());

    using clock = std::chrono::steady_clock;
    const auto wall_start = clock::now();
    size_t tick_at = 0;
    for (const AlignmentFeature& feature : stream.alignment) {
        if (realtime) {
            const auto due =
                wall_start + std::chrono::duration_cast<clock::duration>(
                                 std::chrono::duration<double>(
                                     feature.time / std::max(1e-6, realtime_speed)));
            std::this_thread::sleep_until(due);
        }
        const auto step_start = clock::now();
        while (tick_at < stream.ticks.size() &&
               stream.ticks[tick_at].time <= feature.time + 1e-9)
            follower.observe(stream.ticks[tick_at++]);
        trace.push_back(follower.step(feature));
        if (realtime)
            latencies_ms.push_back(
                std::chrono::duration<double, std::milli>(clock::now() - step_start)
                    .count());
    }

    if (realtime && !latencies_ms.empty()) {
        std::sort(latencies_ms.begin(), latencies_ms.end());
        auto pct = [&](double p) {
            const auto idx = static_cast<size_t>(
                p * static_cast<double>(latencies_ms.size() - 1));
            return latencies_ms[idx];
        };
        std::ostringstream msg;
        msg << "per-step latency ms: p50 " << pct(0.50) << ", p90 " << pct(0.90)
            << ", p99 " << pct(0.99) << ", max " << latencies_ms.back();
        std::cout << msg.str() << '\n';
    }
    return trace;
}

void run_track(TrackArgs& args) {
    RunConfig config;
    if (!args.config.empty())
        config = load_run_config(args.config);

    auto flag_set = [&](const std::string& name) {
        return std::find(args.set_flags.begin(), args.set_flags.end(), name) !=
               args.set_flags.end();
    };
    // Flags win over the config file.
    if (flag_set("window-s")) config.window_s = args.overrides.window_s;
    if (flag_set("variant")) config.variant = args.overrides.variant;
    if (flag_set("gate-applause")) config.gate_applause = args.overrides.gate_applause;
    if (flag_set("gate-pause")) config.gate_pause = args.overrides.gate_pause;
    if (flag_set("gate-interlude"))
        config.gate_interlude = args.overrides.gate_interlude;
    if (flag_set("transition-window-s"))
        config.transition_window_s = args.overrides.transition_window_s;
    if (flag_set("pause-min-inactive-s"))
        config.pause_min_inactive_s = args.overrides.pause_min_inactive_s;
    if (flag_set("await-voice-timeout-s"))
        config.await_voice_timeout_s = args.overrides.await_voice_timeout_s;
    if (flag_set("debounce-threshold"))
        config.debounce_threshold = args.overrides.debounce_threshold;
    if (flag_set("debounce-min-active-ms"))
        config.debounce_min_active_ms = args.overrides.debounce_min_active_ms;
    if (flag_set("debounce-release-ms"))
        config.debounce_release_ms = args.overrides.debounce_release_ms;
    if (flag_set("applause-model"))
        config.applause_model = args.overrides.applause_model;
    if (flag_set("music-model")) config.music_model = args.overrides.music_model;
    if (flag_set("speech-model")) config.speech_model = args.overrides.speech_model;
    if (flag_set("realtime")) config.realtime = args.overrides.realtime;
    if (flag_set("realtime-speed"))
        config.realtime_speed = args.overrides.realtime_speed;

    if (!args.models_dir.empty()) {
        if (config.applause_model.empty())
            config.applause_model = args.models_dir / "applause.model";
        if (config.music_model.empty())
            config.music_model = args.models_dir / "music.model";
        if (config.speech_model.empty())
            config.speech_model = args.models_dir / "speech.model";
    }
    if (config.applause_model.empty() || config.music_model.empty() ||
        config.speech_model.empty())
        raise(Errc::InvalidConfig,
              "track needs all three detector models (--models-dir or explicit paths)");

    const ReferenceIndex ref = load_reference_dir(args.reference);
    const AudioStream target = load_wav(args.target);
    const LstmModel applause = load_model(config.applause_model, DetectorKind::Applause);
    const LstmModel music = load_model(config.music_model, DetectorKind::Music);
    const LstmModel speech = load_model(config.speech_model, DetectorKind::Speech);

    const TargetStream stream = extract_target_stream(target, applause, music, speech);

    TrackerOptions tracker_options;
    tracker_options.window_radius = static_cast<Eigen::Index>(
        std::llround(config.window_s / 2.0 / ref.hop_s));
    if (tracker_options.window_radius < 1)
        raise(Errc::InvalidConfig, "window_s too small");

    const GateConfig gates = gates_from_config(config);
    const auto trace = run_stream(stream, ref, gates, tracker_options,
                                  config.realtime, config.realtime_speed);
    write_trace_csv(args.out, trace);
    log_info("trace: " + std::to_string(trace.size()) + " rows");
    std::cout << args.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    fs::path trace, target_bars, ref_bars;
    fs::path report, curve;
};

void run_evaluate(const EvaluateArgs& args) {
    const auto trace = read_trace_csv(args.trace);
    const auto target_bars = read_bars_csv(args.target_bars);
    const auto ref_bars = read_bars_csv(args.ref_bars);
    const auto errors = align_errors(trace, target_bars, ref_bars);
    const EvaluationReport report = summarize(errors);
    if (!args.report.empty())
        write_report_json(args.report, report);
    if (!args.curve.empty())
        write_error_curve_csv(args.curve, errors);
    std::cout << "bars: " << report.per_bar.size() << '\n'
              << "mean_s: " << report.mean_s << '\n'
              << "std_s: " << report.std_s << '\n'
              << "frac_le_1s: " << report.frac_le_1s << '\n'
              << "frac_le_2s: " << report.frac_le_2s << '\n'
              << "frac_le_5s: " << report.frac_le_5s << '\n'
              << "err_max_s: " << report.err_max_s << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"operatrack: real-time opera score following"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate synthetic audio");
    synth->require_subcommand(1);
    SynthScenarioArgs scenario_args;
    auto* synth_scenario =
        synth->add_subcommand("scenario", "Render a performance script");
    synth_scenario->add_option("--script", scenario_args.script, "script JSON")
        ->required();
    synth_scenario->add_option("--out", scenario_args.out, "output directory")
        ->required();
    synth_scenario->add_option("--seed", scenario_args.seed_override,
                               "override the script seed");

    SynthCorpusArgs corpus_args;
    auto* synth_corpus =
        synth->add_subcommand("corpus", "Render the detector training corpus");
    synth_corpus->add_option("--out", corpus_args.out, "output directory")
        ->required();
    synth_corpus->add_option("--minutes", corpus_args.minutes,
                             "labelled minutes per class");
    synth_corpus->add_option("--seed", corpus_args.seed, "corpus seed");

    // prepare-reference
    PrepareArgs prepare_args;
    auto* prepare = app.add_subcommand(
        "prepare-reference", "Extract features and bundle the reference");
    prepare->add_option("--audio", prepare_args.audio, "reference WAV")->required();
    prepare->add_option("--bars", prepare_args.bars, "bar annotations CSV")
        ->required();
    prepare->add_option("--sections", prepare_args.sections, "section table CSV")
        ->required();
    prepare->add_option("--out", prepare_args.out, "bundle directory")->required();
    prepare->add_option("--speech-model", prepare_args.speech_model,
                        "recompute voice_start flags with this speech detector");
    prepare->add_option("--probe-s", prepare_args.probe_s,
                        "seconds of section head probed for voice");

    // train-detector
    TrainArgs train_args;
    auto* train = app.add_subcommand("train-detector", "Train one event detector");
    train->add_option("--kind", train_args.kind, "applause|music|speech")
        ->required();
    train->add_option("--corpus", train_args.corpus, "corpus directory")->required();
    train->add_option("--out", train_args.out, "model output path")->required();
    train->add_option("--holdout", train_args.holdout_fraction,
                      "held-out fraction of recordings");
    train->add_option("--hidden", train_args.options.hidden_dim, "LSTM width");
    train->add_option("--epochs", train_args.options.max_epochs, "epoch cap");
    train->add_option("--learning-rate", train_args.options.learning_rate, "SGD step");
    train->add_option("--stop-accuracy", train_args.options.stop_accuracy,
                      "stop once holdout accuracy reaches this");
    train->add_option("--seed", train_args.options.seed, "training seed");

    // track
    TrackArgs track_args;
    auto* track = app.add_subcommand("track", "Follow a target against a reference");
    track->add_option("--reference", track_args.reference, "reference bundle dir")
        ->required();
    track->add_option("--target", track_args.target, "target WAV")->required();
    track->add_option("--out", track_args.out, "trace CSV output")->required();
    track->add_option("--config", track_args.config, "run config JSON");
    track->add_option("--models-dir", track_args.models_dir,
                      "directory with applause/music/speech .model files");
    std::vector<std::pair<CLI::Option*, std::string>> track_overrides;
    auto track_option = [&](const std::string& flag, auto& target,
                            const std::string& help) {
        CLI::Option* option = track->add_option("--" + flag, target, help);
        track_overrides.emplace_back(option, flag);
        return option;
    };
    track_option("window-s", track_args.overrides.window_s,
                 "alignment window length in seconds");
    track_option("variant", track_args.overrides.variant,
                 "gate variant: base|a|as|asi");
    track_option("gate-applause", track_args.overrides.gate_applause,
                 "0/1 override of the applause gate");
    track_option("gate-pause", track_args.overrides.gate_pause,
                 "0/1 override of the pause gate");
    track_option("gate-interlude", track_args.overrides.gate_interlude,
                 "0/1 override of the interlude gate");
    track_option("transition-window-s", track_args.overrides.transition_window_s,
                 "gate engagement window around transitions");
    track_option("pause-min-inactive-s", track_args.overrides.pause_min_inactive_s,
                 "quiet time before the pause gate engages");
    track_option("await-voice-timeout-s",
                 track_args.overrides.await_voice_timeout_s,
                 "give-up timeout when waiting for the singer");
    track_option("debounce-threshold", track_args.overrides.debounce_threshold,
                 "detector probability threshold");
    track_option("debounce-min-active-ms",
                 track_args.overrides.debounce_min_active_ms,
                 "run length before a detector activates");
    track_option("debounce-release-ms", track_args.overrides.debounce_release_ms,
                 "run length before a detector releases");
    track_option("applause-model", track_args.overrides.applause_model,
                 "applause model path");
    track_option("music-model", track_args.overrides.music_model,
                 "music model path");
    track_option("speech-model", track_args.overrides.speech_model,
                 "speech model path");
    track_overrides.emplace_back(
        track->add_flag("--realtime", track_args.overrides.realtime,
                        "pace frames at wall-clock rate and report latency"),
        "realtime");
    track_option("realtime-speed", track_args.overrides.realtime_speed,
                 "wall-clock speed multiplier in realtime mode");

    // evaluate
    EvaluateArgs evaluate_args;
    auto* evaluate = app.add_subcommand("evaluate", "Score a trace against bars");
    evaluate->add_option("--trace", evaluate_args.trace, "trace CSV")->required();
    evaluate->add_option("--target-bars", evaluate_args.target_bars,
                         "target bar annotations CSV")
        ->required();
    evaluate->add_option("--ref-bars", evaluate_args.ref_bars,
                         "reference bar annotations CSV")
        ->required();
    evaluate->add_option("--report", evaluate_args.report, "report JSON output");
    evaluate->add_option("--curve", evaluate_args.curve, "error curve CSV output");

    try {
        app.parse(argc, argv);
        if (synth_scenario->parsed())
            run_synth_scenario(scenario_args);
        else if (synth_corpus->parsed())
            run_synth_corpus(corpus_args);
        else if (prepare->parsed())
            run_prepare(prepare_args);
        else if (train->parsed())
            run_train(train_args);
        else if (track->parsed()) {
            for (const auto& [option, name] : track_overrides)
                if (option->count() > 0)
                    track_args.set_flags.push_back(name);
            run_track(track_args);
        } else if (evaluate->parsed())
            run_evaluate(evaluate_args);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e); // --help and friends
        app.exit(e);
        return 1; // usage error
    } catch (const Error& e) {
        std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
