#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "operatrack/control.hpp"
#include "operatrack/detectors.hpp"
#include "operatrack/eval.hpp"
#include "operatrack/features.hpp"
#include "operatrack/scenario.hpp"

using namespace operatrack;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output; // stdout and stderr combined
};

/// Runs the installed CLI binary with `args`, capturing combined output.
CliResult run_cli(const std::string& args, const std::string& tag) {
    const fs::path log =
        fs::temp_directory_path() / ("operatrack_cli_" + tag + ".log");
    const std::string command = std::string("\"") + OPERATRACK_CLI_PATH + "\" " +
                                args + " > \"" + log.string() + "\" 2>&1";
    const int raw = std::system(command.c_str());
    CliResult result;
#ifdef _WIN32
    result.exit_code = raw;
#else
    result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
#endif
    std::ifstream in(log);
    std::ostringstream text;
    text << in.rdbuf();
    result.output = text.str();
    return result;
}

fs::path temp_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SegmentSpec section(double dur, const char* style, double tempo) {
    SegmentSpec s;
    s.type = SegmentSpec::Type::Section;
    s.duration_s = dur;
    s.style = style;
    s.tempo_scale = tempo;
    return s;
}

SegmentSpec gap(SegmentSpec::Type type, double dur) {
    SegmentSpec s;
    s.type = type;
    s.duration_s = dur;
    return s;
}

/// One small scenario + models shared by the pipeline tests below; rendering
/// audio and extracting features once keeps the whole suite quick.
struct PipelineFixture {
    fs::path root, scenario, reference, models;
    fs::path trace_base;

    PipelineFixture() {
        root = temp_dir("operatrack_cli_pipeline");
        scenario = root / "scenario";
        reference = root / "reference";
        models = root / "models";
        trace_base = root / "trace_base.csv";
        fs::create_directories(models);

        ScenarioScript script;
        script.bar_duration_s = 0.5;
        script.seed = 77;
        script.segments = {section(4.0, "aria", 1.0),
                           gap(SegmentSpec::Type::Applause, 1.5),
                           section(3.0, "recitative", 1.0)};
        const fs::path script_path = root / "script.json";
        std::ofstream(script_path) << script.to_json() << '\n';

        for (DetectorKind kind : {DetectorKind::Applause, DetectorKind::Music,
                                  DetectorKind::Speech}) {
            const auto model =
                make_model(kind, detector_dim(kind), 8,
                           17 + static_cast<uint64_t>(kind));
            save_model(models / (std::string(detector_kind_name(kind)) + ".model"),
                       model);
        }

        CliResult r = run_cli("synth scenario --script \"" + script_path.string() +
                                  "\" --out \"" + scenario.string() + "\"",
                              "synth");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);

        r = run_cli("prepare-reference --audio \"" +
                        (scenario / "reference.wav").string() + "\" --bars \"" +
                        (scenario / "reference_bars.csv").string() +
                        "\" --sections \"" + (scenario / "sections.csv").string() +
                        "\" --out \"" + reference.string() + "\"",
                    "prepare");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);

        r = run_cli(track_args("base") + " --out \"" + trace_base.string() + "\"",
                    "track_base");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    }

    std::string track_args(const std::string& variant) const {
        return "track --reference \"" + reference.string() + "\" --target \"" +
               (scenario / "target.wav").string() + "\" --models-dir \"" +
               models.string() + "\" --variant " + variant;
    }
};

PipelineFixture& pipeline() {
    static PipelineFixture fixture;
    return fixture;
}

bool traces_identical(const std::vector<TrackedPosition>& a,
                      const std::vector<TrackedPosition>& b) {
    if (a.size() != b.size())
        return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].target_time != b[i].target_time || a[i].ref_time != b[i].ref_time ||
            a[i].mode != b[i].mode || a[i].applause_p != b[i].applause_p ||
            a[i].music_p != b[i].music_p || a[i].speech_p != b[i].speech_p)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("cli: help exits cleanly and usage errors exit 1") {
    const CliResult help = run_cli("--help", "help");
    CHECK(help.exit_code == 0);
    CHECK(help.output.find("track") != std::string::npos);
    CHECK(help.output.find("evaluate") != std::string::npos);

    CHECK(run_cli("", "noargs").exit_code == 1);
    CHECK(run_cli("frobnicate", "unknown").exit_code == 1);
    // track without its required options is a usage error, not an operational one
    CHECK(run_cli("track", "track_bare").exit_code == 1);
    CHECK(run_cli("evaluate --trace only.csv", "eval_partial").exit_code == 1);
}

TEST_CASE("cli: operational failures exit 2 with a diagnostic") {
    const fs::path dir = temp_dir("operatrack_cli_errors");

    // All required flags present, but no detector models anywhere.
    CliResult r = run_cli("track --reference \"" + dir.string() +
                              "\" --target \"" + (dir / "t.wav").string() +
                              "\" --out \"" + (dir / "o.csv").string() + "\"",
                          "track_nomodels");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("detector models") != std::string::npos);

    // Missing input files surface as errors, not crashes.
    r = run_cli("evaluate --trace \"" + (dir / "missing.csv").string() +
                    "\" --target-bars \"" + (dir / "tb.csv").string() +
                    "\" --ref-bars \"" + (dir / "rb.csv").string() + "\"",
                "eval_missing");
    CHECK(r.exit_code == 2);

    // Malformed script JSON.
    const fs::path bad_script = dir / "bad.json";
    std::ofstream(bad_script) << "{nope";
    r = run_cli("synth scenario --script \"" + bad_script.string() +
                    "\" --out \"" + (dir / "scen").string() + "\"",
                "synth_bad");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("error") != std::string::npos);
}

TEST_CASE("cli: scenario -> prepare -> track -> evaluate round trip") {
    PipelineFixture& fx = pipeline();

    for (const char* name :
         {"reference.wav", "target.wav", "reference_bars.csv", "target_bars.csv",
          "sections.csv", "script.json"})
        CHECK(fs::exists(fx.scenario / name));
    for (const char* name : {"features.bin", "bars.csv", "sections.csv"})
        CHECK(fs::exists(fx.reference / name));

    const auto trace = read_trace_csv(fx.trace_base);
    REQUIRE(!trace.empty());
    for (size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i].target_time > trace[i - 1].target_time);
        CHECK(trace[i].ref_time >= trace[i - 1].ref_time);
    }

    const fs::path report_path = fx.root / "report.json";
    const fs::path curve_path = fx.root / "curve.csv";
    const CliResult r = run_cli(
        "evaluate --trace \"" + fx.trace_base.string() + "\" --target-bars \"" +
            (fx.scenario / "target_bars.csv").string() + "\" --ref-bars \"" +
            (fx.scenario / "reference_bars.csv").string() + "\" --report \"" +
            report_path.string() + "\" --curve \"" + curve_path.string() + "\"",
        "evaluate");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("mean_s") != std::string::npos);

    const auto bars = read_bars_csv(fx.scenario / "target_bars.csv");
    const EvaluationReport report = read_report_json(report_path);
    CHECK(report.per_bar.size() == bars.size());
    CHECK(read_error_curve_csv(curve_path).size() == bars.size());
    CHECK(report.err_max_s >= 0.0);
}

TEST_CASE("cli: flags override the config file") {
    PipelineFixture& fx = pipeline();
    const fs::path config_path = fx.root / "config.json";
    // A config whose variant would be rejected at parse time; the flag must win
    // before the variant is ever interpreted.
    std::ofstream(config_path) << R"({"variant": "bogus", "models": {)"
                               << R"("applause": ")"
                               << (fx.models / "applause.model").string()
                               << R"(", "music": ")"
                               << (fx.models / "music.model").string()
                               << R"(", "speech": ")"
                               << (fx.models / "speech.model").string()
                               << R"("}})" << '\n';

    const std::string base_args = "track --reference \"" + fx.reference.string() +
                                  "\" --target \"" +
                                  (fx.scenario / "target.wav").string() +
                                  "\" --config \"" + config_path.string() + "\"";

    // Config alone: the bogus variant is an operational error.
    const fs::path out_cfg = fx.root / "trace_cfg.csv";
    CliResult r =
        run_cli(base_args + " --out \"" + out_cfg.string() + "\"", "cfg_bogus");
    CHECK(r.exit_code == 2);

    // With --variant the config value is overridden, and the config's model
    // paths stand in for --models-dir.
    r = run_cli(base_args + " --variant base --out \"" + out_cfg.string() + "\"",
                "cfg_override");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(traces_identical(read_trace_csv(out_cfg), read_trace_csv(fx.trace_base)));
}

TEST_CASE("cli: realtime pacing reports latency and leaves the trace unchanged") {
    PipelineFixture& fx = pipeline();

    const fs::path batch_path = fx.root / "trace_asi.csv";
    CliResult r = run_cli(fx.track_args("asi") + " --out \"" +
                              batch_path.string() + "\"",
                          "track_asi");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);

    const fs::path rt_path = fx.root / "trace_asi_rt.csv";
    r = run_cli(fx.track_args("asi") + " --realtime --realtime-speed 400 --out \"" +
                    rt_path.string() + "\"",
                "track_rt");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(r.output.find("per-step latency ms") != std::string::npos);

    CHECK(traces_identical(read_trace_csv(batch_path), read_trace_csv(rt_path)));
}
