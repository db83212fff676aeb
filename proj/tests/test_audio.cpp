#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "operatrack/audio.hpp"

using namespace operatrack;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("operatrack_audio_" + name);
}

void append_u32(std::string& bytes, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u16(std::string& bytes, uint16_t v) {
    bytes.push_back(static_cast<char>(v & 0xff));
    bytes.push_back(static_cast<char>((v >> 8) & 0xff));
}

/// Minimal RIFF/WAVE writer for tests: any format tag, channel count and
/// payload, so malformed files are as easy to produce as valid ones.
std::string wav_bytes(uint16_t format_tag, uint16_t channels,
                      uint32_t sample_rate, uint16_t bits,
                      const std::string& payload) {
    std::string bytes = "RIFF";
    append_u32(bytes, 4 + 24 + 8 + static_cast<uint32_t>(payload.size()));
    bytes += "WAVE";
    bytes += "fmt ";
    append_u32(bytes, 16);
    append_u16(bytes, format_tag);
    append_u16(bytes, channels);
    append_u32(bytes, sample_rate);
    const uint32_t block = channels * bits / 8;
    append_u32(bytes, sample_rate * block);
    append_u16(bytes, static_cast<uint16_t>(block));
    append_u16(bytes, bits);
    bytes += "data";
    append_u32(bytes, static_cast<uint32_t>(payload.size()));
    bytes += payload;
    return bytes;
}

fs::path write_file(const std::string& name, const std::string& bytes) {
    const fs::path path = temp_file(name);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    return path;
}

Eigen::VectorXf tone(double freq, double duration_s, int sr,
                     float amplitude = 0.5f) {
    const auto n = static_cast<Eigen::Index>(duration_s * sr);
    Eigen::VectorXf v(n);
    for (Eigen::Index i = 0; i < n; ++i)
        v[i] = amplitude * static_cast<float>(
                               std::sin(2.0 * std::numbers::pi * freq * i / sr));
    return v;
}

} // namespace

TEST_CASE("PCM16 save/load round trips within quantization error") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    AudioStream stream;
    stream.sample_rate = kCanonicalSampleRate;
    stream.samples.resize(4410);
    for (Eigen::Index i = 0; i < stream.samples.size(); ++i)
        stream.samples[i] = dist(rng);

    const fs::path path = temp_file("roundtrip.wav");
    save_wav(path, stream);
    const AudioStream back = load_wav(path);

    CHECK(back.sample_rate == kCanonicalSampleRate);
    REQUIRE(back.samples.size() == stream.samples.size());
    // Encode scales by 32767, decode divides by 32768, so a full-scale sample
    // comes back shrunk by one part in 32768 on top of the half-step rounding.
    const float bound = 1.5f / 32768.0f;
    CHECK((back.samples - stream.samples).cwiseAbs().maxCoeff() <=
          bound + 1e-7f);
    fs::remove(path);
}

TEST_CASE("float32 WAV decodes bit-exactly") {
    const std::vector<float> values = {0.0f, 0.25f, -0.5f, 0.875f, -1.0f, 1.0f};
    std::string payload(values.size() * 4, '\0');
    std::memcpy(payload.data(), values.data(), payload.size());
    const fs::path path = write_file(
        "float32.wav", wav_bytes(3, 1, kCanonicalSampleRate, 32, payload));

    const AudioStream stream = load_wav(path);
    REQUIRE(stream.samples.size() ==
            static_cast<Eigen::Index>(values.size()));
    for (size_t i = 0; i < values.size(); ++i)
        CHECK(stream.samples[static_cast<Eigen::Index>(i)] == values[i]);
    fs::remove(path);
}

TEST_CASE("stereo channels are averaged to mono") {
    // Frames (L, R): (1000, 3000), (-2000, 2000), (600, 800).
    const std::vector<int16_t> interleaved = {1000, 3000, -2000,
                                              2000, 600,  800};
    std::string payload(interleaved.size() * 2, '\0');
    std::memcpy(payload.data(), interleaved.data(), payload.size());
    const fs::path path = write_file(
        "stereo.wav", wav_bytes(1, 2, kCanonicalSampleRate, 16, payload));

    const AudioStream stream = load_wav(path);
    REQUIRE(stream.samples.size() == 3);
    CHECK(stream.samples[0] ==
          doctest::Approx((1000.0 + 3000.0) / 2.0 / 32768.0).epsilon(1e-6));
    CHECK(stream.samples[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    CHECK(stream.samples[2] ==
          doctest::Approx(700.0 / 32768.0).epsilon(1e-6));
    fs::remove(path);
}

TEST_CASE("non-canonical rates are resampled on load") {
    const int src_rate = 22050;
    const Eigen::VectorXf wave = tone(1000.0, 0.5, src_rate);
    std::vector<int16_t> quantized(static_cast<size_t>(wave.size()));
    for (Eigen::Index i = 0; i < wave.size(); ++i)
        quantized[static_cast<size_t>(i)] =
            static_cast<int16_t>(std::lround(wave[i] * 32767.0f));
    std::string payload(quantized.size() * 2, '\0');
    std::memcpy(payload.data(), quantized.data(), payload.size());
    const fs::path path =
        write_file("rate.wav", wav_bytes(1, 1, src_rate, 16, payload));

    const AudioStream stream = load_wav(path);
    CHECK(stream.sample_rate == kCanonicalSampleRate);
    CHECK(stream.samples.size() ==
          static_cast<Eigen::Index>(std::llround(
              static_cast<double>(wave.size()) * kCanonicalSampleRate /
              src_rate)));

    // Still a 1 kHz tone: correlate with the ideal at the new rate.
    const Eigen::VectorXf ideal =
        tone(1000.0, 0.5, kCanonicalSampleRate);
    const Eigen::Index n = std::min(stream.samples.size(), ideal.size()) - 200;
    const auto a = stream.samples.segment(100, n);
    const auto b = ideal.segment(100, n);
    const double corr = a.cast<double>().dot(b.cast<double>()) /
                        (a.norm() * b.norm());
    CHECK(corr > 0.99);
    fs::remove(path);
}

TEST_CASE("resample length and round-trip fidelity") {
    AudioStream stream;
    stream.sample_rate = kCanonicalSampleRate;
    stream.samples = tone(1000.0, 1.0, kCanonicalSampleRate);

    const AudioStream down = resample(stream, 22050);
    CHECK(down.sample_rate == 22050);
    CHECK(down.samples.size() ==
          static_cast<Eigen::Index>(std::llround(
              stream.samples.size() * 22050.0 / kCanonicalSampleRate)));

    const AudioStream up = resample(down, kCanonicalSampleRate);
    REQUIRE(up.samples.size() == stream.samples.size());

    // Compare away from the edges (the sinc kernel has 48 taps per side).
    const Eigen::Index skip = 256;
    const Eigen::Index n = stream.samples.size() - 2 * skip;
    const Eigen::VectorXf orig = stream.samples.segment(skip, n);
    const Eigen::VectorXf rt = up.samples.segment(skip, n);
    const double signal = orig.cast<double>().squaredNorm();
    const double noise = (rt - orig).cast<double>().squaredNorm();
    CHECK(10.0 * std::log10(signal / noise) > 60.0);

    CHECK_THROWS_AS(resample(stream, 0), Error);
    AudioStream empty;
    CHECK_THROWS_AS(resample(empty, 22050), Error);

    // Identity rate is a pass-through.
    const AudioStream same = resample(stream, kCanonicalSampleRate);
    CHECK(same.samples == stream.samples);
}

TEST_CASE("load_wav rejects what it cannot decode") {
    auto code_of = [](const fs::path& path) {
        try {
            load_wav(path);
            return Errc::ParseError; // anything but the expected codes
        } catch (const Error& e) {
            return e.code();
        }
    };

    CHECK(code_of(temp_file("missing_file.wav")) == Errc::FileNotFound);

    const fs::path not_riff = write_file("not_riff.wav", "JUNKjunkJUNKjunk");
    CHECK(code_of(not_riff) == Errc::UnsupportedFormat);

    const fs::path alaw =
        write_file("alaw.wav", wav_bytes(6, 1, 44100, 8, std::string(64, 'x')));
    CHECK(code_of(alaw) == Errc::UnsupportedFormat);

    const fs::path pcm24 = write_file(
        "pcm24.wav", wav_bytes(1, 1, 44100, 24, std::string(96, 'x')));
    CHECK(code_of(pcm24) == Errc::UnsupportedFormat);

    std::string truncated =
        wav_bytes(1, 1, 44100, 16, std::string(100, 'x'));
    truncated.resize(truncated.size() - 40); // data chunk overruns the file
    const fs::path corrupt = write_file("truncated.wav", truncated);
    CHECK(code_of(corrupt) == Errc::CorruptFile);

    const fs::path empty_data =
        write_file("empty.wav", wav_bytes(1, 1, 44100, 16, ""));
    CHECK(code_of(empty_data) == Errc::EmptyAudio);

    for (const char* name : {"not_riff.wav", "alaw.wav", "pcm24.wav",
                             "truncated.wav", "empty.wav"})
        fs::remove(temp_file(name));
}

TEST_CASE("frame_stream geometry, padding and validation") {
    AudioStream stream;
    stream.sample_rate = kCanonicalSampleRate;
    stream.samples = Eigen::VectorXf::Ones(44100); // exactly 1 s

    const auto frames = frame_stream(stream, 100, 20);
    CHECK(frames.size() == 50); // floor(1000 / 20)
    const Eigen::Index window_samples = 4410;
    for (size_t k = 0; k < frames.size(); ++k) {
        CHECK(frames[k].samples.size() == window_samples);
        CHECK(frames[k].start_time == doctest::Approx(0.02 * k));
        CHECK(frames[k].window_ms == 100);
        CHECK(frames[k].hop_ms == 20);
    }
    // Frame 46 starts at 0.92 s: the last 0.02 s of its window overruns the
    // stream and must be zero padded.
    const FrameBuffer& tail = frames[46];
    CHECK(tail.samples.head(window_samples - 882).minCoeff() == 1.0f);
    CHECK(tail.samples.tail(882).cwiseAbs().maxCoeff() == 0.0f);

    CHECK_THROWS_AS(frame_stream(stream, 100, 0), Error);
    CHECK_THROWS_AS(frame_stream(stream, 10, 20), Error);
    AudioStream empty;
    CHECK_THROWS_AS(frame_stream(empty, 100, 20), Error);
}

TEST_CASE("Framer yields exactly the frames of frame_stream") {
    AudioStream stream;
    stream.sample_rate = kCanonicalSampleRate;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    stream.samples.resize(30000);
    for (Eigen::Index i = 0; i < stream.samples.size(); ++i)
        stream.samples[i] = dist(rng);

    const auto batch = frame_stream(stream, 20, 10);
    Framer framer(stream, 20, 10);
    CHECK(framer.frames_total() == static_cast<Eigen::Index>(batch.size()));

    size_t count = 0;
    while (auto frame = framer.next()) {
        REQUIRE(count < batch.size());
        CHECK(frame->start_time == batch[count].start_time);
        CHECK(frame->samples == batch[count].samples);
        ++count;
    }
    CHECK(count == batch.size());
    CHECK(!framer.next().has_value());
}
