#include "operatrack/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace operatrack {
namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatIeeeFloat = 3;

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void write_u32(std::ostream& out, uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff),
                           static_cast<char>(v >> 8 & 0xff),
                           static_cast<char>(v >> 16 & 0xff),
                           static_cast<char>(v >> 24 & 0xff)};
    out.write(bytes, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
    const char bytes[2] = {static_cast<char>(v & 0xff),
                           static_cast<char>(v >> 8 & 0xff)};
    out.write(bytes, 2);
}

struct WavFormat {
    uint16_t format_tag = 0;
    uint16_t channels = 0;
    uint32_t sample_rate = 0;
    uint16_t bits_per_sample = 0;
};

/// Averages interleaved channels into mono doubles, then narrows to float.
Eigen::VectorXf decode_samples(const std::vector<uint8_t>& data,
                               const WavFormat& fmt, const std::string& name) {
    const int bytes_per_sample = fmt.bits_per_sample / 8;
    const size_t frame_bytes =
        static_cast<size_t>(bytes_per_sample) * fmt.channels;
    if (data.size() % frame_bytes != 0)
        raise(Errc::CorruptFile,
              name + ": data chunk size is not a whole number of frames");
    const size_t frames = data.size() / frame_bytes;

    Eigen::VectorXf mono(static_cast<Eigen::Index>(frames));
    const uint8_t* p = data.data();
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < fmt.channels; ++ch) {
            if (fmt.format_tag == kFormatPcm) {
                const int16_t raw =
                    static_cast<int16_t>(p[0] | static_cast<uint16_t>(p[1]) << 8);
                acc += raw / 32768.0;
            } else {
                float value;
                std::memcpy(&value, p, sizeof value);
                acc += value;
            }
            p += bytes_per_sample;
        }
        mono[static_cast<Eigen::Index>(i)] =
            static_cast<float>(acc / fmt.channels);
    }
    return mono;
}

} // namespace

AudioStream load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());

    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    const std::string name = path.filename().string();
    if (bytes.size() < 12)
        raise(Errc::UnsupportedFormat, name + ": not a RIFF/WAVE file");
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        raise(Errc::UnsupportedFormat, name + ": not a RIFF/WAVE file");

    WavFormat fmt;
    bool have_fmt = false;
    std::vector<uint8_t> data;
    bool have_data = false;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t chunk_size = read_u32(bytes.data() + pos + 4);
        pos += 8;
        if (pos + chunk_size > bytes.size())
            raise(Errc::CorruptFile,
                  name + ": chunk overruns end of file");
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16)
                raise(Errc::CorruptFile, name + ": fmt chunk too short");
            const uint8_t* f = bytes.data() + pos;
            fmt.format_tag = read_u16(f);
            fmt.channels = read_u16(f + 2);
            fmt.sample_rate = read_u32(f + 4);
            fmt.bits_per_sample = read_u16(f + 14);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data.assign(bytes.begin() + static_cast<long>(pos),
                        bytes.begin() + static_cast<long>(pos + chunk_size));
            have_data = true;
        }
        pos += chunk_size + (chunk_size & 1); // chunks are word aligned
    }

    if (!have_fmt || !have_data)
        raise(Errc::CorruptFile, name + ": missing fmt or data chunk");
    if (fmt.format_tag != kFormatPcm && fmt.format_tag != kFormatIeeeFloat)
        raise(Errc::UnsupportedFormat,
              name + ": only PCM16 and float32 WAV are supported");
    if (fmt.format_tag == kFormatPcm && fmt.bits_per_sample != 16)
        raise(Errc::UnsupportedFormat,
              name + ": only 16-bit PCM is supported");
    if (fmt.format_tag == kFormatIeeeFloat && fmt.bits_per_sample != 32)
        raise(Errc::UnsupportedFormat,
              name + ": only 32-bit float WAV is supported");
    if (fmt.channels == 0 || fmt.sample_rate == 0)
        raise(Errc::CorruptFile, name + ": fmt chunk has zero channels/rate");
    if (data.empty())
        raise(Errc::EmptyAudio, name + ": data chunk holds no samples");

    AudioStream stream;
    stream.samples = decode_samples(data, fmt, name);
    stream.sample_rate = static_cast<int>(fmt.sample_rate);
    if (stream.sample_rate != kCanonicalSampleRate)
        stream = resample(stream, kCanonicalSampleRate);
    return stream;
}

void save_wav(const std::filesystem::path& path, const AudioStream& stream) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());

    const uint32_t n = static_cast<uint32_t>(stream.samples.size());
    const uint32_t data_bytes = n * 2;
    out.write("RIFF", 4);
    write_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, kFormatPcm);
    write_u16(out, 1); // mono
    write_u32(out, static_cast<uint32_t>(stream.sample_rate));
    write_u32(out, static_cast<uint32_t>(stream.sample_rate) * 2);
    write_u16(out, 2);  // block align
    write_u16(out, 16); // bits
    out.write("data", 4);
    write_u32(out, data_bytes);
    for (uint32_t i = 0; i < n; ++i) {
        const float clipped = std::clamp(stream.samples[i], -1.0f, 1.0f);
        const int16_t q = static_cast<int16_t>(
            std::lrint(clipped * 32767.0f));
        write_u16(out, static_cast<uint16_t>(q));
    }
}

AudioStream resample(const AudioStream& stream, int target_rate) {
    if (target_rate <= 0)
        raise(Errc::InvalidConfig, "resample: target rate must be positive");
    if (stream.samples.size() == 0)
        raise(Errc::EmptyAudio, "resample: empty input stream");
    if (stream.sample_rate == target_rate)
        return stream;

    constexpr int kHalfTaps = 48;
    const double step = static_cast<double>(stream.sample_rate) / target_rate;
    // Cut off at the narrower of the two Nyquist limits.
    const double cutoff =
        std::min(1.0, static_cast<double>(target_rate) / stream.sample_rate);
    const Eigen::Index out_n = static_cast<Eigen::Index>(std::llround(
        static_cast<double>(stream.samples.size()) * target_rate /
        stream.sample_rate));

    auto kernel = [cutoff](double u) {
        const double x = std::numbers::pi * cutoff * u;
        const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
        const double w = 0.42 +
                         0.5 * std::cos(std::numbers::pi * u / kHalfTaps) +
                         0.08 * std::cos(2.0 * std::numbers::pi * u / kHalfTaps);
        return cutoff * sinc * w;
    };

    AudioStream out;
    out.sample_rate = target_rate;
    out.samples.resize(out_n);
    const Eigen::Index in_n = stream.samples.size();
    for (Eigen::Index i = 0; i < out_n; ++i) {
        const double t = i * step;
        const auto base = static_cast<Eigen::Index>(std::floor(t));
        double acc = 0.0;
        double gain = 0.0;
        for (Eigen::Index k = base - kHalfTaps + 1; k <= base + kHalfTaps; ++k) {
            const double h = kernel(t - static_cast<double>(k));
            gain += h;
            if (k >= 0 && k < in_n)
                acc += h * stream.samples[k];
        }
        out.samples[i] = static_cast<float>(gain > 1e-12 ? acc / gain : acc);
    }
    return out;
}

namespace {

void check_geometry(int window_ms, int hop_ms) {
    if (hop_ms <= 0)
        raise(Errc::InvalidGeometry, "framing: hop must be positive");
    if (window_ms < hop_ms)
        raise(Errc::InvalidGeometry,
              "framing: window must be at least one hop long");
}

Eigen::Index ms_to_samples(int ms, int sample_rate) {
    return static_cast<Eigen::Index>(
        std::llround(ms * 1e-3 * sample_rate));
}

FrameBuffer cut_frame(const AudioStream& stream, Eigen::Index start,
                      Eigen::Index window_samples, int window_ms, int hop_ms,
                      Eigen::Index index) {
    FrameBuffer frame;
    frame.start_time = index * hop_ms * 1e-3;
    frame.window_ms = window_ms;
    frame.hop_ms = hop_ms;
    frame.samples = Eigen::VectorXf::Zero(window_samples);
    const Eigen::Index avail =
        std::min(window_samples, stream.samples.size() - start);
    frame.samples.head(avail) = stream.samples.segment(start, avail);
    return frame;
}

} // namespace

std::vector<FrameBuffer> frame_stream(const AudioStream& stream, int window_ms,
                                      int hop_ms) {
    check_geometry(window_ms, hop_ms);
    if (stream.samples.size() == 0)
        raise(Errc::EmptyAudio, "framing: empty stream");

    const Eigen::Index window_samples = ms_to_samples(window_ms, stream.sample_rate);
    const Eigen::Index hop_samples = ms_to_samples(hop_ms, stream.sample_rate);
    const Eigen::Index count = stream.samples.size() / hop_samples;

    std::vector<FrameBuffer> frames;
    frames.reserve(static_cast<size_t>(count));
    for (Eigen::Index k = 0; k < count; ++k)
        frames.push_back(cut_frame(stream, k * hop_samples, window_samples,
                                   window_ms, hop_ms, k));
    return frames;
}

Framer::Framer(const AudioStream& stream, int window_ms, int hop_ms)
    : stream_(&stream), window_ms_(window_ms), hop_ms_(hop_ms) {
    check_geometry(window_ms, hop_ms);
    if (stream.samples.size() == 0)
        raise(Errc::EmptyAudio, "framing: empty stream");
    window_samples_ = ms_to_samples(window_ms, stream.sample_rate);
    hop_samples_ = ms_to_samples(hop_ms, stream.sample_rate);
    frames_total_ = stream.samples.size() / hop_samples_;
}

std::optional<FrameBuffer> Framer::next() {
    if (cursor_ >= frames_total_)
        return std::nullopt;
    FrameBuffer frame = cut_frame(*stream_, cursor_ * hop_samples_,
                                  window_samples_, window_ms_, hop_ms_, cursor_);
    ++cursor_;
    return frame;
}

} // namespace operatrack
