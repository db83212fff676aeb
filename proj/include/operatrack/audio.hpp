#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "operatrack/common.hpp"

namespace operatrack {

/// Everything downstream of decode runs at this rate.
inline constexpr int kCanonicalSampleRate = 44100;

/// Mono audio, samples nominally in [-1, 1].
struct AudioStream {
    Eigen::VectorXf samples;
    int sample_rate = kCanonicalSampleRate;

    Eigen::Index size() const { return samples.size(); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

/// Decodes a RIFF/WAVE file (PCM16 or IEEE float32), collapses channels to
/// mono by averaging, and resamples to the canonical 44.1 kHz rate.
///
/// Throws Error with FileNotFound, UnsupportedFormat (container or codec we
/// do not handle), CorruptFile (truncated/ill-formed chunks) or EmptyAudio.
AudioStream load_wav(const std::filesystem::path& path);

/// Writes mono PCM16 WAV.  Samples are clipped to [-1, 1] before quantizing.
void save_wav(const std::filesystem::path& path, const AudioStream& stream);

/// Sample-rate conversion by windowed-sinc interpolation (Blackman window,
/// 48 taps per side).  Output length is round(n * target / source); a 1 kHz
/// tone survives a down/up round trip with SNR above 60 dB.
AudioStream resample(const AudioStream& stream, int target_rate);

/// One analysis frame cut from a stream.  `samples` has exactly the window
/// length; frames that overrun the end of the stream are zero padded.
struct FrameBuffer {
    double start_time = 0.0; // seconds from stream start
    int window_ms = 0;
    int hop_ms = 0;
    Eigen::VectorXf samples;
};

/// Cuts a stream into hop-spaced frames.  Frame k starts at k * hop_ms; the
/// frame count is floor(duration_ms / hop_ms) so a trailing partial hop is
/// dropped but a partial window is zero padded.
///
/// Throws EmptyAudio for an empty stream and InvalidGeometry when hop_ms <= 0
/// or window_ms < hop_ms.
std::vector<FrameBuffer> frame_stream(const AudioStream& stream, int window_ms,
                                      int hop_ms);

/// Pull-based view of frame_stream for streaming consumers: yields the same
/// frames one at a time without materializing the whole vector.
class Framer {
  public:
    Framer(const AudioStream& stream, int window_ms, int hop_ms);

    /// Next frame, or nullopt once the stream is exhausted.
    std::optional<FrameBuffer> next();

    Eigen::Index frames_total() const { return frames_total_; }

  private:
    const AudioStream* stream_;
    int window_ms_;
    int hop_ms_;
    Eigen::Index window_samples_;
    Eigen::Index hop_samples_;
    Eigen::Index frames_total_;
    Eigen::Index cursor_ = 0;
};

} // namespace operatrack
