#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "operatrack/audio.hpp"

namespace operatrack {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Floor applied to mel band magnitudes before the log.
inline constexpr double kLogFloor = 1e-10;

/// Alignment features: 20 ms windows every 10 ms, 120 MFCCs from a
/// 140-filter bank with the first 20 coefficients dropped.
inline constexpr int kAlignmentWindowMs = 20;
inline constexpr int kAlignmentHopMs = 10;
inline constexpr int kAlignmentMels = 140;
inline constexpr int kAlignmentCoeffs = 120;
inline constexpr int kAlignmentDrop = 20;
inline constexpr int kAlignmentDim = kAlignmentCoeffs - kAlignmentDrop;

/// Detector features: 100 ms windows every 20 ms; block statistics look at
/// the most recent 50 frames (one second of context).
inline constexpr int kDetectorWindowMs = 100;
inline constexpr int kDetectorHopMs = 20;
inline constexpr int kDetectorBlockFrames = 50;
inline constexpr int kDetectorMels = 20;

/// Smallest power of two >= n.
int fft_size_for(Eigen::Index n_samples);

/// Periodic Hann window, zero pad to fft_size, one-sided magnitude spectrum
/// (fft_size/2 + 1 bins).
Vec magnitude_spectrum(const Eigen::VectorXf& samples, int fft_size);

/// Reusable window + FFT plan for one frame geometry.
class SpectrumPlan {
  public:
    SpectrumPlan(Eigen::Index frame_samples, int fft_size);
    ~SpectrumPlan();
    SpectrumPlan(SpectrumPlan&&) noexcept;
    SpectrumPlan& operator=(SpectrumPlan&&) noexcept;

    Vec magnitude(const Eigen::VectorXf& samples);
    int fft_size() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Triangular mel filterbank over a one-sided magnitude spectrum.  Filter
/// centers are equally spaced on the mel scale between 0 Hz and Nyquist.
class MelFilterbank {
  public:
    MelFilterbank(int n_mels, int fft_size, double sample_rate);

    Vec apply(const Vec& magnitude) const;
    int size() const { return static_cast<int>(filters_.size()); }

    static double hz_to_mel(double hz);
    static double mel_to_hz(double mel);

  private:
    struct Filter {
        Eigen::Index first_bin = 0;
        Vec weights;
    };
    std::vector<Filter> filters_;
    Eigen::Index bins_ = 0;
};

/// Orthonormal DCT-II, truncated to the first n_coeffs coefficients.
Vec dct2_ortho(const Vec& x, int n_coeffs);

/// MFCCs of one frame: mel magnitudes -> floored log -> orthonormal DCT-II.
Vec mfcc(const FrameBuffer& frame, int n_mels, int n_coeffs);

struct AlignmentFeature {
    double time = 0.0;
    Vec values; // kAlignmentDim
};

/// Streaming alignment feature extractor; caches the filterbank, DCT matrix
/// and FFT plan across frames.  Stateless between frames.
class AlignmentExtractor {
  public:
    explicit AlignmentExtractor(double sample_rate = kCanonicalSampleRate);
    ~AlignmentExtractor();
    AlignmentExtractor(AlignmentExtractor&&) noexcept;
    AlignmentExtractor& operator=(AlignmentExtractor&&) noexcept;

    AlignmentFeature process(const FrameBuffer& frame);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Frequency bands (Hz) for the low-level spectral measures.
struct BandSpec {
    std::array<std::pair<double, double>, 4> edges;

    static BandSpec defaults(double sample_rate);
    /// InvalidConfig unless bands are ordered, positive-width and below Nyquist.
    void validate(double sample_rate) const;
};

/// Low-level spectral measures: centroid, spread, flux, flatness for each
/// band, band-major (16 values).  Centroid and spread are normalized by the
/// Nyquist frequency; flux is the per-bin RMS magnitude change against
/// `prev_magnitude` (zero when prev is null).  A band with no energy reports
/// the silence convention (0, 0, 0, 1).
Vec spectral_measures(const Vec& magnitude, const Vec* prev_magnitude,
                      const BandSpec& bands, double sample_rate, int fft_size);

/// Continuous-frequency activation: binarize every frame of the block at its
/// own 90th-percentile magnitude, then report the fraction of bins that stay
/// active in at least 80% of the frames.  Steady tonal content scores high;
/// applause and noise score near zero.
double cfa(const std::vector<Vec>& block_magnitudes);

/// Continuous-frequency trajectory: RMS deviation of the dominant spectral
/// peak from its least-squares line over the block, normalized by Nyquist.
/// Smooth glides (speech prosody) score low; jumpy peaks score high.
double cft(const std::vector<Vec>& block_magnitudes, double sample_rate,
           int fft_size);

inline constexpr int kFluctogramBands = 11;

/// Fluctogram: 11 log-spaced, 50%-overlapping bands between 100 Hz and
/// 8 kHz.  For each band the best cross-correlation lag between consecutive
/// frames is found (ties toward zero); |lag| / max_lag is averaged over the
/// block's consecutive pairs.  Vibrato and prosodic pitch movement light it
/// up; steady tones and wideband noise leave it near zero.
Vec fluctogram(const std::vector<Vec>& block_magnitudes, double sample_rate,
               int fft_size);

/// Difference of the 20-bank MFCC coefficients 2..19 against the previous
/// frame (18 values, zeros on the first frame).
Vec delta_mfcc(const FrameBuffer& frame, const FrameBuffer* prev);

enum class DetectorKind { Applause, Music, Speech };

int detector_dim(DetectorKind kind);
const char* detector_kind_name(DetectorKind kind);
DetectorKind detector_kind_from(const std::string& name); // InvalidConfig

/// All three detector feature vectors for one frame:
///  applause (25) = 16 spectral measures + MFCC 0..8 of the 20-bank
///  music    (26) = applause features + CFA
///  speech   (46) = 16 spectral measures + CFT + fluctogram + delta-MFCC
struct DetectorFeatureSet {
    double time = 0.0;
    Vec applause;
    Vec music;
    Vec speech;

    const Vec& of(DetectorKind kind) const;
};

/// Streaming detector feature extractor.  Carries the previous spectrum, the
/// 50-frame block statistics and the previous MFCCs across process() calls;
/// feeding the same frames one at a time or all at once gives identical
/// output.
class DetectorFeatureExtractor {
  public:
    explicit DetectorFeatureExtractor(double sample_rate = kCanonicalSampleRate);
    ~DetectorFeatureExtractor();
    DetectorFeatureExtractor(DetectorFeatureExtractor&&) noexcept;
    DetectorFeatureExtractor& operator=(DetectorFeatureExtractor&&) noexcept;

    DetectorFeatureSet process(const FrameBuffer& frame);
    void reset();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Batch wrappers used by tests: `block` holds the most recent detector
/// frames, current frame last.  They recompute spectra per call and agree
/// exactly with the streaming extractor fed the same frames.
Vec applause_features(const std::vector<FrameBuffer>& block);
Vec music_features(const std::vector<FrameBuffer>& block);
Vec speech_features(const std::vector<FrameBuffer>& block);

/// Whole-stream extraction at the standard geometries.
std::vector<AlignmentFeature> extract_alignment_features(const AudioStream&);
std::vector<DetectorFeatureSet> extract_detector_features(const AudioStream&);

/// Feature dump: single-line JSON header {kind, dim, hop_ms, count} followed
/// by count * dim float32 little-endian values, frame-major.
struct FeatureDump {
    std::string kind;
    int hop_ms = 0;
    Mat features; // dim x count
};

void write_feature_dump(const std::filesystem::path& path, const FeatureDump& dump);
FeatureDump read_feature_dump(const std::filesystem::path& path);

} // namespace operatrack
