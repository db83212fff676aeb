#include "operatrack/features.hpp"

#include <unsupported/Eigen/FFT>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>

namespace operatrack {

// --------------------------------------------------------------------------
// Spectrum

int fft_size_for(Eigen::Index n_samples) {
    int size = 1;
    while (size < n_samples)
        size <<= 1;
    return size;
}

struct SpectrumPlan::Impl {
    Eigen::Index frame_samples;
    int fft_size;
    Eigen::VectorXd window;
    Eigen::FFT<double> fft;
    std::vector<double> time_buf;
    std::vector<std::complex<double>> freq_buf;
};

SpectrumPlan::SpectrumPlan(Eigen::Index frame_samples, int fft_size)
    : impl_(std::make_unique<Impl>()) {
    if (frame_samples <= 0 || fft_size < frame_samples ||
        (fft_size & (fft_size - 1)) != 0)
        raise(Errc::InvalidGeometry,
              "spectrum: fft size must be a power of two covering the frame");
    impl_->frame_samples = frame_samples;
    impl_->fft_size = fft_size;
    impl_->window.resize(frame_samples);
    for (Eigen::Index i = 0; i < frame_samples; ++i)
        impl_->window[i] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / frame_samples);
    impl_->fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    impl_->time_buf.resize(static_cast<size_t>(fft_size), 0.0);
}

SpectrumPlan::~SpectrumPlan() = default;
SpectrumPlan::SpectrumPlan(SpectrumPlan&&) noexcept = default;
SpectrumPlan& SpectrumPlan::operator=(SpectrumPlan&&) noexcept = default;

int SpectrumPlan::fft_size() const { return impl_->fft_size; }

Vec SpectrumPlan::magnitude(const Eigen::VectorXf& samples) {
    Impl& im = *impl_;
    if (samples.size() != im.frame_samples)
        raise(Errc::DimensionMismatch, "spectrum: frame length changed");
    for (Eigen::Index i = 0; i < im.frame_samples; ++i)
        im.time_buf[static_cast<size_t>(i)] =
            im.window[i] * static_cast<double>(samples[i]);
    im.fft.fwd(im.freq_buf, im.time_buf);
    const Eigen::Index bins = im.fft_size / 2 + 1;
    Vec mag(bins);
    for (Eigen::Index k = 0; k < bins; ++k)
        mag[k] = std::abs(im.freq_buf[static_cast<size_t>(k)]);
    return mag;
}

Vec magnitude_spectrum(const Eigen::VectorXf& samples, int fft_size) {
    SpectrumPlan plan(samples.size(), fft_size);
    return plan.magnitude(samples);
}

// --------------------------------------------------------------------------
// Mel filterbank and DCT

double MelFilterbank::hz_to_mel(double hz) {
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double MelFilterbank::mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(int n_mels, int fft_size, double sample_rate) {
    if (n_mels <= 0 || fft_size <= 0 || sample_rate <= 0)
        raise(Errc::InvalidConfig, "mel filterbank: non-positive geometry");
    bins_ = fft_size / 2 + 1;
    const double bin_hz = sample_rate / fft_size;
    const double mel_max = hz_to_mel(sample_rate / 2.0);

    std::vector<double> edges_hz(static_cast<size_t>(n_mels) + 2);
    for (int j = 0; j < n_mels + 2; ++j)
        edges_hz[static_cast<size_t>(j)] =
            mel_to_hz(mel_max * j / (n_mels + 1));

    filters_.reserve(static_cast<size_t>(n_mels));
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges_hz[static_cast<size_t>(m)];
        const double mid = edges_hz[static_cast<size_t>(m) + 1];
        const double hi = edges_hz[static_cast<size_t>(m) + 2];
        Filter filter;
        std::vector<double> weights;
        for (Eigen::Index k = 0; k < bins_; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f >= lo && f <= mid && mid > lo)
                w = (f - lo) / (mid - lo);
            else if (f > mid && f <= hi && hi > mid)
                w = (hi - f) / (hi - mid);
            if (w > 0.0) {
                if (weights.empty())
                    filter.first_bin = k;
                weights.push_back(w);
            } else if (!weights.empty()) {
                break; // triangle support is contiguous
            }
        }
        filter.weights = Eigen::Map<const Vec>(
            weights.data(), static_cast<Eigen::Index>(weights.size()));
        filters_.push_back(std::move(filter));
    }
}

Vec MelFilterbank::apply(const Vec& magnitude) const {
    if (magnitude.size() != bins_)
        raise(Errc::DimensionMismatch,
              "mel filterbank: spectrum has wrong bin count");
    Vec out(static_cast<Eigen::Index>(filters_.size()));
    for (size_t m = 0; m < filters_.size(); ++m) {
        const Filter& f = filters_[m];
        out[static_cast<Eigen::Index>(m)] =
            f.weights.size() == 0
                ? 0.0
                : f.weights.dot(magnitude.segment(f.first_bin, f.weights.size()));
    }
    return out;
}

namespace {

/// Rows k = 0..n_coeffs-1 of the orthonormal DCT-II matrix for length n.
Mat dct2_matrix(int n_coeffs, int n) {
    Mat d(n_coeffs, n);
    const double s0 = std::sqrt(1.0 / n);
    const double sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n_coeffs; ++k)
        for (int i = 0; i < n; ++i)
            d(k, i) = (k == 0 ? s0 : sk) *
                      std::cos(std::numbers::pi * k * (2 * i + 1) / (2.0 * n));
    return d;
}

Vec floored_log(const Vec& v) {
    return v.array().max(kLogFloor).log().matrix();
}

} // namespace

Vec dct2_ortho(const Vec& x, int n_coeffs) {
    if (n_coeffs <= 0 || n_coeffs > x.size())
        raise(Errc::InvalidConfig, "dct: coefficient count out of range");
    return dct2_matrix(n_coeffs, static_cast<int>(x.size())) * x;
}

Vec mfcc(const FrameBuffer& frame, int n_mels, int n_coeffs) {
    if (n_coeffs > n_mels)
        raise(Errc::InvalidConfig, "mfcc: more coefficients than mel bands");
    const int fft_size = fft_size_for(frame.samples.size());
    const double sample_rate =
        frame.samples.size() / (frame.window_ms * 1e-3);
    const Vec mag = magnitude_spectrum(frame.samples, fft_size);
    const MelFilterbank bank(n_mels, fft_size, sample_rate);
    return dct2_matrix(n_coeffs, n_mels) * floored_log(bank.apply(mag));
}

// --------------------------------------------------------------------------
// Alignment features

struct AlignmentExtractor::Impl {
    double sample_rate;
    Eigen::Index frame_samples = -1;
    std::optional<SpectrumPlan> plan;
    std::optional<MelFilterbank> mel;
    Mat dct; // rows kAlignmentDrop..kAlignmentCoeffs-1 only
};

AlignmentExtractor::AlignmentExtractor(double sample_rate)
    : impl_(std::make_unique<Impl>()) {
    impl_->sample_rate = sample_rate;
}

AlignmentExtractor::~AlignmentExtractor() = default;
AlignmentExtractor::AlignmentExtractor(AlignmentExtractor&&) noexcept = default;
AlignmentExtractor&
AlignmentExtractor::operator=(AlignmentExtractor&&) noexcept = default;

AlignmentFeature AlignmentExtractor::process(const FrameBuffer& frame) {
    Impl& im = *impl_;
    if (im.frame_samples < 0) {
        im.frame_samples = frame.samples.size();
        const int fft_size = fft_size_for(im.frame_samples);
        im.plan.emplace(im.frame_samples, fft_size);
        im.mel.emplace(kAlignmentMels, fft_size, im.sample_rate);
        im.dct = dct2_matrix(kAlignmentCoeffs, kAlignmentMels)
                     .bottomRows(kAlignmentDim);
    } else if (frame.samples.size() != im.frame_samples) {
        raise(Errc::DimensionMismatch, "alignment features: frame size changed");
    }
    AlignmentFeature out;
    out.time = frame.start_time;
    out.values = im.dct * floored_log(im.mel->apply(im.plan->magnitude(frame.samples)));
    return out;
}

// --------------------------------------------------------------------------
// Low-level spectral measures

BandSpec BandSpec::defaults(double sample_rate) {
    BandSpec spec;
    spec.edges = {{{0.0, 630.0},
                   {630.0, 1720.0},
                   {1720.0, 4400.0},
                   {4400.0, sample_rate / 2.0}}};
    return spec;
}

void BandSpec::validate(double sample_rate) const {
    const double nyquist = sample_rate / 2.0;
    for (const auto& [lo, hi] : edges) {
        if (lo < 0.0 || hi <= lo)
            raise(Errc::InvalidConfig, "band spec: bands must have positive width");
        if (hi > nyquist + 1e-9)
            raise(Errc::InvalidConfig, "band spec: band exceeds Nyquist");
    }
}

namespace {

struct BinRange {
    Eigen::Index first = 0;
    Eigen::Index count = 0;
};

/// Bins whose center frequency falls in [lo, hi); `hi` inclusive when it is
/// the Nyquist so the top band owns the last bin.
BinRange band_bins(double lo, double hi, double sample_rate, int fft_size) {
    const double bin_hz = sample_rate / fft_size;
    const Eigen::Index bins = fft_size / 2 + 1;
    const bool top = hi >= sample_rate / 2.0 - 1e-9;
    Eigen::Index first = static_cast<Eigen::Index>(std::ceil(lo / bin_hz - 1e-9));
    first = std::clamp<Eigen::Index>(first, 0, bins);
    Eigen::Index last = first;
    for (Eigen::Index k = first; k < bins; ++k) {
        const double f = k * bin_hz;
        if (f < hi || (top && f <= hi + 1e-9))
            last = k + 1;
        else
            break;
    }
    return {first, last - first};
}

constexpr double kSilenceMass = 1e-12;

} // namespace

Vec spectral_measures(const Vec& magnitude, const Vec* prev_magnitude,
                      const BandSpec& bands, double sample_rate, int fft_size) {
    bands.validate(sample_rate);
    if (magnitude.size() != fft_size / 2 + 1)
        raise(Errc::DimensionMismatch, "spectral measures: wrong bin count");
    if (prev_magnitude && prev_magnitude->size() != magnitude.size())
        raise(Errc::DimensionMismatch, "spectral measures: prev frame bin count");

    const double nyquist = sample_rate / 2.0;
    const double bin_hz = sample_rate / fft_size;
    Vec out(4 * static_cast<Eigen::Index>(bands.edges.size()));
    Eigen::Index pos = 0;
    for (const auto& [lo, hi] : bands.edges) {
        const auto range = band_bins(lo, hi, sample_rate, fft_size);
        double centroid = 0.0, spread = 0.0, flux = 0.0, flatness = 1.0;
        if (range.count > 0) {
            const auto m = magnitude.segment(range.first, range.count);
            const double mass = m.sum();
            if (mass >= kSilenceMass) {
                double fsum = 0.0;
                for (Eigen::Index i = 0; i < range.count; ++i)
                    fsum += (range.first + i) * bin_hz * m[i];
                const double c_hz = fsum / mass;
                double var = 0.0;
                for (Eigen::Index i = 0; i < range.count; ++i) {
                    const double d = (range.first + i) * bin_hz - c_hz;
                    var += d * d * m[i];
                }
                centroid = c_hz / nyquist;
                spread = std::sqrt(var / mass) / nyquist;
                if (prev_magnitude) {
                    const auto p =
                        prev_magnitude->segment(range.first, range.count);
                    flux = std::sqrt((m - p).squaredNorm() /
                                     static_cast<double>(range.count));
                }
                const Vec power = m.array().square();
                const double log_mean =
                    (power.array() + 1e-20).log().mean();
                flatness = std::exp(log_mean) / (power.mean() + 1e-20);
            }
        }
        out[pos++] = centroid;
        out[pos++] = spread;
        out[pos++] = flux;
        out[pos++] = flatness;
    }
    return out;
}

// --------------------------------------------------------------------------
// Block measures: CFA, CFT, fluctogram

namespace {

/// Bins strictly above the frame's 90th-percentile magnitude.
std::vector<uint8_t> binarize_p90(const Vec& magnitude) {
    const Eigen::Index n = magnitude.size();
    std::vector<double> sorted(magnitude.data(), magnitude.data() + n);
    const auto idx = static_cast<Eigen::Index>(0.9 * static_cast<double>(n - 1));
    std::nth_element(sorted.begin(), sorted.begin() + idx, sorted.end());
    const double threshold = sorted[static_cast<size_t>(idx)];
    std::vector<uint8_t> flags(static_cast<size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k)
        flags[static_cast<size_t>(k)] = magnitude[k] > threshold ? 1 : 0;
    return flags;
}

double cfa_from_counts(const Eigen::VectorXi& counts, Eigen::Index block_size) {
    if (block_size == 0)
        return 0.0;
    const int need = static_cast<int>((4 * block_size + 4) / 5); // ceil(0.8 B)
    const Eigen::Index persistent = (counts.array() >= need).count();
    return static_cast<double>(persistent) / static_cast<double>(counts.size());
}

/// Dominant peak frequency, DC excluded.
double peak_freq(const Vec& magnitude, double sample_rate, int fft_size) {
    if (magnitude.size() < 2)
        return 0.0;
    Eigen::Index best = 1;
    magnitude.tail(magnitude.size() - 1).maxCoeff(&best);
    return static_cast<double>(best + 1) * sample_rate / fft_size;
}

double cft_from_peaks(const std::vector<double>& peaks, double nyquist) {
    const auto n = static_cast<double>(peaks.size());
    if (peaks.size() < 2)
        return 0.0;
    // Least-squares line y = a + b x over x = 0..n-1, then RMS residual.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < peaks.size(); ++i) {
        const double x = static_cast<double>(i);
        sx += x;
        sy += peaks[i];
        sxx += x * x;
        sxy += x * peaks[i];
    }
    const double denom = n * sxx - sx * sx;
    const double b = denom > 0 ? (n * sxy - sx * sy) / denom : 0.0;
    const double a = (sy - b * sx) / n;
    double ss = 0;
    for (size_t i = 0; i < peaks.size(); ++i) {
        const double r = peaks[i] - (a + b * static_cast<double>(i));
        ss += r * r;
    }
    return std::sqrt(ss / n) / nyquist;
}

constexpr int kFluctMaxLag = 8;

std::vector<BinRange> fluct_band_ranges(double sample_rate, int fft_size) {
    // 13 log-spaced edges from 100 Hz to 8 kHz; band i spans edges i..i+2,
    // giving 11 bands with 50% overlap.
    std::vector<double> edges(kFluctogramBands + 2);
    for (int i = 0; i < kFluctogramBands + 2; ++i)
        edges[static_cast<size_t>(i)] =
            100.0 * std::pow(8000.0 / 100.0, i / 12.0);
    std::vector<BinRange> ranges;
    ranges.reserve(kFluctogramBands);
    for (int i = 0; i < kFluctogramBands; ++i)
        ranges.push_back(band_bins(edges[static_cast<size_t>(i)],
                                   edges[static_cast<size_t>(i) + 2],
                                   sample_rate, fft_size));
    return ranges;
}

/// Best cross-correlation lag per band between two consecutive frames,
/// reported as |lag| / max_lag.  Ties prefer the smaller |lag| (then the
/// negative one), so identical spectra score zero.
Vec fluct_pair_score(const Vec& prev, const Vec& cur,
                     const std::vector<BinRange>& ranges) {
    Vec score = Vec::Zero(static_cast<Eigen::Index>(ranges.size()));
    for (size_t b = 0; b < ranges.size(); ++b) {
        const auto& range = ranges[b];
        if (range.count < 2)
            continue;
        const auto a = prev.segment(range.first, range.count);
        const auto c = cur.segment(range.first, range.count);
        if (a.squaredNorm() < 1e-24 || c.squaredNorm() < 1e-24)
            continue;
        int best_lag = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (int lag = -kFluctMaxLag; lag <= kFluctMaxLag; ++lag) {
            double corr = 0.0;
            for (Eigen::Index i = 0; i < range.count; ++i) {
                const Eigen::Index j = i + lag;
                if (j >= 0 && j < range.count)
                    corr += a[i] * c[j];
            }
            const bool better =
                corr > best ||
                (corr == best && (std::abs(lag) < std::abs(best_lag) ||
                                  (std::abs(lag) == std::abs(best_lag) &&
                                   lag < best_lag)));
            if (better) {
                best = corr;
                best_lag = lag;
            }
        }
        score[static_cast<Eigen::Index>(b)] =
            std::abs(best_lag) / static_cast<double>(kFluctMaxLag);
    }
    return score;
}

Vec average_scores(const std::deque<Vec>& scores) {
    Vec out = Vec::Zero(kFluctogramBands);
    if (scores.empty())
        return out;
    for (const Vec& s : scores)
        out += s;
    return out / static_cast<double>(scores.size());
}

void check_block(const std::vector<Vec>& block, const char* what) {
    if (block.empty())
        raise(Errc::EmptyAudio, std::string(what) + ": empty block");
    for (const Vec& m : block)
        if (m.size() != block.front().size())
            raise(Errc::DimensionMismatch,
                  std::string(what) + ": inconsistent bin counts in block");
}

} // namespace

double cfa(const std::vector<Vec>& block_magnitudes) {
    check_block(block_magnitudes, "cfa");
    Eigen::VectorXi counts =
        Eigen::VectorXi::Zero(block_magnitudes.front().size());
    for (const Vec& m : block_magnitudes) {
        const auto flags = binarize_p90(m);
        for (Eigen::Index k = 0; k < counts.size(); ++k)
            counts[k] += flags[static_cast<size_t>(k)];
    }
    return cfa_from_counts(counts,
                           static_cast<Eigen::Index>(block_magnitudes.size()));
}

double cft(const std::vector<Vec>& block_magnitudes, double sample_rate,
           int fft_size) {
    check_block(block_magnitudes, "cft");
    std::vector<double> peaks;
    peaks.reserve(block_magnitudes.size());
    for (const Vec& m : block_magnitudes)
        peaks.push_back(peak_freq(m, sample_rate, fft_size));
    return cft_from_peaks(peaks, sample_rate / 2.0);
}

Vec fluctogram(const std::vector<Vec>& block_magnitudes, double sample_rate,
               int fft_size) {
    check_block(block_magnitudes, "fluctogram");
    const auto ranges = fluct_band_ranges(sample_rate, fft_size);
    std::deque<Vec> scores;
    for (size_t i = 1; i < block_magnitudes.size(); ++i)
        scores.push_back(fluct_pair_score(block_magnitudes[i - 1],
                                          block_magnitudes[i], ranges));
    return average_scores(scores);
}

Vec delta_mfcc(const FrameBuffer& frame, const FrameBuffer* prev) {
    constexpr int kFrom = 2;
    constexpr int kCount = kDetectorMels - kFrom;
    if (!prev)
        return Vec::Zero(kCount);
    const Vec cur = mfcc(frame, kDetectorMels, kDetectorMels);
    const Vec before = mfcc(*prev, kDetectorMels, kDetectorMels);
    return (cur - before).segment(kFrom, kCount);
}

// --------------------------------------------------------------------------
// Detector feature assembly

int detector_dim(DetectorKind kind) {
    switch (kind) {
    case DetectorKind::Applause: return 25;
    case DetectorKind::Music: return 26;
    case DetectorKind::Speech: return 46;
    }
    return 0;
}

const char* detector_kind_name(DetectorKind kind) {
    switch (kind) {
    case DetectorKind::Applause: return "applause";
    case DetectorKind::Music: return "music";
    case DetectorKind::Speech: return "speech";
    }
    return "unknown";
}

DetectorKind detector_kind_from(const std::string& name) {
    if (name == "applause")
        return DetectorKind::Applause;
    if (name == "music")
        return DetectorKind::Music;
    if (name == "speech")
        return DetectorKind::Speech;
    raise(Errc::InvalidConfig, "unknown detector kind '" + name + "'");
}

const Vec& DetectorFeatureSet::of(DetectorKind kind) const {
    switch (kind) {
    case DetectorKind::Applause: return applause;
    case DetectorKind::Music: return music;
    case DetectorKind::Speech: return speech;
    }
    return applause;
}

struct DetectorFeatureExtractor::Impl {
    double sample_rate;
    Eigen::Index frame_samples = -1;
    std::optional<SpectrumPlan> plan;
    std::optional<MelFilterbank> mel;
    Mat dct; // full 20 x 20
    BandSpec bands;
    std::vector<BinRange> fluct_ranges;

    Vec prev_mag;    // empty before the first frame
    Vec prev_mfcc;   // empty before the first frame
    std::deque<std::vector<uint8_t>> cfa_flags;
    Eigen::VectorXi cfa_counts;
    std::deque<double> cft_peaks;
    std::deque<Vec> fluct_pairs;

    void clear_state() {
        prev_mag.resize(0);
        prev_mfcc.resize(0);
        cfa_flags.clear();
        cfa_counts.setZero();
        cft_peaks.clear();
        fluct_pairs.clear();
    }
};

DetectorFeatureExtractor::DetectorFeatureExtractor(double sample_rate)
    : impl_(std::make_unique<Impl>()) {
    impl_->sample_rate = sample_rate;
    impl_->bands = BandSpec::defaults(sample_rate);
}

DetectorFeatureExtractor::~DetectorFeatureExtractor() = default;
DetectorFeatureExtractor::DetectorFeatureExtractor(
    DetectorFeatureExtractor&&) noexcept = default;
DetectorFeatureExtractor& DetectorFeatureExtractor::operator=(
    DetectorFeatureExtractor&&) noexcept = default;

void DetectorFeatureExtractor::reset() { impl_->clear_state(); }

DetectorFeatureSet DetectorFeatureExtractor::process(const FrameBuffer& frame) {
    Impl& im = *impl_;
    if (im.frame_samples < 0) {
        im.frame_samples = frame.samples.size();
        const int fft_size = fft_size_for(im.frame_samples);
        im.plan.emplace(im.frame_samples, fft_size);
        im.mel.emplace(kDetectorMels, fft_size, im.sample_rate);
        im.dct = dct2_matrix(kDetectorMels, kDetectorMels);
        im.fluct_ranges = fluct_band_ranges(im.sample_rate, fft_size);
        im.cfa_counts = Eigen::VectorXi::Zero(fft_size / 2 + 1);
    } else if (frame.samples.size() != im.frame_samples) {
        raise(Errc::DimensionMismatch, "detector features: frame size changed");
    }
    const int fft_size = im.plan->fft_size();

    const Vec mag = im.plan->magnitude(frame.samples);
    const Vec measures =
        spectral_measures(mag, im.prev_mag.size() ? &im.prev_mag : nullptr,
                          im.bands, im.sample_rate, fft_size);
    const Vec mfcc20 = im.dct * floored_log(im.mel->apply(mag));

    // CFA block state
    im.cfa_flags.push_back(binarize_p90(mag));
    for (Eigen::Index k = 0; k < im.cfa_counts.size(); ++k)
        im.cfa_counts[k] += im.cfa_flags.back()[static_cast<size_t>(k)];
    if (im.cfa_flags.size() > kDetectorBlockFrames) {
        for (Eigen::Index k = 0; k < im.cfa_counts.size(); ++k)
            im.cfa_counts[k] -= im.cfa_flags.front()[static_cast<size_t>(k)];
        im.cfa_flags.pop_front();
    }
    const double cfa_value = cfa_from_counts(
        im.cfa_counts, static_cast<Eigen::Index>(im.cfa_flags.size()));

    // CFT block state
    im.cft_peaks.push_back(peak_freq(mag, im.sample_rate, fft_size));
    if (im.cft_peaks.size() > kDetectorBlockFrames)
        im.cft_peaks.pop_front();
    const double cft_value =
        cft_from_peaks({im.cft_peaks.begin(), im.cft_peaks.end()},
                       im.sample_rate / 2.0);

    // Fluctogram block state
    if (im.prev_mag.size())
        im.fluct_pairs.push_back(
            fluct_pair_score(im.prev_mag, mag, im.fluct_ranges));
    if (im.fluct_pairs.size() > kDetectorBlockFrames - 1)
        im.fluct_pairs.pop_front();
    const Vec fluct = average_scores(im.fluct_pairs);

    const Vec delta = im.prev_mfcc.size()
                          ? Vec((mfcc20 - im.prev_mfcc).segment(2, 18))
                          : Vec(Vec::Zero(18));

    DetectorFeatureSet out;
    out.time = frame.start_time;
    out.applause.resize(25);
    out.applause << measures, mfcc20.head(9);
    out.music.resize(26);
    out.music << out.applause, cfa_value;
    out.speech.resize(46);
    out.speech << measures, cft_value, fluct, delta;

    im.prev_mag = mag;
    im.prev_mfcc = mfcc20;
    return out;
}

namespace {

DetectorFeatureSet run_block(const std::vector<FrameBuffer>& block) {
    if (block.empty())
        raise(Errc::EmptyAudio, "detector features: empty block");
    const double sample_rate =
        block.front().samples.size() / (block.front().window_ms * 1e-3);
    DetectorFeatureExtractor extractor(sample_rate);
    DetectorFeatureSet last;
    for (const auto& frame : block)
        last = extractor.process(frame);
    return last;
}

} // namespace

Vec applause_features(const std::vector<FrameBuffer>& block) {
    return run_block(block).applause;
}

Vec music_features(const std::vector<FrameBuffer>& block) {
    return run_block(block).music;
}

Vec speech_features(const std::vector<FrameBuffer>& block) {
    return run_block(block).speech;
}

std::vector<AlignmentFeature> extract_alignment_features(const AudioStream& stream) {
    AlignmentExtractor extractor(stream.sample_rate);
    std::vector<AlignmentFeature> out;
    Framer framer(stream, kAlignmentWindowMs, kAlignmentHopMs);
    out.reserve(static_cast<size_t>(framer.frames_total()));
    while (auto frame = framer.next())
        out.push_back(extractor.process(*frame));
    return out;
}

std::vector<DetectorFeatureSet> extract_detector_features(const AudioStream& stream) {
    DetectorFeatureExtractor extractor(stream.sample_rate);
    std::vector<DetectorFeatureSet> out;
    Framer framer(stream, kDetectorWindowMs, kDetectorHopMs);
    out.reserve(static_cast<size_t>(framer.frames_total()));
    while (auto frame = framer.next())
        out.push_back(extractor.process(*frame));
    return out;
}

// --------------------------------------------------------------------------
// Feature dump I/O

void write_feature_dump(const std::filesystem::path& path,
                        const FeatureDump& dump) {
    if (dump.features.rows() <= 0)
        raise(Errc::InvalidConfig, "feature dump: empty feature dimension");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());

    nlohmann::json header{{"kind", dump.kind},
                          {"dim", dump.features.rows()},
                          {"hop_ms", dump.hop_ms},
                          {"count", dump.features.cols()}};
    out << header.dump() << '\n';

    std::vector<float> row(static_cast<size_t>(dump.features.rows()));
    for (Eigen::Index c = 0; c < dump.features.cols(); ++c) {
        for (Eigen::Index r = 0; r < dump.features.rows(); ++r)
            row[static_cast<size_t>(r)] = static_cast<float>(dump.features(r, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

FeatureDump read_feature_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        raise(Errc::CorruptFile, path.string() + ": missing header line");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        raise(Errc::ParseError, path.string() + ": malformed header JSON");
    }
    if (!header.contains("kind") || !header.contains("dim") ||
        !header.contains("hop_ms") || !header.contains("count"))
        raise(Errc::ParseError, path.string() + ": header misses a field");

    FeatureDump dump;
    dump.kind = header["kind"].get<std::string>();
    dump.hop_ms = header["hop_ms"].get<int>();
    const auto dim = header["dim"].get<Eigen::Index>();
    const auto count = header["count"].get<Eigen::Index>();
    if (dim <= 0 || count < 0 || dump.hop_ms <= 0)
        raise(Errc::ParseError, path.string() + ": nonsensical header values");

    std::vector<float> payload(static_cast<size_t>(dim * count));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (in.gcount() !=
        static_cast<std::streamsize>(payload.size() * sizeof(float)))
        raise(Errc::CorruptFile, path.string() + ": payload shorter than header claims");
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        raise(Errc::CorruptFile, path.string() + ": payload longer than header claims");

    dump.features.resize(dim, count);
    for (Eigen::Index c = 0; c < count; ++c)
        for (Eigen::Index r = 0; r < dim; ++r)
            dump.features(r, c) =
                payload[static_cast<size_t>(c * dim + r)];
    return dump;
}

} // namespace operatrack
