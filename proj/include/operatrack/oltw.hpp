#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "operatrack/annotations.hpp"
#include "operatrack/common.hpp"
#include "operatrack/features.hpp"

namespace operatrack {

/// Cosine distance 1 - <a,b> / (|a| |b|), in [0, 2].  A vector with
/// (near-)zero norm carries no directional information, so the distance
/// degrades to the neutral value 1.
template <class DerivedA, class DerivedB>
double cosine_distance(const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedB>& b) {
    if (a.size() != b.size())
        raise(Errc::DimensionMismatch, "cosine distance: size mismatch");
    const double na = a.template cast<double>().norm();
    const double nb = b.template cast<double>().norm();
    if (na < 1e-12 || nb < 1e-12)
        return 1.0;
    return 1.0 - a.template cast<double>().dot(b.template cast<double>()) /
                     (na * nb);
}

/// A section transition inside the reference: where section `section_id`
/// begins.  Gates only engage in the neighbourhood of one of these.
struct Transition {
    double ref_time = 0.0;
    int section_id = 0;
};

/// Pre-analysed reference recording: alignment features on the 10 ms grid
/// plus the score annotations.
struct ReferenceIndex {
    Mat features; // kAlignmentDim x frame count
    double hop_s = kAlignmentHopMs * 1e-3;
    std::vector<BarAnnotation> bars;
    std::vector<Section> sections;
    std::vector<Transition> transitions; // starts of sections 1..n-1

    Eigen::Index frame_count() const { return features.cols(); }
    double duration_s() const { return frame_count() * hop_s; }

    /// Index of the section containing `ref_time` (section starts inclusive);
    /// -1 before the first section.
    int section_at(double ref_time) const;

    /// Rebuilds `transitions` from `sections` and validates the structure.
    void finalize();
};

/// One tracker output: where in the reference the live stream is believed to
/// be after consuming the target frame at `target_time`.
struct AlignmentEstimate {
    double target_time = 0.0;
    double ref_time = 0.0;
    Eigen::Index ref_frame = 0;
    double window_cost_min = 0.0; // normalized accumulated cost at the argmin
};

/// How the accumulated-cost row is seeded when (re)starting.
///  FreeStart: every window cell is a zero-cost entry point (start of piece,
///             where the entry position is genuinely unknown).
///  Anchored:  only the start cell is an entry point (gate releases, where
///             the clamped position is trusted).
enum class SeedMode { FreeStart, Anchored };

struct TrackerOptions {
    Eigen::Index window_radius = 2000; // frames each side: 40 s of reference
    SeedMode seed = SeedMode::FreeStart;
};

/// On-line time warping against the reference.  Each step consumes one
/// target frame, relaxes the accumulated cost over a window centred on the
/// previous estimate, and emits the path-length-normalized argmin, kept
/// monotone.  O(window) per step, independent of stream length.
class OnlineTracker {
  public:
    OnlineTracker(const ReferenceIndex& ref, Eigen::Index start_pos = 0,
                  TrackerOptions options = {});

    AlignmentEstimate step(const AlignmentFeature& feature);

    /// Re-seeds the window at `position` (used after a gate release).  The
    /// monotonicity floor moves to `position` as well: the tracker trusts
    /// the clamp over its own pre-halt drift.
    void restart(Eigen::Index position, SeedMode mode);

    Eigen::Index last_emitted() const { return last_emitted_; }

  private:
    std::pair<Eigen::Index, Eigen::Index> window() const;

    const ReferenceIndex* ref_;
    TrackerOptions options_;
    Eigen::Index expected_;     // window centre: last emitted position
    Eigen::Index last_emitted_;
    long steps_ = 0;            // target frames consumed (never resets)
    bool fresh_ = true;
    SeedMode seed_mode_;
    Vec acc_;                   // accumulated cost over the previous window
    Eigen::Index acc_start_ = 0;
    Vec ref_norms_;             // cached reference column norms
};

/// Full offline DTW alignment path with step set {(1,0),(0,1),(1,1)}.
struct DtwPath {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells; // (target, ref)
    double cost = 0.0;
};

/// Exact dynamic-programming alignment of two feature matrices (columns are
/// frames) under the cosine distance.  Intended for test-scale inputs; the
/// default cap refuses anything beyond 1e8 cells (10^4 x 10^4).
DtwPath offline_dtw(const Mat& target, const Mat& ref,
                    Eigen::Index max_cells = 100'000'000);

} // namespace operatrack
