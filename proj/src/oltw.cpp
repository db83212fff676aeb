#include "operatrack/oltw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace operatrack {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNormFloor = 1e-12;
} // namespace

// --------------------------------------------------------------------------
// ReferenceIndex

int ReferenceIndex::section_at(double ref_time) const {
    int found = -1;
    for (const Section& s : sections) {
        if (s.ref_start_s <= ref_time + 1e-12)
            found = s.id;
        else
            break;
    }
    return found;
}

void ReferenceIndex::finalize() {
    if (features.cols() == 0 || features.rows() == 0)
        raise(Errc::ReferenceEmpty, "reference index: no feature frames");
    if (hop_s <= 0)
        raise(Errc::InvalidConfig, "reference index: non-positive hop");
    for (size_t i = 0; i < sections.size(); ++i) {
        if (sections[i].id != static_cast<int>(i))
            raise(Errc::InvalidConfig, "reference index: section ids must be 0..n-1");
        if (i > 0 && sections[i].ref_start_s <= sections[i - 1].ref_start_s)
            raise(Errc::InvalidConfig, "reference index: sections out of order");
    }
    transitions.clear();
    for (size_t i = 1; i < sections.size(); ++i)
        transitions.push_back({sections[i].ref_start_s, sections[i].id});
}

// --------------------------------------------------------------------------
// OnlineTracker

OnlineTracker::OnlineTracker(const ReferenceIndex& ref, Eigen::Index start_pos,
                             TrackerOptions options)
    : ref_(&ref), options_(options) {
    if (ref.features.cols() == 0 || ref.features.rows() == 0)
        raise(Errc::ReferenceEmpty, "tracker: empty reference");
    if (options.window_radius <= 0)
        raise(Errc::InvalidConfig, "tracker: window radius must be positive");
    if (start_pos < 0 || start_pos >= ref.frame_count())
        raise(Errc::OutOfRange, "tracker: start position outside reference");
    ref_norms_ = ref.features.colwise().norm();
    expected_ = start_pos;
    last_emitted_ = start_pos;
    seed_mode_ = options.seed;
}

std::pair<Eigen::Index, Eigen::Index> OnlineTracker::window() const {
    const Eigen::Index lo = std::max<Eigen::Index>(0, expected_ - options_.window_radius);
    const Eigen::Index hi =
        std::min(ref_->frame_count(), expected_ + options_.window_radius + 1);
    return {lo, hi};
}

void OnlineTracker::restart(Eigen::Index position, SeedMode mode) {
    if (position < 0 || position >= ref_->frame_count())
        raise(Errc::OutOfRange, "tracker: restart position outside reference");
    expected_ = position;
    last_emitted_ = position;
    seed_mode_ = mode;
    fresh_ = true;
    // frame_clock (steps_) keeps counting across reseeds: the implied path
    // length measures target frames consumed, and a mature clock keeps the
    // normalization from over-rewarding speculative cells right after a
    // release.
    acc_.resize(0);
}

AlignmentEstimate OnlineTracker::step(const AlignmentFeature& feature) {
    if (feature.values.size() != ref_->features.rows())
        raise(Errc::DimensionMismatch, "tracker: feature dimension mismatch");

    const auto [w0, w1] = window();
    const Eigen::Index len = w1 - w0;
    const Eigen::Index anchor = expected_;

    // Local cosine costs against the window columns.
    Vec costs(len);
    const double fn = feature.values.norm();
    const Vec dots =
        ref_->features.middleCols(w0, len).transpose() * feature.values;
    for (Eigen::Index j = 0; j < len; ++j) {
        const double rn = ref_norms_[w0 + j];
        costs[j] = (fn < kNormFloor || rn < kNormFloor)
                       ? 1.0
                       : 1.0 - dots[j] / (rn * fn);
    }

    // Predecessor lookup in the previous accumulated row.  On the first step
    // after a (re)seed the previous row is virtual: all zero for FreeStart,
    // zero only at the anchor for Anchored.
    auto prev_at = [&](Eigen::Index abs_j) -> double {
        if (fresh_) {
            if (seed_mode_ == SeedMode::FreeStart)
                return 0.0;
            return abs_j == anchor ? 0.0 : kInf;
        }
        const Eigen::Index off = abs_j - acc_start_;
        return (off >= 0 && off < acc_.size()) ? acc_[off] : kInf;
    };

    // Relax left to right: cell j may come from below, the left, or the
    // diagonal; out-of-window predecessors count as unreachable.
    Vec new_acc(len);
    for (Eigen::Index j = 0; j < len; ++j) {
        const double from_below = prev_at(w0 + j);
        const double from_left = j > 0 ? new_acc[j - 1] : kInf;
        const double from_diag = prev_at(w0 + j - 1);
        const double best = std::min({from_below, from_left, from_diag});
        new_acc[j] = best == kInf ? kInf : costs[j] + best;
    }

    // Normalize by the implied path length and take the argmin, ties toward
    // the smallest index.  The length is measured from the *requested*
    // window start (expected - radius, which may be negative near the piece
    // start): measuring from the clipped edge would hand cells far to the
    // right a systematically longer implied path and therefore a smaller
    // normalized cost, letting them outbid the true corridor early on.
    const Eigen::Index requested_w0 = expected_ - options_.window_radius;
    double best_norm = kInf;
    Eigen::Index best_j = anchor - w0;
    for (Eigen::Index j = 0; j < len; ++j) {
        if (new_acc[j] == kInf)
            continue;
        const double norm =
            new_acc[j] /
            static_cast<double>(steps_ + (w0 + j) - requested_w0 + 1);
        if (norm < best_norm) {
            best_norm = norm;
            best_j = j;
        }
    }

    // Emit monotonically and recentre the window on the emission.
    const Eigen::Index emitted =
        std::min(std::max(w0 + best_j, last_emitted_), ref_->frame_count() - 1);
    last_emitted_ = emitted;
    expected_ = emitted;
    acc_ = std::move(new_acc);
    acc_start_ = w0;
    fresh_ = false;
    ++steps_;

    AlignmentEstimate estimate;
    estimate.target_time = feature.time;
    estimate.ref_time = static_cast<double>(emitted) * ref_->hop_s;
    estimate.ref_frame = emitted;
    estimate.window_cost_min = best_norm;
    return estimate;
}

// --------------------------------------------------------------------------
// Offline DTW

DtwPath offline_dtw(const Mat& target, const Mat& ref, Eigen::Index max_cells) {
    if (target.cols() == 0)
        raise(Errc::EmptyAudio, "offline dtw: empty target");
    if (ref.cols() == 0)
        raise(Errc::ReferenceEmpty, "offline dtw: empty reference");
    if (target.rows() != ref.rows())
        raise(Errc::DimensionMismatch, "offline dtw: feature dimension mismatch");
    const Eigen::Index t_n = target.cols();
    const Eigen::Index r_n = ref.cols();
    if (t_n > max_cells / r_n)
        raise(Errc::InputTooLarge, "offline dtw: cost matrix exceeds the cap");

    // Unit-normalized copies; zero-norm frames keep a zero column and are
    // patched to the neutral cost below.
    Mat ref_n = ref;
    Mat target_n = target;
    Eigen::VectorXd ref_norms = ref.colwise().norm();
    Eigen::VectorXd target_norms = target.colwise().norm();
    for (Eigen::Index j = 0; j < r_n; ++j)
        if (ref_norms[j] >= kNormFloor)
            ref_n.col(j) /= ref_norms[j];
        else
            ref_n.col(j).setZero();
    for (Eigen::Index i = 0; i < t_n; ++i)
        if (target_norms[i] >= kNormFloor)
            target_n.col(i) /= target_norms[i];
        else
            target_n.col(i).setZero();

    enum : uint8_t { kDiag = 0, kUp = 1, kLeft = 2 };
    std::vector<uint8_t> choice(static_cast<size_t>(t_n) * static_cast<size_t>(r_n));
    Vec prev_row(r_n), cur_row(r_n), costs(r_n);

    for (Eigen::Index i = 0; i < t_n; ++i) {
        costs = (1.0 - (ref_n.transpose() * target_n.col(i)).array()).matrix();
        if (target_norms[i] < kNormFloor)
            costs.setOnes();
        else
            for (Eigen::Index j = 0; j < r_n; ++j)
                if (ref_norms[j] < kNormFloor)
                    costs[j] = 1.0;

        uint8_t* row_choice = choice.data() + static_cast<size_t>(i) * r_n;
        for (Eigen::Index j = 0; j < r_n; ++j) {
            double best;
            uint8_t pick;
            if (i == 0 && j == 0) {
                best = 0.0;
                pick = kDiag;
            } else if (i == 0) {
                best = cur_row[j - 1];
                pick = kLeft;
            } else if (j == 0) {
                best = prev_row[j];
                pick = kUp;
            } else {
                best = prev_row[j - 1];
                pick = kDiag;
                if (prev_row[j] < best) {
                    best = prev_row[j];
                    pick = kUp;
                }
                if (cur_row[j - 1] < best) {
                    best = cur_row[j - 1];
                    pick = kLeft;
                }
            }
            cur_row[j] = costs[j] + best;
            row_choice[j] = pick;
        }
        prev_row.swap(cur_row);
    }

    DtwPath path;
    path.cost = prev_row[r_n - 1];
    Eigen::Index i = t_n - 1, j = r_n - 1;
    while (true) {
        path.cells.emplace_back(i, j);
        if (i == 0 && j == 0)
            break;
        switch (choice[static_cast<size_t>(i) * r_n + j]) {
        case kDiag: --i; --j; break;
        case kUp: --i; break;
        default: --j; break;
        }
    }
    std::reverse(path.cells.begin(), path.cells.end());
    return path;
}

} // namespace operatrack
