#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "operatrack/oltw.hpp"

using namespace operatrack;

namespace {

/// Random walk in feature space: consecutive columns are similar, distant
/// ones are not, which is what alignment features of real audio look like.
Mat smooth_features(int dim, Eigen::Index n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat m(dim, n);
    Vec state(dim);
    for (int d = 0; d < dim; ++d)
        state[d] = gauss(rng);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (int d = 0; d < dim; ++d)
            state[d] += 0.2 * gauss(rng);
        m.col(j) = state;
    }
    return m;
}

ReferenceIndex make_ref(Mat features) {
    ReferenceIndex ref;
    ref.features = std::move(features);
    ref.finalize();
    return ref;
}

AlignmentFeature feature_at(const Mat& m, Eigen::Index col, double time) {
    AlignmentFeature f;
    f.time = time;
    f.values = m.col(col);
    return f;
}

/// Exhaustive minimum path cost over the full step set: every monotone path
/// from (0,0) to the far corner is walked.  Exponential, so only for tiny
/// inputs, but it shares no code with the DP under test.
void enumerate_paths(const Mat& cost, Eigen::Index i, Eigen::Index j,
                     double acc, double& best) {
    acc += cost(i, j);
    if (acc >= best)
        return; // cannot improve: costs are nonnegative
    if (i == cost.rows() - 1 && j == cost.cols() - 1) {
        best = acc;
        return;
    }
    if (i + 1 < cost.rows())
        enumerate_paths(cost, i + 1, j, acc, best);
    if (j + 1 < cost.cols())
        enumerate_paths(cost, i, j + 1, acc, best);
    if (i + 1 < cost.rows() && j + 1 < cost.cols())
        enumerate_paths(cost, i + 1, j + 1, acc, best);
}

Mat pairwise_costs(const Mat& target, const Mat& ref) {
    Mat c(target.cols(), ref.cols());
    for (Eigen::Index i = 0; i < target.cols(); ++i)
        for (Eigen::Index j = 0; j < ref.cols(); ++j)
            c(i, j) = cosine_distance(target.col(i), ref.col(j));
    return c;
}

} // namespace

TEST_CASE("cosine distance basics") {
    Vec a(2), b(2);
    a << 1.0, 0.0;
    b << 0.0, 1.0;
    CHECK(cosine_distance(a, b) == doctest::Approx(1.0));
    CHECK(cosine_distance(a, a) == doctest::Approx(0.0));
    CHECK(cosine_distance(a, (-a).eval()) == doctest::Approx(2.0));

    // Scale invariance.
    CHECK(cosine_distance((3.0 * a).eval(), (0.25 * a).eval()) ==
          doctest::Approx(0.0));

    // A zero vector has no direction: neutral distance 1.
    Vec zero = Vec::Zero(2);
    CHECK(cosine_distance(a, zero) == 1.0);
    CHECK(cosine_distance(zero, zero) == 1.0);

    Vec c(3);
    c << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(cosine_distance(a, c), Error);
}

TEST_CASE("offline dtw cost matches exhaustive enumeration on tiny inputs") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> size(1, 6);
        const Eigen::Index t_n = size(rng), r_n = size(rng);
        const Mat target = smooth_features(4, t_n, seed * 11 + 1);
        const Mat ref = smooth_features(4, r_n, seed * 11 + 2);

        const Mat costs = pairwise_costs(target, ref);
        double best = std::numeric_limits<double>::infinity();
        enumerate_paths(costs, 0, 0, 0.0, best);

        const DtwPath path = offline_dtw(target, ref);
        CHECK(path.cost == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("offline dtw path is structurally valid and sums to its cost") {
    const Mat target = smooth_features(6, 40, 101);
    const Mat ref = smooth_features(6, 55, 102);
    const DtwPath path = offline_dtw(target, ref);

    REQUIRE(!path.cells.empty());
    CHECK(path.cells.front() == std::pair<Eigen::Index, Eigen::Index>{0, 0});
    CHECK(path.cells.back() ==
          std::pair<Eigen::Index, Eigen::Index>{target.cols() - 1,
                                                ref.cols() - 1});
    double total = 0.0;
    for (size_t k = 0; k < path.cells.size(); ++k) {
        const auto [i, j] = path.cells[k];
        total += cosine_distance(target.col(i), ref.col(j));
        if (k > 0) {
            const auto [pi, pj] = path.cells[k - 1];
            const Eigen::Index di = i - pi, dj = j - pj;
            const bool valid_step = (di == 1 && dj == 0) ||
                                    (di == 0 && dj == 1) ||
                                    (di == 1 && dj == 1);
            CHECK(valid_step);
        }
    }
    CHECK(path.cost == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("offline dtw input validation") {
    const Mat ok = smooth_features(4, 10, 7);
    const Mat empty(4, 0);
    const Mat wrong_dim = smooth_features(5, 10, 8);

    CHECK_THROWS_AS(offline_dtw(empty, ok), Error);
    CHECK_THROWS_AS(offline_dtw(ok, empty), Error);
    CHECK_THROWS_AS(offline_dtw(ok, wrong_dim), Error);
    try {
        offline_dtw(ok, ok, /*max_cells=*/50);
        FAIL("expected InputTooLarge");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::InputTooLarge);
    }
}

TEST_CASE("online tracker follows the reference against itself exactly") {
    const Mat features = smooth_features(12, 300, 21);
    const ReferenceIndex ref = make_ref(features);
    TrackerOptions options;
    options.window_radius = 50;
    OnlineTracker tracker(ref, 0, options);

    for (Eigen::Index i = 0; i < features.cols(); ++i) {
        const auto est = tracker.step(feature_at(features, i, i * ref.hop_s));
        CHECK(est.ref_frame == i);
    }
}

TEST_CASE("online tracker stays near the offline path under a tempo warp") {
    const Mat ref_features = smooth_features(12, 400, 31);
    const ReferenceIndex ref = make_ref(ref_features);

    // Piecewise tempo: the target walks the reference at 0.7x, 1x and 1.4x.
    std::mt19937_64 rng(32);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Eigen::Index> warp;
    double pos = 0.0;
    const double slopes[] = {0.7, 1.0, 1.4};
    size_t leg = 0;
    while (pos < static_cast<double>(ref_features.cols() - 1)) {
        warp.push_back(static_cast<Eigen::Index>(std::llround(pos)));
        if (warp.size() % 120 == 0)
            leg = (leg + 1) % 3;
        pos += slopes[leg];
    }
    Mat target(ref_features.rows(), static_cast<Eigen::Index>(warp.size()));
    for (size_t i = 0; i < warp.size(); ++i) {
        target.col(static_cast<Eigen::Index>(i)) = ref_features.col(warp[i]);
        for (Eigen::Index d = 0; d < target.rows(); ++d)
            target(d, static_cast<Eigen::Index>(i)) += 0.02 * gauss(rng);
    }

    const DtwPath offline = offline_dtw(target, ref_features);
    // Reference frames the offline path visits for each target frame.
    std::vector<std::vector<Eigen::Index>> offline_at(warp.size());
    for (const auto& [i, j] : offline.cells)
        offline_at[static_cast<size_t>(i)].push_back(j);

    TrackerOptions options;
    options.window_radius = 80;
    OnlineTracker tracker(ref, 0, options);
    Eigen::Index within = 0;
    for (size_t i = 0; i < warp.size(); ++i) {
        const auto est =
            tracker.step(feature_at(target, static_cast<Eigen::Index>(i),
                                    static_cast<double>(i) * ref.hop_s));
        Eigen::Index dist = std::numeric_limits<Eigen::Index>::max();
        for (Eigen::Index j : offline_at[i])
            dist = std::min(dist, std::abs(est.ref_frame - j));
        if (dist <= 5)
            ++within;
    }
    CHECK(static_cast<double>(within) >= 0.99 * static_cast<double>(warp.size()));
}

TEST_CASE("identical columns leave the tracker parked at its floor") {
    // Every cell costs zero, so every normalized cost ties at zero and the
    // tie rule (smallest index) plus monotone emission pin the tracker.
    Mat flat(8, 120);
    Vec column = Vec::Ones(8);
    for (Eigen::Index j = 0; j < flat.cols(); ++j)
        flat.col(j) = column;
    const ReferenceIndex ref = make_ref(flat);
    TrackerOptions options;
    options.window_radius = 30;

    SUBCASE("free start parks at zero") {
        OnlineTracker tracker(ref, 0, options);
        for (int i = 0; i < 60; ++i)
            CHECK(tracker.step(feature_at(flat, 0, i * 0.01)).ref_frame == 0);
    }
    SUBCASE("anchored start parks at the anchor") {
        options.seed = SeedMode::Anchored;
        OnlineTracker tracker(ref, 40, options);
        for (int i = 0; i < 60; ++i)
            CHECK(tracker.step(feature_at(flat, 0, i * 0.01)).ref_frame == 40);
    }
}

TEST_CASE("emission is monotone and in range under noise") {
    const Mat ref_features = smooth_features(10, 150, 51);
    const ReferenceIndex ref = make_ref(ref_features);
    TrackerOptions options;
    options.window_radius = 25;
    OnlineTracker tracker(ref, 0, options);

    std::mt19937_64 rng(52);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Index last = 0;
    for (int i = 0; i < 400; ++i) {
        AlignmentFeature f;
        f.time = i * 0.01;
        f.values = Vec::NullaryExpr(10, [&](Eigen::Index) { return gauss(rng); });
        const auto est = tracker.step(f);
        CHECK(est.ref_frame >= last);
        CHECK(est.ref_frame >= 0);
        CHECK(est.ref_frame < ref.frame_count());
        CHECK(est.ref_time == doctest::Approx(est.ref_frame * ref.hop_s));
        last = est.ref_frame;
    }
}

TEST_CASE("restart re-anchors the window and the monotonicity floor") {
    const Mat features = smooth_features(12, 300, 61);
    const ReferenceIndex ref = make_ref(features);
    TrackerOptions options;
    options.window_radius = 40;
    OnlineTracker tracker(ref, 0, options);

    for (Eigen::Index i = 0; i < 50; ++i)
        tracker.step(feature_at(features, i, i * 0.01));
    CHECK(tracker.last_emitted() == 49);

    // Jump the performance to frame 200: restart anchored there and feed the
    // matching columns; the tracker must ride the new diagonal immediately.
    tracker.restart(200, SeedMode::Anchored);
    CHECK(tracker.last_emitted() == 200);
    for (Eigen::Index k = 0; k < 50; ++k) {
        const auto est =
            tracker.step(feature_at(features, 200 + k, (50 + k) * 0.01));
        CHECK(est.ref_frame == 200 + k);
    }

    CHECK_THROWS_AS(tracker.restart(-1, SeedMode::Anchored), Error);
    CHECK_THROWS_AS(tracker.restart(ref.frame_count(), SeedMode::FreeStart),
                    Error);
}

TEST_CASE("tracker construction and stepping validate their inputs") {
    const Mat features = smooth_features(6, 50, 71);
    const ReferenceIndex ref = make_ref(features);

    ReferenceIndex empty;
    empty.features = Mat(6, 0);
    CHECK_THROWS_AS(OnlineTracker{empty}, Error);

    TrackerOptions bad_radius;
    bad_radius.window_radius = 0;
    CHECK_THROWS_AS((OnlineTracker{ref, 0, bad_radius}), Error);
    CHECK_THROWS_AS((OnlineTracker{ref, -1}), Error);
    CHECK_THROWS_AS((OnlineTracker{ref, 50}), Error);

    OnlineTracker tracker(ref);
    AlignmentFeature wrong;
    wrong.values = Vec::Ones(7);
    CHECK_THROWS_AS(tracker.step(wrong), Error);
}

TEST_CASE("section lookup and transition construction") {
    ReferenceIndex ref;
    ref.features = smooth_features(4, 100, 81);
    ref.sections = {{0, 0, 1.0, false}, {1, 8, 4.0, true}, {2, 20, 7.5, false}};
    ref.finalize();

    REQUIRE(ref.transitions.size() == 2);
    CHECK(ref.transitions[0].ref_time == 4.0);
    CHECK(ref.transitions[0].section_id == 1);
    CHECK(ref.transitions[1].ref_time == 7.5);
    CHECK(ref.transitions[1].section_id == 2);

    CHECK(ref.section_at(0.0) == -1);
    CHECK(ref.section_at(1.0) == 0);
    CHECK(ref.section_at(3.999) == 0);
    CHECK(ref.section_at(4.0) == 1);
    CHECK(ref.section_at(7.6) == 2);

    SUBCASE("ids must be contiguous") {
        ref.sections[1].id = 5;
        CHECK_THROWS_AS(ref.finalize(), Error);
    }
    SUBCASE("starts must increase") {
        ref.sections[2].ref_start_s = 3.0;
        CHECK_THROWS_AS(ref.finalize(), Error);
    }
    SUBCASE("empty features are rejected") {
        ref.features = Mat(4, 0);
        CHECK_THROWS_AS(ref.finalize(), Error);
    }
}
