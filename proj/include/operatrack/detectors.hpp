#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "operatrack/common.hpp"
#include "operatrack/features.hpp"

namespace operatrack {

/// Single-layer LSTM with a sigmoid read-out, one per detector kind.
/// Weight rows are gate-major: input, forget, cell candidate, output gates
/// stacked (4 * hidden rows).  `norm_mean`/`norm_std` are the per-dimension
/// z-score statistics learned from the training set; forward_step applies
/// them, so callers always pass raw feature vectors.
struct LstmModel {
    DetectorKind kind = DetectorKind::Applause;
    int input_dim = 0;
    int hidden_dim = 0;
    Mat w_input;  // 4H x D
    Mat w_hidden; // 4H x H
    Vec bias;     // 4H
    Vec w_out;    // H
    double b_out = 0.0;
    Vec norm_mean; // D
    Vec norm_std;  // D

    Vec normalize(const Vec& raw) const;
};

struct LstmState {
    Vec hidden;
    Vec cell;

    static LstmState zero(int hidden_dim);
};

/// Consumes one raw feature vector, advances the state, returns the event
/// probability in (0, 1).
double forward_step(const LstmModel& model, LstmState& state, const Vec& raw);

/// Fresh model with uniform(-1/sqrt(fan-in)) weights, forget-gate bias 1,
/// identity normalization.  All values are float32-rounded so that a model
/// written to disk reads back bit-identically.
LstmModel make_model(DetectorKind kind, int input_dim, int hidden_dim,
                     uint64_t seed);

/// One labelled recording: feature columns on the detector frame grid and a
/// 0/1 label per frame.
struct LabeledSequence {
    Mat features;           // D x T
    Eigen::VectorXi labels; // T
};

struct TrainOptions {
    int hidden_dim = 55;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double clip_norm = 5.0;      // global L2 gradient clip
    int max_epochs = 50;
    int chunk_frames = 55;       // truncated-BPTT span
    int batch_chunks = 32;
    double stop_accuracy = 0.0;  // early stop once holdout reaches this
    uint64_t seed = 1;
};

struct TrainReport {
    int epochs_run = 0;
    double final_loss = 0.0;       // mean BCE over the last epoch
    double holdout_accuracy = 0.0; // after the last epoch
};

/// Trains a detector with momentum SGD on binary cross-entropy, truncated
/// BPTT over chunk_frames-long chunks (zero initial state, padded tails are
/// masked out).  Deterministic for a fixed seed.  The returned model is
/// float32-rounded.
///
/// Throws EmptyDataset when no training frames exist, NonBinaryLabels for
/// labels outside {0,1}, DimensionMismatch when a sequence does not match
/// the detector's feature dimension.
LstmModel train_detector(DetectorKind kind,
                         const std::vector<LabeledSequence>& train,
                         const std::vector<LabeledSequence>& holdout,
                         const TrainOptions& options,
                         TrainReport* report = nullptr);

/// Fraction of frames classified correctly (threshold 0.5), streaming each
/// sequence through the model with state carried across the whole sequence.
double frame_accuracy(const LstmModel& model,
                      const std::vector<LabeledSequence>& sequences);

/// Mean BCE of the model on one sequence from a zero state.
double sequence_loss(const LstmModel& model, const LabeledSequence& seq);

/// Compares analytic BPTT gradients against central finite differences over
/// every weight, returning the maximum relative error
/// |g_a - g_n| / max(1e-6, |g_a|, |g_n|).
double gradient_check(const LstmModel& model, const LabeledSequence& batch);

/// Hysteresis around the 0.5 probability threshold: a detector becomes
/// active after min_active_ms of consecutive frames above the threshold and
/// releases after release_ms at or below it.
struct DebounceParams {
    double threshold = 0.5;
    double min_active_ms = 400.0;
    double release_ms = 200.0;
    double hop_ms = kDetectorHopMs;
};

struct EventDecision {
    double time = 0.0;
    DetectorKind kind = DetectorKind::Applause;
    bool active = false;
    double raw_prob = 0.0;
};

class Debouncer {
  public:
    explicit Debouncer(DetectorKind kind, DebounceParams params = {});

    EventDecision step(double time, double prob);
    bool active() const { return active_; }
    void reset();

  private:
    DetectorKind kind_;
    DebounceParams params_;
    int on_frames_;
    int off_frames_;
    int run_above_ = 0;
    int run_below_ = 0;
    bool active_ = false;
};

/// Debounces a whole probability track at once.
std::vector<EventDecision> debounce(DetectorKind kind,
                                    const std::vector<std::pair<double, double>>& probs,
                                    DebounceParams params = {});

/// Model file: single-line JSON header {kind, input_dim, hidden_dim}
/// followed by all weights and normalization statistics as float32 little
/// endian.  Round trips bit-exactly.
void save_model(const std::filesystem::path& path, const LstmModel& model);
LstmModel load_model(const std::filesystem::path& path);

/// As load_model, but raises KindMismatch unless the stored kind matches.
LstmModel load_model(const std::filesystem::path& path, DetectorKind expected);

} // namespace operatrack
