#include "operatrack/detectors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace operatrack {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Stable binary cross-entropy from the logit: softplus(l) - y*l.
double bce_from_logit(double logit, double label) {
    const double softplus =
        std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
    return softplus - label * logit;
}

void round_to_float32(Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

void round_to_float32(Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = static_cast<double>(static_cast<float>(v[i]));
}

void round_to_float32(LstmModel& model) {
    round_to_float32(model.w_input);
    round_to_float32(model.w_hidden);
    round_to_float32(model.bias);
    round_to_float32(model.w_out);
    model.b_out = static_cast<double>(static_cast<float>(model.b_out));
    round_to_float32(model.norm_mean);
    round_to_float32(model.norm_std);
}

void validate_model_shape(const LstmModel& m, const char* what) {
    const int h = m.hidden_dim;
    const int d = m.input_dim;
    if (h <= 0 || d <= 0 || m.w_input.rows() != 4 * h ||
        m.w_input.cols() != d || m.w_hidden.rows() != 4 * h ||
        m.w_hidden.cols() != h || m.bias.size() != 4 * h ||
        m.w_out.size() != h || m.norm_mean.size() != d ||
        m.norm_std.size() != d)
        raise(Errc::CorruptModel, std::string(what) + ": inconsistent shapes");
}

// ---------------------------------------------------------------------------
// Batched chunk forward/backward shared by training and the gradient check.
// Inputs are already normalized; padded tail cells carry mask 0 and
// contribute nothing to loss or gradients.

struct BatchData {
    std::vector<Mat> x; // T entries of D x B
    Mat labels;         // T x B
    Mat mask;           // T x B
    double valid = 0.0; // number of unmasked cells
};

struct BatchCache {
    std::vector<Mat> gi, gf, gg, go, c, h; // T entries of H x B
    Mat logits;                            // T x B
};

double batch_forward(const LstmModel& m, const BatchData& data,
                     BatchCache& cache) {
    const auto t_n = static_cast<Eigen::Index>(data.x.size());
    const Eigen::Index b_n = data.x.empty() ? 0 : data.x.front().cols();
    const int h_n = m.hidden_dim;

    cache.gi.assign(static_cast<size_t>(t_n), Mat());
    cache.gf.assign(static_cast<size_t>(t_n), Mat());
    cache.gg.assign(static_cast<size_t>(t_n), Mat());
    cache.go.assign(static_cast<size_t>(t_n), Mat());
    cache.c.assign(static_cast<size_t>(t_n), Mat());
    cache.h.assign(static_cast<size_t>(t_n), Mat());
    cache.logits.resize(t_n, b_n);

    Mat h_prev = Mat::Zero(h_n, b_n);
    Mat c_prev = Mat::Zero(h_n, b_n);
    double loss_sum = 0.0;

    for (Eigen::Index t = 0; t < t_n; ++t) {
        Mat z = m.w_input * data.x[static_cast<size_t>(t)] +
                m.w_hidden * h_prev;
        z.colwise() += m.bias;
        const size_t ts = static_cast<size_t>(t);
        cache.gi[ts] = z.topRows(h_n).unaryExpr([](double v) { return sigmoid(v); });
        cache.gf[ts] = z.middleRows(h_n, h_n).unaryExpr([](double v) { return sigmoid(v); });
        cache.gg[ts] = z.middleRows(2 * h_n, h_n).array().tanh().matrix();
        cache.go[ts] = z.bottomRows(h_n).unaryExpr([](double v) { return sigmoid(v); });
        cache.c[ts] = cache.gf[ts].cwiseProduct(c_prev) +
                      cache.gi[ts].cwiseProduct(cache.gg[ts]);
        cache.h[ts] =
            cache.go[ts].cwiseProduct(cache.c[ts].array().tanh().matrix());

        for (Eigen::Index b = 0; b < b_n; ++b) {
            const double logit = m.w_out.dot(cache.h[ts].col(b)) + m.b_out;
            cache.logits(t, b) = logit;
            if (data.mask(t, b) > 0.5)
                loss_sum += bce_from_logit(logit, data.labels(t, b));
        }
        h_prev = cache.h[ts];
        c_prev = cache.c[ts];
    }
    return data.valid > 0 ? loss_sum / data.valid : 0.0;
}

struct Gradients {
    Mat w_input, w_hidden;
    Vec bias, w_out;
    double b_out = 0.0;

    static Gradients zero(const LstmModel& m) {
        Gradients g;
        g.w_input = Mat::Zero(m.w_input.rows(), m.w_input.cols());
        g.w_hidden = Mat::Zero(m.w_hidden.rows(), m.w_hidden.cols());
        g.bias = Vec::Zero(m.bias.size());
        g.w_out = Vec::Zero(m.w_out.size());
        return g;
    }

    double squared_norm() const {
        return w_input.squaredNorm() + w_hidden.squaredNorm() +
               bias.squaredNorm() + w_out.squaredNorm() + b_out * b_out;
    }

    void scale(double s) {
        w_input *= s;
        w_hidden *= s;
        bias *= s;
        w_out *= s;
        b_out *= s;
    }
};

Gradients batch_backward(const LstmModel& m, const BatchData& data,
                         const BatchCache& cache) {
    const auto t_n = static_cast<Eigen::Index>(data.x.size());
    const Eigen::Index b_n = data.x.empty() ? 0 : data.x.front().cols();
    const int h_n = m.hidden_dim;

    Gradients grads = Gradients::zero(m);
    Mat dh_next = Mat::Zero(h_n, b_n);
    Mat dc_next = Mat::Zero(h_n, b_n);

    for (Eigen::Index t = t_n - 1; t >= 0; --t) {
        const size_t ts = static_cast<size_t>(t);
        Eigen::RowVectorXd dlogit(b_n);
        for (Eigen::Index b = 0; b < b_n; ++b)
            dlogit[b] = data.mask(t, b) > 0.5
                            ? (sigmoid(cache.logits(t, b)) - data.labels(t, b)) /
                                  data.valid
                            : 0.0;

        const Mat tanh_c = cache.c[ts].array().tanh().matrix();
        const Mat dh = dh_next + m.w_out * dlogit;
        const Mat dc =
            dc_next + dh.cwiseProduct(cache.go[ts])
                          .cwiseProduct((1.0 - tanh_c.array().square()).matrix());

        const Mat c_prev = t > 0 ? cache.c[ts - 1] : Mat::Zero(h_n, b_n);
        const Mat h_prev = t > 0 ? cache.h[ts - 1] : Mat::Zero(h_n, b_n);

        const auto& gi = cache.gi[ts];
        const auto& gf = cache.gf[ts];
        const auto& gg = cache.gg[ts];
        const auto& go = cache.go[ts];

        Mat dz(4 * h_n, b_n);
        dz.topRows(h_n) = dc.cwiseProduct(gg).cwiseProduct(gi) .cwiseProduct((1.0 - gi.array()).matrix());
        dz.middleRows(h_n, h_n) = dc.cwiseProduct(c_prev).cwiseProduct(gf)
                                      .cwiseProduct((1.0 - gf.array()).matrix());
        dz.middleRows(2 * h_n, h_n) =
            dc.cwiseProduct(gi).cwiseProduct((1.0 - gg.array().square()).matrix());
        dz.bottomRows(h_n) = dh.cwiseProduct(tanh_c).cwiseProduct(go)
                                 .cwiseProduct((1.0 - go.array()).matrix());

        grads.w_input.noalias() += dz * data.x[ts].transpose();
        grads.w_hidden.noalias() += dz * h_prev.transpose();
        grads.bias += dz.rowwise().sum();
        grads.w_out.noalias() += cache.h[ts] * dlogit.transpose();
        grads.b_out += dlogit.sum();

        dh_next.noalias() = m.w_hidden.transpose() * dz;
        dc_next = dc.cwiseProduct(gf);
    }
    return grads;
}

BatchData single_sequence_batch(const LstmModel& m, const LabeledSequence& seq) {
    BatchData data;
    const Eigen::Index t_n = seq.features.cols();
    data.x.reserve(static_cast<size_t>(t_n));
    for (Eigen::Index t = 0; t < t_n; ++t)
        data.x.push_back(m.normalize(seq.features.col(t)));
    data.labels.resize(t_n, 1);
    data.mask = Mat::Ones(t_n, 1);
    for (Eigen::Index t = 0; t < t_n; ++t)
        data.labels(t, 0) = seq.labels[t];
    data.valid = static_cast<double>(t_n);
    return data;
}

void validate_sequences(const std::vector<LabeledSequence>& seqs, int dim,
                        const char* what) {
    for (const auto& seq : seqs) {
        if (seq.features.rows() != dim)
            raise(Errc::DimensionMismatch,
                  std::string(what) + ": sequence feature dimension mismatch");
        if (seq.labels.size() != seq.features.cols())
            raise(Errc::DimensionMismatch,
                  std::string(what) + ": label/frame count mismatch");
        for (Eigen::Index t = 0; t < seq.labels.size(); ++t)
            if (seq.labels[t] != 0 && seq.labels[t] != 1)
                raise(Errc::NonBinaryLabels,
                      std::string(what) + ": labels must be 0 or 1");
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Model basics

Vec LstmModel::normalize(const Vec& raw) const {
    if (raw.size() != input_dim)
        raise(Errc::DimensionMismatch, "lstm: feature dimension mismatch");
    return ((raw - norm_mean).array() / norm_std.array()).matrix();
}

LstmState LstmState::zero(int hidden_dim) {
    LstmState s;
    s.hidden = Vec::Zero(hidden_dim);
    s.cell = Vec::Zero(hidden_dim);
    return s;
}

double forward_step(const LstmModel& model, LstmState& state, const Vec& raw) {
    const int h_n = model.hidden_dim;
    if (state.hidden.size() != h_n || state.cell.size() != h_n)
        raise(Errc::DimensionMismatch, "lstm: state dimension mismatch");
    const Vec x = model.normalize(raw);
    Vec z = model.w_input * x + model.w_hidden * state.hidden + model.bias;
    const Vec gi = z.head(h_n).unaryExpr([](double v) { return sigmoid(v); });
    const Vec gf = z.segment(h_n, h_n).unaryExpr([](double v) { return sigmoid(v); });
    const Vec gg = z.segment(2 * h_n, h_n).array().tanh().matrix();
    const Vec go = z.tail(h_n).unaryExpr([](double v) { return sigmoid(v); });
    state.cell = gf.cwiseProduct(state.cell) + gi.cwiseProduct(gg);
    state.hidden = go.cwiseProduct(state.cell.array().tanh().matrix());
    return sigmoid(model.w_out.dot(state.hidden) + model.b_out);
}

LstmModel make_model(DetectorKind kind, int input_dim, int hidden_dim,
                     uint64_t seed) {
    if (input_dim <= 0 || hidden_dim <= 0)
        raise(Errc::InvalidConfig, "lstm: non-positive dimensions");
    LstmModel m;
    m.kind = kind;
    m.input_dim = input_dim;
    m.hidden_dim = hidden_dim;

    std::mt19937_64 rng(seed);
    const double r_in = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double r_h = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    auto fill = [&rng](Mat& mat, double radius) {
        std::uniform_real_distribution<double> dist(-radius, radius);
        for (Eigen::Index i = 0; i < mat.size(); ++i)
            mat.data()[i] = dist(rng);
    };
    m.w_input.resize(4 * hidden_dim, input_dim);
    fill(m.w_input, r_in);
    m.w_hidden.resize(4 * hidden_dim, hidden_dim);
    fill(m.w_hidden, r_h);
    m.bias = Vec::Zero(4 * hidden_dim);
    m.bias.segment(hidden_dim, hidden_dim).setOnes(); // forget gate starts open
    {
        std::uniform_real_distribution<double> dist(-r_h, r_h);
        m.w_out.resize(hidden_dim);
        for (Eigen::Index i = 0; i < hidden_dim; ++i)
            m.w_out[i] = dist(rng);
    }
    m.b_out = 0.0;
    m.norm_mean = Vec::Zero(input_dim);
    m.norm_std = Vec::Ones(input_dim);
    round_to_float32(m);
    return m;
}

// ---------------------------------------------------------------------------
// Training

LstmModel train_detector(DetectorKind kind,
                         const std::vector<LabeledSequence>& train,
                         const std::vector<LabeledSequence>& holdout,
                         const TrainOptions& options, TrainReport* report) {
    const int dim = detector_dim(kind);
    validate_sequences(train, dim, "train");
    validate_sequences(holdout, dim, "holdout");
    Eigen::Index total_frames = 0;
    for (const auto& seq : train)
        total_frames += seq.features.cols();
    if (total_frames == 0)
        raise(Errc::EmptyDataset, "train: no frames to learn from");
    if (options.chunk_frames <= 0 || options.batch_chunks <= 0 ||
        options.max_epochs <= 0)
        raise(Errc::InvalidConfig, "train: non-positive schedule parameter");

    // Per-dimension z-score statistics over every training frame.
    Vec mean = Vec::Zero(dim);
    for (const auto& seq : train)
        mean += seq.features.rowwise().sum();
    mean /= static_cast<double>(total_frames);
    Vec var = Vec::Zero(dim);
    for (const auto& seq : train)
        var += (seq.features.colwise() - mean).array().square().matrix().rowwise().sum();
    var /= static_cast<double>(total_frames);
    const Vec stddev = var.array().sqrt().max(1e-6).matrix();

    LstmModel model = make_model(kind, dim, options.hidden_dim, options.seed);
    model.norm_mean = mean;
    model.norm_std = stddev;
    round_to_float32(model);

    // Normalize once; chunks are views into these matrices.
    std::vector<Mat> norm_features;
    norm_features.reserve(train.size());
    for (const auto& seq : train)
        norm_features.push_back(
            ((seq.features.colwise() - model.norm_mean).array().colwise() /
             model.norm_std.array())
                .matrix());

    struct Chunk {
        size_t seq;
        Eigen::Index start;
        Eigen::Index len;
    };
    std::vector<Chunk> chunks;
    const Eigen::Index span = options.chunk_frames;
    for (size_t s = 0; s < train.size(); ++s)
        for (Eigen::Index start = 0; start < train[s].features.cols();
             start += span)
            chunks.push_back(
                {s, start,
                 std::min(span, train[s].features.cols() - start)});

    Gradients velocity = Gradients::zero(model);
    std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    double epoch_loss = 0.0;
    double accuracy = 0.0;
    int epochs_run = 0;

    for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
        std::shuffle(chunks.begin(), chunks.end(), rng);
        double loss_weighted = 0.0;
        double frames_seen = 0.0;

        for (size_t first = 0; first < chunks.size();
             first += static_cast<size_t>(options.batch_chunks)) {
            const size_t last = std::min(
                chunks.size(), first + static_cast<size_t>(options.batch_chunks));
            const auto b_n = static_cast<Eigen::Index>(last - first);

            BatchData data;
            data.x.assign(static_cast<size_t>(span), Mat::Zero(dim, b_n));
            data.labels = Mat::Zero(span, b_n);
            data.mask = Mat::Zero(span, b_n);
            for (Eigen::Index b = 0; b < b_n; ++b) {
                const Chunk& ch = chunks[first + static_cast<size_t>(b)];
                for (Eigen::Index t = 0; t < ch.len; ++t) {
                    data.x[static_cast<size_t>(t)].col(b) =
                        norm_features[ch.seq].col(ch.start + t);
                    data.labels(t, b) = train[ch.seq].labels[ch.start + t];
                    data.mask(t, b) = 1.0;
                }
            }
            data.valid = data.mask.sum();

            BatchCache cache;
            const double loss = batch_forward(model, data, cache);
            Gradients grads = batch_backward(model, data, cache);

            const double norm = std::sqrt(grads.squared_norm());
            if (options.clip_norm > 0 && norm > options.clip_norm)
                grads.scale(options.clip_norm / norm);

            velocity.w_input = options.momentum * velocity.w_input -
                               options.learning_rate * grads.w_input;
            velocity.w_hidden = options.momentum * velocity.w_hidden -
                                options.learning_rate * grads.w_hidden;
            velocity.bias = options.momentum * velocity.bias -
                            options.learning_rate * grads.bias;
            velocity.w_out = options.momentum * velocity.w_out -
                             options.learning_rate * grads.w_out;
            velocity.b_out = options.momentum * velocity.b_out -
                             options.learning_rate * grads.b_out;
            model.w_input += velocity.w_input;
            model.w_hidden += velocity.w_hidden;
            model.bias += velocity.bias;
            model.w_out += velocity.w_out;
            model.b_out += velocity.b_out;

            loss_weighted += loss * data.valid;
            frames_seen += data.valid;
        }

        epoch_loss = frames_seen > 0 ? loss_weighted / frames_seen : 0.0;
        epochs_run = epoch + 1;
        if (!holdout.empty()) {
            accuracy = frame_accuracy(model, holdout);
            if (options.stop_accuracy > 0 && accuracy >= options.stop_accuracy)
                break;
        }
    }

    round_to_float32(model);
    if (!holdout.empty())
        accuracy = frame_accuracy(model, holdout);
    if (report) {
        report->epochs_run = epochs_run;
        report->final_loss = epoch_loss;
        report->holdout_accuracy = accuracy;
    }
    return model;
}

double frame_accuracy(const LstmModel& model,
                      const std::vector<LabeledSequence>& sequences) {
    validate_sequences(sequences, model.input_dim, "accuracy");
    long correct = 0;
    long total = 0;
    for (const auto& seq : sequences) {
        LstmState state = LstmState::zero(model.hidden_dim);
        for (Eigen::Index t = 0; t < seq.features.cols(); ++t) {
            const double p = forward_step(model, state, seq.features.col(t));
            correct += (p > 0.5 ? 1 : 0) == seq.labels[t] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0)
        raise(Errc::EmptyDataset, "accuracy: no frames to score");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double sequence_loss(const LstmModel& model, const LabeledSequence& seq) {
    validate_sequences({seq}, model.input_dim, "loss");
    if (seq.features.cols() == 0)
        raise(Errc::EmptyDataset, "loss: empty sequence");
    const BatchData data = single_sequence_batch(model, seq);
    BatchCache cache;
    return batch_forward(model, data, cache);
}

double gradient_check(const LstmModel& model, const LabeledSequence& batch) {
    validate_sequences({batch}, model.input_dim, "gradient check");
    if (batch.features.cols() == 0)
        raise(Errc::EmptyDataset, "gradient check: empty batch");

    const BatchData data = single_sequence_batch(model, batch);
    BatchCache cache;
    batch_forward(model, data, cache);
    const Gradients analytic = batch_backward(model, data, cache);

    LstmModel probe = model;
    struct Param {
        double* values;
        const double* grads;
        Eigen::Index count;
    };
    double b_out_grad = analytic.b_out;
    const std::vector<Param> params = {
        {probe.w_input.data(), analytic.w_input.data(), probe.w_input.size()},
        {probe.w_hidden.data(), analytic.w_hidden.data(), probe.w_hidden.size()},
        {probe.bias.data(), analytic.bias.data(), probe.bias.size()},
        {probe.w_out.data(), analytic.w_out.data(), probe.w_out.size()},
        {&probe.b_out, &b_out_grad, 1},
    };

    constexpr double kStep = 1e-5;
    double worst = 0.0;
    BatchCache scratch;
    for (const Param& param : params) {
        for (Eigen::Index i = 0; i < param.count; ++i) {
            const double saved = param.values[i];
            param.values[i] = saved + kStep;
            const double up = batch_forward(probe, data, scratch);
            param.values[i] = saved - kStep;
            const double down = batch_forward(probe, data, scratch);
            param.values[i] = saved;
            const double numeric = (up - down) / (2.0 * kStep);
            const double analytic_g = param.grads[i];
            const double rel =
                std::abs(analytic_g - numeric) /
                std::max({1e-6, std::abs(analytic_g), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Debounce

Debouncer::Debouncer(DetectorKind kind, DebounceParams params)
    : kind_(kind), params_(params) {
    if (params.hop_ms <= 0 || params.min_active_ms <= 0 || params.release_ms <= 0)
        raise(Errc::InvalidConfig, "debounce: non-positive timing");
    on_frames_ = std::max(1L, std::lround(params.min_active_ms / params.hop_ms));
    off_frames_ = std::max(1L, std::lround(params.release_ms / params.hop_ms));
}

void Debouncer::reset() {
    run_above_ = 0;
    run_below_ = 0;
    active_ = false;
}

EventDecision Debouncer::step(double time, double prob) {
    if (!active_) {
        run_above_ = prob > params_.threshold ? run_above_ + 1 : 0;
        if (run_above_ >= on_frames_) {
            active_ = true;
            run_below_ = 0;
        }
    } else {
        run_below_ = prob <= params_.threshold ? run_below_ + 1 : 0;
        if (run_below_ >= off_frames_) {
            active_ = false;
            run_above_ = 0;
        }
    }
    return {time, kind_, active_, prob};
}

std::vector<EventDecision> debounce(
    DetectorKind kind, const std::vector<std::pair<double, double>>& probs,
    DebounceParams params) {
    Debouncer deb(kind, params);
    std::vector<EventDecision> out;
    out.reserve(probs.size());
    for (const auto& [time, prob] : probs)
        out.push_back(deb.step(time, prob));
    return out;
}

// ---------------------------------------------------------------------------
// Model I/O

namespace {

void write_f32(std::ostream& out, const double* data, Eigen::Index count) {
    std::vector<float> buf(static_cast<size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i)
        buf[static_cast<size_t>(i)] = static_cast<float>(data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_f32(std::istream& in, double* data, Eigen::Index count,
              const std::string& path) {
    std::vector<float> buf(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        raise(Errc::CorruptModel, path + ": weight payload truncated");
    for (Eigen::Index i = 0; i < count; ++i)
        data[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
}

/// Matrices cross the file boundary row-major regardless of the in-memory
/// layout, so the format is independent of Eigen defaults.
void write_matrix_f32(std::ostream& out, const Mat& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        row_major = m;
    write_f32(out, row_major.data(), row_major.size());
}

void read_matrix_f32(std::istream& in, Mat& m, const std::string& path) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        row_major(m.rows(), m.cols());
    read_f32(in, row_major.data(), row_major.size(), path);
    m = row_major;
}

} // namespace

void save_model(const std::filesystem::path& path, const LstmModel& model) {
    validate_model_shape(model, "save model");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        raise(Errc::FileNotFound, "cannot create " + path.string());
    nlohmann::json header{{"kind", detector_kind_name(model.kind)},
                          {"input_dim", model.input_dim},
                          {"hidden_dim", model.hidden_dim}};
    out << header.dump() << '\n';
    write_matrix_f32(out, model.w_input);
    write_matrix_f32(out, model.w_hidden);
    write_f32(out, model.bias.data(), model.bias.size());
    write_f32(out, model.w_out.data(), model.w_out.size());
    write_f32(out, &model.b_out, 1);
    write_f32(out, model.norm_mean.data(), model.norm_mean.size());
    write_f32(out, model.norm_std.data(), model.norm_std.size());
}

LstmModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        raise(Errc::FileNotFound, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        raise(Errc::CorruptModel, path.string() + ": missing header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        raise(Errc::CorruptModel, path.string() + ": malformed header JSON");
    }
    if (!header.contains("kind") || !header.contains("input_dim") ||
        !header.contains("hidden_dim"))
        raise(Errc::CorruptModel, path.string() + ": header misses a field");

    LstmModel model;
    const auto kind_name = header["kind"].get<std::string>();
    try {
        model.kind = detector_kind_from(kind_name);
    } catch (const Error&) {
        raise(Errc::CorruptModel,
              path.string() + ": unknown detector kind '" + kind_name + "'");
    }
    model.input_dim = header["input_dim"].get<int>();
    model.hidden_dim = header["hidden_dim"].get<int>();
    if (model.input_dim <= 0 || model.hidden_dim <= 0)
        raise(Errc::CorruptModel, path.string() + ": non-positive dimensions");

    const int h_n = model.hidden_dim;
    const int d_n = model.input_dim;
    model.w_input.resize(4 * h_n, d_n);
    model.w_hidden.resize(4 * h_n, h_n);
    model.bias.resize(4 * h_n);
    model.w_out.resize(h_n);
    model.norm_mean.resize(d_n);
    model.norm_std.resize(d_n);

    const std::string p = path.string();
    read_matrix_f32(in, model.w_input, p);
    read_matrix_f32(in, model.w_hidden, p);
    read_f32(in, model.bias.data(), model.bias.size(), p);
    read_f32(in, model.w_out.data(), model.w_out.size(), p);
    read_f32(in, &model.b_out, 1, p);
    read_f32(in, model.norm_mean.data(), model.norm_mean.size(), p);
    read_f32(in, model.norm_std.data(), model.norm_std.size(), p);
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        raise(Errc::CorruptModel, p + ": trailing bytes after weights");
    return model;
}

LstmModel load_model(const std::filesystem::path& path, DetectorKind expected) {
    LstmModel model = load_model(path);
    if (model.kind != expected)
        raise(Errc::KindMismatch,
              path.string() + ": holds a " +
                  std::string(detector_kind_name(model.kind)) +
                  " model, expected " + detector_kind_name(expected));
    return model;
}

} // namespace operatrack
