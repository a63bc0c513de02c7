#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "stvfm/grid.hpp"
#include "stvfm/model.hpp"

// Joint training of both branches, AdamW, evaluation metrics, and the naive
// baselines. Losses run on the tape; everything else is plain float/double.

namespace stvfm {

// sum of squared residuals over all elements of a [T x C x H x W] block,
// divided by T*H*W (channels are summed, not averaged)
template <class T>
Tensor<T> frame_norm_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        fail(ErrorCode::ShapeMismatch,
             "loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    if (pred.rank() != 4) fail(ErrorCode::ShapeMismatch, "loss expects [T x C x H x W], got " + shape_str(pred.shape()));
    const auto& s = pred.shape();
    const T denom = static_cast<T>(s[0] * s[2] * s[3]);
    return scale(sum_all(square(sub(pred, target))), T(1) / denom);
}

// total = l_st + lambda * l_flow, exactly this expression; lambda = 0 leaves
// the flow term out of the gradient entirely
template <class T>
Tensor<T> combined_loss(const Tensor<T>& l_st, const Tensor<T>& l_flow, double lambda) {
    if (lambda < 0.0) fail(ErrorCode::Config, "lambda must be >= 0, got " + std::to_string(lambda));
    return add(l_st, scale(l_flow, static_cast<T>(lambda)));
}

struct AdamWConfig {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
// State is keyed by parameter name; frozen entries are never touched.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg);

    // one update over every trainable entry, in registration order; a
    // parameter the forward never bound (or never influenced) has zero grad
    void step(ParamStore& store, Tape<float>& tape, const Binder<float>& binder);

    std::size_t steps() const { return step_; }

private:
    AdamWConfig cfg_;
    std::size_t step_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_, v_;
};

struct Metrics {
    double mae = 0.0, rmse = 0.0;
    std::size_t count = 0;
};

// running |e| and e^2 sums in double, order-stable
class MetricAccum {
public:
    void add(const float* truth, const float* pred, std::size_t n, double scale = 1.0);
    Metrics finalize() const;  // enforces rmse >= mae

private:
    double abs_sum_ = 0.0, sq_sum_ = 0.0;
    std::size_t count_ = 0;
};

Metrics compute_metrics(const std::vector<float>& truth, const std::vector<float>& pred, double scale = 1.0);

enum class BaselineKind { Persistence, HistoricalAverage };

// Persistence repeats the last history frame. Historical average is the
// per-cell mean of the history; when the history spans at least one day
// (interval_minutes * P >= 1440) the mean is taken per time-of-day phase.
std::vector<float> baseline_forecast(BaselineKind kind, const WindowPair& w, double interval_minutes);

struct StepMetrics {
    Metrics overall;
    std::vector<Metrics> per_step;  // one entry per forecast step q
};

// forward the trained model over every window of `split` (stride 1),
// denormalize, and score in original units times meta.scale_factor
StepMetrics evaluate_model(const ParamStore& params, const ModelConfig& cfg, const STGrid& split,
                           const Normalizer& norm);

StepMetrics evaluate_baseline(BaselineKind kind, const STGrid& split, std::size_t hist, std::size_t horizon);

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch = 1;
    std::size_t max_steps = 0;  // optimizer-step cap, 0 = unlimited
    std::size_t stride = 1;
    double lambda = 1.0;
    AdamWConfig opt;
    SplitSpec split;
    bool shuffle = true;
};

struct EpochRecord {
    std::size_t epoch = 0, step = 0;
    double l_st = 0.0, l_flow = 0.0, total = 0.0;
    double val_mae = 0.0, val_rmse = 0.0;
};

struct TrainResult {
    ParamStore best;       // weights at the best validation RMSE
    nlohmann::json meta;   // checkpoint metadata (configs, normalizer, score)
    Normalizer normalizer;
    double best_val_rmse = 0.0, best_val_mae = 0.0;
    std::vector<EpochRecord> log;
    std::size_t steps = 0;
};

// split -> normalize -> window -> optimize; emits one JSONL record per epoch
// to log_out when given. Non-finite loss aborts with ErrorCode::Numeric.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const STGrid& dataset,
                  std::ostream* log_out = nullptr);

void save_trained(const TrainResult& result, const std::string& path);

struct TrainedModel {
    ParamStore store;
    ModelConfig cfg;
    Normalizer normalizer;
    nlohmann::json meta;
};

TrainedModel load_trained(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace stvfm
