#include "stvfm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>

#include "stvfm/checkpoint.hpp"

namespace stvfm {

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
    if (cfg.lr < 0.0 || cfg.eps <= 0.0 || cfg.weight_decay < 0.0 || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 ||
        cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        fail(ErrorCode::Config, "AdamW: need lr >= 0, eps > 0, weight_decay >= 0, betas in [0, 1)");
}

void AdamW::step(ParamStore& store, Tape<float>& tape, const Binder<float>& binder) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& e : store.entries()) {
        if (e.frozen) continue;
        auto& m = m_[e.name];
        auto& v = v_[e.name];
        if (m.empty()) {
            m.assign(e.data.size(), 0.0);
            v.assign(e.data.size(), 0.0);
        }
        const float* g = nullptr;
        if (const Tensor<float>* leaf = binder.find(e.name)) g = tape.grad(*leaf).data();
        for (std::size_t i = 0; i < e.data.size(); ++i) {
            const double gi = g ? static_cast<double>(g[i]) : 0.0;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            const double p = static_cast<double>(e.data[i]);
            e.data[i] = static_cast<float>(p - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p));
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

void MetricAccum::add(const float* truth, const float* pred, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) {
        const double e = (static_cast<double>(truth[i]) - static_cast<double>(pred[i])) * scale;
        abs_sum_ += std::abs(e);
        sq_sum_ += e * e;
    }
    count_ += n;
}

Metrics MetricAccum::finalize() const {
    if (count_ == 0) fail(ErrorCode::Invalid, "metrics over zero points");
    Metrics m;
    m.count = count_;
    m.mae = abs_sum_ / static_cast<double>(count_);
    m.rmse = std::sqrt(sq_sum_ / static_cast<double>(count_));
    if (m.rmse < m.mae)
        fail(ErrorCode::Numeric, "rmse " + std::to_string(m.rmse) + " below mae " + std::to_string(m.mae));
    return m;
}

Metrics compute_metrics(const std::vector<float>& truth, const std::vector<float>& pred, double scale) {
    if (truth.size() != pred.size())
        fail(ErrorCode::ShapeMismatch, "metrics: " + std::to_string(truth.size()) + " truth values vs " +
                                           std::to_string(pred.size()) + " predictions");
    MetricAccum acc;
    acc.add(truth.data(), pred.data(), truth.size(), scale);
    return acc.finalize();
}

// ---------------------------------------------------------------------------
// Baselines

std::vector<float> baseline_forecast(BaselineKind kind, const WindowPair& w, double interval_minutes) {
    const STGrid& h = w.history;
    const std::size_t fs = h.frame_size(), p = h.steps, q = w.target.steps;
    std::vector<float> out(fs * q);
    if (kind == BaselineKind::Persistence) {
        for (std::size_t step = 0; step < q; ++step)
            std::copy(h.frame(p - 1), h.frame(p - 1) + fs, out.data() + step * fs);
        return out;
    }
    std::size_t day_steps = 0;
    if (interval_minutes > 0.0 && static_cast<double>(p) * interval_minutes >= 1440.0)
        day_steps = static_cast<std::size_t>(1440.0 / interval_minutes + 0.5);
    if (day_steps <= 1) {
        // in-window mean, one frame replicated across the horizon
        std::vector<double> mean(fs, 0.0);
        for (std::size_t t = 0; t < p; ++t)
            for (std::size_t i = 0; i < fs; ++i) mean[i] += h.frame(t)[i];
        for (std::size_t step = 0; step < q; ++step)
            for (std::size_t i = 0; i < fs; ++i)
                out[step * fs + i] = static_cast<float>(mean[i] / static_cast<double>(p));
        return out;
    }
    // time-of-day mean: each forecast step draws on history frames that share
    // its phase within the day
    for (std::size_t step = 0; step < q; ++step) {
        const std::size_t phase = (p + step) % day_steps;
        std::vector<double> mean(fs, 0.0);
        std::size_t hits = 0;
        for (std::size_t t = phase % day_steps; t < p; t += day_steps) {
            for (std::size_t i = 0; i < fs; ++i) mean[i] += h.frame(t)[i];
            ++hits;
        }
        if (hits == 0) {  // cannot happen when the window spans a full day
            for (std::size_t t = 0; t < p; ++t)
                for (std::size_t i = 0; i < fs; ++i) mean[i] += h.frame(t)[i];
            hits = p;
        }
        for (std::size_t i = 0; i < fs; ++i)
            out[step * fs + i] = static_cast<float>(mean[i] / static_cast<double>(hits));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

Tensor<float> window_tensor(Tape<float>& tape, const STGrid& g) {
    return tape.leaf({g.steps, g.channels, g.height, g.width}, g.values, false);
}

struct EvalAccum {
    MetricAccum overall;
    std::vector<MetricAccum> per_step;

    void add_window(const float* truth, const float* pred, std::size_t q, std::size_t fs, double scale) {
        if (per_step.size() < q) per_step.resize(q);
        for (std::size_t step = 0; step < q; ++step) {
            overall.add(truth + step * fs, pred + step * fs, fs, scale);
            per_step[step].add(truth + step * fs, pred + step * fs, fs, scale);
        }
    }

    StepMetrics finalize() const {
        StepMetrics out;
        out.overall = overall.finalize();
        for (const auto& acc : per_step) out.per_step.push_back(acc.finalize());
        return out;
    }
};

void require_window_capacity(const char* split, std::size_t steps, std::size_t p, std::size_t q) {
    if (steps >= p + q) return;
    fail(ErrorCode::Config, std::string(split) + " split has " + std::to_string(steps) +
                                " frames but one window needs P+Q = " + std::to_string(p + q) +
                                "; lengthen the dataset or adjust the split fractions");
}

}  // namespace

StepMetrics evaluate_model(const ParamStore& params, const ModelConfig& cfg, const STGrid& split,
                           const Normalizer& norm) {
    split.validate();
    require_window_capacity("eval", split.steps, cfg.hist, cfg.horizon);
    const STGrid normed = norm.apply(split);
    const auto windows = make_windows(normed, cfg.hist, cfg.horizon, 1);
    const double scale = split.meta.scale_factor;
    const std::size_t fs = split.frame_size();
    EvalAccum acc;
    for (const auto& w : windows) {
        Tape<float> tape;
        Binder<float> bind(params, tape);
        auto model = bind_model(bind, cfg);
        auto fc = model_forward(model, window_tensor(tape, w.history), window_tensor(tape, w.flow_history));
        STGrid pred(split.channels, split.height, split.width, cfg.horizon);
        const auto& v = fc.st.data();
        std::copy(v.begin(), v.end(), pred.values.begin());
        pred = norm.invert(pred);
        const float* truth = split.frame(w.start + cfg.hist);
        acc.add_window(truth, pred.values.data(), cfg.horizon, fs, scale);
    }
    return acc.finalize();
}

StepMetrics evaluate_baseline(BaselineKind kind, const STGrid& split, std::size_t hist, std::size_t horizon) {
    split.validate();
    require_window_capacity("eval", split.steps, hist, horizon);
    const auto windows = make_windows(split, hist, horizon, 1);
    const double scale = split.meta.scale_factor;
    const std::size_t fs = split.frame_size();
    EvalAccum acc;
    for (const auto& w : windows) {
        const auto pred = baseline_forecast(kind, w, split.meta.interval_minutes);
        acc.add_window(w.target.values.data(), pred.data(), horizon, fs, scale);
    }
    return acc.finalize();
}

// ---------------------------------------------------------------------------
// Training

namespace {

// deterministic Fisher-Yates driven by the model seed
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(
            (static_cast<std::uint64_t>(rng.next_u32()) * i) >> 32);
        std::swap(idx[i - 1], idx[j]);
    }
}

nlohmann::json normalizer_to_json(const Normalizer& n) {
    return {{"mean", n.mean()}, {"std", n.stddev()}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
    return Normalizer(j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>());
}

}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const STGrid& dataset, std::ostream* log_out) {
    validate_model_config(mcfg);
    if (tcfg.batch < 1) fail(ErrorCode::Config, "batch must be at least 1");
    if (tcfg.epochs < 1 && tcfg.max_steps == 0) fail(ErrorCode::Config, "need epochs >= 1 or a max_steps cap");
    dataset.validate_dataset();
    if (mcfg.channels != dataset.channels || mcfg.height != dataset.height || mcfg.width != dataset.width)
        fail(ErrorCode::ShapeMismatch, "model configured for " + std::to_string(mcfg.channels) + "x" +
                                           std::to_string(mcfg.height) + "x" + std::to_string(mcfg.width) +
                                           " but dataset is " + std::to_string(dataset.channels) + "x" +
                                           std::to_string(dataset.height) + "x" + std::to_string(dataset.width));

    const Splits splits = split_by_time(dataset, tcfg.split);
    const Normalizer norm = fit_normalizer(splits.train);
    const STGrid train_n = norm.apply(splits.train);
    require_window_capacity("train", splits.train.steps, mcfg.hist, mcfg.horizon);
    require_window_capacity("val", splits.val.steps, mcfg.hist, mcfg.horizon);
    const auto windows = make_windows(train_n, mcfg.hist, mcfg.horizon, tcfg.stride);

    ParamStore store;
    register_model(store, mcfg);
    const auto frozen_before = frozen_snapshot(store);

    AdamW opt(tcfg.opt);
    Rng order_rng(mcfg.seed ^ 0x5deece66dULL);
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    result.normalizer = norm;
    result.best_val_rmse = std::numeric_limits<double>::infinity();
    bool done = false;

    const std::size_t epochs = tcfg.epochs < 1 ? std::numeric_limits<std::size_t>::max() : tcfg.epochs;
    for (std::size_t epoch = 0; epoch < epochs && !done; ++epoch) {
        if (tcfg.shuffle) shuffle_indices(order, order_rng);
        double sum_st = 0.0, sum_flow = 0.0, sum_total = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t at = 0; at < order.size() && !done; at += tcfg.batch) {
            const std::size_t take = std::min(tcfg.batch, order.size() - at);
            Tape<float> tape;
            Binder<float> bind(store, tape);
            auto model = bind_model(bind, mcfg);
            Tensor<float> batch_st, batch_flow;
            for (std::size_t b = 0; b < take; ++b) {
                const WindowPair& w = windows[order[at + b]];
                auto fc = model_forward(model, window_tensor(tape, w.history), window_tensor(tape, w.flow_history));
                auto l_st = frame_norm_loss(fc.st, window_tensor(tape, w.target));
                auto l_flow = fc.has_flow ? frame_norm_loss(fc.flow, window_tensor(tape, w.flow_target))
                                          : tape.leaf({1}, std::vector<float>{0.0f}, false);
                batch_st = b == 0 ? l_st : add(batch_st, l_st);
                batch_flow = b == 0 ? l_flow : add(batch_flow, l_flow);
            }
            if (take > 1) {
                batch_st = scale(batch_st, 1.0f / static_cast<float>(take));
                batch_flow = scale(batch_flow, 1.0f / static_cast<float>(take));
            }
            auto total = combined_loss(batch_st, batch_flow, tcfg.lambda);
            const double total_v = total.item();
            if (!std::isfinite(total_v))
                fail(ErrorCode::Numeric, "training diverged at step " + std::to_string(opt.steps() + 1) +
                                             " (total loss " + std::to_string(total_v) + "); lower lr or lambda");
            tape.backward(total);
            opt.step(store, tape, bind);
            sum_st += batch_st.item();
            sum_flow += batch_flow.item();
            sum_total += total_v;
            ++epoch_steps;
            if (tcfg.max_steps > 0 && opt.steps() >= tcfg.max_steps) done = true;
        }

        const auto val = evaluate_model(store, mcfg, splits.val, norm);
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.step = opt.steps();
        rec.l_st = sum_st / static_cast<double>(epoch_steps);
        rec.l_flow = sum_flow / static_cast<double>(epoch_steps);
        rec.total = sum_total / static_cast<double>(epoch_steps);
        rec.val_mae = val.overall.mae;
        rec.val_rmse = val.overall.rmse;
        result.log.push_back(rec);
        if (log_out) {
            nlohmann::json line = {{"epoch", rec.epoch},     {"step", rec.step},       {"l_st", rec.l_st},
                                   {"l_flow", rec.l_flow},   {"total", rec.total},     {"val_mae", rec.val_mae},
                                   {"val_rmse", rec.val_rmse}};
            *log_out << line.dump() << "\n";
        }
        if (rec.val_rmse < result.best_val_rmse) {
            result.best_val_rmse = rec.val_rmse;
            result.best_val_mae = rec.val_mae;
            result.best = store;
        }
    }
    result.steps = opt.steps();

    const auto frozen_report = assert_frozen(frozen_before, store);
    if (!frozen_report.ok) {
        std::string names;
        for (const auto& n : frozen_report.changed) names += " " + n;
        fail(ErrorCode::Invalid, "frozen parameters changed during training:" + names);
    }

    result.meta = {{"kind", "stvfm-model"},
                   {"model", model_config_to_json(mcfg)},
                   {"train", train_config_to_json(tcfg)},
                   {"normalizer", normalizer_to_json(norm)},
                   {"val_rmse", result.best_val_rmse},
                   {"val_mae", result.best_val_mae},
                   {"dataset", {{"name", dataset.meta.name},
                                {"interval_minutes", dataset.meta.interval_minutes},
                                {"scale_factor", dataset.meta.scale_factor}}}};
    return result;
}

void save_trained(const TrainResult& result, const std::string& path) {
    save_checkpoint(result.best, result.meta, path);
}

TrainedModel load_trained(const std::string& path) {
    auto loaded = load_checkpoint(path);
    TrainedModel out;
    if (!loaded.meta.contains("model"))
        fail(ErrorCode::Config, "checkpoint " + path + " has no model config in its metadata");
    out.cfg = model_config_from_json(loaded.meta.at("model"));
    out.normalizer = normalizer_from_json(loaded.meta.at("normalizer"));
    out.store = std::move(loaded.store);
    out.meta = std::move(loaded.meta);
    return out;
}

// ---------------------------------------------------------------------------
// Config serialization

namespace {

void reject_unknown(const nlohmann::json& j, const char* what, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ErrorCode::Config, std::string(what) + " must be a JSON object");
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) bad += (bad.empty() ? "" : ", ") + std::string("'") + it.key() + "'";
    }
    if (!bad.empty()) fail(ErrorCode::Config, std::string(what) + ": unknown keys " + bad);
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {{"channels", cfg.channels},
            {"height", cfg.height},
            {"width", cfg.width},
            {"patch", cfg.patch},
            {"hist", cfg.hist},
            {"horizon", cfg.horizon},
            {"d_t", cfg.d_t},
            {"d_vfm", cfg.d_vfm},
            {"temporal_depth", cfg.temporal_depth},
            {"temporal_heads", cfg.temporal_heads},
            {"decoder_depth", cfg.decoder_depth},
            {"decoder_heads", cfg.decoder_heads},
            {"mlp_hidden", cfg.mlp_hidden},
            {"seed", cfg.seed},
            {"use_vfm", cfg.use_vfm},
            {"use_token_adaptation", cfg.use_token_adaptation},
            {"use_temporal_encoder", cfg.use_temporal_encoder},
            {"use_adapters", cfg.use_adapters},
            {"use_flow_branch", cfg.use_flow_branch},
            {"use_cross_prompt", cfg.use_cross_prompt},
            {"backbone",
             {{"depth", cfg.backbone.depth},
              {"dim", cfg.backbone.dim},
              {"heads", cfg.backbone.heads},
              {"adapter_bottleneck", cfg.backbone.adapter_bottleneck},
              {"seed", cfg.backbone.seed}}},
            {"coordination",
             {{"layers", cfg.coordination.layers},
              {"l_p", cfg.coordination.l_p},
              {"heads", cfg.coordination.heads},
              {"reextract_prompts", cfg.coordination.reextract_prompts},
              {"synchronous", cfg.coordination.synchronous}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, "model config",
                   {"channels", "height", "width", "patch", "hist", "horizon", "d_t", "d_vfm", "temporal_depth",
                    "temporal_heads", "decoder_depth", "decoder_heads", "mlp_hidden", "seed", "use_vfm",
                    "use_token_adaptation", "use_temporal_encoder", "use_adapters", "use_flow_branch",
                    "use_cross_prompt", "backbone", "coordination", "variant"});
    ModelConfig cfg;
    try {
        if (j.contains("variant")) apply_ablation_variant(cfg, j.at("variant").get<std::string>());
        take(j, "channels", cfg.channels);
        take(j, "height", cfg.height);
        take(j, "width", cfg.width);
        take(j, "patch", cfg.patch);
        take(j, "hist", cfg.hist);
        take(j, "horizon", cfg.horizon);
        take(j, "d_t", cfg.d_t);
        take(j, "d_vfm", cfg.d_vfm);
        take(j, "temporal_depth", cfg.temporal_depth);
        take(j, "temporal_heads", cfg.temporal_heads);
        take(j, "decoder_depth", cfg.decoder_depth);
        take(j, "decoder_heads", cfg.decoder_heads);
        take(j, "mlp_hidden", cfg.mlp_hidden);
        take(j, "seed", cfg.seed);
        take(j, "use_vfm", cfg.use_vfm);
        take(j, "use_token_adaptation", cfg.use_token_adaptation);
        take(j, "use_temporal_encoder", cfg.use_temporal_encoder);
        take(j, "use_adapters", cfg.use_adapters);
        take(j, "use_flow_branch", cfg.use_flow_branch);
        take(j, "use_cross_prompt", cfg.use_cross_prompt);
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            reject_unknown(b, "backbone config", {"depth", "dim", "heads", "adapter_bottleneck", "seed"});
            take(b, "depth", cfg.backbone.depth);
            take(b, "dim", cfg.backbone.dim);
            take(b, "heads", cfg.backbone.heads);
            take(b, "adapter_bottleneck", cfg.backbone.adapter_bottleneck);
            take(b, "seed", cfg.backbone.seed);
        }
        if (j.contains("coordination")) {
            const auto& c = j.at("coordination");
            reject_unknown(c, "coordination config", {"layers", "l_p", "heads", "reextract_prompts", "synchronous"});
            take(c, "layers", cfg.coordination.layers);
            take(c, "l_p", cfg.coordination.l_p);
            take(c, "heads", cfg.coordination.heads);
            take(c, "reextract_prompts", cfg.coordination.reextract_prompts);
            take(c, "synchronous", cfg.coordination.synchronous);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("model config: ") + e.what());
    }
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"epochs", cfg.epochs},
            {"batch", cfg.batch},
            {"max_steps", cfg.max_steps},
            {"stride", cfg.stride},
            {"lambda", cfg.lambda},
            {"shuffle", cfg.shuffle},
            {"lr", cfg.opt.lr},
            {"beta1", cfg.opt.beta1},
            {"beta2", cfg.opt.beta2},
            {"eps", cfg.opt.eps},
            {"weight_decay", cfg.opt.weight_decay},
            {"train_frac", cfg.split.train_frac},
            {"val_frac", cfg.split.val_frac},
            {"test_frac", cfg.split.test_frac}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, "train config",
                   {"epochs", "batch", "max_steps", "stride", "lambda", "shuffle", "lr", "beta1", "beta2", "eps",
                    "weight_decay", "train_frac", "val_frac", "test_frac"});
    TrainConfig cfg;
    try {
        take(j, "epochs", cfg.epochs);
        take(j, "batch", cfg.batch);
        take(j, "max_steps", cfg.max_steps);
        take(j, "stride", cfg.stride);
        take(j, "lambda", cfg.lambda);
        take(j, "shuffle", cfg.shuffle);
        take(j, "lr", cfg.opt.lr);
        take(j, "beta1", cfg.opt.beta1);
        take(j, "beta2", cfg.opt.beta2);
        take(j, "eps", cfg.opt.eps);
        take(j, "weight_decay", cfg.opt.weight_decay);
        take(j, "train_frac", cfg.split.train_frac);
        take(j, "val_frac", cfg.split.val_frac);
        take(j, "test_frac", cfg.split.test_frac);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("train config: ") + e.what());
    }
    return cfg;
}

}  // namespace stvfm
