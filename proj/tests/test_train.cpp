#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "stvfm/gradcheck.hpp"
#include "testutil.hpp"

using namespace stvfm;
using testutil::micro_config;

namespace {

std::vector<float> rand_values(std::size_t n, std::uint64_t seed, float lo = -2.0f, float hi = 2.0f) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

STGrid micro_dataset(std::size_t steps = 30, std::uint64_t seed = 7) {
    SynthParams p;
    p.kind = "advection";
    p.channels = 1;
    p.height = 4;
    p.width = 4;
    p.steps = steps;
    p.sigma = 1.2;
    return synthesize(p, seed);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// losses

TEST_CASE("loss is zero when prediction equals target") {
    const Shape s{2, 3, 4, 5};
    auto v = rand_values(numel(s), 21);
    auto l = frame_norm_loss(Tensor<float>(s, v), Tensor<float>(s, v));
    CHECK(l.item() == 0.0f);
}

TEST_CASE("unit residuals sum to the channel count") {
    // every element off by one: sum = T*C*H*W, denominator T*H*W, so C
    for (std::size_t c : {std::size_t{1}, std::size_t{3}}) {
        const Shape s{2, c, 4, 5};
        std::vector<float> pred(numel(s), 1.5f), target(numel(s), 0.5f);
        auto l = frame_norm_loss(Tensor<float>(s, pred), Tensor<float>(s, target));
        CHECK(l.item() == static_cast<float>(c));
    }
}

TEST_CASE("loss matches an element-loop oracle") {
    const Shape s{2, 3, 4, 5};
    auto p = rand_values(numel(s), 22), t = rand_values(numel(s), 23);
    double want = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        want += d * d;
    }
    want /= 2.0 * 4.0 * 5.0;
    auto l = frame_norm_loss(Tensor<double>(s, std::vector<double>(p.begin(), p.end())),
                             Tensor<double>(s, std::vector<double>(t.begin(), t.end())));
    CHECK(std::abs(l.item() - want) < 1e-6 * std::abs(want));
}

TEST_CASE("loss rejects mismatched or non-4d shapes") {
    Tensor<float> a({2, 1, 4, 4}, std::vector<float>(32, 0.0f));
    Tensor<float> b({2, 1, 4, 5}, std::vector<float>(40, 0.0f));
    Tensor<float> c({4, 4}, std::vector<float>(16, 0.0f));
    CHECK_THROWS_AS(frame_norm_loss(a, b), Error);
    CHECK_THROWS_AS(frame_norm_loss(c, c), Error);
}

TEST_CASE("total loss is exactly affine in lambda") {
    auto l_st = Tensor<float>::scalar(0.731f);
    auto l_flow = Tensor<float>::scalar(1.209f);
    for (double lambda : {0.0, 1.0, 2.0}) {
        const float total = combined_loss(l_st, l_flow, lambda).item();
        const float want = l_st.item() + static_cast<float>(lambda) * l_flow.item();
        CHECK(std::memcmp(&total, &want, sizeof(float)) == 0);
    }
    const float at_zero = combined_loss(l_st, l_flow, 0.0).item();
    const float st = l_st.item();
    CHECK(std::memcmp(&at_zero, &st, sizeof(float)) == 0);
    CHECK_THROWS_AS(combined_loss(l_st, l_flow, -0.5), Error);
}

// ---------------------------------------------------------------------------
// optimizer

TEST_CASE("AdamW leaves parameters alone with zero grad and zero decay") {
    ParamStore store;
    store.add("p", {3}, {0.25f, -1.5f, 2.0f}, false, "g");
    const auto before = store.at("p").data;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    Tape<float> tape;
    Binder<float> bind(store, tape);  // never bound: gradient is zero
    opt.step(store, tape, bind);
    opt.step(store, tape, bind);
    CHECK(std::memcmp(before.data(), store.at("p").data.data(), 3 * sizeof(float)) == 0);
}

TEST_CASE("first AdamW step with unit gradient moves by about -lr") {
    ParamStore store;
    store.add("p", {1}, {0.5f}, false, "g");
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    Tape<float> tape;
    Binder<float> bind(store, tape);
    auto loss = sum_all(bind("p"));
    tape.backward(loss);
    opt.step(store, tape, bind);
    // mhat = vhat = 1 after bias correction, so the step is lr / (1 + eps);
    // tolerance covers the final rounding to the f32 store
    const double want = 0.5 - 1e-3 / (1.0 + 1e-8);
    CHECK(std::abs(static_cast<double>(store.at("p").data[0]) - want) < 5e-8);
}

TEST_CASE("decay-only update shrinks by (1 - lr*wd) per step") {
    ParamStore store;
    store.add("p", {2}, {0.8f, -0.4f}, false, "g");
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    AdamW opt(cfg);
    for (int k = 1; k <= 5; ++k) {
        Tape<float> tape;
        Binder<float> bind(store, tape);
        opt.step(store, tape, bind);
        const double factor = std::pow(1.0 - 0.001, k);
        CHECK(std::abs(store.at("p").data[0] - 0.8 * factor) < 1e-7);
        CHECK(std::abs(store.at("p").data[1] + 0.4 * factor) < 1e-7);
    }
}

TEST_CASE("frozen entries are never updated") {
    ParamStore store;
    store.add("w", {2}, {1.0f, 2.0f}, true, "backbone");
    store.add("p", {1}, {0.5f}, false, "g");
    AdamW opt(AdamWConfig{});
    Tape<float> tape;
    Binder<float> bind(store, tape);
    auto loss = add(sum_all(bind("w")), sum_all(bind("p")));
    tape.backward(loss);
    opt.step(store, tape, bind);
    CHECK(store.at("w").data[0] == 1.0f);
    CHECK(store.at("w").data[1] == 2.0f);
    CHECK(store.at("p").data[0] != 0.5f);
}

TEST_CASE("two steps match a by-hand moment recurrence") {
    ParamStore store;
    store.add("p", {1}, {1.0f}, false, "g");
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    const double g1 = 2.0, g2 = -0.5;
    double m = 0.0, v = 0.0, p = 1.0;
    int t = 0;
    for (double g : {g1, g2}) {
        Tape<float> tape;
        Binder<float> bind(store, tape);
        auto loss = scale(sum_all(bind("p")), static_cast<float>(g));
        tape.backward(loss);
        opt.step(store, tape, bind);
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        p -= 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(std::abs(store.at("p").data[0] - p) < 1e-7);
    }
}

TEST_CASE("AdamW rejects bad hyperparameters") {
    AdamWConfig bad;
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(AdamW{bad}, Error);
    bad = AdamWConfig{};
    bad.eps = 0.0;
    CHECK_THROWS_AS(AdamW{bad}, Error);
    bad = AdamWConfig{};
    bad.weight_decay = -0.1;
    CHECK_THROWS_AS(AdamW{bad}, Error);
}

// ---------------------------------------------------------------------------
// metrics

TEST_CASE("metric hand case: y=[1,2] yhat=[2,4]") {
    auto m = compute_metrics({1.0f, 2.0f}, {2.0f, 4.0f});
    CHECK(std::abs(m.mae - 1.5) < 1e-5);
    CHECK(std::abs(m.rmse - std::sqrt(2.5)) < 1e-5);
    CHECK(m.count == 2);
}

TEST_CASE("metrics match a scalar-loop oracle on random data") {
    Rng rng(303);
    for (int rep = 0; rep < 120; ++rep) {
        const std::size_t n = 1 + rng.next_u32() % 50;
        std::vector<float> y(n), yhat(n);
        for (auto& v : y) v = rng.uniform(-10.0f, 10.0f);
        for (auto& v : yhat) v = rng.uniform(-10.0f, 10.0f);
        const double s = rep % 3 == 0 ? 2.5 : 1.0;
        auto m = compute_metrics(y, yhat, s);
        long double abs_sum = 0.0L, sq_sum = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            const long double e = (static_cast<long double>(y[i]) - yhat[i]) * s;
            abs_sum += std::fabs((double)e);
            sq_sum += e * e;
        }
        const double mae = static_cast<double>(abs_sum / n);
        const double rmse = std::sqrt(static_cast<double>(sq_sum / n));
        CHECK(std::abs(m.mae - mae) <= 1e-6 * std::max(1.0, mae));
        CHECK(std::abs(m.rmse - rmse) <= 1e-6 * std::max(1.0, rmse));
        CHECK(m.rmse >= m.mae);
    }
}

TEST_CASE("metrics scale linearly with the report factor") {
    auto y = rand_values(40, 31), yhat = rand_values(40, 32);
    auto base = compute_metrics(y, yhat, 1.0);
    auto scaled = compute_metrics(y, yhat, 3.0);
    CHECK(std::abs(scaled.mae - 3.0 * base.mae) < 1e-12 * scaled.mae);
    CHECK(std::abs(scaled.rmse - 3.0 * base.rmse) < 1e-12 * scaled.rmse);
}

TEST_CASE("metrics reject mismatched or empty input") {
    CHECK_THROWS_AS(compute_metrics({1.0f}, {1.0f, 2.0f}), Error);
    CHECK_THROWS_AS(compute_metrics({}, {}), Error);
}

// ---------------------------------------------------------------------------
// baselines

TEST_CASE("persistence repeats the last history frame") {
    auto grid = testutil::random_grid(2, 3, 3, 10, 41);
    auto w = make_windows(grid, 3, 2, 1)[1];
    auto pred = baseline_forecast(BaselineKind::Persistence, w, 0.0);
    const std::size_t fs = w.history.frame_size();
    REQUIRE(pred.size() == 2 * fs);
    CHECK(std::memcmp(pred.data(), w.history.frame(2), fs * sizeof(float)) == 0);
    CHECK(std::memcmp(pred.data() + fs, w.history.frame(2), fs * sizeof(float)) == 0);
}

TEST_CASE("historical average is the per-cell mean of the history") {
    auto grid = testutil::random_grid(1, 2, 2, 8, 42);
    auto w = make_windows(grid, 4, 2, 1)[0];
    auto pred = baseline_forecast(BaselineKind::HistoricalAverage, w, 30.0);  // 4*30min << 1 day
    const std::size_t fs = 4;
    for (std::size_t i = 0; i < fs; ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < 4; ++t) mean += w.history.frame(t)[i];
        mean /= 4.0;
        CHECK(pred[i] == doctest::Approx(mean).epsilon(1e-6));
        CHECK(pred[fs + i] == pred[i]);
    }
}

TEST_CASE("historical average becomes phase-aware over day-long windows") {
    // 720-minute steps: two per day; history frames alternate phases
    STGrid grid(1, 1, 1, 8);
    for (std::size_t t = 0; t < 8; ++t) grid.values[t] = static_cast<float>(t + 1);
    grid.meta.interval_minutes = 720.0;
    auto w = make_windows(grid, 4, 2, 1)[0];  // history 1,2,3,4
    auto pred = baseline_forecast(BaselineKind::HistoricalAverage, w, 720.0);
    CHECK(pred[0] == doctest::Approx((1.0 + 3.0) / 2));  // step 4: even phase
    CHECK(pred[1] == doctest::Approx((2.0 + 4.0) / 2));  // step 5: odd phase
}

TEST_CASE("baseline evaluation bookkeeping") {
    auto grid = micro_dataset(20, 8);
    auto rep = evaluate_baseline(BaselineKind::Persistence, grid, 2, 2);
    const std::size_t windows = 20 - 4 + 1;
    CHECK(rep.overall.count == windows * 2 * 1 * 4 * 4);
    REQUIRE(rep.per_step.size() == 2);
    CHECK(rep.per_step[0].count == windows * 16);
    CHECK(rep.per_step[1].count == windows * 16);
    CHECK(rep.overall.rmse >= rep.overall.mae);
}

TEST_CASE("persistence is exact on a constant grid") {
    STGrid grid(1, 3, 3, 12);
    std::fill(grid.values.begin(), grid.values.end(), 4.25f);
    auto rep = evaluate_baseline(BaselineKind::Persistence, grid, 3, 2);
    CHECK(rep.overall.mae == 0.0);
    CHECK(rep.overall.rmse == 0.0);
}

TEST_CASE("scale factor multiplies reported metrics") {
    auto grid = micro_dataset(20, 9);
    auto base = evaluate_baseline(BaselineKind::Persistence, grid, 2, 2);
    grid.meta.scale_factor = 2.0;
    auto doubled = evaluate_baseline(BaselineKind::Persistence, grid, 2, 2);
    CHECK(doubled.overall.mae == doctest::Approx(2.0 * base.overall.mae).epsilon(1e-12));
    CHECK(doubled.overall.rmse == doctest::Approx(2.0 * base.overall.rmse).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// training loop

TEST_CASE("training runs, logs, and respects max_steps") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "v2");
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 3;
    tc.max_steps = 10;
    std::ostringstream log;
    auto result = train(cfg, tc, data, &log);
    CHECK(result.steps == 10);
    REQUIRE(!result.log.empty());
    CHECK(result.log.back().step == 10);
    CHECK(std::isfinite(result.best_val_rmse));
    CHECK(result.best_val_rmse >= result.best_val_mae);

    std::istringstream lines(log.str());
    std::string line;
    std::size_t n_lines = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        for (const char* k : {"epoch", "step", "l_st", "l_flow", "total", "val_mae", "val_rmse"})
            CHECK(j.contains(k));
        ++n_lines;
    }
    CHECK(n_lines == result.log.size());
}

TEST_CASE("same seed trains to byte-identical checkpoints") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "full");
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.max_steps = 6;
    auto a = train(cfg, tc, data, nullptr);
    auto b = train(cfg, tc, data, nullptr);
    save_trained(a, "train_ckpt_a.ntc");
    save_trained(b, "train_ckpt_b.ntc");
    CHECK(read_file("train_ckpt_a.ntc") == read_file("train_ckpt_b.ntc"));

    auto ea = evaluate_model(a.best, cfg, split_by_time(data, tc.split).test, a.normalizer);
    auto eb = evaluate_model(b.best, cfg, split_by_time(data, tc.split).test, b.normalizer);
    CHECK(ea.overall.mae == eb.overall.mae);
    CHECK(ea.overall.rmse == eb.overall.rmse);
}

TEST_CASE("checkpoint round trip reproduces evaluation bitwise") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "v3");
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.max_steps = 4;
    auto result = train(cfg, tc, data, nullptr);
    save_trained(result, "train_ckpt_rt.ntc");
    auto loaded = load_trained("train_ckpt_rt.ntc");
    CHECK(model_config_to_json(loaded.cfg).dump() == model_config_to_json(cfg).dump());
    auto test_split = split_by_time(data, tc.split).test;
    auto e1 = evaluate_model(result.best, cfg, test_split, result.normalizer);
    auto e2 = evaluate_model(loaded.store, loaded.cfg, test_split, loaded.normalizer);
    CHECK(e1.overall.mae == e2.overall.mae);
    CHECK(e1.overall.rmse == e2.overall.rmse);
    for (std::size_t q = 0; q < e1.per_step.size(); ++q) CHECK(e1.per_step[q].rmse == e2.per_step[q].rmse);
}

TEST_CASE("every trainable group moves while the backbone stays frozen") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "full");
    ParamStore init;
    register_model(init, cfg);
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.max_steps = 10;
    auto result = train(cfg, tc, data, nullptr);
    std::map<std::string, bool> group_changed;
    for (const auto& e : init.entries()) {
        const auto& after = result.best.at(e.name);
        const bool changed = std::memcmp(e.data.data(), after.data.data(), e.data.size() * sizeof(float)) != 0;
        if (e.frozen)
            CHECK_MESSAGE(!changed, e.name);
        else
            group_changed[e.group] = group_changed[e.group] || changed;
    }
    for (const char* g : {"tokenizer", "temporal_encoder", "adapters", "prompts", "decoder", "heads"}) {
        CAPTURE(g);
        CHECK(group_changed[g]);
    }
}

TEST_CASE("lambda zero silences flow-head gradients for a whole epoch") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "full");
    ParamStore store;
    register_model(store, cfg);
    testutil::randomize_prompt_projections(store, 606);
    auto data = micro_dataset();
    SplitSpec spec;
    auto train_split = split_by_time(data, spec).train;
    auto norm = fit_normalizer(train_split);
    auto windows = make_windows(norm.apply(train_split), cfg.hist, cfg.horizon, 1);
    REQUIRE(windows.size() >= 5);
    for (const auto& w : windows) {
        auto ad = testutil::ad_grads(store, cfg, w, 0.0);
        for (const auto& [name, g] : ad.by_name) {
            if (name.rfind("flow.head", 0) == 0 || name.rfind("flow.dec", 0) == 0) {
                double norm2 = 0.0;
                for (double x : g) norm2 += x * x;
                CAPTURE(name);
                CHECK(norm2 == 0.0);
            }
        }
        // the flow encoder still feeds the ST branch through the prompts
        double enc = 0.0;
        for (double x : ad.by_name.at("flow.te.w_proj")) enc += x * x;
        CHECK(enc > 0.0);
    }
}

TEST_CASE("training aborts with a diagnostic when the loss diverges") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "v2");
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 2;
    tc.opt.lr = 1e8;
    try {
        train(cfg, tc, data, nullptr);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Numeric);
    }
}

TEST_CASE("too-short splits are rejected up front") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "v2");
    auto data = micro_dataset(8, 10);  // 15% val = 1 frame < P+Q
    TrainConfig tc;
    tc.epochs = 1;
    try {
        train(cfg, tc, data, nullptr);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
        CHECK(std::string(e.what()).find("split") != std::string::npos);
    }
}

TEST_CASE("model evaluation is deterministic") {
    auto cfg = micro_config();
    apply_ablation_variant(cfg, "v2");
    auto data = micro_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.max_steps = 3;
    auto result = train(cfg, tc, data, nullptr);
    auto split = split_by_time(data, tc.split).test;
    auto e1 = evaluate_model(result.best, cfg, split, result.normalizer);
    auto e2 = evaluate_model(result.best, cfg, split, result.normalizer);
    CHECK(e1.overall.mae == e2.overall.mae);
    CHECK(e1.overall.rmse == e2.overall.rmse);
    const std::size_t windows = split.steps - cfg.hist - cfg.horizon + 1;
    CHECK(e1.overall.count == windows * cfg.horizon * split.frame_size());
}

TEST_CASE("train config JSON round trip") {
    TrainConfig tc;
    tc.epochs = 7;
    tc.lambda = 0.25;
    tc.opt.lr = 5e-4;
    tc.split.train_frac = 0.6;
    tc.split.val_frac = tc.split.test_frac = 0.2;
    auto j = train_config_to_json(tc);
    auto back = train_config_from_json(j);
    CHECK(train_config_to_json(back).dump() == j.dump());
    j["nonsense"] = 1;
    CHECK_THROWS_AS(train_config_from_json(j), Error);
}
