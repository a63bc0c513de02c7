#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stvfm/gradcheck.hpp"
#include "stvfm/kernels.hpp"
#include "stvfm/train.hpp"

// Subcommands: synth, train, eval, forecast, gradcheck, sweep. Every command
// is a pure function of (arguments, config file, STVFM_SEED): re-runs write
// byte-identical artifacts.

namespace {

using namespace stvfm;

// STVFM_SEED beats whatever the config or flag said
bool seed_override(std::uint64_t& seed) {
    const char* env = std::getenv("STVFM_SEED");
    if (!env || !*env) return false;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        fail(ErrorCode::Config, "STVFM_SEED is not an unsigned integer: " + std::string(env));
    seed = static_cast<std::uint64_t>(v);
    return true;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Config, "cannot open config '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, "config '" + path + "' is not valid JSON: " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) fail(ErrorCode::Invalid, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) fail(ErrorCode::Invalid, "short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// run config: {"dataset": ..., "out_dir": ..., "model": {...}, "train": {...}}

struct RunConfig {
    std::string dataset, out_dir = "run";
    ModelConfig model;
    TrainConfig train_cfg;
    bool model_dims_given = false;
};

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::Config, "run config must be a JSON object");
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "dataset" && it.key() != "out_dir" && it.key() != "model" && it.key() != "train")
            bad += (bad.empty() ? "" : ", ") + std::string("'") + it.key() + "'";
    if (!bad.empty()) fail(ErrorCode::Config, "run config: unknown keys " + bad);
    RunConfig rc;
    if (!j.contains("dataset")) fail(ErrorCode::Config, "run config needs a 'dataset' path");
    j.at("dataset").get_to(rc.dataset);
    if (j.contains("out_dir")) j.at("out_dir").get_to(rc.out_dir);
    if (j.contains("model")) {
        rc.model = model_config_from_json(j.at("model"));
        rc.model_dims_given = j.at("model").contains("channels") || j.at("model").contains("height") ||
                              j.at("model").contains("width");
    }
    if (j.contains("train")) rc.train_cfg = train_config_from_json(j.at("train"));
    return rc;
}

nlohmann::json run_config_to_json(const RunConfig& rc) {
    return {{"dataset", rc.dataset},
            {"out_dir", rc.out_dir},
            {"model", model_config_to_json(rc.model)},
            {"train", train_config_to_json(rc.train_cfg)}};
}

nlohmann::json metrics_to_json(const StepMetrics& m) {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t q = 0; q < m.per_step.size(); ++q)
        per.push_back({{"step", q + 1}, {"mae", m.per_step[q].mae}, {"rmse", m.per_step[q].rmse}});
    return {{"mae", m.overall.mae}, {"rmse", m.overall.rmse}, {"count", m.overall.count}, {"per_step", per}};
}

STGrid pick_split(const STGrid& data, const std::string& which, const SplitSpec& spec) {
    if (which == "all") return data;
    auto splits = split_by_time(data, spec);
    if (which == "train") return splits.train;
    if (which == "val") return splits.val;
    if (which == "test") return splits.test;
    fail(ErrorCode::Config, "unknown split '" + which + "' (train, val, test, all)");
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const SynthParams& params, std::uint64_t seed, const std::string& out) {
    std::uint64_t s = seed;
    seed_override(s);
    auto grid = synthesize(params, s);
    save_grid(grid, out);
    nlohmann::json summary{{"path", out},           {"kind", params.kind},  {"channels", grid.channels},
                           {"height", grid.height}, {"width", grid.width},  {"steps", grid.steps},
                           {"seed", s}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path) {
    auto rc = run_config_from_json(load_json_file(config_path));
    seed_override(rc.model.seed);
    auto data = load_grid(rc.dataset);
    if (!rc.model_dims_given) {
        rc.model.channels = data.channels;
        rc.model.height = data.height;
        rc.model.width = data.width;
    }
    validate_model_config(rc.model);
    std::filesystem::create_directories(rc.out_dir);
    write_text(rc.out_dir + "/resolved_config.json", run_config_to_json(rc).dump(2) + "\n");

    std::ofstream log(rc.out_dir + "/train_log.jsonl", std::ios::trunc);
    if (!log) fail(ErrorCode::Invalid, "cannot open '" + rc.out_dir + "/train_log.jsonl' for writing");
    auto result = train(rc.model, rc.train_cfg, data, &log);
    const std::string ckpt = rc.out_dir + "/checkpoint.ntc";
    save_trained(result, ckpt);

    nlohmann::json summary{{"checkpoint", ckpt},
                           {"log", rc.out_dir + "/train_log.jsonl"},
                           {"steps", result.steps},
                           {"epochs", result.log.size()},
                           {"best_val_mae", result.best_val_mae},
                           {"best_val_rmse", result.best_val_rmse},
                           {"resolved", run_config_to_json(rc)}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& model_arg, const std::string& checkpoint, const std::string& data_path,
             const std::string& split, std::size_t hist, std::size_t horizon, const SplitSpec& spec,
             const std::string& out) {
    auto data = load_grid(data_path);
    nlohmann::json report;
    if (model_arg == "checkpoint") {
        if (checkpoint.empty()) fail(ErrorCode::Config, "eval needs --checkpoint unless --model names a baseline");
        auto tm = load_trained(checkpoint);
        SplitSpec ckpt_spec = spec;
        if (tm.meta.contains("train")) ckpt_spec = train_config_from_json(tm.meta.at("train")).split;
        auto part = pick_split(data, split, ckpt_spec);
        auto metrics = evaluate_model(tm.store, tm.cfg, part, tm.normalizer);
        report = metrics_to_json(metrics);
        report["model"] = "checkpoint";
        report["checkpoint"] = checkpoint;
    } else {
        BaselineKind kind;
        if (model_arg == "ha")
            kind = BaselineKind::HistoricalAverage;
        else if (model_arg == "persistence")
            kind = BaselineKind::Persistence;
        else
            fail(ErrorCode::Config, "unknown --model '" + model_arg + "' (checkpoint, ha, persistence)");
        auto part = pick_split(data, split, spec);
        auto metrics = evaluate_baseline(kind, part, hist, horizon);
        report = metrics_to_json(metrics);
        report["model"] = model_arg;
    }
    report["split"] = split;
    const std::string text = report.dump(2) + "\n";
    std::cout << text;
    if (!out.empty()) write_text(out, text);
    return 0;
}

// ---------------------------------------------------------------------------
// forecast

int cmd_forecast(const std::string& checkpoint, const std::string& data_path, long at, const std::string& out) {
    auto tm = load_trained(checkpoint);
    auto data = load_grid(data_path);
    const std::size_t p = tm.cfg.hist, q = tm.cfg.horizon;
    if (data.steps < p)
        fail(ErrorCode::Config,
             "forecast needs at least " + std::to_string(p) + " frames, got " + std::to_string(data.steps));
    const std::size_t start = at < 0 ? data.steps - p : static_cast<std::size_t>(at);
    if (start + p > data.steps)
        fail(ErrorCode::Config, "history window [" + std::to_string(start) + ", " + std::to_string(start + p) +
                                    ") exceeds T=" + std::to_string(data.steps));

    STGrid hist_slice(data.channels, data.height, data.width, p);
    std::copy(data.frame(start), data.frame(start) + p * data.frame_size(), hist_slice.values.begin());
    hist_slice.meta = data.meta;
    const STGrid hist_n = tm.normalizer.apply(hist_slice);
    const STGrid flow_n = derive_flow(hist_n);

    Tape<float> tape;
    Binder<float> bind(tm.store, tape);
    auto model = bind_model(bind, tm.cfg);
    auto hist_t = tape.leaf({p, data.channels, data.height, data.width}, hist_n.values, false);
    auto flow_t = tape.leaf({p, data.channels, data.height, data.width}, flow_n.values, false);
    auto fc = model_forward(model, hist_t, flow_t);

    STGrid pred(data.channels, data.height, data.width, q);
    std::copy(fc.st.data().begin(), fc.st.data().end(), pred.values.begin());
    pred = tm.normalizer.invert(pred);
    pred.meta = data.meta;
    pred.meta.name = data.meta.name.empty() ? "forecast" : data.meta.name + ".forecast";
    save_grid(pred, out);

    nlohmann::json summary{{"path", out}, {"history_start", start}, {"history_frames", p}, {"forecast_frames", q}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct CheckRow {
    std::string name;
    double err = 0.0;
};

// project onto fixed positive weights so every output coordinate carries
// gradient of the same order
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(y.numel());
    for (auto& v : w) v = 0.5 + static_cast<double>(rng.uniform());
    return sum_all(mul(reshape(y, {y.numel()}), Tensor<double>({y.numel()}, std::move(w))));
}

std::vector<double> rand_data(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * static_cast<double>(rng.uniform());
    return v;
}

std::vector<CheckRow> gradcheck_primitives() {
    std::vector<CheckRow> rows;
    auto run = [&](const std::string& name, const Shape& shape,
                   std::function<Tensor<double>(const Tensor<double>&)> f, double lo = -1.0, double hi = 1.0) {
        auto x = rand_data(numel(shape), 1000 + rows.size(), lo, hi);
        auto rep = finite_diff_check([&](const Tensor<double>& t) { return project(f(t), 77); }, shape, x);
        rows.push_back({name, rep.max_rel_err});
    };
    const Shape m23{2, 3}, m34{3, 4};
    const Tensor<double> other(m23, rand_data(6, 9100));
    const Tensor<double> rhs(m34, rand_data(12, 9101));
    const Tensor<double> lhs(m23, rand_data(6, 9102));
    const Tensor<double> bias({3}, rand_data(3, 9103));
    run("add", m23, [&](const Tensor<double>& t) { return add(t, other); });
    run("sub", m23, [&](const Tensor<double>& t) { return sub(other, t); });
    run("mul", m23, [&](const Tensor<double>& t) { return mul(t, other); });
    run("square", m23, [&](const Tensor<double>& t) { return square(t); });
    run("scale", m23, [&](const Tensor<double>& t) { return scale(t, 1.7); });
    run("add_bias", m23, [&](const Tensor<double>& t) { return add_bias(t, bias); });
    run("matmul_lhs", m23, [&](const Tensor<double>& t) { return matmul(t, rhs); });
    run("matmul_rhs", m34, [&](const Tensor<double>& t) { return matmul(lhs, t); });
    run("reshape", m23, [&](const Tensor<double>& t) { return reshape(t, {3, 2}); });
    run("transpose", m23, [&](const Tensor<double>& t) { return transpose(t, 0, 1); });
    run("slice", m34, [&](const Tensor<double>& t) { return slice(t, 1, 1, 2); });
    run("concat", m23, [&](const Tensor<double>& t) { return concat(std::vector<Tensor<double>>{t, other}, 0); });
    run("tile_rows", {1, 4}, [&](const Tensor<double>& t) { return tile_rows(t, 3); });
    run("gather_flat", m23, [&](const Tensor<double>& t) {
        auto idx = std::make_shared<std::vector<long>>(std::vector<long>{5, 0, -1, 3, 3, 1});
        return gather_flat(t, idx, {2, 3});
    });
    run("sum_axis", m23, [&](const Tensor<double>& t) { return sum(t, 1); });
    run("mean_axis", m23, [&](const Tensor<double>& t) { return mean(t, 0); });
    run("sum_all", m23, [&](const Tensor<double>& t) { return sum_all(t); });
    run("mean_all", m23, [&](const Tensor<double>& t) { return mean_all(t); });
    run("exp", m23, [&](const Tensor<double>& t) { return exp_(t); });
    run("sqrt", m23, [&](const Tensor<double>& t) { return sqrt_(t); }, 0.5, 2.0);
    run("gelu", m23, [&](const Tensor<double>& t) { return gelu(t); });
    run("softmax", m23, [&](const Tensor<double>& t) { return softmax(t, 1); });
    run("layer_norm", m23, [&](const Tensor<double>& t) { return layer_norm(t, 1e-5); });
    return rows;
}

// AD through a Binder on the float store vs central differences through
// perturbed store copies; one row per registered tensor
using StoreLoss = std::function<Tensor<double>(Binder<double>&)>;

void check_store(std::vector<CheckRow>& rows, const std::string& label, const ParamStore& store,
                 const StoreLoss& loss, std::size_t samples_per_tensor = 3) {
    Tape<double> tape;
    Binder<double> bind(store, tape);
    auto total = loss(bind);
    tape.backward(total);
    std::map<std::string, std::vector<double>> grads;
    for (const auto& e : store.entries())
        if (const auto* leaf = bind.find(e.name)) grads[e.name] = tape.grad(*leaf);

    auto fd_loss = [&](const ParamStore& s) {
        Tape<double> t2;
        Binder<double> b2(s, t2);
        return loss(b2).item();
    };
    Rng pick(4242);
    for (const auto& e : store.entries()) {
        if (e.frozen) continue;
        CheckRow row{label + "." + e.name, 0.0};
        const auto& g = grads.at(e.name);
        const std::size_t samples = std::min(samples_per_tensor, e.data.size());
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t i = pick.next_u32() % e.data.size();
            ParamStore up = store, down = store;
            const float h = 1e-4f;
            up.at(e.name).data[i] += h;
            down.at(e.name).data[i] -= h;
            const double span =
                static_cast<double>(up.at(e.name).data[i]) - static_cast<double>(down.at(e.name).data[i]);
            const double fd = (fd_loss(up) - fd_loss(down)) / span;
            row.err = std::max(row.err, grad_rel_err(g[i], fd));
        }
        rows.push_back(row);
    }
}

std::vector<CheckRow> gradcheck_blocks() {
    std::vector<CheckRow> rows;
    const std::size_t dim = 8, heads = 2, seq = 5;

    {
        ParamStore s;
        Rng rng(31);
        register_attention(s, "attn", dim, rng, false, "g");
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        check_store(rows, "mha", s, [&](Binder<double>& b) {
            auto attn = bind_attention(b, "attn", dim, heads);
            auto x = b("x");
            return project(multi_head_attention(attn, x, x), 1);
        });
    }
    {
        ParamStore s;
        Rng rng(32);
        register_block(s, "blk", dim, rng, false, "g");
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        check_store(rows, "block", s, [&](Binder<double>& b) {
            auto blk = bind_block(b, "blk", dim, heads);
            return project(transformer_block(blk, b("x")), 2);
        });
    }
    {
        ParamStore s;
        Rng rng(33);
        register_block(s, "blk", dim, rng, true, "backbone");
        register_adapter(s, "ad", dim, 3, rng, "adapters");
        for (auto& v : s.at("ad.up").data) v = rng.uniform(-0.2f, 0.2f);
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        check_store(rows, "adapter", s, [&](Binder<double>& b) {
            auto blk = bind_block(b, "blk", dim, heads);
            auto ad = bind_adapter(b, "ad");
            return project(transformer_block(blk, b("x"), &ad), 3);
        });
    }
    {
        ParamStore s;
        Rng rng(34);
        const std::size_t n_s = 3, t = 2, in_dim = 6;
        register_temporal_encoder(s, "te", in_dim, dim, 4, 1, rng);
        s.add("x", {n_s * t, in_dim}, glorot_uniform(rng, n_s * t, in_dim), false, "g");
        check_store(rows, "temporal", s, [&](Binder<double>& b) {
            auto te = bind_temporal_encoder(b, "te", 4, 1, heads);
            PatchTokens<double> toks{b("x"), t, n_s, in_dim};
            return project(temporal_context_encode(te, toks).values, 4);
        });
    }
    {
        ParamStore s;
        Rng rng(35);
        CoordinationConfig cc;
        cc.layers = 1;
        cc.l_p = 2;
        cc.heads = heads;
        register_coordination(s, "coord", dim, cc, rng);
        for (auto& e : s.entries())
            if (e.name.find(".wp") != std::string::npos)
                for (auto& v : e.data) v = rng.uniform(-0.2f, 0.2f);
        const std::size_t n_s = 2, t = 2;
        s.add("xs", {n_s * t, dim}, glorot_uniform(rng, n_s * t, dim), false, "g");
        s.add("xf", {n_s * t, dim}, glorot_uniform(rng, n_s * t, dim), false, "g");
        check_store(rows, "cross_prompt", s, [&](Binder<double>& b) {
            auto coord = bind_coordination(b, "coord", dim, cc);
            VfmTokens<double> st{b("xs"), t, n_s, dim}, fl{b("xf"), t, n_s, dim};
            auto [so, fo] = coordinate(coord, st, fl);
            return add(project(so.values, 5), project(fo.values, 6));
        });
    }
    {
        ParamStore s;
        Rng rng(36);
        const std::size_t n_s = 2, t = 3, q = 2;
        register_decoder(s, "dec", dim, q, 1, rng);
        s.add("x", {n_s * t, dim}, glorot_uniform(rng, n_s * t, dim), false, "g");
        check_store(rows, "decoder", s, [&](Binder<double>& b) {
            auto dec = bind_decoder(b, "dec", dim, 1, heads);
            VfmTokens<double> feats{b("x"), t, n_s, dim};
            return project(decode_future(dec, feats).values, 7);
        });
    }
    {
        ParamStore s;
        Rng rng(37);
        auto g = make_patch_geometry(1, 4, 4, 2);
        const std::size_t q = 2;
        register_head(s, "head", dim, g.token_dim(), rng);
        s.add("x", {g.per_frame() * q, dim}, glorot_uniform(rng, g.per_frame() * q, dim), false, "g");
        check_store(rows, "head", s, [&](Binder<double>& b) {
            auto head = bind_head(b, "head");
            DecodedFuture<double> fut{b("x"), q, g.per_frame(), dim};
            return project(head_project(head, fut, g), 8);
        });
    }
    return rows;
}

std::vector<CheckRow> gradcheck_end2end() {
    ModelConfig cfg;
    cfg.channels = 1;
    cfg.height = 4;
    cfg.width = 4;
    cfg.patch = 2;
    cfg.hist = 2;
    cfg.horizon = 2;
    cfg.d_t = 8;
    cfg.d_vfm = 8;
    cfg.temporal_depth = 1;
    cfg.temporal_heads = 2;
    cfg.decoder_depth = 1;
    cfg.decoder_heads = 2;
    cfg.backbone.depth = 1;
    cfg.backbone.dim = 8;
    cfg.backbone.heads = 2;
    cfg.backbone.adapter_bottleneck = 2;
    cfg.coordination.layers = 1;
    cfg.coordination.l_p = 2;
    cfg.coordination.heads = 2;
    apply_ablation_variant(cfg, "full");

    ParamStore store;
    register_model(store, cfg);
    Rng rng(606);
    for (auto& e : store.entries())
        if (e.name.find(".wp") != std::string::npos)
            for (auto& v : e.data) v = rng.uniform(-0.2f, 0.2f);

    SynthParams sp;
    sp.kind = "advection";
    sp.channels = 1;
    sp.height = 4;
    sp.width = 4;
    sp.steps = 8;
    sp.sigma = 1.2;
    auto grid = synthesize(sp, 99);
    auto w = make_windows(grid, cfg.hist, cfg.horizon, 1)[0];

    auto grid_tensor = [](Tape<double>& tape, const STGrid& g) {
        return tape.leaf({g.steps, g.channels, g.height, g.width},
                         std::vector<double>(g.values.begin(), g.values.end()), false);
    };
    std::vector<CheckRow> rows;
    check_store(rows, "model", store, [&](Binder<double>& b) {
        auto model = bind_model(b, cfg);
        auto& tape = b.tape();
        auto fc = model_forward(model, grid_tensor(tape, w.history), grid_tensor(tape, w.flow_history));
        auto l_st = frame_norm_loss(fc.st, grid_tensor(tape, w.target));
        auto l_flow = frame_norm_loss(fc.flow, grid_tensor(tape, w.flow_target));
        return combined_loss(l_st, l_flow, 0.7);
    });
    return rows;
}

int cmd_gradcheck(const std::string& scope) {
    std::vector<CheckRow> rows;
    if (scope == "primitives")
        rows = gradcheck_primitives();
    else if (scope == "blocks")
        rows = gradcheck_blocks();
    else if (scope == "end2end")
        rows = gradcheck_end2end();
    else
        fail(ErrorCode::Config, "unknown scope '" + scope + "' (primitives, blocks, end2end)");

    const double tol = 1e-4;
    double worst = 0.0;
    std::size_t failures = 0;
    for (const auto& r : rows) {
        const bool ok = r.err < tol;
        failures += ok ? 0 : 1;
        worst = std::max(worst, r.err);
        std::printf("%-40s %10.3e  %s\n", r.name.c_str(), r.err, ok ? "PASS" : "FAIL");
    }
    std::printf("gradcheck %s: %zu checks, worst %.3e, tolerance %.0e -> %s\n", scope.c_str(), rows.size(), worst,
                tol, failures == 0 ? "PASS" : "FAIL");
    return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& values, const std::string& out) {
    if (values.empty()) fail(ErrorCode::Config, "sweep needs at least one lambda value");
    auto base = run_config_from_json(load_json_file(config_path));
    seed_override(base.model.seed);
    auto data = load_grid(base.dataset);
    if (!base.model_dims_given) {
        base.model.channels = data.channels;
        base.model.height = data.height;
        base.model.width = data.width;
    }
    validate_model_config(base.model);

    std::string csv = "lambda,mae,rmse\n";
    for (const auto& token : values) {
        std::size_t used = 0;
        double lambda = 0.0;
        try {
            lambda = std::stod(token, &used);
        } catch (const std::exception&) {
            fail(ErrorCode::Config, "lambda value '" + token + "' is not a number");
        }
        if (used != token.size()) fail(ErrorCode::Config, "lambda value '" + token + "' is not a number");
        RunConfig rc = base;
        rc.train_cfg.lambda = lambda;
        auto result = train(rc.model, rc.train_cfg, data, nullptr);
        auto test_split = split_by_time(data, rc.train_cfg.split).test;
        auto metrics = evaluate_model(result.best, rc.model, test_split, result.normalizer);
        char row[128];
        std::snprintf(row, sizeof(row), "%s,%.17g,%.17g\n", token.c_str(), metrics.overall.mae,
                      metrics.overall.rmse);
        csv += row;
    }
    std::cout << csv;
    if (!out.empty()) write_text(out, csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatio-temporal grid forecaster"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic STG1 dataset");
    SynthParams sp;
    sp.kind = "advection";
    std::uint64_t synth_seed = 42;
    std::string synth_out = "data.stg1";
    synth->add_option("--kind", sp.kind, "advection, diffusion, or periodic");
    synth->add_option("--channels", sp.channels);
    synth->add_option("--height", sp.height);
    synth->add_option("--width", sp.width);
    synth->add_option("--steps", sp.steps);
    synth->add_option("--velocity-x", sp.velocity_x, "advection cells per step");
    synth->add_option("--velocity-y", sp.velocity_y);
    synth->add_option("--sigma", sp.sigma, "blob width");
    synth->add_option("--blobs", sp.blobs);
    synth->add_option("--period", sp.period, "periodic cycle length");
    synth->add_option("--amplitude", sp.amplitude);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", synth_out)->required();

    // train
    auto* tr = app.add_subcommand("train", "train from a JSON run config");
    std::string train_config;
    tr->add_option("--config", train_config)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "score a checkpoint or baseline on a split");
    std::string eval_model = "checkpoint", eval_ckpt, eval_data, eval_split = "test", eval_out;
    std::size_t eval_hist = 6, eval_horizon = 6;
    SplitSpec eval_spec;
    ev->add_option("--model", eval_model, "checkpoint, ha, or persistence");
    ev->add_option("--checkpoint", eval_ckpt);
    ev->add_option("--data", eval_data)->required();
    ev->add_option("--split", eval_split, "train, val, test, or all");
    ev->add_option("--hist", eval_hist, "baseline history length");
    ev->add_option("--horizon", eval_horizon, "baseline forecast length");
    ev->add_option("--train-frac", eval_spec.train_frac);
    ev->add_option("--val-frac", eval_spec.val_frac);
    ev->add_option("--test-frac", eval_spec.test_frac);
    ev->add_option("--out", eval_out, "also write the report here");

    // forecast
    auto* fc = app.add_subcommand("forecast", "write a predicted STG1 continuation");
    std::string fc_ckpt, fc_data, fc_out = "forecast.stg1";
    long fc_at = -1;
    fc->add_option("--checkpoint", fc_ckpt)->required();
    fc->add_option("--data", fc_data)->required();
    fc->add_option("--at", fc_at, "history start frame (default: last P frames)");
    fc->add_option("--out", fc_out)->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_scope = "primitives";
    gc->add_option("--scope", gc_scope, "primitives, blocks, or end2end");

    // sweep
    auto* sw = app.add_subcommand("sweep", "train across lambda values, emit CSV");
    std::string sweep_config, sweep_out;
    std::vector<std::string> sweep_values;
    sw->add_option("--config", sweep_config)->required();
    sw->add_option("--values", sweep_values, "comma-separated lambdas")->required()->delimiter(',');
    sw->add_option("--out", sweep_out, "also write the CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(sp, synth_seed, synth_out);
        if (tr->parsed()) return cmd_train(train_config);
        if (ev->parsed())
            return cmd_eval(eval_model, eval_ckpt, eval_data, eval_split, eval_hist, eval_horizon, eval_spec,
                            eval_out);
        if (fc->parsed()) return cmd_forecast(fc_ckpt, fc_data, fc_at, fc_out);
        if (gc->parsed()) return cmd_gradcheck(gc_scope);
        if (sw->parsed()) return cmd_sweep(sweep_config, sweep_values, sweep_out);
    } catch (const stvfm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
