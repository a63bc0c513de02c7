// Acceptance gauntlet: ten independent criteria, one verdict line each.
// Every tolerance and budget is pinned right where it is asserted. Exit
// status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stvfm/gradcheck.hpp"
#include "stvfm/train.hpp"
#include "testutil.hpp"

namespace {

using namespace stvfm;

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void must(bool ok, const std::string& why) {
    if (!ok) throw Failure(why);
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// shared fixtures: the advection benchmark and the 200-step full-model run

STGrid make_benchmark() {
    SynthParams sp;
    sp.kind = "advection";
    sp.channels = 1;
    sp.height = 16;
    sp.width = 20;
    sp.steps = 400;
    sp.velocity_x = 1;
    sp.velocity_y = 1;
    sp.sigma = 2.5;
    sp.blobs = 3;
    return synthesize(sp, 2024);
}

ModelConfig benchmark_config(const std::string& variant) {
    ModelConfig cfg;
    cfg.channels = 1;
    cfg.height = 16;
    cfg.width = 20;
    cfg.patch = 4;
    cfg.hist = 6;
    cfg.horizon = 6;
    cfg.d_t = 32;
    cfg.d_vfm = 32;
    cfg.temporal_depth = 1;
    cfg.temporal_heads = 4;
    cfg.decoder_depth = 1;
    cfg.decoder_heads = 4;
    cfg.mlp_hidden = 64;
    cfg.backbone.depth = 2;
    cfg.backbone.dim = 32;
    cfg.backbone.heads = 4;
    cfg.backbone.adapter_bottleneck = 8;
    cfg.backbone.seed = 9;
    cfg.coordination.layers = 1;
    cfg.coordination.l_p = 4;
    cfg.coordination.heads = 4;
    cfg.seed = 7;
    apply_ablation_variant(cfg, variant);
    return cfg;
}

TrainConfig benchmark_train() {
    TrainConfig tr;
    tr.epochs = 1;
    tr.batch = 1;
    tr.max_steps = 200;
    tr.stride = 1;
    tr.opt.lr = 3e-3;
    return tr;
}

STGrid micro_dataset() {
    SynthParams sp;
    sp.kind = "advection";
    sp.channels = 1;
    sp.height = 4;
    sp.width = 4;
    sp.steps = 64;
    sp.sigma = 1.2;
    return synthesize(sp, 11);
}

struct Shared {
    std::optional<STGrid> adv;
    std::optional<TrainResult> full_run;
    double full_train_seconds = 0.0;

    const STGrid& benchmark() {
        if (!adv) adv = make_benchmark();
        return *adv;
    }
    const TrainResult& trained_full() {
        if (!full_run) {
            const auto t0 = std::chrono::steady_clock::now();
            full_run = train(benchmark_config("full"), benchmark_train(), benchmark(), nullptr);
            full_train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        return *full_run;
    }
};

Shared shared;

// ---------------------------------------------------------------------------
// 1. gradient fidelity

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

double worst_primitive_err() {
    double worst = 0.0;
    std::size_t idx = 0;
    auto run = [&](std::function<Tensor<double>(const Tensor<double>&)> f, const Shape& shape, double lo = -1.0,
                   double hi = 1.0) {
        auto x = rand_data(numel(shape), 1000 + idx++, lo, hi);
        auto rep = finite_diff_check([&](const Tensor<double>& t) { return project(f(t), 77); }, shape, x);
        worst = std::max(worst, rep.max_rel_err);
    };
    const Shape m23{2, 3}, m34{3, 4};
    const Tensor<double> other(m23, rand_data(6, 9100));
    const Tensor<double> rhs(m34, rand_data(12, 9101));
    const Tensor<double> lhs(m23, rand_data(6, 9102));
    const Tensor<double> bias({3}, rand_data(3, 9103));
    run([&](const Tensor<double>& t) { return add(t, other); }, m23);
    run([&](const Tensor<double>& t) { return sub(other, t); }, m23);
    run([&](const Tensor<double>& t) { return mul(t, other); }, m23);
    run([&](const Tensor<double>& t) { return square(t); }, m23);
    run([&](const Tensor<double>& t) { return scale(t, 1.7); }, m23);
    run([&](const Tensor<double>& t) { return add_bias(t, bias); }, m23);
    run([&](const Tensor<double>& t) { return matmul(t, rhs); }, m23);
    run([&](const Tensor<double>& t) { return matmul(lhs, t); }, m34);
    run([&](const Tensor<double>& t) { return reshape(t, {3, 2}); }, m23);
    run([&](const Tensor<double>& t) { return transpose(t, 0, 1); }, m23);
    run([&](const Tensor<double>& t) { return slice(t, 1, 1, 2); }, m34);
    run([&](const Tensor<double>& t) { return concat(std::vector<Tensor<double>>{t, other}, 0); }, m23);
    run([&](const Tensor<double>& t) { return tile_rows(t, 3); }, {1, 4});
    run([&](const Tensor<double>& t) {
        auto idx_v = std::make_shared<std::vector<long>>(std::vector<long>{5, 0, -1, 3, 3, 1});
        return gather_flat(t, idx_v, {2, 3});
    }, m23);
    run([&](const Tensor<double>& t) { return sum(t, 1); }, m23);
    run([&](const Tensor<double>& t) { return mean(t, 0); }, m23);
    run([&](const Tensor<double>& t) { return sum_all(t); }, m23);
    run([&](const Tensor<double>& t) { return mean_all(t); }, m23);
    run([&](const Tensor<double>& t) { return exp_(t); }, m23);
    run([&](const Tensor<double>& t) { return sqrt_(t); }, m23, 0.5, 2.0);
    run([&](const Tensor<double>& t) { return gelu(t); }, m23);
    run([&](const Tensor<double>& t) { return softmax(t, 1); }, m23);
    run([&](const Tensor<double>& t) { return layer_norm(t, 1e-5); }, m23);
    return worst;
}

// AD via a double binder on the float store vs central differences through
// perturbed store copies
using StoreLoss = std::function<Tensor<double>(Binder<double>&)>;

double check_store(const ParamStore& store, const StoreLoss& loss, std::size_t samples_per_tensor = 3) {
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
    double worst = 0.0;
    Rng pick(4242);
    for (const auto& e : store.entries()) {
        if (e.frozen) continue;
        const auto& g = grads.at(e.name);
        for (std::size_t s = 0; s < std::min(samples_per_tensor, e.data.size()); ++s) {
            const std::size_t i = pick.next_u32() % e.data.size();
            ParamStore up = store, down = store;
            const float h = 1e-4f;
            up.at(e.name).data[i] += h;
            down.at(e.name).data[i] -= h;
            const double span =
                static_cast<double>(up.at(e.name).data[i]) - static_cast<double>(down.at(e.name).data[i]);
            const double fd = (fd_loss(up) - fd_loss(down)) / span;
            worst = std::max(worst, grad_rel_err(g[i], fd));
        }
    }
    return worst;
}

double worst_block_err() {
    double worst = 0.0;
    const std::size_t dim = 8, heads = 2, seq = 5;
    {
        ParamStore s;
        Rng rng(31);
        register_attention(s, "attn", dim, rng, false, "g");
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto attn = bind_attention(b, "attn", dim, heads);
                             auto x = b("x");
                             return project(multi_head_attention(attn, x, x), 1);
                         }));
    }
    {
        ParamStore s;
        Rng rng(32);
        register_block(s, "blk", dim, rng, false, "g");
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto blk = bind_block(b, "blk", dim, heads);
                             return project(transformer_block(blk, b("x")), 2);
                         }));
    }
    {
        ParamStore s;
        Rng rng(33);
        register_block(s, "blk", dim, rng, true, "backbone");
        register_adapter(s, "ad", dim, 3, rng, "adapters");
        for (auto& v : s.at("ad.up").data) v = rng.uniform(-0.2f, 0.2f);
        s.add("x", {seq, dim}, glorot_uniform(rng, seq, dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto blk = bind_block(b, "blk", dim, heads);
                             auto ad = bind_adapter(b, "ad");
                             return project(transformer_block(blk, b("x"), &ad), 3);
                         }));
    }
    {
        ParamStore s;
        Rng rng(34);
        const std::size_t n_s = 3, t = 2, in_dim = 6;
        register_temporal_encoder(s, "te", in_dim, dim, 4, 1, rng);
        s.add("x", {n_s * t, in_dim}, glorot_uniform(rng, n_s * t, in_dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto te = bind_temporal_encoder(b, "te", 4, 1, heads);
                             PatchTokens<double> toks{b("x"), t, n_s, in_dim};
                             return project(temporal_context_encode(te, toks).values, 4);
                         }));
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
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto coord = bind_coordination(b, "coord", dim, cc);
                             VfmTokens<double> st{b("xs"), t, n_s, dim}, fl{b("xf"), t, n_s, dim};
                             auto [so, fo] = coordinate(coord, st, fl);
                             return add(project(so.values, 5), project(fo.values, 6));
                         }));
    }
    {
        ParamStore s;
        Rng rng(36);
        const std::size_t n_s = 2, t = 3, q = 2;
        register_decoder(s, "dec", dim, q, 1, rng);
        s.add("x", {n_s * t, dim}, glorot_uniform(rng, n_s * t, dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto dec = bind_decoder(b, "dec", dim, 1, heads);
                             VfmTokens<double> feats{b("x"), t, n_s, dim};
                             return project(decode_future(dec, feats).values, 7);
                         }));
    }
    {
        ParamStore s;
        Rng rng(37);
        auto g = make_patch_geometry(1, 4, 4, 2);
        const std::size_t q = 2;
        register_head(s, "head", dim, g.token_dim(), rng);
        s.add("x", {g.per_frame() * q, dim}, glorot_uniform(rng, g.per_frame() * q, dim), false, "g");
        worst = std::max(worst, check_store(s, [&](Binder<double>& b) {
                             auto head = bind_head(b, "head");
                             DecodedFuture<double> fut{b("x"), q, g.per_frame(), dim};
                             return project(head_project(head, fut, g), 8);
                         }));
    }
    return worst;
}

std::string criterion_1() {
    const double tol = 1e-4;
    const double budget_s = 300.0;
    const auto t0 = std::chrono::steady_clock::now();

    const double worst_prim = worst_primitive_err();
    must(worst_prim < tol, "primitive gradient err " + fmt(worst_prim) + " >= " + fmt(tol));
    const double worst_blk = worst_block_err();
    must(worst_blk < tol, "block gradient err " + fmt(worst_blk) + " >= " + fmt(tol));

    // full pipeline on the micro config: C=1, H=W=4, P=Q=2, D=8, L_p=2
    auto cfg = testutil::micro_config();
    apply_ablation_variant(cfg, "full");
    ParamStore store;
    register_model(store, cfg);
    testutil::randomize_prompt_projections(store, 321);
    auto grid = testutil::random_grid(1, 4, 4, 10, 5150);
    auto w = make_windows(grid, cfg.hist, cfg.horizon, 1)[0];
    const double lambda = 0.7;
    auto ad = testutil::ad_grads(store, cfg, w, lambda);
    double worst_e2e = 0.0;
    Rng pick(99);
    for (const auto& e : store.entries()) {
        if (e.frozen) continue;
        const auto& g = ad.by_name.at(e.name);
        for (std::size_t s = 0; s < std::min<std::size_t>(3, e.data.size()); ++s) {
            const std::size_t i = pick.next_u32() % e.data.size();
            const double fd = testutil::fd_grad(store, cfg, w, lambda, e.name, i);
            worst_e2e = std::max(worst_e2e, grad_rel_err(g[i], fd));
        }
    }
    must(worst_e2e < tol, "end-to-end gradient err " + fmt(worst_e2e) + " >= " + fmt(tol));

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    must(elapsed < budget_s, "took " + fmt(elapsed) + "s, budget " + fmt(budget_s) + "s");
    return "primitives " + fmt(worst_prim) + ", blocks " + fmt(worst_blk) + ", end-to-end " + fmt(worst_e2e);
}

// ---------------------------------------------------------------------------
// 2. equation-literal loss and metric oracles

std::string criterion_2() {
    const double tol = 1e-6;
    const std::size_t t = 3, c = 2, h = 4, wd = 5, n = t * c * h * wd;
    auto pv = rand_data(n, 21, -2.0, 2.0);
    auto tv = rand_data(n, 22, -2.0, 2.0);
    std::vector<float> pf(pv.begin(), pv.end()), tf(tv.begin(), tv.end());

    Tape<float> tape;
    auto pred = tape.leaf({t, c, h, wd}, pf, false);
    auto targ = tape.leaf({t, c, h, wd}, tf, false);
    auto l_st = frame_norm_loss(pred, targ);

    // triple loop over (t, c, pixel), accumulated in double
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t k = 0; k < h * wd; ++k) {
                const std::size_t at = (i * c + j) * h * wd + k;
                const double d = static_cast<double>(pf[at]) - static_cast<double>(tf[at]);
                acc += d * d;
            }
    acc /= static_cast<double>(t * h * wd);
    const double got = static_cast<double>(l_st.item());
    must(std::abs(got - acc) <= tol * std::max(1.0, std::abs(acc)),
         "frame loss " + fmt(got) + " vs oracle " + fmt(acc));

    auto l_flow = frame_norm_loss(targ, pred);  // same value, separate graph
    const double lam = 0.7;
    const double tot = static_cast<double>(combined_loss(l_st, l_flow, lam).item());
    const double tot_oracle = acc + lam * acc;
    must(std::abs(tot - tot_oracle) <= tol * std::max(1.0, std::abs(tot_oracle)),
         "combined loss " + fmt(tot) + " vs oracle " + fmt(tot_oracle));

    // scalar-loop metric oracle
    const std::size_t m = 200;
    auto truth_d = rand_data(m, 23, -2.0, 2.0);
    auto pred_d = rand_data(m, 24, -2.0, 2.0);
    std::vector<float> truth(truth_d.begin(), truth_d.end()), predf(pred_d.begin(), pred_d.end());
    auto metrics = compute_metrics(truth, predf);
    double sum_abs = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(truth[i]) - static_cast<double>(predf[i]);
        sum_abs += std::abs(d);
        sum_sq += d * d;
    }
    const double mae_o = sum_abs / m, rmse_o = std::sqrt(sum_sq / m);
    must(std::abs(metrics.mae - mae_o) <= tol, "mae " + fmt(metrics.mae) + " vs oracle " + fmt(mae_o));
    must(std::abs(metrics.rmse - rmse_o) <= tol, "rmse " + fmt(metrics.rmse) + " vs oracle " + fmt(rmse_o));

    // hand case: y=[1,2], yhat=[2,4] -> MAE 1.5, RMSE sqrt(2.5), 5 decimals
    auto hand = compute_metrics(std::vector<float>{1.0f, 2.0f}, std::vector<float>{2.0f, 4.0f});
    must(std::abs(hand.mae - 1.5) < 1e-5, "hand mae " + fmt(hand.mae) + " != 1.5");
    must(std::abs(hand.rmse - std::sqrt(2.5)) < 1e-5, "hand rmse " + fmt(hand.rmse) + " != sqrt(2.5)");
    return "loss/metrics within 1e-6, hand case 1.5 / " + fmt(hand.rmse);
}

// ---------------------------------------------------------------------------
// 3. cross-prompt attention vs brute force

std::string criterion_3() {
    const double tol = 1e-5, weight_tol = 1e-6;
    const std::size_t dim = 8;
    const std::size_t head_picks[3] = {1, 2, 4};
    std::size_t cases = 0, zero_lp_cases = 0;
    double worst = 0.0, worst_weight = 0.0;

    for (std::size_t k = 0; k < 100; ++k) {
        const std::size_t heads = head_picks[k % 3], dh = dim / heads;
        const std::size_t m = 1 + k % 6, l_p = k % 5;
        const std::uint64_t seed = 1000 + k;
        Attention<double> attn{dim, heads, Tensor<double>({dim, dim}, rand_data(dim * dim, seed * 7 + 1)),
                               Tensor<double>({dim, dim}, rand_data(dim * dim, seed * 7 + 2)),
                               Tensor<double>({dim, dim}, rand_data(dim * dim, seed * 7 + 3)),
                               Tensor<double>({dim, dim}, rand_data(dim * dim, seed * 7 + 4))};
        Tensor<double> wpk({dim, dim}, rand_data(dim * dim, seed * 7 + 5));
        Tensor<double> wpv({dim, dim}, rand_data(dim * dim, seed * 7 + 6));
        auto toks_v = rand_data(m * dim, seed * 7 + 7);
        auto prom_v = rand_data(l_p * dim, seed * 7 + 8);
        Tensor<double> toks({m, dim}, toks_v);
        PromptSet<double> prompts{l_p ? Tensor<double>({l_p, dim}, prom_v) : Tensor<double>(), l_p,
                                  BranchKind::Flow};

        std::vector<Tensor<double>> weights;
        auto got = cross_prompt_attend(attn, wpk, wpv, toks, prompts, &weights);

        // brute force: one joint softmax over all m + l_p support entries
        auto q = matmul(toks, attn.wq);
        auto kk = matmul(toks, attn.wk);
        auto vv = matmul(toks, attn.wv);
        std::vector<double> pk, pv;
        if (l_p) {
            pk = matmul(Tensor<double>({l_p, dim}, prom_v), wpk).data();
            pv = matmul(Tensor<double>({l_p, dim}, prom_v), wpv).data();
        }
        std::vector<double> mixed(m * dim, 0.0);
        for (std::size_t hd = 0; hd < heads; ++hd)
            for (std::size_t i = 0; i < m; ++i) {
                std::vector<double> logits(m + l_p);
                for (std::size_t j = 0; j < m + l_p; ++j) {
                    const double* key = j < m ? &kk.data()[j * dim] : &pk[(j - m) * dim];
                    double s = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) s += q.data()[i * dim + hd * dh + d] * key[hd * dh + d];
                    logits[j] = s / std::sqrt(static_cast<double>(dh));
                }
                double mx = logits[0];
                for (double s : logits) mx = std::max(mx, s);
                double denom = 0.0;
                for (auto& s : logits) {
                    s = std::exp(s - mx);
                    denom += s;
                }
                for (std::size_t j = 0; j < m + l_p; ++j) {
                    const double* val = j < m ? &vv.data()[j * dim] : &pv[(j - m) * dim];
                    for (std::size_t d = 0; d < dh; ++d)
                        mixed[i * dim + hd * dh + d] += logits[j] / denom * val[hd * dh + d];
                }
            }
        auto want = matmul(Tensor<double>({m, dim}, mixed), attn.wo);
        for (std::size_t i = 0; i < got.numel(); ++i)
            worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]));

        // each attention row is a distribution over the joint support
        must(weights.size() == heads, "expected one weight tensor per head");
        for (const auto& wt : weights) {
            must(wt.dim(0) == m && wt.dim(1) == m + l_p, "weight shape off");
            for (std::size_t i = 0; i < m; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < m + l_p; ++j) row += wt.data()[i * (m + l_p) + j];
                worst_weight = std::max(worst_weight, std::abs(row - 1.0));
            }
        }

        // L_p = 0 collapses to plain self-attention, bit for bit
        if (l_p == 0) {
            auto plain = multi_head_attention(attn, toks, toks);
            must(std::memcmp(got.data().data(), plain.data().data(), m * dim * sizeof(double)) == 0,
                 "L_p=0 is not bit-equivalent to standard attention");
            ++zero_lp_cases;
        }
        ++cases;
    }
    must(cases >= 100, "only " + std::to_string(cases) + " cases");
    must(worst < tol, "worst abs err " + fmt(worst) + " >= " + fmt(tol));
    must(worst_weight <= weight_tol, "weight row sum off by " + fmt(worst_weight));
    return std::to_string(cases) + " cases, worst " + fmt(worst) + ", weight-sum off " + fmt(worst_weight) +
           ", " + std::to_string(zero_lp_cases) + " bit-equal L_p=0 cases";
}

// ---------------------------------------------------------------------------
// 4. temporal-difference flow

std::string criterion_4() {
    SynthParams sp;
    sp.kind = "diffusion";
    sp.channels = 2;
    sp.height = 6;
    sp.width = 7;
    sp.steps = 30;
    auto grid = synthesize(sp, 3);
    auto flow = derive_flow(grid);
    must(flow.steps == grid.steps && flow.values.size() == grid.values.size(), "flow shape off");

    const std::size_t fs = grid.frame_size();
    for (std::size_t i = 0; i < fs; ++i)
        must(flow.values[i] == 0.0f, "flow frame 0 must be exactly zero");
    for (std::size_t t = 1; t < grid.steps; ++t)
        for (std::size_t i = 0; i < fs; ++i) {
            const float want = grid.values[t * fs + i] - grid.values[(t - 1) * fs + i];
            must(flow.values[t * fs + i] == want, "flow[" + std::to_string(t) + "] != index-wise difference");
        }

    // x[0] + cumulative flow reconstructs every frame
    double worst = 0.0;
    std::vector<double> recon(grid.values.begin(), grid.values.begin() + fs);
    for (std::size_t t = 1; t < grid.steps; ++t)
        for (std::size_t i = 0; i < fs; ++i) {
            recon[i] += static_cast<double>(flow.values[t * fs + i]);
            const double x = static_cast<double>(grid.values[t * fs + i]);
            worst = std::max(worst, std::abs(recon[i] - x) / std::max(1.0, std::abs(x)));
        }
    must(worst < 1e-5, "cumulative reconstruction err " + fmt(worst) + " >= 1e-5");
    return "index oracle exact, reconstruction err " + fmt(worst);
}

// ---------------------------------------------------------------------------
// 5. frozen-backbone contract over >= 200 steps

std::string criterion_5() {
    auto cfg = testutil::micro_config();
    apply_ablation_variant(cfg, "full");
    auto data = micro_dataset();
    TrainConfig tr;
    tr.epochs = 5;
    tr.batch = 1;
    tr.stride = 1;
    tr.opt.lr = 3e-3;
    auto result = train(cfg, tr, data, nullptr);
    must(result.steps >= 200, "only " + std::to_string(result.steps) + " steps, need >= 200");

    ParamStore init;
    register_model(init, cfg);
    std::map<std::string, bool> group_changed;
    std::size_t frozen_checked = 0;
    for (const auto& e : init.entries()) {
        const auto& after = result.best.at(e.name);
        const bool same = e.data.size() == after.data.size() &&
                          std::memcmp(e.data.data(), after.data.data(), e.data.size() * sizeof(float)) == 0;
        if (e.frozen) {
            must(same, "frozen tensor '" + e.name + "' changed during training");
            ++frozen_checked;
        } else {
            group_changed[e.group] = group_changed[e.group] || !same;
        }
    }
    for (const char* g : {"tokenizer", "temporal_encoder", "adapters", "prompts", "decoder", "heads"})
        must(group_changed.count(g) && group_changed.at(g), std::string("no tensor changed in group '") + g + "'");
    return std::to_string(result.steps) + " steps, " + std::to_string(frozen_checked) +
           " frozen tensors bitwise intact, all 6 trainable groups moved";
}

// ---------------------------------------------------------------------------
// 6. learning signal on the advection benchmark

double probe_total_loss(const ParamStore& store, const ModelConfig& cfg, const TrainConfig& tr,
                        const STGrid& data) {
    auto splits = split_by_time(data, tr.split);
    auto norm = fit_normalizer(splits.train);
    auto windows = make_windows(norm.apply(splits.train), cfg.hist, cfg.horizon, 8);
    double total = 0.0;
    for (const auto& w : windows) {
        Tape<float> tape;
        Binder<float> bind(store, tape);
        auto model = bind_model(bind, cfg);
        auto hist = tape.leaf({w.history.steps, w.history.channels, w.history.height, w.history.width},
                              w.history.values, false);
        auto flow = tape.leaf({w.flow_history.steps, w.flow_history.channels, w.flow_history.height,
                               w.flow_history.width},
                              w.flow_history.values, false);
        auto fc = model_forward(model, hist, flow);
        auto targ = tape.leaf({w.target.steps, w.target.channels, w.target.height, w.target.width},
                              w.target.values, false);
        auto l_st = frame_norm_loss(fc.st, targ);
        auto flow_targ = tape.leaf({w.flow_target.steps, w.flow_target.channels, w.flow_target.height,
                                    w.flow_target.width},
                                   w.flow_target.values, false);
        auto l_flow = fc.has_flow ? frame_norm_loss(fc.flow, flow_targ)
                                  : tape.leaf({1}, std::vector<float>{0.0f}, false);
        total += static_cast<double>(combined_loss(l_st, l_flow, static_cast<float>(tr.lambda)).item());
    }
    return total / static_cast<double>(windows.size());
}

std::string criterion_6() {
    const double budget_s = 60.0;
    const auto cfg = benchmark_config("full");
    const auto tr = benchmark_train();
    const auto& data = shared.benchmark();

    const auto t0 = std::chrono::steady_clock::now();
    ParamStore init;
    register_model(init, cfg);
    const double initial = probe_total_loss(init, cfg, tr, data);
    const auto& result = shared.trained_full();
    const double final_loss = probe_total_loss(result.best, cfg, tr, data);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    must(result.steps == 200, "expected exactly 200 steps, got " + std::to_string(result.steps));
    must(final_loss < 0.5 * initial,
         "loss " + fmt(initial) + " -> " + fmt(final_loss) + " is not below half the initial value");
    must(elapsed < budget_s, "took " + fmt(elapsed) + "s, budget " + fmt(budget_s) + "s");
    return "train loss " + fmt(initial) + " -> " + fmt(final_loss) + " after 200 steps (" + fmt(elapsed) + "s)";
}

// ---------------------------------------------------------------------------
// 7. beats both baselines on the test split

std::string criterion_7() {
    const double budget_s = 300.0;
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = benchmark_config("full");
    const auto& data = shared.benchmark();
    const auto& result = shared.trained_full();

    auto test_split = split_by_time(data, benchmark_train().split).test;
    const double model_rmse = evaluate_model(result.best, cfg, test_split, result.normalizer).overall.rmse;
    const double pers = evaluate_baseline(BaselineKind::Persistence, test_split, cfg.hist, cfg.horizon)
                            .overall.rmse;
    const double ha = evaluate_baseline(BaselineKind::HistoricalAverage, test_split, cfg.hist, cfg.horizon)
                          .overall.rmse;

    must(model_rmse <= 0.9 * pers,
         "model rmse " + fmt(model_rmse) + " > 0.9 x persistence rmse " + fmt(pers));
    must(model_rmse <= 0.9 * ha, "model rmse " + fmt(model_rmse) + " > 0.9 x HA rmse " + fmt(ha));
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() +
                           shared.full_train_seconds;
    must(elapsed < budget_s, "took " + fmt(elapsed) + "s incl. training, budget " + fmt(budget_s) + "s");
    return "rmse " + fmt(model_rmse) + " vs persistence " + fmt(pers) + ", HA " + fmt(ha) + " (" + fmt(elapsed) +
           "s incl. training)";
}

// ---------------------------------------------------------------------------
// 8. full configuration does not lose to configuration #2

std::string criterion_8() {
    const auto& data = shared.benchmark();
    const auto& full = shared.trained_full();
    const auto full_cfg = benchmark_config("full");
    const auto v2_cfg = benchmark_config("v2");
    const auto tr = benchmark_train();

    auto v2 = train(v2_cfg, tr, data, nullptr);
    auto test_split = split_by_time(data, tr.split).test;
    const double full_rmse = evaluate_model(full.best, full_cfg, test_split, full.normalizer).overall.rmse;
    const double v2_rmse = evaluate_model(v2.best, v2_cfg, test_split, v2.normalizer).overall.rmse;

    must(full_rmse <= 1.02 * v2_rmse,
         "full rmse " + fmt(full_rmse) + " > 1.02 x variant-2 rmse " + fmt(v2_rmse));
    return "full " + fmt(full_rmse) + " <= 1.02 x variant-2 " + fmt(v2_rmse) + " at matched 200-step budgets";
}

// ---------------------------------------------------------------------------
// 9. determinism and persistence

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string criterion_9() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "stvfm_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto cfg = testutil::micro_config();
    apply_ablation_variant(cfg, "full");
    auto data = micro_dataset();
    TrainConfig tr;
    tr.epochs = 1;
    tr.max_steps = 30;
    tr.opt.lr = 3e-3;

    auto a = train(cfg, tr, data, nullptr);
    auto b = train(cfg, tr, data, nullptr);
    const std::string p1 = (dir / "a.ntc").string(), p2 = (dir / "b.ntc").string();
    save_trained(a, p1);
    save_trained(b, p2);
    must(read_bytes(p1) == read_bytes(p2), "same-seed retrain produced different checkpoint bytes");

    // checkpoint round trip reproduces the evaluation bit for bit
    auto test_split = split_by_time(data, tr.split).test;
    auto before = evaluate_model(a.best, cfg, test_split, a.normalizer);
    auto loaded = load_trained(p1);
    auto after = evaluate_model(loaded.store, loaded.cfg, test_split, loaded.normalizer);
    must(before.overall.mae == after.overall.mae && before.overall.rmse == after.overall.rmse,
         "round-trip metrics differ");
    for (std::size_t q = 0; q < before.per_step.size(); ++q)
        must(before.per_step[q].rmse == after.per_step[q].rmse, "round-trip per-step metrics differ");

    // STG1 round trip
    const std::string gp = (dir / "grid.stg1").string();
    save_grid(data, gp);
    auto grid2 = load_grid(gp);
    must(grid2.values.size() == data.values.size() &&
             std::memcmp(grid2.values.data(), data.values.data(), data.values.size() * sizeof(float)) == 0,
         "STG1 round trip changed the payload");
    must(grid2.meta.name == data.meta.name && grid2.meta.scale_factor == data.meta.scale_factor,
         "STG1 round trip lost metadata");

    // NTC1 round trip
    const std::string cp = (dir / "raw.ntc").string();
    save_checkpoint(a.best, a.meta, cp);
    auto ck = load_checkpoint(cp);
    must(ck.meta == a.meta, "NTC1 meta changed");
    must(ck.store.entries().size() == a.best.entries().size(), "NTC1 entry count changed");
    for (const auto& e : a.best.entries()) {
        const auto& r = ck.store.at(e.name);
        must(r.frozen == e.frozen && r.group == e.group && r.shape == e.shape &&
                 std::memcmp(r.data.data(), e.data.data(), e.data.size() * sizeof(float)) == 0,
             "NTC1 round trip changed tensor '" + e.name + "'");
    }
    fs::remove_all(dir);
    return "retrain bytes equal, checkpoint/STG1/NTC1 round trips bit-exact";
}

// ---------------------------------------------------------------------------
// 10. lambda = 0 severs the flow objective

std::string criterion_10() {
    auto cfg = testutil::micro_config();
    apply_ablation_variant(cfg, "full");
    ParamStore store;
    register_model(store, cfg);
    testutil::randomize_prompt_projections(store, 404);

    auto data = micro_dataset();
    auto splits = split_by_time(data, SplitSpec{});
    auto norm = fit_normalizer(splits.train);
    auto windows = make_windows(norm.apply(splits.train), cfg.hist, cfg.horizon, 1);

    double flow_head_norm2 = 0.0, flow_encoder_norm2 = 0.0;
    for (const auto& w : windows) {
        Tape<float> tape;
        Binder<float> bind(store, tape);
        auto model = bind_model(bind, cfg);
        auto hist = tape.leaf({w.history.steps, 1, w.history.height, w.history.width}, w.history.values, false);
        auto flow = tape.leaf({w.flow_history.steps, 1, w.flow_history.height, w.flow_history.width},
                              w.flow_history.values, false);
        auto fc = model_forward(model, hist, flow);
        must(fc.has_flow, "full model must run the flow branch");
        auto l_st = frame_norm_loss(fc.st, tape.leaf({w.target.steps, 1, w.target.height, w.target.width},
                                                     w.target.values, false));
        auto l_flow = frame_norm_loss(
            fc.flow,
            tape.leaf({w.flow_target.steps, 1, w.flow_target.height, w.flow_target.width}, w.flow_target.values,
                      false));
        auto total = combined_loss(l_st, l_flow, 0.0f);
        must(std::memcmp(total.data().data(), l_st.data().data(), sizeof(float)) == 0,
             "lambda=0 total is not bitwise l_st");
        tape.backward(total);
        for (const auto& e : store.entries()) {
            const auto* leaf = bind.find(e.name);
            if (!leaf) continue;
            const bool flow_head = e.name.rfind("flow.head.", 0) == 0 || e.name.rfind("flow.dec.", 0) == 0;
            const bool flow_enc = e.name.rfind("flow.te.", 0) == 0;
            if (!flow_head && !flow_enc) continue;
            for (double g : tape.grad(*leaf))
                (flow_head ? flow_head_norm2 : flow_encoder_norm2) += g * g;
        }
    }
    must(flow_head_norm2 == 0.0, "flow-head gradient norm is " + fmt(std::sqrt(flow_head_norm2)));
    // the flow encoder still matters through the prompts, so the epoch is real
    must(flow_encoder_norm2 > 0.0, "flow encoder got no gradient; the coupling is dead");
    return std::to_string(windows.size()) + " windows: total == l_st bitwise, flow-head grad norm exactly 0";
}

// ---------------------------------------------------------------------------

struct Criterion {
    int id;
    const char* name;
    std::function<std::string()> fn;
};

}  // namespace

int main() {
    const Criterion criteria[] = {
        {1, "gradient fidelity", criterion_1},
        {2, "equation-literal oracles", criterion_2},
        {3, "cross-prompt attention", criterion_3},
        {4, "flow derivation", criterion_4},
        {5, "frozen-backbone contract", criterion_5},
        {6, "learning signal", criterion_6},
        {7, "beats baselines", criterion_7},
        {8, "ablation ordering", criterion_8},
        {9, "determinism and persistence", criterion_9},
        {10, "lambda degeneracy", criterion_10},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string verdict, detail;
        try {
            detail = c.fn();
            verdict = "PASS";
        } catch (const std::exception& e) {
            detail = e.what();
            verdict = "FAIL";
            ++failures;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%2d] %-28s %s  (%.1fs)  %s\n", c.id, c.name, verdict.c_str(), secs, detail.c_str());
        std::fflush(stdout);
    }
    if (failures) std::printf("%d of 10 criteria failed\n", failures);
    else std::printf("all 10 criteria passed\n");
    return failures;
}
