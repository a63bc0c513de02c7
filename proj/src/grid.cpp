#include "stvfm/grid.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "stvfm/error.hpp"
#include "stvfm/kernels.hpp"
#include "stvfm/rng.hpp"

namespace stvfm {

namespace {

constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 31;

int wrap(int x, int m) {
    const int r = x % m;
    return r < 0 ? r + m : r;
}

// minimal toroidal offset between two cell indices
int torus_delta(std::size_t a, std::size_t b, std::size_t m) {
    int d = std::abs(static_cast<int>(a) - static_cast<int>(b));
    return std::min(d, static_cast<int>(m) - d);
}

} // namespace

STGrid::STGrid(std::size_t c, std::size_t h, std::size_t w, std::size_t t)
    : channels(c), height(h), width(w), steps(t), values(c * h * w * t, 0.0f) {
    if (c < 1 || h < 1 || w < 1 || t < 1)
        fail(ErrorCode::Invalid, "grid dimensions must be positive, got C=" + std::to_string(c) +
                                     " H=" + std::to_string(h) + " W=" + std::to_string(w) +
                                     " T=" + std::to_string(t));
}

void STGrid::validate() const {
    if (channels < 1 || height < 1 || width < 1 || steps < 1)
        fail(ErrorCode::Invalid, "grid dimensions must be positive");
    if (values.size() != size())
        fail(ErrorCode::ShapeMismatch, "grid holds " + std::to_string(values.size()) + " values, shape implies " +
                                           std::to_string(size()));
    for (float v : values)
        if (!std::isfinite(v)) fail(ErrorCode::Numeric, "grid contains a non-finite value");
}

void STGrid::validate_dataset() const {
    validate();
    if (steps < 2) fail(ErrorCode::Invalid, "dataset grid needs T >= 2, got T=" + std::to_string(steps));
}

STGrid derive_flow(const STGrid& grid) {
    if (grid.steps < 2) fail(ErrorCode::Invalid, "derive_flow needs T >= 2, got T=" + std::to_string(grid.steps));
    STGrid out(grid.channels, grid.height, grid.width, grid.steps);
    out.meta = grid.meta;
    const std::size_t fs = grid.frame_size();
    // frame 0 stays zero: the difference sequence is one frame short, and a
    // leading zero keeps both branches the same length
    for (std::size_t t = 1; t < grid.steps; ++t)
        kernels::sub(grid.frame(t), grid.frame(t - 1), out.frame(t), fs);
    return out;
}

namespace {

STGrid copy_frames(const STGrid& src, std::size_t start, std::size_t count) {
    STGrid out(src.channels, src.height, src.width, count);
    out.meta = src.meta;
    std::memcpy(out.values.data(), src.frame(start), count * src.frame_size() * sizeof(float));
    return out;
}

// difference frames over [start, start+count); a frame whose predecessor
// falls before the dataset start is left zero
STGrid diff_frames(const STGrid& src, std::size_t start, std::size_t count) {
    STGrid out(src.channels, src.height, src.width, count);
    out.meta = src.meta;
    const std::size_t fs = src.frame_size();
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t t = start + i;
        if (t == 0) continue;
        kernels::sub(src.frame(t), src.frame(t - 1), out.frame(i), fs);
    }
    return out;
}

} // namespace

std::vector<WindowPair> make_windows(const STGrid& grid, std::size_t p, std::size_t q, std::size_t stride) {
    if (p < 1 || q < 1) fail(ErrorCode::Invalid, "window needs P >= 1 and Q >= 1");
    if (stride < 1) fail(ErrorCode::Invalid, "stride must be >= 1");
    if (p + q > grid.steps)
        fail(ErrorCode::Invalid, "window P+Q=" + std::to_string(p + q) + " exceeds T=" + std::to_string(grid.steps));
    const std::size_t count = (grid.steps - p - q) / stride + 1;
    std::vector<WindowPair> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t s = k * stride;
        WindowPair w;
        w.start = s;
        w.history = copy_frames(grid, s, p);
        w.target = copy_frames(grid, s + p, q);
        w.flow_history = diff_frames(grid, s, p);
        w.flow_target = diff_frames(grid, s + p, q);
        out.push_back(std::move(w));
    }
    return out;
}

Splits split_by_time(const STGrid& grid, const SplitSpec& spec) {
    if (spec.train_frac <= 0 || spec.val_frac <= 0 || spec.test_frac <= 0)
        fail(ErrorCode::Invalid, "split fractions must be positive");
    const double sum = spec.train_frac + spec.val_frac + spec.test_frac;
    if (std::fabs(sum - 1.0) > 1e-9)
        fail(ErrorCode::Invalid, "split fractions sum to " + std::to_string(sum) + ", expected 1");
    const double t = static_cast<double>(grid.steps);
    const auto n1 = static_cast<std::size_t>(std::floor(spec.train_frac * t + 1e-9));
    const auto n2 = static_cast<std::size_t>(std::floor((spec.train_frac + spec.val_frac) * t + 1e-9));
    Splits s;
    s.train = copy_frames(grid, 0, n1);
    s.val = copy_frames(grid, n1, n2 - n1);
    s.test = copy_frames(grid, n2, grid.steps - n2);
    return s;
}

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)), floored_(mean_.size(), 0) {
    if (mean_.size() != std_.size()) fail(ErrorCode::ShapeMismatch, "normalizer mean/std length mismatch");
    for (double s : std_)
        if (s < 1e-6) fail(ErrorCode::Invalid, "normalizer std below floor");
}

Normalizer fit_normalizer(const STGrid& train) {
    train.validate();
    const std::size_t c_n = train.channels, hw = train.height * train.width;
    const double n = static_cast<double>(train.steps * hw);
    Normalizer norm;
    norm.mean_.assign(c_n, 0.0);
    norm.std_.assign(c_n, 0.0);
    norm.floored_.assign(c_n, 0);
    for (std::size_t c = 0; c < c_n; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < train.steps; ++t) {
            const float* f = train.frame(t) + c * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += f[i];
        }
        const double mean = acc / n;
        double var = 0.0;
        for (std::size_t t = 0; t < train.steps; ++t) {
            const float* f = train.frame(t) + c * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = f[i] - mean;
                var += d * d;
            }
        }
        double stddev = std::sqrt(var / n);
        norm.mean_[c] = mean;
        if (stddev < 1e-6) {
            stddev = 1e-6;
            norm.floored_[c] = 1;
            std::fprintf(stderr, "warning: channel %zu is constant on the fitting data; std floored at 1e-6\n", c);
        }
        norm.std_[c] = stddev;
    }
    return norm;
}

STGrid Normalizer::apply(const STGrid& g) const {
    if (g.channels != mean_.size())
        fail(ErrorCode::ShapeMismatch, "normalizer fitted for " + std::to_string(mean_.size()) +
                                           " channels, grid has " + std::to_string(g.channels));
    STGrid out(g.channels, g.height, g.width, g.steps);
    out.meta = g.meta;
    const std::size_t hw = g.height * g.width;
    for (std::size_t t = 0; t < g.steps; ++t)
        for (std::size_t c = 0; c < g.channels; ++c) {
            const float* src = g.frame(t) + c * hw;
            float* dst = out.frame(t) + c * hw;
            for (std::size_t i = 0; i < hw; ++i)
                dst[i] = static_cast<float>((src[i] - mean_[c]) / std_[c]);
        }
    return out;
}

STGrid Normalizer::invert(const STGrid& g) const {
    if (g.channels != mean_.size())
        fail(ErrorCode::ShapeMismatch, "normalizer fitted for " + std::to_string(mean_.size()) +
                                           " channels, grid has " + std::to_string(g.channels));
    STGrid out(g.channels, g.height, g.width, g.steps);
    out.meta = g.meta;
    const std::size_t hw = g.height * g.width;
    for (std::size_t t = 0; t < g.steps; ++t)
        for (std::size_t c = 0; c < g.channels; ++c) {
            const float* src = g.frame(t) + c * hw;
            float* dst = out.frame(t) + c * hw;
            for (std::size_t i = 0; i < hw; ++i)
                dst[i] = static_cast<float>(src[i] * std_[c] + mean_[c]);
        }
    return out;
}

namespace {

struct Blob {
    int ch, cw;
    double amp;
};

std::vector<Blob> draw_blobs(Rng& rng, const SynthParams& p) {
    std::vector<Blob> blobs(p.blobs);
    for (auto& b : blobs) {
        b.ch = static_cast<int>(rng.below(static_cast<uint32_t>(p.height)));
        b.cw = static_cast<int>(rng.below(static_cast<uint32_t>(p.width)));
        b.amp = p.amplitude * (0.5 + rng.uniform());
    }
    return blobs;
}

void render_blobs(STGrid& g, std::size_t t, std::size_t c, const std::vector<Blob>& blobs, int shift_h,
                  int shift_w, double sigma) {
    const int h_n = static_cast<int>(g.height), w_n = static_cast<int>(g.width);
    for (int h = 0; h < h_n; ++h)
        for (int w = 0; w < w_n; ++w) {
            double v = 0.0;
            for (const Blob& b : blobs) {
                const int bh = wrap(b.ch + shift_h, h_n);
                const int bw = wrap(b.cw + shift_w, w_n);
                const int dh = torus_delta(static_cast<std::size_t>(h), static_cast<std::size_t>(bh), g.height);
                const int dw = torus_delta(static_cast<std::size_t>(w), static_cast<std::size_t>(bw), g.width);
                v += b.amp * std::exp(-(dh * dh + dw * dw) / (2.0 * sigma * sigma));
            }
            g.at(t, c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)) = static_cast<float>(v);
        }
}

STGrid synth_advection(const SynthParams& p, Rng& rng) {
    STGrid g(p.channels, p.height, p.width, p.steps);
    for (std::size_t c = 0; c < p.channels; ++c) {
        const auto blobs = draw_blobs(rng, p);
        // the whole field translates by (vy, vx) each step, so frame t+1 is
        // an exact toroidal shift of frame t
        for (std::size_t t = 0; t < p.steps; ++t)
            render_blobs(g, t, c, blobs, p.velocity_y * static_cast<int>(t), p.velocity_x * static_cast<int>(t),
                         p.sigma);
    }
    return g;
}

STGrid synth_diffusion(const SynthParams& p, Rng& rng) {
    STGrid g(p.channels, p.height, p.width, p.steps);
    // normalized 3x3 kernel; weights are exact binary fractions summing to 1
    static const double kern[3][3] = {{1.0 / 16, 2.0 / 16, 1.0 / 16},
                                      {2.0 / 16, 4.0 / 16, 2.0 / 16},
                                      {1.0 / 16, 2.0 / 16, 1.0 / 16}};
    const int h_n = static_cast<int>(p.height), w_n = static_cast<int>(p.width);
    for (std::size_t c = 0; c < p.channels; ++c) {
        const auto blobs = draw_blobs(rng, p);
        render_blobs(g, 0, c, blobs, 0, 0, p.sigma);
        for (std::size_t t = 1; t < p.steps; ++t)
            for (int h = 0; h < h_n; ++h)
                for (int w = 0; w < w_n; ++w) {
                    double acc = 0.0;
                    for (int dh = -1; dh <= 1; ++dh)
                        for (int dw = -1; dw <= 1; ++dw)
                            acc += kern[dh + 1][dw + 1] *
                                   g.at(t - 1, c, static_cast<std::size_t>(wrap(h + dh, h_n)),
                                        static_cast<std::size_t>(wrap(w + dw, w_n)));
                    g.at(t, c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)) =
                        static_cast<float>(acc);
                }
    }
    return g;
}

STGrid synth_periodic(const SynthParams& p, Rng& rng) {
    if (p.period < 1) fail(ErrorCode::Invalid, "periodic kind needs period >= 1");
    STGrid g(p.channels, p.height, p.width, p.steps);
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t c = 0; c < p.channels; ++c) {
        const double fh = 1.0 + rng.below(3);
        const double fw = 1.0 + rng.below(3);
        const double ph = two_pi * rng.uniform();
        const double pw = two_pi * rng.uniform();
        std::vector<double> pattern(p.height * p.width);
        for (std::size_t h = 0; h < p.height; ++h)
            for (std::size_t w = 0; w < p.width; ++w)
                pattern[h * p.width + w] =
                    p.amplitude * (0.5 + 0.5 * std::sin(two_pi * fh * h / p.height + ph) *
                                             std::sin(two_pi * fw * w / p.width + pw));
        for (std::size_t t = 0; t < p.steps; ++t) {
            // the phase depends on t only through t mod period, making
            // frames exactly periodic
            const double m = 1.25 + std::sin(two_pi * static_cast<double>(t % p.period) /
                                             static_cast<double>(p.period));
            for (std::size_t h = 0; h < p.height; ++h)
                for (std::size_t w = 0; w < p.width; ++w)
                    g.at(t, c, h, w) = static_cast<float>(pattern[h * p.width + w] * m);
        }
    }
    return g;
}

} // namespace

STGrid synthesize(const SynthParams& params, uint64_t seed) {
    if (params.channels < 1 || params.height < 1 || params.width < 1)
        fail(ErrorCode::Invalid, "synthesize needs positive dimensions");
    if (params.steps < 2) fail(ErrorCode::Invalid, "synthesize needs T >= 2");
    Rng rng(seed);
    STGrid g;
    if (params.kind == "advection")
        g = synth_advection(params, rng);
    else if (params.kind == "diffusion")
        g = synth_diffusion(params, rng);
    else if (params.kind == "periodic")
        g = synth_periodic(params, rng);
    else
        fail(ErrorCode::Invalid, "unknown synthetic kind '" + params.kind + "'");
    g.meta.name = params.kind;
    g.validate_dataset();
    return g;
}

namespace {

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& buf, std::size_t off) {
    return static_cast<uint32_t>(static_cast<unsigned char>(buf[off])) |
           static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8 |
           static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16 |
           static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24;
}

} // namespace

void save_grid(const STGrid& grid, const std::string& path) {
    grid.validate_dataset();
    std::string buf;
    buf.reserve(20 + grid.size() * 4);
    buf += "STG1";
    put_u32(buf, static_cast<uint32_t>(grid.channels));
    put_u32(buf, static_cast<uint32_t>(grid.height));
    put_u32(buf, static_cast<uint32_t>(grid.width));
    put_u32(buf, static_cast<uint32_t>(grid.steps));
    for (float v : grid.values) put_u32(buf, std::bit_cast<uint32_t>(v));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Invalid, "cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::Invalid, "short write to '" + path + "'");

    nlohmann::json meta{{"name", grid.meta.name},
                        {"interval_minutes", grid.meta.interval_minutes},
                        {"scale_factor", grid.meta.scale_factor}};
    std::ofstream side(path + ".json", std::ios::trunc);
    if (!side) fail(ErrorCode::Invalid, "cannot open '" + path + ".json' for writing");
    side << meta.dump(2) << "\n";
}

STGrid load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Invalid, "cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4) fail(ErrorCode::Truncated, "'" + path + "' is shorter than the magic");
    if (buf.compare(0, 4, "STG1") != 0)
        fail(ErrorCode::BadMagic, "'" + path + "' does not start with STG1");
    if (buf.size() < 20) fail(ErrorCode::Truncated, "'" + path + "' header is truncated");
    const std::uint64_t c = get_u32(buf, 4), h = get_u32(buf, 8), w = get_u32(buf, 12), t = get_u32(buf, 16);
    if (c < 1 || h < 1 || w < 1 || t < 2)
        fail(ErrorCode::Invalid, "'" + path + "' declares degenerate dimensions");
    std::uint64_t total = c;
    for (std::uint64_t d : {h, w, t}) {
        total *= d;
        if (total > kMaxElements)
            fail(ErrorCode::DimOverflow, "'" + path + "' dimensions overflow the element cap");
    }
    if (buf.size() < 20 + total * 4)
        fail(ErrorCode::Truncated, "'" + path + "' payload holds " + std::to_string((buf.size() - 20) / 4) +
                                       " values, header implies " + std::to_string(total));
    STGrid g(c, h, w, t);
    for (std::uint64_t i = 0; i < total; ++i)
        g.values[i] = std::bit_cast<float>(get_u32(buf, 20 + i * 4));
    std::ifstream side(path + ".json");
    if (side) {
        nlohmann::json meta;
        try {
            side >> meta;
        } catch (const std::exception& e) {
            fail(ErrorCode::Config, "sidecar '" + path + ".json' is not valid JSON: " + e.what());
        }
        g.meta.name = meta.value("name", std::string{});
        g.meta.interval_minutes = meta.value("interval_minutes", 0.0);
        g.meta.scale_factor = meta.value("scale_factor", 1.0);
    }
    g.validate_dataset();
    return g;
}

} // namespace stvfm
