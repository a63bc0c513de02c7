#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Spatio-temporal grid data model: STG1 file format, temporal-difference
// flow, windowing, contiguous time splits, per-channel normalization, and
// the synthetic generators used for desk-scale training runs.

namespace stvfm {

struct GridMeta {
    std::string name;
    double interval_minutes = 0.0;
    double scale_factor = 1.0;
};

// Dense C x H x W x T grid stored [t][c][h][w]. Values are immutable by
// convention once a grid leaves its producer. Dataset-level grids have
// T >= 2; window slices may be shorter (validate_dataset checks the former).
struct STGrid {
    std::size_t channels = 0, height = 0, width = 0, steps = 0;
    std::vector<float> values;
    GridMeta meta;

    STGrid() = default;
    STGrid(std::size_t c, std::size_t h, std::size_t w, std::size_t t);

    std::size_t frame_size() const { return channels * height * width; }
    std::size_t size() const { return frame_size() * steps; }

    std::size_t index(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const {
        return ((t * channels + c) * height + h) * width + w;
    }
    float at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const {
        return values[index(t, c, h, w)];
    }
    float& at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) {
        return values[index(t, c, h, w)];
    }

    const float* frame(std::size_t t) const { return values.data() + t * frame_size(); }
    float* frame(std::size_t t) { return values.data() + t * frame_size(); }

    // structural checks (dims >= 1, length match, finite values)
    void validate() const;
    // additionally requires T >= 2 (window slices are exempt)
    void validate_dataset() const;
};

struct WindowPair {
    STGrid history;       // P frames
    STGrid target;        // Q frames, starts exactly at history end
    STGrid flow_history;  // same shape as history
    STGrid flow_target;   // same shape as target
    std::size_t start = 0;  // index of the first history frame in the source grid
};

struct SplitSpec {
    double train_frac = 0.7;
    double val_frac = 0.15;
    double test_frac = 0.15;
};

struct Splits {
    STGrid train, val, test;
};

class Normalizer {
public:
    Normalizer() = default;
    Normalizer(std::vector<double> mean, std::vector<double> stddev);

    STGrid apply(const STGrid& g) const;
    STGrid invert(const STGrid& g) const;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return std_; }
    const std::vector<uint8_t>& floored_channels() const { return floored_; }

private:
    friend Normalizer fit_normalizer(const STGrid&);
    std::vector<double> mean_, std_;
    std::vector<uint8_t> floored_;
};

// d(t) = x(t) - x(t-1) with a zero frame prepended so both branches carry
// T frames
STGrid derive_flow(const STGrid& grid);

std::vector<WindowPair> make_windows(const STGrid& grid, std::size_t p, std::size_t q, std::size_t stride);

Splits split_by_time(const STGrid& grid, const SplitSpec& spec);

// per-channel z-score statistics over the training segment only; constant
// channels get a floored std of 1e-6 and a stderr warning
Normalizer fit_normalizer(const STGrid& train);

struct SynthParams {
    std::string kind;  // advection | diffusion | periodic
    std::size_t channels = 1, height = 8, width = 8, steps = 32;
    int velocity_x = 1, velocity_y = 0;  // advection, cells per step
    double sigma = 1.5;                  // blob width
    std::size_t blobs = 1;
    std::size_t period = 8;  // periodic
    double amplitude = 1.0;
};

STGrid synthesize(const SynthParams& params, uint64_t seed);

// STG1: magic "STG1", four LE u32 dims C,H,W,T, then C*H*W*T LE f32 in
// [t][c][h][w] order; meta travels in an optional <path>.json sidecar
STGrid load_grid(const std::string& path);
void save_grid(const STGrid& grid, const std::string& path);

} // namespace stvfm
