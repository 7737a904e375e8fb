#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kfcn/tensor.hpp"

namespace kfcn::synth {

/// Two-object scene: a filled ellipse on the left and an ellipse with a bite
/// taken out of its top on the right. Both share intensity statistics, so
/// the classes differ only in a shape detail.
struct SceneSpec {
    std::size_t height = 64, width = 64;
    // (row0, col0, h, w); object j stays inside box j.
    std::array<std::array<std::size_t, 4>, 2> boxes{{{0, 0, 64, 32}, {0, 32, 64, 32}}};
    double bg_level = 0.15;
    double obj_level = 0.70;
    double obj_level_jitter = 0.10;
    double noise_std = 0.03;
    double a_min = 9, a_max = 13;  // semi-axis along rows
    double b_min = 6, b_max = 9;   // semi-axis along cols
    double center_row_jitter = 4, center_col_jitter = 3;
    double notch_radius_frac = 0.6;  // bite radius as fraction of b
    void validate() const;
};

struct SynthSample {
    Tensor image;  // (H, W) in [0, 1]
    Tensor mask;   // (H, W) integer labels: 0 background, 1 left, 2 right
};

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

struct Dataset {
    std::vector<SynthSample> samples;
    std::vector<std::size_t> train, val, test;  // sample indices
    SceneSpec spec;
    std::uint64_t seed = 0;
};

/// Deterministic for (spec, count, seed): sample i is drawn from RNG
/// substream i. Split is 70/15/15 by index after a seeded shuffle
/// (remainder goes to train).
Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed);

/// Same generator with explicit split sizes (count = train + val + test).
Dataset generate_dataset(const SceneSpec& spec, const SplitCounts& split, std::uint64_t seed);

/// Mirrors image and mask about the vertical axis; labels travel with their
/// object, so box roles exchange.
SynthSample flip_lr(const SynthSample& sample);

/// Binary PGM (P5). Images are scaled by maxval and rounded; masks should be
/// written with maxval = number of classes - 1 so labels round-trip exactly.
void write_pgm(const std::string& path, const Tensor& t, std::size_t maxval, double scale);
Tensor read_pgm(const std::string& path, double scale);

/// Writes image/mask PGM pairs plus a manifest JSON naming files, split
/// assignment, spec and seed.
void write_dataset(const std::string& dir, const Dataset& ds);

}  // namespace kfcn::synth
