#include "kfcn/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "kfcn/rng.hpp"

namespace kfcn::synth {

namespace {

constexpr std::size_t kMinBoxSide = 8;

}  // namespace

void SceneSpec::validate() const {
    if (height == 0 || width == 0) throw ConfigError("SceneSpec: zero image size");
    for (const auto& box : boxes) {
        const auto [r0, c0, h, w] = std::array{box[0], box[1], box[2], box[3]};
        if (h < kMinBoxSide || w < kMinBoxSide) {
            throw ConfigError("SceneSpec: box smaller than minimum side " +
                              std::to_string(kMinBoxSide));
        }
        if (r0 + h > height || c0 + w > width) {
            throw ConfigError("SceneSpec: box exceeds image bounds");
        }
        if (2.0 * a_max + 2.0 * center_row_jitter + 2.0 > static_cast<double>(h) ||
            2.0 * b_max + 2.0 * center_col_jitter + 2.0 > static_cast<double>(w)) {
            throw ConfigError("SceneSpec: box too small for the shape family");
        }
    }
    if (!(noise_std >= 0.0)) throw ConfigError("SceneSpec: negative noise std");
    if (!(a_min > 0 && a_max >= a_min && b_min > 0 && b_max >= b_min)) {
        throw ConfigError("SceneSpec: bad semi-axis ranges");
    }
}

namespace {

SynthSample renderSample(const SceneSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t H = spec.height, W = spec.width;

    SynthSample s{Tensor({H, W}, spec.bg_level), Tensor({H, W}, 0.0)};

    for (std::size_t obj = 0; obj < 2; ++obj) {
        const auto& box = spec.boxes[obj];
        const double r0 = static_cast<double>(box[0]), c0 = static_cast<double>(box[1]);
        const double bh = static_cast<double>(box[2]), bw = static_cast<double>(box[3]);

        const double cy = r0 + bh / 2.0 + (2.0 * unif(rng) - 1.0) * spec.center_row_jitter;
        const double cx = c0 + bw / 2.0 + (2.0 * unif(rng) - 1.0) * spec.center_col_jitter;
        double a = spec.a_min + unif(rng) * (spec.a_max - spec.a_min);
        double b = spec.b_min + unif(rng) * (spec.b_max - spec.b_min);
        // Clamp so the support stays strictly inside the box.
        a = std::min({a, cy - r0 - 1.0, r0 + bh - 1.0 - cy});
        b = std::min({b, cx - c0 - 1.0, c0 + bw - 1.0 - cx});
        if (a < 2.0 || b < 2.0) {
            throw ConfigError("SceneSpec: box too small for the shape family");
        }
        const double level = spec.obj_level + (2.0 * unif(rng) - 1.0) * spec.obj_level_jitter;

        // Class 2 carries the distinguishing detail: a bite at the object
        // top. Top placement keeps the notch where a left-right mirror
        // cannot move it.
        const bool notched = obj == 1;
        const double ny = cy - 0.9 * a;
        const double nx = cx;
        const double nr = spec.notch_radius_frac * b;

        for (std::size_t i = box[0]; i < box[0] + box[2]; ++i) {
            for (std::size_t j = box[1]; j < box[1] + box[3]; ++j) {
                const double dy = (static_cast<double>(i) - cy) / a;
                const double dx = (static_cast<double>(j) - cx) / b;
                if (dy * dy + dx * dx > 1.0) continue;
                if (notched) {
                    const double qy = static_cast<double>(i) - ny;
                    const double qx = static_cast<double>(j) - nx;
                    if (qy * qy + qx * qx <= nr * nr) continue;
                }
                s.image.at(i, j) = level;
                s.mask.at(i, j) = static_cast<double>(obj + 1);
            }
        }
    }

    for (std::size_t i = 0; i < s.image.size(); ++i) {
        const double noisy = s.image[i] + spec.noise_std * gauss(rng);
        s.image[i] = std::min(1.0, std::max(0.0, noisy));
    }
    return s;
}

std::vector<std::size_t> shuffledIndices(std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = substream(seed, 0xC0FFEE);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Dataset generateImpl(const SceneSpec& spec, std::size_t count, const SplitCounts* split,
                     std::uint64_t seed) {
    spec.validate();
    if (count < 3) throw ConfigError("generate_dataset: count must be >= 3");

    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto rng = substream(seed, i + 1);
        ds.samples.push_back(renderSample(spec, rng));
    }

    const std::vector<std::size_t> idx = shuffledIndices(count, seed);
    std::size_t nTrain, nVal;
    if (split) {
        nTrain = split->train;
        nVal = split->val;
    } else {
        nTrain = static_cast<std::size_t>(0.70 * static_cast<double>(count));
        nVal = static_cast<std::size_t>(0.15 * static_cast<double>(count));
        const std::size_t nTest = nVal;
        nTrain = count - nVal - nTest;  // remainder goes to train
    }
    ds.train.assign(idx.begin(), idx.begin() + nTrain);
    ds.val.assign(idx.begin() + nTrain, idx.begin() + nTrain + nVal);
    ds.test.assign(idx.begin() + nTrain + nVal, idx.end());
    return ds;
}

}  // namespace

Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
    return generateImpl(spec, count, nullptr, seed);
}

Dataset generate_dataset(const SceneSpec& spec, const SplitCounts& split, std::uint64_t seed) {
    const std::size_t count = split.train + split.val + split.test;
    if (split.train == 0 || split.test == 0) {
        throw ConfigError("generate_dataset: train and test splits must be nonempty");
    }
    return generateImpl(spec, count, &split, seed);
}

SynthSample flip_lr(const SynthSample& sample) {
    return {flip_columns(sample.image), flip_columns(sample.mask)};
}

void write_pgm(const std::string& path, const Tensor& t, std::size_t maxval, double scale) {
    if (t.rank() != 2) throw ArgumentError("write_pgm: expected HxW tensor");
    if (maxval == 0 || maxval > 255) throw ArgumentError("write_pgm: maxval must be in [1, 255]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("write_pgm: cannot open " + path);
    f << "P5\n" << t.dim(1) << " " << t.dim(0) << "\n" << maxval << "\n";
    std::vector<unsigned char> row(t.dim(1));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        for (std::size_t j = 0; j < t.dim(1); ++j) {
            const double v = std::round(t.at(i, j) * scale);
            row[j] = static_cast<unsigned char>(
                std::min(static_cast<double>(maxval), std::max(0.0, v)));
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

Tensor read_pgm(const std::string& path, double scale) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("read_pgm: cannot open " + path);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || w == 0 || h == 0 || maxval == 0 || maxval > 255) {
        throw ArgumentError("read_pgm: unsupported PGM header in " + path);
    }
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(w * h);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw ArgumentError("read_pgm: truncated file " + path);
    Tensor t({h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<double>(raw[i]) / scale;
    return t;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = ds.seed;
    manifest["count"] = ds.samples.size();
    manifest["spec"] = {
        {"height", ds.spec.height},       {"width", ds.spec.width},
        {"bg_level", ds.spec.bg_level},   {"obj_level", ds.spec.obj_level},
        {"noise_std", ds.spec.noise_std}, {"boxes", ds.spec.boxes},
    };
    manifest["splits"] = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        std::ostringstream img, msk;
        img << "sample_" << i << "_image.pgm";
        msk << "sample_" << i << "_mask.pgm";
        write_pgm(dir + "/" + img.str(), ds.samples[i].image, 255, 255.0);
        write_pgm(dir + "/" + msk.str(), ds.samples[i].mask, 2, 1.0);
        files.push_back({{"image", img.str()}, {"mask", msk.str()}});
    }
    manifest["files"] = files;
    std::ofstream f(dir + "/manifest.json", std::ios::binary);
    f << manifest.dump(2) << "\n";
}

}  // namespace kfcn::synth
