#include "kfcn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "kfcn/parallel.hpp"

namespace kfcn::pipeline {

namespace {

constexpr std::size_t kMinBoxSide = 8;

}  // namespace

void PipelineConfig::validate(std::size_t image_h, std::size_t image_w) const {
    if (n == 0) throw ConfigError("PipelineConfig: n must be >= 1");
    if (regions.size() != n) {
        throw ConfigError("PipelineConfig: expected " + std::to_string(n) + " regions, got " +
                          std::to_string(regions.size()));
    }
    if (patch_h < 2 || patch_w < 2) throw ConfigError("PipelineConfig: patch shape too small");
    if (patch_h % 2 != 0 || patch_w % 2 != 0) {
        throw ConfigError("PipelineConfig: patch dims must be even for the small FCN");
    }
    if (overlap != "average") throw ConfigError("PipelineConfig: unknown overlap policy " + overlap);
    for (const RegionSpec& r : regions) {
        if (r.height < kMinBoxSide || r.width < kMinBoxSide) {
            throw ConfigError("PipelineConfig: box side below minimum " + std::to_string(kMinBoxSide));
        }
        if (r.row0 + r.height > image_h || r.col0 + r.width > image_w) {
            throw ConfigError("PipelineConfig: box out of image bounds");
        }
        if (r.class_label < 1 || r.class_label > n) {
            throw ConfigError("PipelineConfig: region class must be in [1, n]");
        }
    }
}

net::NetworkSpec PipelineConfig::regionNetSpec() const {
    return net::make_small_fcn(patch_h, patch_w, numClasses(), channels, kernel);
}

net::NetworkSpec PipelineConfig::baselineNetSpec(std::size_t image_h, std::size_t image_w) const {
    return net::make_small_fcn(image_h, image_w, numClasses(), channels, kernel);
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pipeline config: invalid JSON: ") + e.what());
    }
    PipelineConfig cfg;
    try {
        cfg.n = j.at("n").get<std::size_t>();
        cfg.patch_h = j.at("patch").at(0).get<std::size_t>();
        cfg.patch_w = j.at("patch").at(1).get<std::size_t>();
        std::size_t index = 1;
        for (const auto& r : j.at("regions")) {
            RegionSpec rs;
            rs.row0 = r.at("box").at(0).get<std::size_t>();
            rs.col0 = r.at("box").at(1).get<std::size_t>();
            rs.height = r.at("box").at(2).get<std::size_t>();
            rs.width = r.at("box").at(3).get<std::size_t>();
            rs.class_label = r.at("class").get<std::size_t>();
            rs.region_index = index++;
            cfg.regions.push_back(rs);
        }
        if (j.contains("overlap")) cfg.overlap = j.at("overlap").get<std::string>();
        if (j.contains("channels")) cfg.channels = j.at("channels").get<std::size_t>();
        if (j.contains("kernel")) cfg.kernel = j.at("kernel").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pipeline config: missing key: ") + e.what());
    }
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("pipeline config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_pipeline_config(text);
}

namespace {

Tensor cropImage(const Tensor& image, const RegionSpec& r) {
    Tensor out({r.height, r.width});
    for (std::size_t i = 0; i < r.height; ++i) {
        for (std::size_t j = 0; j < r.width; ++j) {
            out.at(i, j) = image.at(r.row0 + i, r.col0 + j);
        }
    }
    return out;
}

}  // namespace

std::vector<Tensor> extract_patches(const Tensor& image, const PipelineConfig& cfg) {
    if (image.rank() != 2) throw DimensionError("extract_patches: expected HxW image");
    cfg.validate(image.dim(0), image.dim(1));
    std::vector<Tensor> patches;
    patches.reserve(cfg.regions.size());
    for (const RegionSpec& r : cfg.regions) {
        patches.push_back(resize_bilinear(cropImage(image, r), cfg.patch_h, cfg.patch_w));
    }
    return patches;
}

Tensor sew_up(const std::vector<std::pair<RegionSpec, Tensor>>& box_probmaps, std::size_t image_h,
              std::size_t image_w, std::size_t num_classes) {
    for (const auto& [r, p] : box_probmaps) {
        if (p.rank() != 3 || p.dim(0) != num_classes) {
            throw ArgumentError("sew_up: box probability map must have " +
                                std::to_string(num_classes) + " channels, got " + p.shapeString());
        }
        if (p.dim(1) != r.height || p.dim(2) != r.width) {
            throw DimensionError("sew_up: box map " + p.shapeString() + " does not match box size");
        }
        if (r.row0 + r.height > image_h || r.col0 + r.width > image_w) {
            throw ArgumentError("sew_up: box out of image bounds");
        }
    }

    // Fold regions in region_index order so permuting the input list cannot
    // change the floating-point result.
    std::vector<const std::pair<RegionSpec, Tensor>*> ordered;
    ordered.reserve(box_probmaps.size());
    for (const auto& bp : box_probmaps) ordered.push_back(&bp);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->first.region_index < b->first.region_index; });

    Tensor acc({num_classes, image_h, image_w}, 0.0);
    Tensor cover({image_h, image_w}, 0.0);
    for (const auto* bp : ordered) {
        const RegionSpec& r = bp->first;
        const Tensor& p = bp->second;
        for (std::size_t i = 0; i < r.height; ++i) {
            for (std::size_t j = 0; j < r.width; ++j) {
                cover.at(r.row0 + i, r.col0 + j) += 1.0;
                for (std::size_t c = 0; c < num_classes; ++c) {
                    acc.at(c, r.row0 + i, r.col0 + j) += p.at(c, i, j);
                }
            }
        }
    }

    Tensor out({num_classes, image_h, image_w}, 0.0);
    for (std::size_t i = 0; i < image_h; ++i) {
        for (std::size_t j = 0; j < image_w; ++j) {
            const double k = cover.at(i, j);
            if (k == 0.0) {
                out.at(0, i, j) = 1.0;  // outside every box: background
            } else if (k == 1.0) {
                for (std::size_t c = 0; c < num_classes; ++c) out.at(c, i, j) = acc.at(c, i, j);
            } else {
                double sum = 0.0;
                for (std::size_t c = 0; c < num_classes; ++c) sum += acc.at(c, i, j);
                for (std::size_t c = 0; c < num_classes; ++c) {
                    out.at(c, i, j) = acc.at(c, i, j) / sum;
                }
            }
        }
    }
    return out;
}

namespace {

Tensor labelsFromProb(const Tensor& prob) {
    const std::size_t K = prob.dim(0), H = prob.dim(1), W = prob.dim(2);
    Tensor labels({H, W});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            std::size_t best = 0;
            double bv = prob.at(0, i, j);
            for (std::size_t c = 1; c < K; ++c) {
                if (prob.at(c, i, j) > bv) {
                    bv = prob.at(c, i, j);
                    best = c;
                }
            }
            labels.at(i, j) = static_cast<double>(best);
        }
    }
    return labels;
}

/// Resize the (K, h, w) probability tensor to the box size. Identity shapes
/// pass through untouched; a real resample renormalizes each pixel because
/// bilinear interpolation perturbs channel sums.
Tensor resizeProbMap(const Tensor& prob, std::size_t out_h, std::size_t out_w) {
    const std::size_t K = prob.dim(0);
    if (prob.dim(1) == out_h && prob.dim(2) == out_w) return prob;
    Tensor out({K, out_h, out_w});
    for (std::size_t c = 0; c < K; ++c) {
        Tensor chan({prob.dim(1), prob.dim(2)});
        std::copy(prob.data() + c * chan.size(), prob.data() + (c + 1) * chan.size(), chan.data());
        const Tensor resized = resize_bilinear(chan, out_h, out_w);
        std::copy(resized.data(), resized.data() + resized.size(), out.data() + c * resized.size());
    }
    for (std::size_t p = 0; p < out_h * out_w; ++p) {
        double sum = 0.0;
        for (std::size_t c = 0; c < K; ++c) sum += out[c * out_h * out_w + p];
        for (std::size_t c = 0; c < K; ++c) out[c * out_h * out_w + p] /= sum;
    }
    return out;
}

}  // namespace

SegmentationResult kfcn_predict(const Tensor& image, const PipelineConfig& cfg,
                                const std::vector<net::Parameters>& region_params) {
    if (region_params.size() != cfg.n) {
        throw ArgumentError("kfcn_predict: expected " + std::to_string(cfg.n) + " parameter sets");
    }
    const net::NetworkSpec spec = cfg.regionNetSpec();
    const std::vector<Tensor> patches = extract_patches(image, cfg);
    std::vector<std::pair<RegionSpec, Tensor>> boxMaps;
    boxMaps.reserve(cfg.n);
    for (std::size_t r = 0; r < cfg.n; ++r) {
        const Tensor prob = net::forward(spec, region_params[r], patches[r]);
        boxMaps.emplace_back(cfg.regions[r],
                             resizeProbMap(prob, cfg.regions[r].height, cfg.regions[r].width));
    }
    SegmentationResult res;
    res.prob = sew_up(boxMaps, image.dim(0), image.dim(1), cfg.numClasses());
    res.labels = labelsFromProb(res.prob);
    return res;
}

SegmentationResult baseline_fcn_predict(const Tensor& image, const net::NetworkSpec& spec,
                                        const net::Parameters& params) {
    if (image.dim(0) != spec.in_h || image.dim(1) != spec.in_w) {
        throw DimensionError("baseline_fcn_predict: image " + image.shapeString() +
                             " does not match spec input");
    }
    SegmentationResult res;
    res.prob = net::forward(spec, params, image);
    res.labels = labelsFromProb(res.prob);
    return res;
}

Tensor one_hot(const Tensor& mask, std::size_t num_classes) {
    if (mask.rank() != 2) throw DimensionError("one_hot: expected HxW mask");
    Tensor out({num_classes, mask.dim(0), mask.dim(1)}, 0.0);
    for (std::size_t i = 0; i < mask.dim(0); ++i) {
        for (std::size_t j = 0; j < mask.dim(1); ++j) {
            const auto c = static_cast<std::size_t>(std::llround(mask.at(i, j)));
            if (c >= num_classes) {
                throw ArgumentError("one_hot: label " + std::to_string(c) + " out of range");
            }
            out.at(c, i, j) = 1.0;
        }
    }
    return out;
}

std::vector<net::Sample> region_training_set(const synth::Dataset& ds,
                                             const std::vector<std::size_t>& indices,
                                             const PipelineConfig& cfg, std::size_t region) {
    const RegionSpec& r = cfg.regions.at(region);
    std::vector<net::Sample> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        const synth::SynthSample& s = ds.samples.at(idx);
        const Tensor patch = resize_bilinear(cropImage(s.image, r), cfg.patch_h, cfg.patch_w);
        const Tensor maskCrop = resize_nearest(cropImage(s.mask, r), cfg.patch_h, cfg.patch_w);
        net::Sample sample;
        sample.x = Tensor::fromData({1, cfg.patch_h, cfg.patch_w}, patch.toVector());
        sample.y = one_hot(maskCrop, cfg.numClasses());
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<net::Sample> whole_image_set(const synth::Dataset& ds,
                                         const std::vector<std::size_t>& indices,
                                         std::size_t num_classes) {
    std::vector<net::Sample> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        const synth::SynthSample& s = ds.samples.at(idx);
        net::Sample sample;
        sample.x = Tensor::fromData({1, s.image.dim(0), s.image.dim(1)}, s.image.toVector());
        sample.y = one_hot(s.mask, num_classes);
        out.push_back(std::move(sample));
    }
    return out;
}

TrainedPipeline train_all(const synth::Dataset& ds, const PipelineConfig& cfg,
                          const net::TrainConfig& tc) {
    cfg.validate(ds.spec.height, ds.spec.width);

    TrainedPipeline tp;
    tp.cfg = cfg;
    tp.region_spec = cfg.regionNetSpec();
    tp.baseline_spec = cfg.baselineNetSpec(ds.spec.height, ds.spec.width);

    for (std::size_t r = 0; r < cfg.n; ++r) {
        const auto trainSet = region_training_set(ds, ds.train, cfg, r);
        const auto valSet = region_training_set(ds, ds.val, cfg, r);
        net::TrainConfig rc = tc;
        rc.seed = tc.seed + 17 * (r + 1);
        net::TrainResult res = net::train(tp.region_spec, trainSet, valSet, rc);
        tp.region_params.push_back(std::move(res.params));
        tp.region_metrics.push_back(std::move(res.metrics));
    }

    const auto trainSet = whole_image_set(ds, ds.train, cfg.numClasses());
    const auto valSet = whole_image_set(ds, ds.val, cfg.numClasses());
    net::TrainConfig bc = tc;
    bc.seed = tc.seed + 101;
    net::TrainResult res = net::train(tp.baseline_spec, trainSet, valSet, bc);
    tp.baseline_params = std::move(res.params);
    tp.baseline_metrics = std::move(res.metrics);
    return tp;
}

RegionSpec mirror_box(const RegionSpec& r, std::size_t image_w) {
    RegionSpec m = r;
    m.col0 = image_w - r.col0 - r.width;
    return m;
}

std::vector<RegionSpec> flipped_regions(const std::vector<RegionSpec>& regions,
                                        std::size_t image_w) {
    // Region j keeps its net and class but takes the mirrored box of the
    // partner whose mirror lands nearest, so after flipping the image each
    // net is fed the object it was never trained on.
    std::vector<RegionSpec> out(regions.size());
    for (std::size_t j = 0; j < regions.size(); ++j) {
        std::size_t bestK = 0;
        double bestDist = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < regions.size(); ++k) {
            const RegionSpec m = mirror_box(regions[k], image_w);
            const double dist = std::abs(static_cast<double>(m.col0) -
                                         static_cast<double>(regions[j].col0)) +
                                std::abs(static_cast<double>(m.row0) -
                                         static_cast<double>(regions[j].row0));
            if (dist < bestDist) {
                bestDist = dist;
                bestK = k;
            }
        }
        out[j] = mirror_box(regions[bestK], image_w);
        out[j].region_index = regions[j].region_index;
        out[j].class_label = regions[j].class_label;
    }
    return out;
}

namespace {

struct PixelStats {
    double sqErr = 0;
    std::size_t correct = 0;
    std::size_t pixels = 0;
    std::size_t entries = 0;
};

void accumulate(PixelStats& acc, const Tensor& prob, const Tensor& labels, const Tensor& mask,
                std::size_t num_classes) {
    const std::size_t H = mask.dim(0), W = mask.dim(1);
    const Tensor target = one_hot(mask, num_classes);
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const double e = prob[i] - target[i];
        acc.sqErr += e * e;
    }
    for (std::size_t p = 0; p < H * W; ++p) {
        if (std::llround(labels[p]) == std::llround(mask[p])) ++acc.correct;
    }
    acc.pixels += H * W;
    acc.entries += prob.size();
}

EvalMetrics evalImpl(const TrainedPipeline& tp, const synth::Dataset& ds,
                     const std::vector<std::size_t>& indices, bool flipped, bool kfcn,
                     int threads) {
    if (indices.empty()) throw ArgumentError("evaluate: empty index list");
    PipelineConfig cfg = tp.cfg;
    if (flipped && kfcn) {
        cfg.regions = flipped_regions(cfg.regions, ds.spec.width);
    }
    std::vector<PixelStats> parts(indices.size());
    parallel_for(indices.size(), threads, [&](std::size_t i) {
        synth::SynthSample s = ds.samples.at(indices[i]);
        if (flipped) s = synth::flip_lr(s);
        const SegmentationResult res =
            kfcn ? kfcn_predict(s.image, cfg, tp.region_params)
                 : baseline_fcn_predict(s.image, tp.baseline_spec, tp.baseline_params);
        accumulate(parts[i], res.prob, res.labels, s.mask, tp.cfg.numClasses());
    });
    PixelStats total;
    for (const auto& p : parts) {
        total.sqErr += p.sqErr;
        total.correct += p.correct;
        total.pixels += p.pixels;
        total.entries += p.entries;
    }
    return {static_cast<double>(total.correct) / static_cast<double>(total.pixels),
            total.sqErr / static_cast<double>(total.entries)};
}

}  // namespace

EvalMetrics evaluate_kfcn(const TrainedPipeline& tp, const synth::Dataset& ds,
                          const std::vector<std::size_t>& indices, bool flipped, int threads) {
    return evalImpl(tp, ds, indices, flipped, true, threads);
}

EvalMetrics evaluate_baseline(const TrainedPipeline& tp, const synth::Dataset& ds,
                              const std::vector<std::size_t>& indices, bool flipped, int threads) {
    return evalImpl(tp, ds, indices, flipped, false, threads);
}

SwapReport swap_experiment(const TrainedPipeline& tp, SwapMode mode, const synth::Dataset& ds,
                           const std::vector<std::size_t>& indices, int threads) {
    SwapReport report;
    report.kfcn_before = evaluate_kfcn(tp, ds, indices, false, threads);
    report.fcn_before = evaluate_baseline(tp, ds, indices, false, threads);

    if (mode == SwapMode::SwapKernels) {
        if (tp.region_params.size() != 2) {
            throw ArgumentError("swap_experiment: kernel swap needs exactly two region nets");
        }
        TrainedPipeline swapped = tp;
        for (std::size_t li = 0; li < tp.region_spec.layers.size(); ++li) {
            if (tp.region_spec.layers[li].kind != net::LayerKind::Conv) continue;
            const Tensor k0 = net::get_kernels(tp.region_params[0], tp.region_spec, li);
            const Tensor k1 = net::get_kernels(tp.region_params[1], tp.region_spec, li);
            net::set_kernels(swapped.region_params[0], tp.region_spec, li, k1);
            net::set_kernels(swapped.region_params[1], tp.region_spec, li, k0);
        }
        report.kfcn_after = evaluate_kfcn(swapped, ds, indices, false, threads);
        report.fcn_after = report.fcn_before;  // baseline has nothing to swap
    } else {
        report.kfcn_after = evaluate_kfcn(tp, ds, indices, true, threads);
        report.fcn_after = evaluate_baseline(tp, ds, indices, true, threads);
    }
    return report;
}

void write_segmentation(const std::string& dir, const std::string& stem,
                        const SegmentationResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t K = result.prob.dim(0);
    synth::write_pgm(dir + "/" + stem + "_labels.pgm", result.labels,
                     std::max<std::size_t>(1, K - 1), 1.0);
    for (std::size_t c = 0; c < K; ++c) {
        Tensor chan({result.prob.dim(1), result.prob.dim(2)});
        std::copy(result.prob.data() + c * chan.size(), result.prob.data() + (c + 1) * chan.size(),
                  chan.data());
        synth::write_pgm(dir + "/" + stem + "_prob_c" + std::to_string(c) + ".pgm", chan, 255, 255.0);
    }
    // Raw probabilities alongside the scaled previews.
    std::ofstream f(dir + "/" + stem + "_prob.csv", std::ios::binary);
    f << "channel,row,col,p\n";
    char buf[128];
    for (std::size_t c = 0; c < K; ++c) {
        for (std::size_t i = 0; i < result.prob.dim(1); ++i) {
            for (std::size_t j = 0; j < result.prob.dim(2); ++j) {
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.17g\n", c, i, j, result.prob.at(c, i, j));
                f << buf;
            }
        }
    }
}

}  // namespace kfcn::pipeline
