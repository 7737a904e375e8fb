#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfcn/micro_net.hpp"
#include "kfcn/synth_data.hpp"
#include "kfcn/tensor.hpp"

namespace kfcn::pipeline {

/// Prior-knowledge box in image pixels plus the object class it contains.
struct RegionSpec {
    std::size_t row0 = 0, col0 = 0, height = 0, width = 0;
    std::size_t region_index = 0;  // 1-based, matches the object class
    std::size_t class_label = 0;
};

struct PipelineConfig {
    std::size_t n = 0;  // region count; class count is n + 1
    std::size_t patch_h = 0, patch_w = 0;
    std::vector<RegionSpec> regions;
    std::size_t channels = 8;  // conv width of each small FCN
    std::size_t kernel = 3;
    std::string overlap = "average";

    std::size_t numClasses() const { return n + 1; }
    void validate(std::size_t image_h, std::size_t image_w) const;
    net::NetworkSpec regionNetSpec() const;
    net::NetworkSpec baselineNetSpec(std::size_t image_h, std::size_t image_w) const;
};

/// Parses the JSON document
/// {"n":..,"patch":[h,w],"regions":[{"box":[r,c,h,w],"class":..}..],"overlap":".."}.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::string& path);

struct SegmentationResult {
    Tensor prob;    // (n+1, H, W), channels sum to 1 per pixel
    Tensor labels;  // (H, W) argmax channel, lowest index on ties
};

/// Crops each region box and resizes it bilinearly to the patch shape.
std::vector<Tensor> extract_patches(const Tensor& image, const PipelineConfig& cfg);

/// Composites per-box probability maps into a full-image map: outside every
/// box the background channel is 1; pixels covered by k >= 2 boxes average
/// the k probability vectors and renormalize. Regions are folded in
/// region_index order, so the result is independent of list order.
Tensor sew_up(const std::vector<std::pair<RegionSpec, Tensor>>& box_probmaps, std::size_t image_h,
              std::size_t image_w, std::size_t num_classes);

/// Full knowledge-based prediction: per-region nets on resized patches,
/// probability channels resized back to box size (renormalized when the
/// resize actually resampled), then sew-up.
SegmentationResult kfcn_predict(const Tensor& image, const PipelineConfig& cfg,
                                const std::vector<net::Parameters>& region_params);

SegmentationResult baseline_fcn_predict(const Tensor& image, const net::NetworkSpec& spec,
                                        const net::Parameters& params);

/// Builds the per-region training set for region j: patches of the box crop
/// with one-hot targets from the nearest-neighbor-resized mask crop.
std::vector<net::Sample> region_training_set(const synth::Dataset& ds,
                                             const std::vector<std::size_t>& indices,
                                             const PipelineConfig& cfg, std::size_t region);
std::vector<net::Sample> whole_image_set(const synth::Dataset& ds,
                                         const std::vector<std::size_t>& indices,
                                         std::size_t num_classes);

struct TrainedPipeline {
    PipelineConfig cfg;
    net::NetworkSpec region_spec;
    std::vector<net::Parameters> region_params;  // one per region
    net::NetworkSpec baseline_spec;
    net::Parameters baseline_params;
    std::vector<std::vector<net::EpochMetrics>> region_metrics;
    std::vector<net::EpochMetrics> baseline_metrics;
};

/// Trains the n region nets and the whole-image baseline on the same splits
/// with the same config (per-net seeds derived from cfg.seed).
TrainedPipeline train_all(const synth::Dataset& ds, const PipelineConfig& cfg,
                          const net::TrainConfig& tc);

struct EvalMetrics {
    double accuracy = 0;
    double mse = 0;
};

/// Full-image metrics of the composited KFCN prediction over the given
/// sample indices (flipped = mirror images, masks and boxes first).
EvalMetrics evaluate_kfcn(const TrainedPipeline& tp, const synth::Dataset& ds,
                          const std::vector<std::size_t>& indices, bool flipped, int threads = 1);
EvalMetrics evaluate_baseline(const TrainedPipeline& tp, const synth::Dataset& ds,
                              const std::vector<std::size_t>& indices, bool flipped,
                              int threads = 1);

enum class SwapMode { SwapKernels, FlipImage };

struct SwapReport {
    EvalMetrics kfcn_before, kfcn_after;
    EvalMetrics fcn_before, fcn_after;
};

/// swap_kernels: exchanges conv kernels between the two region nets (specs
/// must match) and re-evaluates; the baseline is unaffected and reported
/// unchanged. flip_image: evaluates both models on mirrored test images with
/// mirrored boxes, so each region net receives the other object.
SwapReport swap_experiment(const TrainedPipeline& tp, SwapMode mode, const synth::Dataset& ds,
                           const std::vector<std::size_t>& indices, int threads = 1);

/// Mirrored box: columns reflect about the image's vertical axis.
RegionSpec mirror_box(const RegionSpec& r, std::size_t image_w);

/// The region pairing used by the flip experiment: each region takes the
/// mirrored box of the partner whose mirror lands closest to it.
std::vector<RegionSpec> flipped_regions(const std::vector<RegionSpec>& regions,
                                        std::size_t image_w);

/// One-hot (K, H, W) encoding of an integer label image.
Tensor one_hot(const Tensor& mask, std::size_t num_classes);

void write_segmentation(const std::string& dir, const std::string& stem,
                        const SegmentationResult& result);

}  // namespace kfcn::pipeline
