#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfcn/tensor.hpp"

namespace kfcn::net {

enum class LayerKind { Conv, Relu, MaxPool2, Dense, Upsample, SoftmaxChannels };

const char* layerKindName(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    std::size_t out_channels = 0;  // conv / dense
    std::size_t kernel_h = 0, kernel_w = 0;  // conv ('same' zero padding, odd dims)
    std::size_t factor = 0;  // upsample

    static LayerSpec conv(std::size_t out_channels, std::size_t kh, std::size_t kw);
    static LayerSpec relu();
    static LayerSpec maxpool2();
    static LayerSpec dense(std::size_t out_channels);
    static LayerSpec upsample(std::size_t factor);
    static LayerSpec softmaxChannels();
};

/// Layer-by-layer description of a small fully convolutional net. The layers
/// must compose, and after the final layer the spatial shape must equal the
/// input spatial shape with num_classes channels.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::size_t in_channels = 1, in_h = 0, in_w = 0;
    std::size_t num_classes = 0;

    /// (C, H, W) after each layer; throws DimensionError naming the layer
    /// when shapes do not compose.
    std::vector<std::array<std::size_t, 3>> layerShapes() const;
    void validate() const;
    bool sameConvStructure(const NetworkSpec& other) const;
};

/// Small FCN used throughout: conv(ch,3x3) relu conv(ch) relu maxpool2
/// conv(ch) relu dense(classes) upsample(2) softmax.
NetworkSpec make_small_fcn(std::size_t in_h, std::size_t in_w, std::size_t num_classes,
                           std::size_t channels = 8, std::size_t kernel = 3);

struct Parameters {
    struct Entry {
        Tensor weights;  // conv: (O, C, kh, kw); dense: (F_out, F_in)
        Tensor bias;     // conv: (O); dense: (F_out)
        bool hasParams() const { return weights.size() > 0; }
    };
    std::vector<Entry> layers;  // aligned with NetworkSpec::layers
};

/// Uniform [-s, s] with s = sqrt(6 / (fan_in + fan_out)); biases zero.
Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed);
Parameters zero_parameters(const NetworkSpec& spec);

struct ForwardCache {
    std::vector<Tensor> inputs;                    // input of each layer, (B,C,H,W)
    std::vector<std::vector<std::size_t>> poolArg; // per layer; empty unless maxpool2
    Tensor output;                                 // final (B,K,H,W)
    std::size_t batch = 0;
    std::size_t layerCount = 0;
};

/// Batched forward pass over (B, C, H, W); the cache holds everything
/// backward needs. threads parallelizes over samples with disjoint writes.
Tensor forward_batch(const NetworkSpec& spec, const Parameters& params, const Tensor& input,
                     ForwardCache* cache = nullptr, int threads = 1);

/// Single-sample forward: input (C,H,W) or (H,W) for one channel.
Tensor forward(const NetworkSpec& spec, const Parameters& params, const Tensor& input,
               ForwardCache* cache = nullptr);

using GradientSet = Parameters;

/// Backpropagates loss_grad (same shape as the forward output) through the
/// cached activations. Max-pool routes by stored argmax, ReLU gates by its
/// input sign. Per-sample partials are reduced in sample order, so gradients
/// are identical for any thread count.
GradientSet backward_batch(const NetworkSpec& spec, const Parameters& params,
                           const ForwardCache& cache, const Tensor& loss_grad, int threads = 1);

struct Sample {
    Tensor x;  // (C,H,W)
    Tensor y;  // (K,H,W) one-hot target
};

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    int threads = 1;
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch;
    std::string split;  // "train" or "val"
    double loss;
    double accuracy;
};

struct TrainResult {
    Parameters params;
    std::vector<EpochMetrics> metrics;
};

/// Mini-batch SGD with fixed learning rate and MSE loss against one-hot
/// targets (mean over every (sample, channel, pixel) entry). Train metrics
/// are the running per-epoch averages seen during the pass; val metrics are
/// a full evaluation after each epoch. Deterministic given the seed.
/// Throws TrainingDivergedError when the loss exceeds 1e6 or goes non-finite.
TrainResult train(const NetworkSpec& spec, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& cfg);

struct EvalMetrics {
    double pixel_accuracy;
    double mse_loss;
};

/// Accuracy = fraction of pixels whose argmax channel (lowest index on ties)
/// matches the target argmax; loss = MSE over all entries.
EvalMetrics evaluate(const Parameters& params, const NetworkSpec& spec,
                     std::span<const Sample> dataset, int threads = 1);

/// Read or overwrite a conv layer's kernels; set validates shape equality.
Tensor get_kernels(const Parameters& params, const NetworkSpec& spec, std::size_t layer_index);
void set_kernels(Parameters& params, const NetworkSpec& spec, std::size_t layer_index,
                 const Tensor& kernels);

/// Flat little-endian binary file: magic, layer count, then per layer a
/// tensor count followed by each tensor as (rank, dims..., doubles...).
void save_parameters(const std::string& path, const Parameters& params);
Parameters load_parameters(const std::string& path);

/// Mean squared error and its gradient wrt the prediction.
double mse_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss_grad(const Tensor& pred, const Tensor& target);

}  // namespace kfcn::net
