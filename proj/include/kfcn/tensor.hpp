#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kfcn/errors.hpp"

namespace kfcn {

/// Dense row-major n-dimensional array of 64-bit reals. The universal value
/// carrier for images, kernels and probability maps. Values are immutable
/// from the caller's perspective once an operation returns; all operations
/// in this header are pure functions.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

    static Tensor fromData(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }
    std::vector<double> toVector() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double& at(std::size_t a, std::size_t b, std::size_t i, std::size_t j) {
        return data_[((a * shape_[1] + b) * shape_[2] + i) * shape_[3] + j];
    }
    double at(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const {
        return data_[((a * shape_[1] + b) * shape_[2] + i) * shape_[3] + j];
    }

    bool sameShape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shapeString() const;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Throws InternalError if any entry is NaN/Inf; `what` names the operation.
void checkFinite(const Tensor& t, const char* what);

// ---------------------------------------------------------------------------
// Convolution. Cross-correlation convention (no kernel flip), stride 1.
// Input is HxW or CxHxW; kernel is kh x kw or (out, in, kh, kw); bias is one
// value per out channel (empty = zero). Output rank mirrors the input rank
// when a single-channel result allows it.
// ---------------------------------------------------------------------------

Tensor conv2d_valid(const Tensor& input, const Tensor& kernel,
                    std::span<const double> bias = {});

/// Zero-padded variant that keeps spatial dims; kernel dims must be odd.
Tensor conv2d_same(const Tensor& input, const Tensor& kernel,
                   std::span<const double> bias = {});

/// Valid 1-D cross-correlation, length d-k+1.
std::vector<double> conv1d_valid(std::span<const double> x, std::span<const double> t);

/// d x (d-k+1) matrix T with x.T equal to conv1d_valid(x, t) for every x.
Tensor toeplitz_1d(std::span<const double> t, std::size_t input_len);

Tensor relu(const Tensor& x);
/// 0/1 indicator of x > 0 (subgradient 0 at x = 0).
Tensor relu_mask(const Tensor& x);

struct MaxPoolResult {
    Tensor output;                     // (C, H/2, W/2)
    std::vector<std::size_t> argmax;   // flat input index per output element
};

/// 2x2 stride-2 max over CxHxW (H, W even); ties keep the first row-major
/// index so gradient routing is deterministic.
MaxPoolResult maxpool2(const Tensor& input);

/// Each pixel replicated factor x factor. Accepts HxW or CxHxW.
Tensor upsample_nearest(const Tensor& input, std::size_t factor);

/// Standard align-corners=false bilinear sampling of an HxW image.
/// Same-size resize is an exact identity.
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Nearest-neighbor resize for integer label images.
Tensor resize_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Mirror the last axis (columns) of an HxW or CxHxW tensor.
Tensor flip_columns(const Tensor& input);

// Vector geometry.
double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> u);
/// arccos of the clamped cosine, in [0, pi]. Requires both norms > 0.
double angle(std::span<const double> u, std::span<const double> v);

}  // namespace kfcn
