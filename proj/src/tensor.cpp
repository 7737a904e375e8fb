#include "kfcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kfcn {

namespace {

std::size_t shapeProduct(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shapeToString(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

[[noreturn]] void throwDim(const std::string& what, const std::vector<std::size_t>& a,
                           const std::vector<std::size_t>& b) {
    throw DimensionError(what + ": " + shapeToString(a) + " vs " + shapeToString(b));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw DimensionError("Tensor: zero dimension in shape " + shapeToString(shape_));
    }
    data_.assign(shapeProduct(shape_), fill);
}

Tensor Tensor::fromData(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("Tensor: zero dimension in shape " + shapeToString(shape));
    }
    if (shapeProduct(shape) != data.size()) {
        throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shapeToString(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

std::string Tensor::shapeString() const { return shapeToString(shape_); }

void checkFinite(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw InternalError(std::string(what) + ": non-finite entry produced");
        }
    }
}

namespace {

// Normalizes input to (C,H,W) and kernel to (O,C,kh,kw) views without copying
// the underlying data when the rank already matches.
struct ConvShapes {
    std::size_t in_c, in_h, in_w;
    std::size_t out_c, kh, kw;
    bool squeeze;  // 2-D in, single-channel out -> 2-D result
};

ConvShapes resolveConvShapes(const Tensor& input, const Tensor& kernel) {
    ConvShapes s{};
    if (input.rank() == 2) {
        s.in_c = 1;
        s.in_h = input.dim(0);
        s.in_w = input.dim(1);
    } else if (input.rank() == 3) {
        s.in_c = input.dim(0);
        s.in_h = input.dim(1);
        s.in_w = input.dim(2);
    } else {
        throw DimensionError("conv2d: input rank must be 2 or 3, got shape " + input.shapeString());
    }
    if (kernel.rank() == 2) {
        s.out_c = 1;
        s.kh = kernel.dim(0);
        s.kw = kernel.dim(1);
        if (s.in_c != 1) throwDim("conv2d: 2-D kernel needs single-channel input", input.shape(), kernel.shape());
    } else if (kernel.rank() == 4) {
        s.out_c = kernel.dim(0);
        s.kh = kernel.dim(2);
        s.kw = kernel.dim(3);
        if (kernel.dim(1) != s.in_c) {
            throwDim("conv2d: kernel in-channels do not match input", input.shape(), kernel.shape());
        }
    } else {
        throw DimensionError("conv2d: kernel rank must be 2 or 4, got shape " + kernel.shapeString());
    }
    s.squeeze = (input.rank() == 2 && s.out_c == 1);
    return s;
}

}  // namespace

Tensor conv2d_valid(const Tensor& input, const Tensor& kernel, std::span<const double> bias) {
    const ConvShapes s = resolveConvShapes(input, kernel);
    if (s.kh > s.in_h || s.kw > s.in_w) {
        throwDim("conv2d_valid: kernel larger than input", input.shape(), kernel.shape());
    }
    if (!bias.empty() && bias.size() != s.out_c) {
        throw DimensionError("conv2d_valid: bias size " + std::to_string(bias.size()) +
                             " does not match out channels " + std::to_string(s.out_c));
    }
    const std::size_t oh = s.in_h - s.kh + 1;
    const std::size_t ow = s.in_w - s.kw + 1;
    Tensor out({s.out_c, oh, ow});
    const double* in = input.data();
    const double* k = kernel.data();
    for (std::size_t o = 0; o < s.out_c; ++o) {
        const double b = bias.empty() ? 0.0 : bias[o];
        double* outPlane = out.data() + o * oh * ow;
        std::fill(outPlane, outPlane + oh * ow, b);
        for (std::size_t c = 0; c < s.in_c; ++c) {
            const double* inPlane = in + c * s.in_h * s.in_w;
            const double* kPlane = k + (o * s.in_c + c) * s.kh * s.kw;
            for (std::size_t u = 0; u < s.kh; ++u) {
                for (std::size_t v = 0; v < s.kw; ++v) {
                    const double kv = kPlane[u * s.kw + v];
                    if (kv == 0.0) continue;
                    for (std::size_t i = 0; i < oh; ++i) {
                        const double* inRow = inPlane + (i + u) * s.in_w + v;
                        double* outRow = outPlane + i * ow;
                        for (std::size_t j = 0; j < ow; ++j) outRow[j] += kv * inRow[j];
                    }
                }
            }
        }
    }
    checkFinite(out, "conv2d_valid");
    if (s.squeeze) return Tensor::fromData({oh, ow}, out.toVector());
    return out;
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, std::span<const double> bias) {
    const ConvShapes s = resolveConvShapes(input, kernel);
    if (s.kh % 2 == 0 || s.kw % 2 == 0) {
        throw ArgumentError("conv2d_same: kernel dims must be odd, got " + kernel.shapeString());
    }
    if (!bias.empty() && bias.size() != s.out_c) {
        throw DimensionError("conv2d_same: bias size " + std::to_string(bias.size()) +
                             " does not match out channels " + std::to_string(s.out_c));
    }
    const std::size_t ph = s.kh / 2, pw = s.kw / 2;
    Tensor out({s.out_c, s.in_h, s.in_w});
    const double* in = input.data();
    const double* k = kernel.data();
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(s.in_h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(s.in_w);
    for (std::size_t o = 0; o < s.out_c; ++o) {
        const double b = bias.empty() ? 0.0 : bias[o];
        double* outPlane = out.data() + o * s.in_h * s.in_w;
        std::fill(outPlane, outPlane + s.in_h * s.in_w, b);
        for (std::size_t c = 0; c < s.in_c; ++c) {
            const double* inPlane = in + c * s.in_h * s.in_w;
            const double* kPlane = k + (o * s.in_c + c) * s.kh * s.kw;
            for (std::size_t u = 0; u < s.kh; ++u) {
                const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - static_cast<std::ptrdiff_t>(ph);
                for (std::size_t v = 0; v < s.kw; ++v) {
                    const double kv = kPlane[u * s.kw + v];
                    if (kv == 0.0) continue;
                    const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pw);
                    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -du);
                    const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(H, H - du);
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv);
                    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(W, W - dv);
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        const double* inRow = inPlane + (i + du) * W + dv;
                        double* outRow = outPlane + i * W;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) outRow[j] += kv * inRow[j];
                    }
                }
            }
        }
    }
    checkFinite(out, "conv2d_same");
    if (s.squeeze) return Tensor::fromData({s.in_h, s.in_w}, out.toVector());
    return out;
}

std::vector<double> conv1d_valid(std::span<const double> x, std::span<const double> t) {
    if (t.empty() || t.size() > x.size()) {
        throw DimensionError("conv1d_valid: kernel length " + std::to_string(t.size()) +
                             " vs input length " + std::to_string(x.size()));
    }
    const std::size_t n = x.size() - t.size() + 1;
    std::vector<double> out(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t u = 0; u < t.size(); ++u) acc += x[j + u] * t[u];
        out[j] = acc;
    }
    return out;
}

Tensor toeplitz_1d(std::span<const double> t, std::size_t input_len) {
    const std::size_t k = t.size();
    if (k == 0 || k > input_len) {
        throw DimensionError("toeplitz_1d: kernel length " + std::to_string(k) +
                             " vs input length " + std::to_string(input_len));
    }
    const std::size_t cols = input_len - k + 1;
    Tensor m({input_len, cols});
    for (std::size_t i = 0; i < input_len; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            // (x.T)[j] = sum_i x[i] T[i][j]; matches conv when T[i][j] = t[i-j].
            if (i >= j && i - j < k) m.at(i, j) = t[i - j];
        }
    }
    return m;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    checkFinite(out, "relu");
    return out;
}

Tensor relu_mask(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

MaxPoolResult maxpool2(const Tensor& input) {
    std::size_t C, H, W;
    bool squeeze = false;
    if (input.rank() == 2) {
        C = 1;
        H = input.dim(0);
        W = input.dim(1);
        squeeze = true;
    } else if (input.rank() == 3) {
        C = input.dim(0);
        H = input.dim(1);
        W = input.dim(2);
    } else {
        throw DimensionError("maxpool2: input rank must be 2 or 3, got " + input.shapeString());
    }
    if (H % 2 != 0 || W % 2 != 0) {
        throw DimensionError("maxpool2: spatial dims must be even, got " + input.shapeString());
    }
    const std::size_t oh = H / 2, ow = W / 2;
    MaxPoolResult r{Tensor({C, oh, ow}), {}};
    r.argmax.resize(C * oh * ow);
    const double* in = input.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double best = -1.0;
                std::size_t bestIdx = 0;
                bool first = true;
                for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = (c * H + 2 * i + di) * W + 2 * j + dj;
                        if (first || in[idx] > best) {
                            best = in[idx];
                            bestIdx = idx;
                            first = false;
                        }
                    }
                }
                r.output.at(c, i, j) = best;
                r.argmax[(c * oh + i) * ow + j] = bestIdx;
            }
        }
    }
    if (squeeze) {
        r.output = Tensor::fromData({oh, ow}, r.output.toVector());
    }
    return r;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
    if (factor == 0) throw ArgumentError("upsample_nearest: factor must be >= 1");
    std::size_t C, H, W;
    bool squeeze = false;
    if (input.rank() == 2) {
        C = 1;
        H = input.dim(0);
        W = input.dim(1);
        squeeze = true;
    } else if (input.rank() == 3) {
        C = input.dim(0);
        H = input.dim(1);
        W = input.dim(2);
    } else {
        throw DimensionError("upsample_nearest: input rank must be 2 or 3, got " + input.shapeString());
    }
    Tensor out({C, H * factor, W * factor});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H * factor; ++i) {
            for (std::size_t j = 0; j < W * factor; ++j) {
                out.at(c, i, j) = input[(c * H + i / factor) * W + j / factor];
            }
        }
    }
    if (squeeze) return Tensor::fromData({H * factor, W * factor}, out.toVector());
    return out;
}

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    if (input.rank() != 2) {
        throw DimensionError("resize_bilinear: expected HxW input, got " + input.shapeString());
    }
    if (out_h == 0 || out_w == 0) throw ArgumentError("resize_bilinear: target dims must be >= 1");
    const std::size_t H = input.dim(0), W = input.dim(1);
    if (out_h == H && out_w == W) return input;
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        double y = (static_cast<double>(i) + 0.5) * sy - 0.5;
        y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
        const std::size_t y0 = static_cast<std::size_t>(y);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double ty = y - static_cast<double>(y0);
        for (std::size_t j = 0; j < out_w; ++j) {
            double x = (static_cast<double>(j) + 0.5) * sx - 0.5;
            x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
            const std::size_t x0 = static_cast<std::size_t>(x);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double tx = x - static_cast<double>(x0);
            const double top = input.at(y0, x0) * (1.0 - tx) + input.at(y0, x1) * tx;
            const double bot = input.at(y1, x0) * (1.0 - tx) + input.at(y1, x1) * tx;
            out.at(i, j) = top * (1.0 - ty) + bot * ty;
        }
    }
    checkFinite(out, "resize_bilinear");
    return out;
}

Tensor resize_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    if (input.rank() != 2) {
        throw DimensionError("resize_nearest: expected HxW input, got " + input.shapeString());
    }
    if (out_h == 0 || out_w == 0) throw ArgumentError("resize_nearest: target dims must be >= 1");
    const std::size_t H = input.dim(0), W = input.dim(1);
    if (out_h == H && out_w == W) return input;
    Tensor out({out_h, out_w});
    for (std::size_t i = 0; i < out_h; ++i) {
        std::size_t y = static_cast<std::size_t>((static_cast<double>(i) + 0.5) *
                                                 static_cast<double>(H) / static_cast<double>(out_h));
        y = std::min(y, H - 1);
        for (std::size_t j = 0; j < out_w; ++j) {
            std::size_t x = static_cast<std::size_t>((static_cast<double>(j) + 0.5) *
                                                     static_cast<double>(W) / static_cast<double>(out_w));
            x = std::min(x, W - 1);
            out.at(i, j) = input.at(y, x);
        }
    }
    return out;
}

Tensor flip_columns(const Tensor& input) {
    std::size_t C, H, W;
    bool squeeze = false;
    if (input.rank() == 2) {
        C = 1;
        H = input.dim(0);
        W = input.dim(1);
        squeeze = true;
    } else if (input.rank() == 3) {
        C = input.dim(0);
        H = input.dim(1);
        W = input.dim(2);
    } else {
        throw DimensionError("flip_columns: input rank must be 2 or 3, got " + input.shapeString());
    }
    Tensor out(input.shape());
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                out[(c * H + i) * W + j] = input[(c * H + i) * W + (W - 1 - j)];
            }
        }
    }
    (void)squeeze;
    return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw DimensionError("dot: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
    return acc;
}

double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double angle(std::span<const double> u, std::span<const double> v) {
    const double nu = norm(u), nv = norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw DegenerateVectorError("angle: zero-norm vector");
    }
    const double c = std::min(1.0, std::max(-1.0, dot(u, v) / (nu * nv)));
    return std::acos(c);
}

}  // namespace kfcn
