#include "kfcn/micro_net.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "kfcn/parallel.hpp"
#include "kfcn/rng.hpp"

namespace kfcn::net {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

static_assert(std::endian::native == std::endian::little,
              "parameter files are little-endian; big-endian hosts unsupported");

}  // namespace

const char* layerKindName(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2: return "maxpool2";
        case LayerKind::Dense: return "dense";
        case LayerKind::Upsample: return "upsample";
        case LayerKind::SoftmaxChannels: return "softmax_channels";
    }
    return "?";
}

LayerSpec LayerSpec::conv(std::size_t out_channels, std::size_t kh, std::size_t kw) {
    LayerSpec s{LayerKind::Conv};
    s.out_channels = out_channels;
    s.kernel_h = kh;
    s.kernel_w = kw;
    return s;
}
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::maxpool2() { return LayerSpec{LayerKind::MaxPool2}; }
LayerSpec LayerSpec::dense(std::size_t out_channels) {
    LayerSpec s{LayerKind::Dense};
    s.out_channels = out_channels;
    return s;
}
LayerSpec LayerSpec::upsample(std::size_t factor) {
    LayerSpec s{LayerKind::Upsample};
    s.factor = factor;
    return s;
}
LayerSpec LayerSpec::softmaxChannels() { return LayerSpec{LayerKind::SoftmaxChannels}; }

std::vector<std::array<std::size_t, 3>> NetworkSpec::layerShapes() const {
    std::vector<std::array<std::size_t, 3>> shapes;
    std::size_t C = in_channels, H = in_h, W = in_w;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerSpec& L = layers[li];
        const std::string where = "layer " + std::to_string(li) + " (" +
                                  layerKindName(L.kind) + ")";
        switch (L.kind) {
            case LayerKind::Conv:
                if (L.out_channels == 0 || L.kernel_h % 2 == 0 || L.kernel_w % 2 == 0) {
                    throw DimensionError(where + ": conv needs out_channels > 0 and odd kernel dims");
                }
                if (L.kernel_h > H || L.kernel_w > W) {
                    throw DimensionError(where + ": kernel larger than input " +
                                         std::to_string(H) + "x" + std::to_string(W));
                }
                C = L.out_channels;
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool2:
                if (H % 2 != 0 || W % 2 != 0) {
                    throw DimensionError(where + ": spatial dims must be even, got " +
                                         std::to_string(H) + "x" + std::to_string(W));
                }
                H /= 2;
                W /= 2;
                break;
            case LayerKind::Dense:
                if (L.out_channels == 0) throw DimensionError(where + ": dense needs out_channels > 0");
                C = L.out_channels;
                break;
            case LayerKind::Upsample:
                if (L.factor == 0) throw DimensionError(where + ": upsample factor must be >= 1");
                H *= L.factor;
                W *= L.factor;
                break;
            case LayerKind::SoftmaxChannels:
                break;
        }
        shapes.push_back({C, H, W});
    }
    return shapes;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw DimensionError("NetworkSpec: no layers");
    if (in_h == 0 || in_w == 0 || in_channels == 0) {
        throw DimensionError("NetworkSpec: input shape not set");
    }
    const auto shapes = layerShapes();
    const auto& out = shapes.back();
    if (out[1] != in_h || out[2] != in_w) {
        throw DimensionError("NetworkSpec: output spatial " + std::to_string(out[1]) + "x" +
                             std::to_string(out[2]) + " != input " + std::to_string(in_h) + "x" +
                             std::to_string(in_w));
    }
    if (out[0] != num_classes) {
        throw DimensionError("NetworkSpec: output channels " + std::to_string(out[0]) +
                             " != num_classes " + std::to_string(num_classes));
    }
}

bool NetworkSpec::sameConvStructure(const NetworkSpec& other) const {
    std::vector<std::array<std::size_t, 4>> a, b;
    auto collect = [](const NetworkSpec& s, std::vector<std::array<std::size_t, 4>>& out) {
        std::size_t C = s.in_channels;
        for (const auto& L : s.layers) {
            if (L.kind == LayerKind::Conv) {
                out.push_back({L.out_channels, C, L.kernel_h, L.kernel_w});
                C = L.out_channels;
            } else if (L.kind == LayerKind::Dense) {
                C = L.out_channels;
            }
        }
    };
    collect(*this, a);
    collect(other, b);
    return a == b;
}

NetworkSpec make_small_fcn(std::size_t in_h, std::size_t in_w, std::size_t num_classes,
                           std::size_t channels, std::size_t kernel) {
    NetworkSpec spec;
    spec.in_channels = 1;
    spec.in_h = in_h;
    spec.in_w = in_w;
    spec.num_classes = num_classes;
    spec.layers = {
        LayerSpec::conv(channels, kernel, kernel),
        LayerSpec::relu(),
        LayerSpec::conv(channels, kernel, kernel),
        LayerSpec::relu(),
        LayerSpec::maxpool2(),
        LayerSpec::conv(channels, kernel, kernel),
        LayerSpec::relu(),
        LayerSpec::dense(num_classes),
        LayerSpec::upsample(2),
        LayerSpec::softmaxChannels(),
    };
    spec.validate();
    return spec;
}

namespace {

struct ParamShape {
    std::vector<std::size_t> weights;
    std::vector<std::size_t> bias;
};

// Parameter tensor shapes per layer (empty for layers without parameters).
std::vector<ParamShape> paramShapes(const NetworkSpec& spec) {
    std::vector<ParamShape> out(spec.layers.size());
    std::size_t C = spec.in_channels, H = spec.in_h, W = spec.in_w;
    const auto shapes = spec.layerShapes();
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& L = spec.layers[li];
        if (L.kind == LayerKind::Conv) {
            out[li].weights = {L.out_channels, C, L.kernel_h, L.kernel_w};
            out[li].bias = {L.out_channels};
        } else if (L.kind == LayerKind::Dense) {
            out[li].weights = {L.out_channels * H * W, C * H * W};
            out[li].bias = {L.out_channels * H * W};
        }
        C = shapes[li][0];
        H = shapes[li][1];
        W = shapes[li][2];
    }
    return out;
}

}  // namespace

Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Parameters p;
    p.layers.resize(spec.layers.size());
    const auto shapes = paramShapes(spec);
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        if (shapes[li].weights.empty()) continue;
        Tensor w(shapes[li].weights);
        std::size_t fanIn, fanOut;
        if (spec.layers[li].kind == LayerKind::Conv) {
            fanIn = shapes[li].weights[1] * shapes[li].weights[2] * shapes[li].weights[3];
            fanOut = shapes[li].weights[0] * shapes[li].weights[2] * shapes[li].weights[3];
        } else {
            fanIn = shapes[li].weights[1];
            fanOut = shapes[li].weights[0];
        }
        const double s = std::sqrt(6.0 / static_cast<double>(fanIn + fanOut));
        auto rng = substream(seed, li);
        std::uniform_real_distribution<double> unif(-s, s);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = unif(rng);
        p.layers[li].weights = std::move(w);
        p.layers[li].bias = Tensor(shapes[li].bias, 0.0);
    }
    return p;
}

Parameters zero_parameters(const NetworkSpec& spec) {
    spec.validate();
    Parameters p;
    p.layers.resize(spec.layers.size());
    const auto shapes = paramShapes(spec);
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        if (shapes[li].weights.empty()) continue;
        p.layers[li].weights = Tensor(shapes[li].weights, 0.0);
        p.layers[li].bias = Tensor(shapes[li].bias, 0.0);
    }
    return p;
}

namespace {

// ---- batched layer kernels; all tensors are (B, C, H, W) -------------------

void convForward(const Tensor& in, const Tensor& k, const Tensor& bias, Tensor& out,
                 int threads) {
    const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t Ws = static_cast<std::ptrdiff_t>(W);
    parallel_for(B, threads, [&](std::size_t b) {
        const double* inB = in.data() + b * C * H * W;
        double* outB = out.data() + b * O * H * W;
        for (std::size_t o = 0; o < O; ++o) {
            double* outPlane = outB + o * H * W;
            std::fill(outPlane, outPlane + H * W, bias[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* inPlane = inB + c * H * W;
                const double* kPlane = k.data() + (o * C + c) * kh * kw;
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - ph;
                    for (std::size_t v = 0; v < kw; ++v) {
                        const double kv = kPlane[u * kw + v];
                        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pw;
                        const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -du);
                        const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(Hs, Hs - du);
                        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv);
                        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(Ws, Ws - dv);
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            const double* inRow = inPlane + (i + du) * Ws + dv;
                            double* outRow = outPlane + i * Ws;
                            for (std::ptrdiff_t j = j0; j < j1; ++j) outRow[j] += kv * inRow[j];
                        }
                    }
                }
            }
        }
    });
}

void convBackward(const Tensor& in, const Tensor& k, const Tensor& gOut, Tensor& gIn,
                  Tensor& gK, Tensor& gB, int threads) {
    const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H);
    const std::ptrdiff_t Ws = static_cast<std::ptrdiff_t>(W);

    // Per-sample weight/bias partials, reduced in sample order afterwards.
    std::vector<std::vector<double>> kParts(B), bParts(B);
    parallel_for(B, threads, [&](std::size_t b) {
        const double* inB = in.data() + b * C * H * W;
        const double* gOutB = gOut.data() + b * O * H * W;
        double* gInB = gIn.data() + b * C * H * W;
        std::vector<double>& kPart = kParts[b];
        std::vector<double>& bPart = bParts[b];
        kPart.assign(O * C * kh * kw, 0.0);
        bPart.assign(O, 0.0);

        for (std::size_t o = 0; o < O; ++o) {
            const double* gPlane = gOutB + o * H * W;
            double acc = 0.0;
            for (std::size_t i = 0; i < H * W; ++i) acc += gPlane[i];
            bPart[o] = acc;
        }
        for (std::size_t c = 0; c < C; ++c) {
            double* gInPlane = gInB + c * H * W;
            std::fill(gInPlane, gInPlane + H * W, 0.0);
        }
        for (std::size_t o = 0; o < O; ++o) {
            const double* gPlane = gOutB + o * H * W;
            for (std::size_t c = 0; c < C; ++c) {
                const double* inPlane = inB + c * H * W;
                double* gInPlane = gInB + c * H * W;
                const double* kPlane = k.data() + (o * C + c) * kh * kw;
                double* gkPlane = kPart.data() + (o * C + c) * kh * kw;
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - ph;
                    for (std::size_t v = 0; v < kw; ++v) {
                        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pw;
                        const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -du);
                        const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(Hs, Hs - du);
                        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv);
                        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(Ws, Ws - dv);
                        const double kv = kPlane[u * kw + v];
                        double gk = 0.0;
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            const double* inRow = inPlane + (i + du) * Ws + dv;
                            const double* gRow = gPlane + i * Ws;
                            double* gInRow = gInPlane + (i + du) * Ws + dv;
                            for (std::ptrdiff_t j = j0; j < j1; ++j) {
                                gk += gRow[j] * inRow[j];
                                gInRow[j] += kv * gRow[j];
                            }
                        }
                        gkPlane[u * kw + v] += gk;
                    }
                }
            }
        }
    });
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < gK.size(); ++i) gK[i] += kParts[b][i];
        for (std::size_t o = 0; o < O; ++o) gB[o] += bParts[b][o];
    }
}

void reluForward(const Tensor& in, Tensor& out) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::max(0.0, in[i]);
}

void reluBackward(const Tensor& in, const Tensor& gOut, Tensor& gIn) {
    for (std::size_t i = 0; i < in.size(); ++i) gIn[i] = in[i] > 0.0 ? gOut[i] : 0.0;
}

void poolForward(const Tensor& in, Tensor& out, std::vector<std::size_t>& argmax) {
    const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::size_t oh = H / 2, ow = W / 2;
    argmax.resize(B * C * oh * ow);
    const double* src = in.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* plane = src + bc * H * W;
        double* outPlane = out.data() + bc * oh * ow;
        std::size_t* argPlane = argmax.data() + bc * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (2 * i) * W + 2 * j;
                for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = (2 * i + di) * W + 2 * j + dj;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                }
                outPlane[i * ow + j] = plane[best];
                argPlane[i * ow + j] = bc * H * W + best;
            }
        }
    }
}

void poolBackward(const Tensor& in, const Tensor& gOut, const std::vector<std::size_t>& argmax,
                  Tensor& gIn) {
    (void)in;
    std::fill(gIn.data(), gIn.data() + gIn.size(), 0.0);
    for (std::size_t i = 0; i < gOut.size(); ++i) gIn[argmax[i]] += gOut[i];
}

void upsampleForward(const Tensor& in, std::size_t f, Tensor& out) {
    const std::size_t BC = in.dim(0) * in.dim(1), H = in.dim(2), W = in.dim(3);
    for (std::size_t bc = 0; bc < BC; ++bc) {
        const double* plane = in.data() + bc * H * W;
        double* outPlane = out.data() + bc * H * f * W * f;
        for (std::size_t i = 0; i < H * f; ++i) {
            for (std::size_t j = 0; j < W * f; ++j) {
                outPlane[i * W * f + j] = plane[(i / f) * W + j / f];
            }
        }
    }
}

void upsampleBackward(const Tensor& gOut, std::size_t f, Tensor& gIn) {
    const std::size_t BC = gIn.dim(0) * gIn.dim(1), H = gIn.dim(2), W = gIn.dim(3);
    for (std::size_t bc = 0; bc < BC; ++bc) {
        double* gPlane = gIn.data() + bc * H * W;
        const double* goPlane = gOut.data() + bc * H * f * W * f;
        std::fill(gPlane, gPlane + H * W, 0.0);
        for (std::size_t i = 0; i < H * f; ++i) {
            for (std::size_t j = 0; j < W * f; ++j) {
                gPlane[(i / f) * W + j / f] += goPlane[i * W * f + j];
            }
        }
    }
}

void softmaxForward(const Tensor& in, Tensor& out) {
    const std::size_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
    for (std::size_t b = 0; b < B; ++b) {
        const double* inB = in.data() + b * C * HW;
        double* outB = out.data() + b * C * HW;
        for (std::size_t p = 0; p < HW; ++p) {
            double mx = inB[p];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, inB[c * HW + p]);
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double e = std::exp(inB[c * HW + p] - mx);
                outB[c * HW + p] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < C; ++c) outB[c * HW + p] /= sum;
        }
    }
}

void softmaxBackward(const Tensor& out, const Tensor& gOut, Tensor& gIn) {
    const std::size_t B = out.dim(0), C = out.dim(1), HW = out.dim(2) * out.dim(3);
    for (std::size_t b = 0; b < B; ++b) {
        const double* s = out.data() + b * C * HW;
        const double* g = gOut.data() + b * C * HW;
        double* gi = gIn.data() + b * C * HW;
        for (std::size_t p = 0; p < HW; ++p) {
            double gs = 0.0;
            for (std::size_t c = 0; c < C; ++c) gs += g[c * HW + p] * s[c * HW + p];
            for (std::size_t c = 0; c < C; ++c) {
                gi[c * HW + p] = s[c * HW + p] * (g[c * HW + p] - gs);
            }
        }
    }
}

void denseForward(const Tensor& in, const Tensor& w, const Tensor& bias, Tensor& out) {
    const std::size_t B = in.dim(0);
    const std::size_t fin = in.size() / B, fout = out.size() / B;
    CMapMat X(in.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fin));
    CMapMat Wm(w.data(), static_cast<Eigen::Index>(fout), static_cast<Eigen::Index>(fin));
    MapMat Y(out.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fout));
    Y.noalias() = X * Wm.transpose();
    Eigen::Map<const Eigen::VectorXd> bv(bias.data(), static_cast<Eigen::Index>(fout));
    Y.rowwise() += bv.transpose();
}

void denseBackward(const Tensor& in, const Tensor& w, const Tensor& gOut, Tensor& gIn,
                   Tensor& gW, Tensor& gB) {
    const std::size_t B = in.dim(0);
    const std::size_t fin = in.size() / B, fout = gOut.size() / B;
    CMapMat X(in.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fin));
    CMapMat Wm(w.data(), static_cast<Eigen::Index>(fout), static_cast<Eigen::Index>(fin));
    CMapMat G(gOut.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fout));
    MapMat GI(gIn.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(fin));
    MapMat GW(gW.data(), static_cast<Eigen::Index>(fout), static_cast<Eigen::Index>(fin));
    GI.noalias() = G * Wm;
    GW.noalias() += G.transpose() * X;
    Eigen::Map<Eigen::VectorXd> gb(gB.data(), static_cast<Eigen::Index>(fout));
    gb.noalias() += G.colwise().sum().transpose();
}

Tensor batchShapeTensor(std::size_t B, const std::array<std::size_t, 3>& s) {
    return Tensor({B, s[0], s[1], s[2]});
}

}  // namespace

Tensor forward_batch(const NetworkSpec& spec, const Parameters& params, const Tensor& input,
                     ForwardCache* cache, int threads) {
    if (input.rank() != 4) {
        throw DimensionError("forward_batch: expected (B,C,H,W), got " + input.shapeString());
    }
    if (input.dim(1) != spec.in_channels || input.dim(2) != spec.in_h || input.dim(3) != spec.in_w) {
        throw DimensionError("forward_batch: input " + input.shapeString() + " does not match spec (" +
                             std::to_string(spec.in_channels) + "," + std::to_string(spec.in_h) + "," +
                             std::to_string(spec.in_w) + ")");
    }
    if (params.layers.size() != spec.layers.size()) {
        throw DimensionError("forward_batch: parameters do not match spec layer count");
    }
    const std::size_t B = input.dim(0);
    const auto shapes = spec.layerShapes();
    if (cache) {
        cache->inputs.assign(spec.layers.size(), Tensor());
        cache->poolArg.assign(spec.layers.size(), {});
        cache->batch = B;
        cache->layerCount = spec.layers.size();
    }

    Tensor x = input;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& L = spec.layers[li];
        Tensor out = batchShapeTensor(B, shapes[li]);
        std::vector<std::size_t> argmax;
        switch (L.kind) {
            case LayerKind::Conv:
                convForward(x, params.layers[li].weights, params.layers[li].bias, out, threads);
                break;
            case LayerKind::Relu:
                reluForward(x, out);
                break;
            case LayerKind::MaxPool2:
                poolForward(x, out, argmax);
                break;
            case LayerKind::Dense:
                denseForward(x, params.layers[li].weights, params.layers[li].bias, out);
                break;
            case LayerKind::Upsample:
                upsampleForward(x, L.factor, out);
                break;
            case LayerKind::SoftmaxChannels:
                softmaxForward(x, out);
                break;
        }
        checkFinite(out, layerKindName(L.kind));
        if (cache) {
            cache->inputs[li] = std::move(x);
            if (L.kind == LayerKind::MaxPool2) cache->poolArg[li] = std::move(argmax);
        }
        x = std::move(out);
    }
    if (cache) cache->output = x;
    return x;
}

Tensor forward(const NetworkSpec& spec, const Parameters& params, const Tensor& input,
               ForwardCache* cache) {
    Tensor batched;
    if (input.rank() == 2) {
        batched = Tensor::fromData({1, 1, input.dim(0), input.dim(1)}, input.toVector());
    } else if (input.rank() == 3) {
        batched = Tensor::fromData({1, input.dim(0), input.dim(1), input.dim(2)}, input.toVector());
    } else {
        throw DimensionError("forward: expected (C,H,W) or (H,W), got " + input.shapeString());
    }
    Tensor out = forward_batch(spec, params, batched, cache);
    return Tensor::fromData({out.dim(1), out.dim(2), out.dim(3)}, out.toVector());
}

GradientSet backward_batch(const NetworkSpec& spec, const Parameters& params,
                           const ForwardCache& cache, const Tensor& loss_grad, int threads) {
    if (cache.layerCount != spec.layers.size() || cache.inputs.size() != spec.layers.size()) {
        throw InternalError("backward_batch: cache does not match spec");
    }
    if (!loss_grad.sameShape(cache.output)) {
        throw InternalError("backward_batch: loss gradient shape " + loss_grad.shapeString() +
                            " does not match cached output " + cache.output.shapeString());
    }
    GradientSet grads = zero_parameters(spec);
    Tensor g = loss_grad;
    for (std::size_t li = spec.layers.size(); li-- > 0;) {
        const LayerSpec& L = spec.layers[li];
        const Tensor& in = cache.inputs[li];
        Tensor gIn(in.shape());
        switch (L.kind) {
            case LayerKind::Conv:
                convBackward(in, params.layers[li].weights, g, gIn, grads.layers[li].weights,
                             grads.layers[li].bias, threads);
                break;
            case LayerKind::Relu:
                reluBackward(in, g, gIn);
                break;
            case LayerKind::MaxPool2:
                poolBackward(in, g, cache.poolArg[li], gIn);
                break;
            case LayerKind::Dense:
                denseBackward(in, params.layers[li].weights, g, gIn, grads.layers[li].weights,
                              grads.layers[li].bias);
                break;
            case LayerKind::Upsample:
                upsampleBackward(g, L.factor, gIn);
                break;
            case LayerKind::SoftmaxChannels: {
                // Needs this layer's output: it is the next layer's input, or
                // the network output when last.
                const Tensor& out = (li + 1 < spec.layers.size()) ? cache.inputs[li + 1] : cache.output;
                softmaxBackward(out, g, gIn);
                break;
            }
        }
        g = std::move(gIn);
    }
    return grads;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: learning_rate must be > 0");
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
}

double mse_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.sameShape(target)) {
        throw DimensionError("mse_loss: " + pred.shapeString() + " vs " + target.shapeString());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        acc += e * e;
    }
    return acc / static_cast<double>(pred.size());
}

Tensor mse_loss_grad(const Tensor& pred, const Tensor& target) {
    if (!pred.sameShape(target)) {
        throw DimensionError("mse_loss_grad: " + pred.shapeString() + " vs " + target.shapeString());
    }
    Tensor g(pred.shape());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
    return g;
}

namespace {

// Argmax channel per pixel, lowest index on ties.
std::size_t argmaxChannel(const double* base, std::size_t C, std::size_t HW, std::size_t p) {
    std::size_t best = 0;
    double bv = base[p];
    for (std::size_t c = 1; c < C; ++c) {
        const double v = base[c * HW + p];
        if (v > bv) {
            bv = v;
            best = c;
        }
    }
    return best;
}

struct BatchStats {
    double sqErr = 0.0;
    std::size_t correct = 0;
    std::size_t pixels = 0;
    std::size_t entries = 0;
};

BatchStats batchStats(const Tensor& pred, const Tensor& target) {
    const std::size_t B = pred.dim(0), C = pred.dim(1), HW = pred.dim(2) * pred.dim(3);
    BatchStats s;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        s.sqErr += e * e;
    }
    for (std::size_t b = 0; b < B; ++b) {
        const double* pb = pred.data() + b * C * HW;
        const double* tb = target.data() + b * C * HW;
        for (std::size_t p = 0; p < HW; ++p) {
            if (argmaxChannel(pb, C, HW, p) == argmaxChannel(tb, C, HW, p)) ++s.correct;
        }
    }
    s.pixels = B * HW;
    s.entries = pred.size();
    return s;
}

Tensor gatherBatch(std::span<const Sample> samples, std::span<const std::size_t> idx, bool target) {
    const Tensor& first = target ? samples[idx[0]].y : samples[idx[0]].x;
    Tensor out({idx.size(), first.dim(0), first.dim(1), first.dim(2)});
    const std::size_t stride = first.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Tensor& t = target ? samples[idx[b]].y : samples[idx[b]].x;
        if (t.size() != stride) throw DimensionError("gatherBatch: inconsistent sample shapes");
        std::copy(t.data(), t.data() + stride, out.data() + b * stride);
    }
    return out;
}

}  // namespace

TrainResult train(const NetworkSpec& spec, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (train_set.empty()) throw ArgumentError("train: empty training set");

    TrainResult result;
    result.params = init_parameters(spec, cfg.seed);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = substream(cfg.seed, 1000 + epoch);
        std::shuffle(order.begin(), order.end(), rng);

        BatchStats epochStats;
        for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, order.size() - pos);
            std::span<const std::size_t> idx(order.data() + pos, bs);
            const Tensor X = gatherBatch(train_set, idx, false);
            const Tensor Y = gatherBatch(train_set, idx, true);

            ForwardCache cache;
            Tensor P;
            try {
                P = forward_batch(spec, result.params, X, &cache, cfg.threads);
            } catch (const InternalError& e) {
                // Overflowed activations surface as non-finite entries.
                throw TrainingDivergedError(
                    "train: non-finite activations at epoch " + std::to_string(epoch) + " (" +
                        e.what() + ")",
                    static_cast<int>(epoch));
            }
            const BatchStats bsStats = batchStats(P, Y);
            epochStats.sqErr += bsStats.sqErr;
            epochStats.correct += bsStats.correct;
            epochStats.pixels += bsStats.pixels;
            epochStats.entries += bsStats.entries;

            const double batchLoss = bsStats.sqErr / static_cast<double>(bsStats.entries);
            if (!std::isfinite(batchLoss) || batchLoss > 1e6) {
                throw TrainingDivergedError(
                    "train: loss " + std::to_string(batchLoss) + " at epoch " + std::to_string(epoch),
                    static_cast<int>(epoch));
            }

            const Tensor G = mse_loss_grad(P, Y);
            const GradientSet grads = backward_batch(spec, result.params, cache, G, cfg.threads);
            for (std::size_t li = 0; li < spec.layers.size(); ++li) {
                if (!result.params.layers[li].hasParams()) continue;
                Tensor& w = result.params.layers[li].weights;
                Tensor& b = result.params.layers[li].bias;
                const Tensor& gw = grads.layers[li].weights;
                const Tensor& gb = grads.layers[li].bias;
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * gw[i];
                for (std::size_t i = 0; i < b.size(); ++i) b[i] -= cfg.learning_rate * gb[i];
            }
        }

        result.metrics.push_back({epoch, "train",
                                  epochStats.sqErr / static_cast<double>(epochStats.entries),
                                  static_cast<double>(epochStats.correct) /
                                      static_cast<double>(epochStats.pixels)});
        if (!val_set.empty()) {
            const EvalMetrics vm = evaluate(result.params, spec, val_set, cfg.threads);
            result.metrics.push_back({epoch, "val", vm.mse_loss, vm.pixel_accuracy});
        }
    }
    return result;
}

EvalMetrics evaluate(const Parameters& params, const NetworkSpec& spec,
                     std::span<const Sample> dataset, int threads) {
    if (dataset.empty()) throw ArgumentError("evaluate: empty dataset");
    constexpr std::size_t kChunk = 16;
    BatchStats total;
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t pos = 0; pos < dataset.size(); pos += kChunk) {
        const std::size_t bs = std::min(kChunk, dataset.size() - pos);
        std::span<const std::size_t> chunk(idx.data() + pos, bs);
        const Tensor X = gatherBatch(dataset, chunk, false);
        const Tensor Y = gatherBatch(dataset, chunk, true);
        const Tensor P = forward_batch(spec, params, X, nullptr, threads);
        const BatchStats s = batchStats(P, Y);
        total.sqErr += s.sqErr;
        total.correct += s.correct;
        total.pixels += s.pixels;
        total.entries += s.entries;
    }
    return {static_cast<double>(total.correct) / static_cast<double>(total.pixels),
            total.sqErr / static_cast<double>(total.entries)};
}

Tensor get_kernels(const Parameters& params, const NetworkSpec& spec, std::size_t layer_index) {
    if (layer_index >= spec.layers.size() || spec.layers[layer_index].kind != LayerKind::Conv) {
        throw ArgumentError("get_kernels: layer " + std::to_string(layer_index) + " is not a conv layer");
    }
    return params.layers[layer_index].weights;
}

void set_kernels(Parameters& params, const NetworkSpec& spec, std::size_t layer_index,
                 const Tensor& kernels) {
    if (layer_index >= spec.layers.size() || spec.layers[layer_index].kind != LayerKind::Conv) {
        throw ArgumentError("set_kernels: layer " + std::to_string(layer_index) + " is not a conv layer");
    }
    if (!params.layers[layer_index].weights.sameShape(kernels)) {
        throw ArgumentError("set_kernels: shape " + kernels.shapeString() + " does not match " +
                            params.layers[layer_index].weights.shapeString());
    }
    params.layers[layer_index].weights = kernels;
}

namespace {

constexpr char kMagic[8] = {'K', 'F', 'C', 'N', 'P', 'R', 'M', '1'};

void writeU64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t readU64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void writeTensor(std::ofstream& f, const Tensor& t) {
    writeU64(f, t.rank());
    for (std::size_t d : t.shape()) writeU64(f, d);
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor readTensor(std::ifstream& f) {
    const std::uint64_t rank = readU64(f);
    if (rank > 8) throw ArgumentError("load_parameters: corrupt tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = readU64(f);
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw ArgumentError("load_parameters: truncated file");
    return t;
}

}  // namespace

void save_parameters(const std::string& path, const Parameters& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("save_parameters: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    writeU64(f, params.layers.size());
    for (const auto& L : params.layers) {
        writeU64(f, L.hasParams() ? 2 : 0);
        if (L.hasParams()) {
            writeTensor(f, L.weights);
            writeTensor(f, L.bias);
        }
    }
}

Parameters load_parameters(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("load_parameters: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ArgumentError("load_parameters: bad magic in " + path);
    }
    Parameters p;
    const std::uint64_t layers = readU64(f);
    if (layers > 1024) throw ArgumentError("load_parameters: corrupt layer count");
    p.layers.resize(layers);
    for (auto& L : p.layers) {
        const std::uint64_t tensors = readU64(f);
        if (tensors == 2) {
            L.weights = readTensor(f);
            L.bias = readTensor(f);
        } else if (tensors != 0) {
            throw ArgumentError("load_parameters: unexpected tensor count");
        }
    }
    return p;
}

}  // namespace kfcn::net
