#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "kfcn/pipeline.hpp"
#include "kfcn/synth_data.hpp"

using namespace kfcn;
using namespace kfcn::synth;
using namespace kfcn::pipeline;

namespace {

SceneSpec smallScene() {
    SceneSpec s;
    s.height = 32;
    s.width = 32;
    s.boxes = {{{0, 0, 32, 16}, {0, 16, 32, 16}}};
    s.a_min = 5;
    s.a_max = 7;
    s.b_min = 3;
    s.b_max = 4;
    s.center_row_jitter = 2;
    s.center_col_jitter = 1.5;
    return s;
}

PipelineConfig smallPipeline() {
    PipelineConfig cfg;
    cfg.n = 2;
    cfg.patch_h = 32;
    cfg.patch_w = 16;
    cfg.regions = {{0, 0, 32, 16, 1, 1}, {0, 16, 32, 16, 2, 2}};
    cfg.channels = 4;
    return cfg;
}

// Independent resampler used to cross-check extract_patches round trips.
Tensor referenceBilinear(const Tensor& in, std::size_t oh, std::size_t ow) {
    Tensor out({oh, ow});
    for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
            auto clampd = [](double v, double lo, double hi) {
                return std::min(hi, std::max(lo, v));
            };
            const double y = clampd((i + 0.5) * in.dim(0) / static_cast<double>(oh) - 0.5, 0.0,
                                    in.dim(0) - 1.0);
            const double x = clampd((j + 0.5) * in.dim(1) / static_cast<double>(ow) - 0.5, 0.0,
                                    in.dim(1) - 1.0);
            const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
            const std::size_t y1 = std::min(y0 + 1, in.dim(0) - 1);
            const std::size_t x1 = std::min(x0 + 1, in.dim(1) - 1);
            const double ty = y - y0, tx = x - x0;
            out.at(i, j) = in.at(y0, x0) * (1 - ty) * (1 - tx) + in.at(y0, x1) * (1 - ty) * tx +
                           in.at(y1, x0) * ty * (1 - tx) + in.at(y1, x1) * ty * tx;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("dataset generation is bit-deterministic") {
    const SceneSpec spec = smallScene();
    const Dataset a = generate_dataset(spec, 12, 99);
    const Dataset b = generate_dataset(spec, 12, 99);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        for (std::size_t p = 0; p < a.samples[i].image.size(); ++p) {
            CHECK(a.samples[i].image[p] == b.samples[i].image[p]);
            CHECK(a.samples[i].mask[p] == b.samples[i].mask[p]);
        }
    }
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);

    const Dataset c = generate_dataset(spec, 12, 100);
    bool differs = false;
    for (std::size_t p = 0; p < a.samples[0].image.size(); ++p) {
        if (a.samples[0].image[p] != c.samples[0].image[p]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("split sizes: ratio default and explicit counts") {
    const SceneSpec spec = smallScene();
    const Dataset d = generate_dataset(spec, 20, 1);
    CHECK(d.train.size() == 14);  // 70% plus remainder
    CHECK(d.val.size() == 3);
    CHECK(d.test.size() == 3);

    const Dataset e = generate_dataset(spec, SplitCounts{10, 2, 5}, 1);
    CHECK(e.samples.size() == 17);
    CHECK(e.train.size() == 10);
    CHECK(e.val.size() == 2);
    CHECK(e.test.size() == 5);
    CHECK_THROWS_AS(generate_dataset(spec, SplitCounts{0, 1, 1}, 1), ConfigError);
}

TEST_CASE("every labeled pixel lies inside its box; background is present") {
    const SceneSpec spec = smallScene();
    const Dataset ds = generate_dataset(spec, 1000, 7);
    for (const auto& s : ds.samples) {
        std::size_t bg = 0;
        for (std::size_t i = 0; i < spec.height; ++i) {
            for (std::size_t j = 0; j < spec.width; ++j) {
                const long label = std::llround(s.mask.at(i, j));
                if (label == 0) {
                    ++bg;
                    continue;
                }
                REQUIRE(label >= 1);
                REQUIRE(label <= 2);
                const auto& box = spec.boxes[static_cast<std::size_t>(label - 1)];
                CHECK(i >= box[0]);
                CHECK(i < box[0] + box[2]);
                CHECK(j >= box[1]);
                CHECK(j < box[1] + box[3]);
            }
        }
        CHECK(bg > 0);
    }
}

TEST_CASE("mean object area tracks the nominal ellipse area") {
    const SceneSpec spec = smallScene();
    const Dataset ds = generate_dataset(spec, 200, 11);
    double objPixels = 0;
    for (const auto& s : ds.samples) {
        for (std::size_t p = 0; p < s.mask.size(); ++p) {
            if (s.mask[p] > 0.5) objPixels += 1.0;
        }
    }
    const double meanFrac = objPixels / (200.0 * 2.0 * spec.height * spec.width);
    const double nominal = std::numbers::pi * 0.5 * (spec.a_min + spec.a_max) * 0.5 *
                           (spec.b_min + spec.b_max) /
                           static_cast<double>(spec.height * spec.width);
    CHECK(meanFrac >= 0.8 * nominal);
    CHECK(meanFrac <= 1.2 * nominal);
}

TEST_CASE("scene validation rejects bad boxes") {
    SceneSpec tiny = smallScene();
    tiny.boxes[0] = {0, 0, 6, 6};
    CHECK_THROWS_AS(tiny.validate(), ConfigError);
    SceneSpec out = smallScene();
    out.boxes[1] = {0, 20, 32, 16};  // exceeds image width
    CHECK_THROWS_AS(out.validate(), ConfigError);
    SceneSpec cramped = smallScene();
    cramped.a_max = 40;  // shape cannot fit the box
    CHECK_THROWS_AS(cramped.validate(), ConfigError);
}

TEST_CASE("flip_lr: involution, column sums, label swap on symmetric scenes") {
    const SceneSpec spec = smallScene();
    const Dataset ds = generate_dataset(spec, 3, 5);
    for (const auto& s : ds.samples) {
        const SynthSample once = flip_lr(s);
        const SynthSample twice = flip_lr(once);
        for (std::size_t p = 0; p < s.image.size(); ++p) {
            CHECK(twice.image[p] == s.image[p]);
            CHECK(twice.mask[p] == s.mask[p]);
        }
        for (std::size_t i = 0; i < spec.height; ++i) {
            double fwd = 0, rev = 0;
            for (std::size_t j = 0; j < spec.width; ++j) {
                fwd += s.image.at(i, j);
                rev += once.image.at(i, spec.width - 1 - j);
            }
            CHECK(fwd == doctest::Approx(rev).epsilon(1e-12));
        }
    }

    // Hand-built mirror-symmetric image: flip keeps the image, labels swap.
    Tensor img({4, 4}, 0.1);
    Tensor mask({4, 4}, 0.0);
    img.at(1, 0) = img.at(1, 3) = 0.9;
    mask.at(1, 0) = 1.0;
    mask.at(1, 3) = 2.0;
    const SynthSample flipped = flip_lr({img, mask});
    for (std::size_t p = 0; p < img.size(); ++p) CHECK(flipped.image[p] == img[p]);
    CHECK(flipped.mask.at(1, 0) == 2.0);
    CHECK(flipped.mask.at(1, 3) == 1.0);
}

TEST_CASE("PGM round trip: masks exact, images within quantization") {
    namespace fs = std::filesystem;
    const SceneSpec spec = smallScene();
    const Dataset ds = generate_dataset(spec, 3, 21);
    const std::string dir = (fs::temp_directory_path() / "kfcn_pgm_test").string();
    fs::create_directories(dir);
    write_pgm(dir + "/mask.pgm", ds.samples[0].mask, 2, 1.0);
    const Tensor mask = read_pgm(dir + "/mask.pgm", 1.0);
    for (std::size_t p = 0; p < mask.size(); ++p) CHECK(mask[p] == ds.samples[0].mask[p]);

    write_pgm(dir + "/img.pgm", ds.samples[0].image, 255, 255.0);
    const Tensor img = read_pgm(dir + "/img.pgm", 255.0);
    for (std::size_t p = 0; p < img.size(); ++p) {
        CHECK(std::abs(img[p] - ds.samples[0].image[p]) <= 0.5 / 255.0 + 1e-12);
    }
    fs::remove_all(dir);
}

TEST_CASE("write_dataset emits files plus a manifest") {
    namespace fs = std::filesystem;
    const Dataset ds = generate_dataset(smallScene(), 4, 31);
    const std::string dir = (fs::temp_directory_path() / "kfcn_ds_test").string();
    write_dataset(dir, ds);
    CHECK(fs::exists(dir + "/manifest.json"));
    CHECK(fs::exists(dir + "/sample_0_image.pgm"));
    CHECK(fs::exists(dir + "/sample_3_mask.pgm"));
    fs::remove_all(dir);
}

TEST_CASE("one_hot encodes labels and rejects out-of-range values") {
    Tensor mask({2, 2}, 0.0);
    mask.at(0, 1) = 1.0;
    mask.at(1, 0) = 2.0;
    const Tensor oh = one_hot(mask, 3);
    CHECK(oh.at(0, 0, 0) == 1.0);
    CHECK(oh.at(1, 0, 1) == 1.0);
    CHECK(oh.at(2, 1, 0) == 1.0);
    CHECK(oh.at(0, 1, 1) == 1.0);
    Tensor bad({1, 1}, 5.0);
    CHECK_THROWS_AS(one_hot(bad, 3), ArgumentError);
}

TEST_CASE("extract_patches: identity crops are bit-exact") {
    std::mt19937_64 rng(41);
    Tensor image({32, 32});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t p = 0; p < image.size(); ++p) image[p] = unif(rng);

    PipelineConfig whole;
    whole.n = 1;
    whole.patch_h = 32;
    whole.patch_w = 32;
    whole.regions = {{0, 0, 32, 32, 1, 1}};
    const auto patches = extract_patches(image, whole);
    REQUIRE(patches.size() == 1);
    for (std::size_t p = 0; p < image.size(); ++p) CHECK(patches[0][p] == image[p]);

    const auto halves = extract_patches(image, smallPipeline());
    REQUIRE(halves.size() == 2);
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            CHECK(halves[0].at(i, j) == image.at(i, j));
            CHECK(halves[1].at(i, j) == image.at(i, j + 16));
        }
    }
}

TEST_CASE("patch resize round trip matches the reference resampler") {
    std::mt19937_64 rng(43);
    Tensor box({32, 32});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t p = 0; p < box.size(); ++p) box[p] = unif(rng);
    const Tensor down = resize_bilinear(box, 16, 16);
    const Tensor up = resize_bilinear(down, 32, 32);
    const Tensor refDown = referenceBilinear(box, 16, 16);
    const Tensor refUp = referenceBilinear(refDown, 32, 32);
    double worst = 0.0;
    for (std::size_t p = 0; p < box.size(); ++p) {
        CHECK(up[p] == doctest::Approx(refUp[p]).epsilon(1e-12));
        worst = std::max(worst, std::abs(up[p] - box[p]));
    }
    // Smoothing error is bounded by the local oscillation of the input.
    CHECK(worst <= 1.0);
    CHECK(worst > 0.0);
}

TEST_CASE("pipeline config JSON parsing follows the documented schema") {
    const std::string doc = R"({
        "n": 2, "patch": [32, 16],
        "regions": [{"box": [0, 0, 32, 16], "class": 1},
                     {"box": [0, 16, 32, 16], "class": 2}],
        "overlap": "average"
    })";
    const PipelineConfig cfg = parse_pipeline_config(doc);
    CHECK(cfg.n == 2);
    CHECK(cfg.patch_h == 32);
    CHECK(cfg.regions[1].col0 == 16);
    CHECK(cfg.regions[1].class_label == 2);
    cfg.validate(32, 32);

    CHECK_THROWS_AS(parse_pipeline_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_pipeline_config(R"({"n": 2})"), ConfigError);

    PipelineConfig bad = cfg;
    bad.regions[0].width = 40;  // out of bounds at load time
    CHECK_THROWS_AS(bad.validate(32, 32), ConfigError);
    PipelineConfig badOverlap = cfg;
    badOverlap.overlap = "max";
    CHECK_THROWS_AS(badOverlap.validate(32, 32), ConfigError);
}

TEST_CASE("sew_up: background outside, pass-through inside, averaged overlaps") {
    const Tensor empty = sew_up({}, 8, 8, 3);
    for (std::size_t p = 0; p < 64; ++p) {
        CHECK(empty[p] == (p < 64 ? 1.0 : 0.0));  // channel 0 everywhere
    }
    for (std::size_t p = 64; p < empty.size(); ++p) CHECK(empty[p] == 0.0);

    RegionSpec box{2, 2, 4, 4, 1, 1};
    Tensor oneHot({3, 4, 4}, 0.0);
    for (std::size_t p = 0; p < 16; ++p) oneHot[16 + p] = 1.0;  // class 1 everywhere
    const Tensor sewn = sew_up({{box, oneHot}}, 8, 8, 3);
    CHECK(sewn.at(1, 3, 3) == 1.0);
    CHECK(sewn.at(0, 3, 3) == 0.0);
    CHECK(sewn.at(0, 0, 0) == 1.0);  // outside: background exactly 1
    CHECK(sewn.at(1, 0, 0) == 0.0);

    // Two overlapping boxes: overlap pixels average the two distributions.
    RegionSpec left{0, 0, 4, 6, 1, 1};
    RegionSpec right{0, 2, 4, 6, 2, 2};
    Tensor p1({3, 4, 6}, 0.0), p2({3, 4, 6}, 0.0);
    for (std::size_t p = 0; p < 24; ++p) {
        p1[24 + p] = 0.75;
        p1[p] = 0.25;
        p2[48 + p] = 0.5;
        p2[p] = 0.5;
    }
    const Tensor two = sew_up({{left, p1}, {right, p2}}, 4, 8, 3);
    CHECK(two.at(0, 1, 3) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(two.at(1, 1, 3) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(two.at(2, 1, 3) == doctest::Approx(0.25).epsilon(1e-12));

    // Region list order cannot change the result, bit for bit.
    const Tensor swapped = sew_up({{right, p2}, {left, p1}}, 4, 8, 3);
    for (std::size_t p = 0; p < two.size(); ++p) CHECK(two[p] == swapped[p]);

    Tensor wrongChannels({2, 4, 6}, 0.5);
    CHECK_THROWS_AS(sew_up({{left, wrongChannels}}, 4, 8, 3), ArgumentError);
}

TEST_CASE("kfcn_predict with zero nets: uniform inside boxes, background outside") {
    const PipelineConfig cfg = smallPipeline();
    const net::NetworkSpec spec = cfg.regionNetSpec();
    std::vector<net::Parameters> params{net::zero_parameters(spec), net::zero_parameters(spec)};
    const Dataset ds = generate_dataset(smallScene(), 3, 51);
    const SegmentationResult res = kfcn_predict(ds.samples[0].image, cfg, params);
    REQUIRE(res.prob.shape() == std::vector<std::size_t>{3, 32, 32});
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t j = 0; j < 32; ++j) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = res.prob.at(c, i, j);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
            // Both boxes tile the image here, so probabilities are uniform.
            CHECK(res.prob.at(0, i, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
        }
    }

    // Shrink the boxes: pixels outside every box are pure background.
    PipelineConfig inset = cfg;
    inset.regions = {{4, 2, 16, 10, 1, 1}, {4, 18, 16, 10, 2, 2}};
    inset.patch_h = 16;
    inset.patch_w = 10;
    net::NetworkSpec insetSpec = inset.regionNetSpec();
    std::vector<net::Parameters> insetParams{net::zero_parameters(insetSpec),
                                             net::zero_parameters(insetSpec)};
    const SegmentationResult res2 = kfcn_predict(ds.samples[0].image, inset, insetParams);
    CHECK(res2.prob.at(0, 0, 0) == 1.0);
    CHECK(res2.prob.at(1, 0, 0) == 0.0);
    CHECK(res2.labels.at(0, 0) == 0.0);
}

TEST_CASE("single whole-image region collapses to the baseline, bit-exact") {
    PipelineConfig whole;
    whole.n = 1;
    whole.patch_h = 32;
    whole.patch_w = 32;
    whole.regions = {{0, 0, 32, 32, 1, 1}};
    whole.channels = 4;
    const net::NetworkSpec spec = net::make_small_fcn(32, 32, 2, 4);
    const net::Parameters params = net::init_parameters(spec, 77);
    const Dataset ds = generate_dataset(smallScene(), 3, 61);

    // A 2-class spec matches n = 1 (one object class + background).
    const SegmentationResult kfcn = kfcn_predict(ds.samples[0].image, whole, {params});
    const SegmentationResult fcn = baseline_fcn_predict(ds.samples[0].image, spec, params);
    REQUIRE(kfcn.prob.sameShape(fcn.prob));
    for (std::size_t p = 0; p < kfcn.prob.size(); ++p) CHECK(kfcn.prob[p] == fcn.prob[p]);
    for (std::size_t p = 0; p < kfcn.labels.size(); ++p) CHECK(kfcn.labels[p] == fcn.labels[p]);
}

TEST_CASE("probability maps stay normalized after a real resize back") {
    PipelineConfig cfg = smallPipeline();
    cfg.patch_h = 16;  // forces an actual resample back to 32x16 boxes
    cfg.patch_w = 8;
    const net::NetworkSpec spec = cfg.regionNetSpec();
    std::vector<net::Parameters> params{net::init_parameters(spec, 5),
                                        net::init_parameters(spec, 6)};
    const Dataset ds = generate_dataset(smallScene(), 3, 71);
    const SegmentationResult res = kfcn_predict(ds.samples[0].image, cfg, params);
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t j = 0; j < 32; ++j) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = res.prob.at(c, i, j);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("flipped_regions pairs mirrored partners") {
    const std::vector<RegionSpec> halves{{0, 0, 32, 16, 1, 1}, {0, 16, 32, 16, 2, 2}};
    const auto flipped = flipped_regions(halves, 32);
    REQUIRE(flipped.size() == 2);
    // Region 1 keeps its slot (the mirror of box 2) and its identity.
    CHECK(flipped[0].col0 == 0);
    CHECK(flipped[0].region_index == 1);
    CHECK(flipped[0].class_label == 1);
    CHECK(flipped[1].col0 == 16);

    const std::vector<RegionSpec> offset{{12, 4, 40, 44, 1, 1}, {12, 20, 40, 44, 2, 2}};
    const auto f2 = flipped_regions(offset, 64);
    CHECK(f2[0].col0 == 0);   // mirror of box 2
    CHECK(f2[1].col0 == 16);  // mirror of box 1
}

TEST_CASE("conv layers commute with mirroring when the kernel mirrors too") {
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Tensor x({2, 6, 8});
    for (std::size_t p = 0; p < x.size(); ++p) x[p] = unif(rng);
    Tensor k({3, 2, 3, 3});
    for (std::size_t p = 0; p < k.size(); ++p) k[p] = unif(rng);
    Tensor kFlipped({3, 2, 3, 3});
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t u = 0; u < 3; ++u)
                for (std::size_t v = 0; v < 3; ++v) kFlipped.at(o, c, u, v) = k.at(o, c, u, 2 - v);
    const Tensor lhs = conv2d_same(flip_columns(x), kFlipped);
    const Tensor rhs = flip_columns(conv2d_same(x, k));
    REQUIRE(lhs.sameShape(rhs));
    for (std::size_t p = 0; p < lhs.size(); ++p) {
        CHECK(lhs[p] == doctest::Approx(rhs[p]).epsilon(1e-12));
    }
}

TEST_CASE("swap experiment with identical region parameters changes nothing") {
    const SceneSpec scene = smallScene();
    PipelineConfig cfg = smallPipeline();
    const Dataset ds = generate_dataset(scene, SplitCounts{6, 2, 3}, 91);

    TrainedPipeline tp;
    tp.cfg = cfg;
    tp.region_spec = cfg.regionNetSpec();
    const net::Parameters shared = net::init_parameters(tp.region_spec, 13);
    tp.region_params = {shared, shared};
    tp.baseline_spec = cfg.baselineNetSpec(scene.height, scene.width);
    tp.baseline_params = net::init_parameters(tp.baseline_spec, 14);

    const SwapReport rep = swap_experiment(tp, SwapMode::SwapKernels, ds, ds.test, 2);
    CHECK(rep.kfcn_after.accuracy == rep.kfcn_before.accuracy);
    CHECK(rep.kfcn_after.mse == rep.kfcn_before.mse);
    CHECK(rep.fcn_after.accuracy == rep.fcn_before.accuracy);
}

TEST_CASE("train_all runs end to end on a tiny config") {
    SceneSpec scene = smallScene();
    PipelineConfig cfg = smallPipeline();
    const Dataset ds = generate_dataset(scene, SplitCounts{8, 2, 3}, 101);
    net::TrainConfig tc;
    tc.learning_rate = 1.0;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 3;
    tc.threads = 2;
    const TrainedPipeline tp = train_all(ds, cfg, tc);
    REQUIRE(tp.region_params.size() == 2);
    CHECK(tp.region_metrics[0].size() == 4);  // 2 epochs x {train, val}
    CHECK(tp.baseline_metrics.size() == 4);
    const EvalMetrics kfcn = evaluate_kfcn(tp, ds, ds.test, false, 2);
    CHECK(kfcn.accuracy >= 0.0);
    CHECK(kfcn.accuracy <= 1.0);
    CHECK(kfcn.mse >= 0.0);
    const SwapReport flip = swap_experiment(tp, SwapMode::FlipImage, ds, ds.test, 2);
    CHECK(flip.kfcn_after.accuracy >= 0.0);
    CHECK(flip.fcn_after.accuracy >= 0.0);
}
