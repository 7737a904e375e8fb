#include "kfcn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kfcn/rng.hpp"

namespace kfcn::exp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("file_checksum: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char out[32];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

double quadratic_form_discrepancy(stability::MatrixVariant variant, std::size_t trials,
                                  std::size_t dim, std::uint64_t seed) {
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        auto rng = substream(seed, t);
        std::normal_distribution<double> gauss(0.0, 1.0);
        dynamics::KernelVector w1(dim), w2(dim), wf(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            w1[i] = gauss(rng);
            w2[i] = gauss(rng);
            wf[i] = gauss(rng);
        }
        const dynamics::TeacherPair teachers{w1, w2};
        const double vdot = stability::vdot_direct(teachers, wf);
        stability::AngleConfig cfg;
        cfg.theta1 = angle(wf, w1);
        cfg.theta2 = angle(wf, w2);
        cfg.alpha = angle(w1, w2);
        const stability::StabilityMatrix m = variant == stability::MatrixVariant::AsPrinted
                                                 ? stability::m_as_printed(cfg)
                                                 : stability::m_derived(cfg);
        const double y[3] = {norm(w1), norm(w2), norm(wf)};
        double form = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) form += y[i] * m(i, j) * y[j];
        const double rel = std::abs(vdot + form) / (1.0 + std::abs(vdot));
        worst = std::max(worst, rel);
    }
    return worst;
}

namespace {

json loadJson(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
}

struct ManifestWriter {
    json doc;
    std::string dir;

    ManifestWriter(const std::string& subcommand, const std::string& out_dir, std::uint64_t seed,
                   int threads)
        : dir(out_dir) {
        fs::create_directories(out_dir);
        doc["subcommand"] = subcommand;
        doc["seed"] = seed;
        doc["threads"] = threads;
        const auto now = std::chrono::system_clock::now();
        doc["timestamp_unix"] =
            std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
        doc["artifacts"] = json::array();
    }

    void add(const std::string& name) {
        doc["artifacts"].push_back({{"file", name}, {"fnv1a64", file_checksum(dir + "/" + name)}});
    }

    std::string finish() {
        const std::string path = dir + "/manifest.json";
        std::ofstream f(path, std::ios::binary);
        f << doc.dump(2) << "\n";
        return path;
    }
};

void writeBasinCsv(const std::string& path, const dynamics::BasinSummary& summary) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open " + path);
    f << "index,converged,degenerate,steps,terminal_loss,terminal_dist_rel,max_v_increase\n";
    char buf[256];
    for (const auto& s : summary.starts) {
        std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%zu,%.17g,%.17g,%.17g\n", s.index,
                      s.converged ? 1 : 0, s.degenerate ? 1 : 0, s.steps, s.terminal_loss,
                      s.terminal_dist_rel, s.max_v_increase);
        f << buf;
    }
}

json basinSummaryJson(const dynamics::BasinSummary& s) {
    json j;
    j["num_starts"] = s.num_starts;
    j["converged_fraction"] = s.converged_fraction;
    j["max_v_increase"] = s.max_v_increase;
    j["resampled"] = s.resampled;
    j["terminal_loss_hist"] = s.loss_hist;
    j["terminal_loss_hist_max"] = s.hist_max;
    return j;
}

void writeMetricsCsv(const std::string& path, const std::vector<net::EpochMetrics>& metrics) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open " + path);
    f << "epoch,split,loss,accuracy\n";
    char buf[256];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g\n", m.epoch, m.split.c_str(), m.loss,
                      m.accuracy);
        f << buf;
    }
}

}  // namespace

DynamicsConfig load_dynamics_config(const std::string& path) {
    const json j = loadJson(path);
    DynamicsConfig cfg;
    if (j.contains("mode")) cfg.mode = j.at("mode").get<std::string>();
    if (cfg.mode != "single" && cfg.mode != "shared" && cfg.mode != "both") {
        throw ConfigError("dynamics config: mode must be single, shared or both");
    }
    if (j.contains("dimension")) cfg.dimension = j.at("dimension").get<std::size_t>();
    if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
    if (j.contains("max_steps")) cfg.max_steps = j.at("max_steps").get<std::size_t>();
    if (j.contains("stop_tol")) cfg.stop_tol = j.at("stop_tol").get<double>();
    if (j.contains("num_starts")) cfg.num_starts = j.at("num_starts").get<std::size_t>();
    if (j.contains("radius_frac")) cfg.radius_frac = j.at("radius_frac").get<double>();
    if (j.contains("teacher_norm")) cfg.teacher_norm = j.at("teacher_norm").get<double>();
    if (j.contains("record_trajectories"))
        cfg.record_trajectories = j.at("record_trajectories").get<std::size_t>();
    if (cfg.dimension < 2) throw ConfigError("dynamics config: dimension must be >= 2");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    const json j = loadJson(path);
    ExperimentConfig cfg;
    if (!j.contains("pipeline")) throw ConfigError("experiment config: missing key pipeline");
    cfg.pipeline = pipeline::parse_pipeline_config(j.at("pipeline").dump());

    const json scene = j.value("scene", json::object());
    if (scene.contains("height")) cfg.scene.height = scene.at("height").get<std::size_t>();
    if (scene.contains("width")) cfg.scene.width = scene.at("width").get<std::size_t>();
    if (scene.contains("noise_std")) cfg.scene.noise_std = scene.at("noise_std").get<double>();
    if (scene.contains("bg_level")) cfg.scene.bg_level = scene.at("bg_level").get<double>();
    if (scene.contains("obj_level")) cfg.scene.obj_level = scene.at("obj_level").get<double>();
    if (scene.contains("a_min")) cfg.scene.a_min = scene.at("a_min").get<double>();
    if (scene.contains("a_max")) cfg.scene.a_max = scene.at("a_max").get<double>();
    if (scene.contains("b_min")) cfg.scene.b_min = scene.at("b_min").get<double>();
    if (scene.contains("b_max")) cfg.scene.b_max = scene.at("b_max").get<double>();
    if (scene.contains("center_row_jitter"))
        cfg.scene.center_row_jitter = scene.at("center_row_jitter").get<double>();
    if (scene.contains("center_col_jitter"))
        cfg.scene.center_col_jitter = scene.at("center_col_jitter").get<double>();
    // Object boxes follow the pipeline's prior-knowledge regions.
    if (cfg.pipeline.regions.size() == 2) {
        for (std::size_t r = 0; r < 2; ++r) {
            const auto& rs = cfg.pipeline.regions[r];
            cfg.scene.boxes[r] = {rs.row0, rs.col0, rs.height, rs.width};
        }
    }

    if (!j.contains("data")) throw ConfigError("experiment config: missing key data");
    cfg.data.train = j.at("data").at("train").get<std::size_t>();
    cfg.data.val = j.at("data").value("val", 0);
    cfg.data.test = j.at("data").at("test").get<std::size_t>();

    if (!j.contains("train")) throw ConfigError("experiment config: missing key train");
    const json& t = j.at("train");
    cfg.train.learning_rate = t.at("learning_rate").get<double>();
    cfg.train.epochs = t.at("epochs").get<std::size_t>();
    cfg.train.batch_size = t.value("batch_size", 16);
    cfg.train.validate();
    return cfg;
}

std::string run_dynamics(const DynamicsConfig& cfg, const std::string& out_dir,
                         std::uint64_t seed, int threads) {
    ManifestWriter manifest("dynamics", out_dir, seed, threads);
    json summary;

    dynamics::FlowConfig flow;
    flow.eta = cfg.eta;
    flow.max_steps = cfg.max_steps;
    flow.stop_tol = cfg.stop_tol;
    flow.seed = seed;
    flow.validate();

    const std::size_t d = cfg.dimension;
    if (cfg.mode == "single" || cfg.mode == "both") {
        dynamics::KernelVector wStar(d, 0.0);
        wStar[0] = cfg.teacher_norm;
        dynamics::SamplerSpec sampler{wStar, cfg.radius_frac * cfg.teacher_norm, true};
        const auto basins =
            dynamics::basin_experiment_single(wStar, cfg.num_starts, sampler, flow, threads);
        writeBasinCsv(out_dir + "/single_starts.csv", basins);
        manifest.add("single_starts.csv");
        summary["single"] = basinSummaryJson(basins);
        for (std::size_t t = 0; t < std::min(cfg.record_trajectories, cfg.num_starts); ++t) {
            auto rng = substream(seed, t);
            // Re-draw the same start the basin experiment used for index t.
            dynamics::KernelVector start;
            for (;;) {
                std::normal_distribution<double> gauss(0.0, 1.0);
                std::uniform_real_distribution<double> unif(0.0, 1.0);
                start.assign(d, 0.0);
                double n = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    start[i] = gauss(rng);
                    n += start[i] * start[i];
                }
                n = std::sqrt(n);
                const double r = sampler.radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
                for (std::size_t i = 0; i < d; ++i) start[i] = wStar[i] + start[i] * r / n;
                if (norm(start) > 1e-12 && dynamics::in_basin(start, wStar)) break;
            }
            const auto rec = dynamics::integrate_flow_single(start, wStar, flow, true);
            const std::string name = "single_trajectory_" + std::to_string(t) + ".csv";
            dynamics::write_trajectory_csv(out_dir + "/" + name, rec);
            manifest.add(name);
        }
    }
    if (cfg.mode == "shared" || cfg.mode == "both") {
        dynamics::KernelVector w1(d, 0.0), w2(d, 0.0);
        w1[0] = cfg.teacher_norm;
        w2[1] = cfg.teacher_norm;
        const dynamics::TeacherPair teachers{w1, w2};
        dynamics::KernelVector center(d, 0.0);
        center[0] = center[1] = 0.5 * cfg.teacher_norm;
        dynamics::SamplerSpec sampler{center, cfg.teacher_norm, false};
        const auto basins =
            dynamics::basin_experiment_shared(teachers, cfg.num_starts, sampler, flow, threads);
        writeBasinCsv(out_dir + "/shared_starts.csv", basins);
        manifest.add("shared_starts.csv");
        summary["shared"] = basinSummaryJson(basins);
        double minLoss = basins.starts.empty() ? 0.0 : basins.starts.front().terminal_loss;
        for (const auto& s : basins.starts) minLoss = std::min(minLoss, s.terminal_loss);
        summary["shared"]["min_terminal_loss"] = minLoss;
    }

    {
        std::ofstream f(out_dir + "/summary.json", std::ios::binary);
        f << summary.dump(2) << "\n";
    }
    manifest.add("summary.json");
    return manifest.finish();
}

std::string run_stability(double step, stability::MatrixVariant variant,
                          const std::string& out_dir, int threads) {
    ManifestWriter manifest("stability", out_dir, 0, threads);
    const auto report = stability::scan_grid(step, variant, threads, true);
    stability::write_scan_csv(out_dir + "/scan.csv", report);
    manifest.add("scan.csv");

    json summary;
    summary["variant"] = variant == stability::MatrixVariant::AsPrinted ? "printed" : "derived";
    summary["step"] = step;
    summary["per_axis"] = report.per_axis;
    summary["cell_count"] = report.cell_count;
    summary["pd_count"] = report.pd_count;
    summary["feasible_count"] = report.feasible_count;
    summary["feasible_pd_count"] = report.feasible_pd_count;
    summary["d11_positive"] = report.d11_pos;
    summary["d22_positive"] = report.d22_pos;
    summary["d33_positive"] = report.d33_pos;
    // Validation of the quadratic form against the first-principles vdot.
    summary["vdot_form_max_rel_discrepancy"] = quadratic_form_discrepancy(variant, 1000, 6, 2024);
    {
        std::ofstream f(out_dir + "/summary.json", std::ios::binary);
        f << summary.dump(2) << "\n";
    }
    manifest.add("summary.json");
    return manifest.finish();
}

namespace {

void writeAccuracyTable(const std::string& path, const pipeline::EvalMetrics& kfcnOrig,
                        const pipeline::EvalMetrics& kfcnFlip, const pipeline::EvalMetrics& fcnOrig,
                        const pipeline::EvalMetrics& fcnFlip) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open " + path);
    f << "model,images,accuracy,loss\n";
    char buf[160];
    const std::array<std::tuple<const char*, const char*, const pipeline::EvalMetrics*>, 4> rows{{
        {"kfcn", "original", &kfcnOrig},
        {"kfcn", "flipped", &kfcnFlip},
        {"fcn", "original", &fcnOrig},
        {"fcn", "flipped", &fcnFlip},
    }};
    for (const auto& [model, images, m] : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f\n", model, images, m->accuracy, m->mse);
        f << buf;
    }
}

pipeline::TrainedPipeline loadTrained(const ExperimentConfig& cfg, const std::string& run_dir) {
    pipeline::TrainedPipeline tp;
    tp.cfg = cfg.pipeline;
    tp.region_spec = cfg.pipeline.regionNetSpec();
    tp.baseline_spec = cfg.pipeline.baselineNetSpec(cfg.scene.height, cfg.scene.width);
    for (std::size_t r = 0; r < cfg.pipeline.n; ++r) {
        tp.region_params.push_back(
            net::load_parameters(run_dir + "/region_" + std::to_string(r + 1) + ".params"));
    }
    tp.baseline_params = net::load_parameters(run_dir + "/baseline.params");
    return tp;
}

synth::Dataset makeDataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    return synth::generate_dataset(cfg.scene, cfg.data, seed);
}

}  // namespace

std::string run_train(const ExperimentConfig& cfg, const std::string& out_dir, std::uint64_t seed,
                      int threads) {
    ManifestWriter manifest("train", out_dir, seed, threads);
    const synth::Dataset ds = makeDataset(cfg, seed);
    synth::write_dataset(out_dir + "/dataset", ds);

    net::TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.threads = threads;
    const pipeline::TrainedPipeline tp = pipeline::train_all(ds, cfg.pipeline, tc);

    for (std::size_t r = 0; r < tp.region_params.size(); ++r) {
        const std::string name = "region_" + std::to_string(r + 1) + ".params";
        net::save_parameters(out_dir + "/" + name, tp.region_params[r]);
        manifest.add(name);
        const std::string metricsName = "metrics_region" + std::to_string(r + 1) + ".csv";
        writeMetricsCsv(out_dir + "/" + metricsName, tp.region_metrics[r]);
        manifest.add(metricsName);
    }
    net::save_parameters(out_dir + "/baseline.params", tp.baseline_params);
    manifest.add("baseline.params");
    writeMetricsCsv(out_dir + "/metrics_baseline.csv", tp.baseline_metrics);
    manifest.add("metrics_baseline.csv");

    // Example segmentations of the first test image, for eyeballing runs.
    if (!ds.test.empty()) {
        const synth::SynthSample& s = ds.samples[ds.test.front()];
        pipeline::write_segmentation(out_dir, "example_kfcn",
                                     pipeline::kfcn_predict(s.image, cfg.pipeline, tp.region_params));
        pipeline::write_segmentation(
            out_dir, "example_fcn",
            pipeline::baseline_fcn_predict(s.image, tp.baseline_spec, tp.baseline_params));
    }
    return manifest.finish();
}

std::string run_eval(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_dir, std::uint64_t seed, int threads) {
    ManifestWriter manifest("eval", out_dir, seed, threads);
    const synth::Dataset ds = makeDataset(cfg, seed);
    const pipeline::TrainedPipeline tp = loadTrained(cfg, run_dir);
    const auto kfcnOrig = pipeline::evaluate_kfcn(tp, ds, ds.test, false, threads);
    const auto kfcnFlip = pipeline::evaluate_kfcn(tp, ds, ds.test, true, threads);
    const auto fcnOrig = pipeline::evaluate_baseline(tp, ds, ds.test, false, threads);
    const auto fcnFlip = pipeline::evaluate_baseline(tp, ds, ds.test, true, threads);
    writeAccuracyTable(out_dir + "/accuracy_table.csv", kfcnOrig, kfcnFlip, fcnOrig, fcnFlip);
    manifest.add("accuracy_table.csv");
    return manifest.finish();
}

std::string run_swap(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_dir, pipeline::SwapMode mode, std::uint64_t seed,
                     int threads) {
    ManifestWriter manifest("swap", out_dir, seed, threads);
    const synth::Dataset ds = makeDataset(cfg, seed);
    const pipeline::TrainedPipeline tp = loadTrained(cfg, run_dir);
    const pipeline::SwapReport report = pipeline::swap_experiment(tp, mode, ds, ds.test, threads);

    std::ofstream f(out_dir + "/swap_metrics.csv", std::ios::binary);
    f << "model,variant,accuracy,loss\n";
    char buf[160];
    const std::array<std::tuple<const char*, const char*, const pipeline::EvalMetrics*>, 4> rows{{
        {"kfcn", "before", &report.kfcn_before},
        {"kfcn", "after", &report.kfcn_after},
        {"fcn", "before", &report.fcn_before},
        {"fcn", "after", &report.fcn_after},
    }};
    for (const auto& [model, variant, m] : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f\n", model, variant, m->accuracy, m->mse);
        f << buf;
    }
    f.close();
    manifest.doc["mode"] = mode == pipeline::SwapMode::SwapKernels ? "swap_kernels" : "flip";
    manifest.add("swap_metrics.csv");
    return manifest.finish();
}

std::string run_similarity(const ExperimentConfig& cfg, const std::string& run_dir,
                           const std::string& out_dir, sim::MatchMode mode, std::uint64_t seed) {
    ManifestWriter manifest("similarity", out_dir, seed, 1);
    const pipeline::TrainedPipeline tp = loadTrained(cfg, run_dir);
    if (tp.region_params.size() != 2) {
        throw ArgumentError("run_similarity: needs exactly two region nets");
    }
    const auto rows = sim::layer_report(tp.region_spec, tp.region_params[0], tp.region_params[1],
                                        tp.baseline_spec, tp.baseline_params, mode);
    sim::write_report_csv(out_dir + "/similarity.csv", rows);
    manifest.add("similarity.csv");
    return manifest.finish();
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Knowledge-based FCN laboratory: gradient-flow dynamics, stability scans and "
                 "desk-scale segmentation experiments"};
    app.require_subcommand(1);

    std::string outRoot = "runs";
    if (const char* env = std::getenv("KFCN_LAB_OUT")) outRoot = env;

    std::string configPath, runDir, outDir;
    std::uint64_t seed = 7;
    int threads = 1;
    double step = 3.14159265358979323846 / 90.0;
    std::string variant = "printed";
    std::string swapMode = "flip";
    std::string matchMode = "permutation";
    long long stepsOverride = -1;

    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--threads", threads, "worker threads (affects speed, never results)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", outDir, "output directory (default <out-root>/<subcommand>-<seed>)");

    auto* dyn = app.add_subcommand("dynamics", "basin and flow experiments for the expected field");
    dyn->add_option("--config", configPath, "dynamics config JSON");
    dyn->add_option("--steps", stepsOverride, "override max_steps");

    auto* stab = app.add_subcommand("stability", "grid scan of the 3x3 stability matrix");
    stab->add_option("--step", step, "grid step in radians (0, pi/8]");
    stab->add_option("--variant", variant, "matrix variant: printed or derived")
        ->check(CLI::IsMember({"printed", "derived"}));

    auto* trainCmd = app.add_subcommand("train", "generate data and train region nets + baseline");
    trainCmd->add_option("--config", configPath, "experiment config JSON")->required();

    auto* evalCmd = app.add_subcommand("eval", "accuracy table on original and flipped test sets");
    evalCmd->add_option("--config", configPath, "experiment config JSON")->required();
    evalCmd->add_option("--run", runDir, "directory with trained .params files")->required();

    auto* swapCmd = app.add_subcommand("swap", "kernel-swap / flip generalization experiment");
    swapCmd->add_option("--config", configPath, "experiment config JSON")->required();
    swapCmd->add_option("--run", runDir, "directory with trained .params files")->required();
    swapCmd->add_option("--mode", swapMode, "swap_kernels or flip")
        ->check(CLI::IsMember({"swap_kernels", "flip"}));

    auto* simCmd = app.add_subcommand("similarity", "point-wise kernel similarity report");
    simCmd->add_option("--config", configPath, "experiment config JSON")->required();
    simCmd->add_option("--run", runDir, "directory with trained .params files")->required();
    simCmd->add_option("--match", matchMode, "permutation or with_replacement")
        ->check(CLI::IsMember({"permutation", "with_replacement"}));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const std::string sub = app.get_subcommands().front()->get_name();
        if (outDir.empty()) outDir = outRoot + "/" + sub + "-" + std::to_string(seed);

        if (sub == "dynamics") {
            DynamicsConfig cfg =
                configPath.empty() ? DynamicsConfig{} : load_dynamics_config(configPath);
            if (stepsOverride == 0) throw ArgumentError("max_steps must be >= 1");
            if (stepsOverride > 0) cfg.max_steps = static_cast<std::size_t>(stepsOverride);
            run_dynamics(cfg, outDir, seed, threads);
        } else if (sub == "stability") {
            const auto v = variant == "printed" ? stability::MatrixVariant::AsPrinted
                                                : stability::MatrixVariant::Derived;
            run_stability(step, v, outDir, threads);
        } else if (sub == "train") {
            run_train(load_experiment_config(configPath), outDir, seed, threads);
        } else if (sub == "eval") {
            run_eval(load_experiment_config(configPath), runDir, outDir, seed, threads);
        } else if (sub == "swap") {
            const auto m = swapMode == "swap_kernels" ? pipeline::SwapMode::SwapKernels
                                                      : pipeline::SwapMode::FlipImage;
            run_swap(load_experiment_config(configPath), runDir, outDir, m, seed, threads);
        } else if (sub == "similarity") {
            const auto m = matchMode == "permutation" ? sim::MatchMode::Permutation
                                                      : sim::MatchMode::WithReplacement;
            run_similarity(load_experiment_config(configPath), runDir, outDir, m, seed);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace kfcn::exp
