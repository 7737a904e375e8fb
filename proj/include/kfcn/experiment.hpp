#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfcn/dynamics.hpp"
#include "kfcn/pipeline.hpp"
#include "kfcn/similarity.hpp"
#include "kfcn/stability.hpp"
#include "kfcn/synth_data.hpp"

namespace kfcn::exp {

/// FNV-1a 64-bit checksum of a file's bytes, as hex.
std::string file_checksum(const std::string& path);

/// Runs the (theta1, theta2, alpha) quadratic form against vdot_direct on
/// random teacher/student triples: max over trials of
/// |vdot + y^T M y| / (1 + |vdot|). Near zero for the derived matrix; the
/// as-printed matrix is expected to disagree.
double quadratic_form_discrepancy(stability::MatrixVariant variant, std::size_t trials,
                                  std::size_t dim, std::uint64_t seed);

struct DynamicsConfig {
    std::string mode = "both";  // "single", "shared" or "both"
    std::size_t dimension = 10;
    double eta = 0.01;
    std::size_t max_steps = 20000;
    double stop_tol = 1e-3;
    std::size_t num_starts = 100;
    double radius_frac = 0.95;
    double teacher_norm = 1.0;
    std::size_t record_trajectories = 3;
};

DynamicsConfig load_dynamics_config(const std::string& path);

/// Experiment configuration for the segmentation commands: the pipeline
/// document plus scene, split and training settings.
struct ExperimentConfig {
    pipeline::PipelineConfig pipeline;
    synth::SceneSpec scene;
    synth::SplitCounts data;
    net::TrainConfig train;
};

ExperimentConfig load_experiment_config(const std::string& path);

// Each run_* writes its artifacts plus a manifest.json into out_dir and
// returns the manifest path. All outputs are deterministic in (config, seed),
// byte-identical for any thread count.
std::string run_dynamics(const DynamicsConfig& cfg, const std::string& out_dir,
                         std::uint64_t seed, int threads);
std::string run_stability(double step, stability::MatrixVariant variant,
                          const std::string& out_dir, int threads);
std::string run_train(const ExperimentConfig& cfg, const std::string& out_dir,
                      std::uint64_t seed, int threads);
std::string run_eval(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_dir, std::uint64_t seed, int threads);
std::string run_swap(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_dir, pipeline::SwapMode mode, std::uint64_t seed,
                     int threads);
std::string run_similarity(const ExperimentConfig& cfg, const std::string& run_dir,
                           const std::string& out_dir, sim::MatchMode mode, std::uint64_t seed);

/// Parses and dispatches the CLI; returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace kfcn::exp
