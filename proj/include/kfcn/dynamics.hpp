#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kfcn/errors.hpp"

namespace kfcn::dynamics {

/// Flattened kernel vector w. Dimension >= 2; zero norm is rejected by every
/// angle-dependent operation.
using KernelVector = std::vector<double>;

struct TeacherPair {
    KernelVector w_star_1;
    KernelVector w_star_2;
};

struct FlowConfig {
    double eta = 0.01;             // explicit Euler step size
    std::size_t max_steps = 20000; // number of updates
    double stop_tol = 1e-3;        // relative distance to the nearest teacher
    std::uint64_t seed = 0;
    void validate() const;
};

struct TrajectoryRow {
    std::size_t step;
    double v;         // Lyapunov value
    double dist_rel;  // ||w - w*|| / ||w*|| (nearest teacher in the shared case)
    double theta1;
    double theta2;    // equals theta1 for the single-teacher field
    double loss;      // population loss (summed over teachers when shared)
};

struct TrajectoryRecord {
    std::vector<TrajectoryRow> rows;  // consecutive steps starting at 0
    KernelVector final_w;
    bool converged = false;
    bool degenerate = false;   // iterate norm underflowed below 1e-12
    double max_v_increase = 0; // max over steps of V(t+1) - V(t)
    std::size_t steps_taken = 0;
};

/// Expected update E[dw] for one ReLU unit against a single teacher:
///   (w* - w)/2 + ((||w*||/||w||) sin(theta) w - theta w*) / (2 pi).
KernelVector expected_delta_single(const KernelVector& w, const KernelVector& w_star);

/// Shared-kernel field: sum of the two single-teacher deltas.
KernelVector expected_delta_shared(const KernelVector& w_f, const TeacherPair& teachers);

struct McEstimate {
    KernelVector mean;
    KernelVector std_error;  // per component
    std::size_t num_samples = 0;
};

/// Monte Carlo estimate of the expected update over standard Gaussian inputs:
/// mean of -(relu(x.w) - relu(x.w*)) 1[x.w > 0] x. Samples are drawn in fixed
/// blocks with per-block RNG substreams, so the result is byte-identical for
/// any thread count. Requires num_samples >= 1000.
McEstimate mc_expected_delta(const KernelVector& w, const KernelVector& w_star,
                             std::size_t num_samples, std::uint64_t seed, int threads = 1);

/// Shared variant: the per-sample estimate sums over both teachers.
McEstimate mc_expected_delta_shared(const KernelVector& w_f, const TeacherPair& teachers,
                                    std::size_t num_samples, std::uint64_t seed, int threads = 1);

/// Closed-form E[(relu(x.w) - relu(x.w*))^2] for standard Gaussian x:
///   ||w||^2/2 + ||w*||^2/2 - (||w|| ||w*||/pi) (sin t + (pi - t) cos t).
double population_loss(const KernelVector& w, const KernelVector& w_star);

/// Shared-case loss: sum of population_loss against both teachers.
double population_loss_shared(const KernelVector& w_f, const TeacherPair& teachers);

/// Strict test of w inside the basin {w : ||w - w*|| < ||w*||}.
bool in_basin(const KernelVector& w, const KernelVector& w_star);

/// Explicit Euler integration of the expected-gradient flow. Stops early on
/// convergence (dist_rel < stop_tol) or on a near-zero iterate (degenerate).
/// record_rows = false keeps only the summary fields.
TrajectoryRecord integrate_flow_single(const KernelVector& start, const KernelVector& w_star,
                                       const FlowConfig& cfg, bool record_rows = true);
TrajectoryRecord integrate_flow_shared(const KernelVector& start, const TeacherPair& teachers,
                                       const FlowConfig& cfg, bool record_rows = true);

struct SamplerSpec {
    KernelVector center;
    double radius = 0.95;
    bool filter_to_basin = false;  // rejection-filter starts to the basin of w*
};

struct BasinStartResult {
    std::size_t index;
    bool converged;
    bool degenerate;
    std::size_t steps;
    double terminal_loss;
    double terminal_dist_rel;
    double max_v_increase;
};

struct BasinSummary {
    std::size_t num_starts = 0;
    double converged_fraction = 0;
    double max_v_increase = 0;
    std::size_t resampled = 0;  // zero-norm or filtered-out draws
    std::vector<BasinStartResult> starts;
    std::vector<std::size_t> loss_hist;  // 20 equal bins over [0, hist_max]
    double hist_max = 0;
};

/// Runs integrate_flow from num_starts sampled points. Starts are sampled
/// uniformly in the ball around sampler.center of radius sampler.radius; each
/// start owns an RNG substream keyed by its index, so results do not depend
/// on the worker count.
BasinSummary basin_experiment_single(const KernelVector& w_star, std::size_t num_starts,
                                     const SamplerSpec& sampler, const FlowConfig& cfg,
                                     int threads = 1);
BasinSummary basin_experiment_shared(const TeacherPair& teachers, std::size_t num_starts,
                                     const SamplerSpec& sampler, const FlowConfig& cfg,
                                     int threads = 1);

/// CSV with header step,v,dist_rel,theta1,theta2,loss.
void write_trajectory_csv(const std::string& path, const TrajectoryRecord& record);

}  // namespace kfcn::dynamics
