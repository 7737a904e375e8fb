#include "kfcn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "kfcn/parallel.hpp"
#include "kfcn/rng.hpp"
#include "kfcn/tensor.hpp"

namespace kfcn::dynamics {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDegenerateNorm = 1e-12;

void requireSameDim(const KernelVector& a, const KernelVector& b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": dimension " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
    if (a.size() < 2) {
        throw DimensionError(std::string(what) + ": kernel dimension must be >= 2");
    }
}

double requireNorm(const KernelVector& v, const char* what) {
    const double n = norm(v);
    if (n == 0.0) throw DegenerateVectorError(std::string(what) + ": zero-norm kernel vector");
    return n;
}

// delta += (w* - w)/2 + ((||w*||/||w||) sin(t) w - t w*) / (2 pi)
void accumulateSingleDelta(const KernelVector& w, const KernelVector& w_star, KernelVector& delta) {
    const double nw = requireNorm(w, "expected_delta");
    const double ns = requireNorm(w_star, "expected_delta");
    const double theta = angle(w, w_star);
    const double cw = std::sin(theta) * ns / nw / kTwoPi;
    const double cs = theta / kTwoPi;
    for (std::size_t i = 0; i < w.size(); ++i) {
        delta[i] += 0.5 * (w_star[i] - w[i]) + cw * w[i] - cs * w_star[i];
    }
}

}  // namespace

void FlowConfig::validate() const {
    if (!(eta > 0.0)) throw ArgumentError("FlowConfig: eta must be > 0");
    if (max_steps < 1) throw ArgumentError("FlowConfig: max_steps must be >= 1");
    if (!(stop_tol > 0.0)) throw ArgumentError("FlowConfig: stop_tol must be > 0");
}

KernelVector expected_delta_single(const KernelVector& w, const KernelVector& w_star) {
    requireSameDim(w, w_star, "expected_delta_single");
    KernelVector delta(w.size(), 0.0);
    accumulateSingleDelta(w, w_star, delta);
    return delta;
}

KernelVector expected_delta_shared(const KernelVector& w_f, const TeacherPair& teachers) {
    requireSameDim(w_f, teachers.w_star_1, "expected_delta_shared");
    requireSameDim(w_f, teachers.w_star_2, "expected_delta_shared");
    KernelVector delta(w_f.size(), 0.0);
    accumulateSingleDelta(w_f, teachers.w_star_1, delta);
    accumulateSingleDelta(w_f, teachers.w_star_2, delta);
    return delta;
}

namespace {

constexpr std::size_t kMcBlock = 8192;

McEstimate mcEstimateImpl(const KernelVector& w, const std::vector<const KernelVector*>& teachers,
                          std::size_t num_samples, std::uint64_t seed, int threads) {
    for (const auto* t : teachers) requireSameDim(w, *t, "mc_expected_delta");
    requireNorm(w, "mc_expected_delta");
    for (const auto* t : teachers) requireNorm(*t, "mc_expected_delta");
    if (num_samples < 1000) {
        throw ArgumentError("mc_expected_delta: num_samples must be >= 1000");
    }
    const std::size_t d = w.size();
    const std::size_t numBlocks = (num_samples + kMcBlock - 1) / kMcBlock;

    std::vector<std::vector<double>> blockSum(numBlocks), blockSumSq(numBlocks);
    parallel_for(numBlocks, threads, [&](std::size_t b) {
        auto rng = substream(seed, b);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::size_t lo = b * kMcBlock;
        const std::size_t hi = std::min(num_samples, lo + kMcBlock);
        std::vector<double> sum(d, 0.0), sumsq(d, 0.0), x(d);
        for (std::size_t s = lo; s < hi; ++s) {
            double xw = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                x[i] = gauss(rng);
                xw += x[i] * w[i];
            }
            if (xw <= 0.0) {
                // sample delta is exactly zero: 1[x.w > 0] gates everything
                continue;
            }
            double gsum = 0.0;
            for (const auto* t : teachers) {
                double xs = 0.0;
                for (std::size_t i = 0; i < d; ++i) xs += x[i] * (*t)[i];
                gsum += std::max(0.0, xs);
            }
            const double g = gsum - static_cast<double>(teachers.size()) * xw;
            for (std::size_t i = 0; i < d; ++i) {
                const double v = g * x[i];
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        blockSum[b] = std::move(sum);
        blockSumSq[b] = std::move(sumsq);
    });

    // Fixed-order reduction keeps the result independent of the thread count.
    McEstimate est;
    est.num_samples = num_samples;
    est.mean.assign(d, 0.0);
    est.std_error.assign(d, 0.0);
    for (std::size_t b = 0; b < numBlocks; ++b) {
        for (std::size_t i = 0; i < d; ++i) {
            est.mean[i] += blockSum[b][i];
            est.std_error[i] += blockSumSq[b][i];
        }
    }
    const double n = static_cast<double>(num_samples);
    for (std::size_t i = 0; i < d; ++i) {
        const double m = est.mean[i] / n;
        const double var = std::max(0.0, (est.std_error[i] / n - m * m) * n / (n - 1.0));
        est.mean[i] = m;
        est.std_error[i] = std::sqrt(var / n);
    }
    return est;
}

}  // namespace

McEstimate mc_expected_delta(const KernelVector& w, const KernelVector& w_star,
                             std::size_t num_samples, std::uint64_t seed, int threads) {
    return mcEstimateImpl(w, {&w_star}, num_samples, seed, threads);
}

McEstimate mc_expected_delta_shared(const KernelVector& w_f, const TeacherPair& teachers,
                                    std::size_t num_samples, std::uint64_t seed, int threads) {
    return mcEstimateImpl(w_f, {&teachers.w_star_1, &teachers.w_star_2}, num_samples, seed, threads);
}

double population_loss(const KernelVector& w, const KernelVector& w_star) {
    requireSameDim(w, w_star, "population_loss");
    const double nw = requireNorm(w, "population_loss");
    const double ns = requireNorm(w_star, "population_loss");
    const double t = angle(w, w_star);
    const double cross = (std::sin(t) + (std::numbers::pi - t) * std::cos(t)) / std::numbers::pi;
    const double loss = 0.5 * nw * nw + 0.5 * ns * ns - nw * ns * cross;
    return std::max(0.0, loss);
}

double population_loss_shared(const KernelVector& w_f, const TeacherPair& teachers) {
    return population_loss(w_f, teachers.w_star_1) + population_loss(w_f, teachers.w_star_2);
}

bool in_basin(const KernelVector& w, const KernelVector& w_star) {
    requireSameDim(w, w_star, "in_basin");
    const double ns = requireNorm(w_star, "in_basin");
    double diff = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double e = w[i] - w_star[i];
        diff += e * e;
    }
    return std::sqrt(diff) < ns;
}

namespace {

double distance(const KernelVector& a, const KernelVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a[i] - b[i];
        acc += e * e;
    }
    return std::sqrt(acc);
}

TrajectoryRecord integrateImpl(const KernelVector& start, const TeacherPair* shared,
                               const KernelVector* single, const FlowConfig& cfg,
                               bool record_rows) {
    cfg.validate();
    requireNorm(start, "integrate_flow");

    const KernelVector& t1 = shared ? shared->w_star_1 : *single;
    const KernelVector& t2 = shared ? shared->w_star_2 : *single;
    const double n1 = requireNorm(t1, "integrate_flow");
    const double n2 = requireNorm(t2, "integrate_flow");

    TrajectoryRecord rec;
    KernelVector w = start;

    auto makeRow = [&](std::size_t step) {
        TrajectoryRow row{};
        row.step = step;
        const double d1 = distance(w, t1) / n1;
        const double d2 = distance(w, t2) / n2;
        row.dist_rel = std::min(d1, d2);
        if (shared) {
            const double e1 = distance(w, t1), e2 = distance(w, t2);
            row.v = 0.5 * (e1 * e1 + e2 * e2);
            row.theta1 = angle(w, t1);
            row.theta2 = angle(w, t2);
            row.loss = population_loss_shared(w, *shared);
        } else {
            const double e = distance(w, t1);
            row.v = 0.5 * e * e;
            row.theta1 = angle(w, t1);
            row.theta2 = row.theta1;
            row.loss = population_loss(w, t1);
        }
        return row;
    };

    TrajectoryRow row = makeRow(0);
    if (record_rows) rec.rows.push_back(row);
    double prevV = row.v;

    if (row.dist_rel < cfg.stop_tol) {
        rec.converged = true;
    } else {
        for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
            const KernelVector delta =
                shared ? expected_delta_shared(w, *shared) : expected_delta_single(w, t1);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += cfg.eta * delta[i];
            rec.steps_taken = step;
            if (norm(w) < kDegenerateNorm) {
                rec.degenerate = true;
                break;
            }
            row = makeRow(step);
            if (record_rows) rec.rows.push_back(row);
            rec.max_v_increase = std::max(rec.max_v_increase, row.v - prevV);
            prevV = row.v;
            if (row.dist_rel < cfg.stop_tol) {
                rec.converged = true;
                break;
            }
        }
    }
    rec.final_w = std::move(w);
    if (!record_rows) rec.rows.push_back(row);  // keep the terminal row for summaries
    return rec;
}

KernelVector sampleBall(std::mt19937_64& rng, const KernelVector& center, double radius) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t d = center.size();
    KernelVector x(d);
    double n = 0.0;
    do {
        n = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            x[i] = gauss(rng);
            n += x[i] * x[i];
        }
        n = std::sqrt(n);
    } while (n == 0.0);
    const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) x[i] = center[i] + x[i] * r / n;
    return x;
}

BasinSummary basinImpl(const TeacherPair* shared, const KernelVector* single,
                       std::size_t num_starts, const SamplerSpec& sampler, const FlowConfig& cfg,
                       int threads) {
    if (num_starts < 1) throw ArgumentError("basin_experiment: num_starts must be >= 1");
    cfg.validate();
    if (sampler.center.empty()) throw ArgumentError("basin_experiment: sampler center is empty");

    BasinSummary summary;
    summary.num_starts = num_starts;
    summary.starts.resize(num_starts);
    std::vector<std::size_t> resampled(num_starts, 0);

    const KernelVector* basin_ref = single ? single : &shared->w_star_1;
    parallel_for(num_starts, threads, [&](std::size_t idx) {
        auto rng = substream(cfg.seed, idx);
        KernelVector start;
        for (;;) {
            start = sampleBall(rng, sampler.center, sampler.radius);
            if (norm(start) < kDegenerateNorm) {
                ++resampled[idx];
                continue;
            }
            if (sampler.filter_to_basin && !in_basin(start, *basin_ref)) {
                ++resampled[idx];
                continue;
            }
            break;
        }
        const TrajectoryRecord rec = shared
            ? integrate_flow_shared(start, *shared, cfg, false)
            : integrate_flow_single(start, *single, cfg, false);
        BasinStartResult r{};
        r.index = idx;
        r.converged = rec.converged;
        r.degenerate = rec.degenerate;
        r.steps = rec.steps_taken;
        r.terminal_loss = rec.rows.back().loss;
        r.terminal_dist_rel = rec.rows.back().dist_rel;
        r.max_v_increase = rec.max_v_increase;
        summary.starts[idx] = r;
    });

    std::size_t converged = 0;
    double lossMax = 0.0;
    for (const auto& r : summary.starts) {
        if (r.converged) ++converged;
        summary.max_v_increase = std::max(summary.max_v_increase, r.max_v_increase);
        lossMax = std::max(lossMax, r.terminal_loss);
    }
    for (std::size_t r : resampled) summary.resampled += r;
    summary.converged_fraction = static_cast<double>(converged) / static_cast<double>(num_starts);
    summary.hist_max = lossMax > 0.0 ? lossMax : 1.0;
    summary.loss_hist.assign(20, 0);
    for (const auto& r : summary.starts) {
        std::size_t bin = static_cast<std::size_t>(19.999 * r.terminal_loss / summary.hist_max);
        summary.loss_hist[std::min<std::size_t>(bin, 19)]++;
    }
    return summary;
}

}  // namespace

TrajectoryRecord integrate_flow_single(const KernelVector& start, const KernelVector& w_star,
                                       const FlowConfig& cfg, bool record_rows) {
    return integrateImpl(start, nullptr, &w_star, cfg, record_rows);
}

TrajectoryRecord integrate_flow_shared(const KernelVector& start, const TeacherPair& teachers,
                                       const FlowConfig& cfg, bool record_rows) {
    return integrateImpl(start, &teachers, nullptr, cfg, record_rows);
}

BasinSummary basin_experiment_single(const KernelVector& w_star, std::size_t num_starts,
                                     const SamplerSpec& sampler, const FlowConfig& cfg,
                                     int threads) {
    return basinImpl(nullptr, &w_star, num_starts, sampler, cfg, threads);
}

BasinSummary basin_experiment_shared(const TeacherPair& teachers, std::size_t num_starts,
                                     const SamplerSpec& sampler, const FlowConfig& cfg,
                                     int threads) {
    return basinImpl(&teachers, nullptr, num_starts, sampler, cfg, threads);
}

void write_trajectory_csv(const std::string& path, const TrajectoryRecord& record) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("write_trajectory_csv: cannot open " + path);
    f << "step,v,dist_rel,theta1,theta2,loss\n";
    char buf[256];
    for (const auto& r : record.rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.v,
                      r.dist_rel, r.theta1, r.theta2, r.loss);
        f << buf;
    }
}

}  // namespace kfcn::dynamics
