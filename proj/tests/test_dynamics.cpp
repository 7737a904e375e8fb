#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "kfcn/dynamics.hpp"
#include "kfcn/tensor.hpp"

using namespace kfcn;
using namespace kfcn::dynamics;
using std::numbers::pi;

namespace {

KernelVector randomVec(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    KernelVector v(d);
    for (auto& x : v) x = gauss(rng);
    return v;
}

// Gram-Schmidt orthonormalization of a random matrix; rows form Q.
std::vector<KernelVector> randomOrthogonal(std::size_t d, std::mt19937_64& rng) {
    std::vector<KernelVector> q;
    while (q.size() < d) {
        KernelVector v = randomVec(d, rng);
        for (const auto& u : q) {
            const double c = dot(v, u);
            for (std::size_t i = 0; i < d; ++i) v[i] -= c * u[i];
        }
        const double n = norm(v);
        if (n < 1e-8) continue;
        for (auto& x : v) x /= n;
        q.push_back(std::move(v));
    }
    return q;
}

KernelVector applyQ(const std::vector<KernelVector>& q, const KernelVector& v) {
    KernelVector out(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = dot(q[i], v);
    return out;
}

}  // namespace

TEST_CASE("expected_delta_single fixed point and frozen substitutions") {
    const KernelVector e1{1, 0};
    const KernelVector delta0 = expected_delta_single(e1, e1);
    CHECK(std::abs(delta0[0]) <= 1e-15);
    CHECK(std::abs(delta0[1]) <= 1e-15);

    // theta = pi: sin term vanishes, (w* - w)/2 - (1/2) w* = (0.5, 0).
    const KernelVector opposite = expected_delta_single({-1, 0}, e1);
    CHECK(opposite[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(opposite[1] == doctest::Approx(0.0).epsilon(1e-14));

    // theta = pi/2: (0.25, -0.5 + 1/(2 pi)).
    const KernelVector ortho = expected_delta_single({0, 1}, e1);
    CHECK(ortho[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(ortho[1] == doctest::Approx(-0.5 + 1.0 / (2 * pi)).epsilon(1e-12));
    CHECK(ortho[1] == doctest::Approx(-0.340845056908).epsilon(1e-9));

    CHECK_THROWS_AS(expected_delta_single({0, 0}, e1), DegenerateVectorError);
    CHECK_THROWS_AS(expected_delta_single({1, 0, 0}, e1), DimensionError);
}

TEST_CASE("expected_delta_shared frozen values and identities") {
    const TeacherPair teachers{{1, 0}, {0, 1}};
    const double inv = 1.0 / std::sqrt(2.0);
    const KernelVector mid{inv, inv};
    const KernelVector delta = expected_delta_shared(mid, teachers);
    // Substitution at theta1 = theta2 = pi/4 with unit norms.
    const double expected = 0.5 * (1.0 - 2.0 * inv) + (std::sqrt(2.0) * inv - pi / 4.0) / (2 * pi);
    CHECK(delta[0] == doctest::Approx(expected).epsilon(1e-13));
    CHECK(delta[1] == doctest::Approx(expected).epsilon(1e-13));
    CHECK(delta[0] == doctest::Approx(-0.172952).epsilon(1e-5));

    // Both teachers equal the student: both summands vanish.
    const KernelVector atOpt = expected_delta_shared({0.3, -0.7}, {{0.3, -0.7}, {0.3, -0.7}});
    CHECK(std::abs(atOpt[0]) <= 1e-15);
    CHECK(std::abs(atOpt[1]) <= 1e-15);

    // Coincident teachers: shared field is twice the single field.
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const KernelVector w = randomVec(5, rng);
        const KernelVector ws = randomVec(5, rng);
        const KernelVector two = expected_delta_shared(w, {ws, ws});
        const KernelVector one = expected_delta_single(w, ws);
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(two[i] == doctest::Approx(2.0 * one[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("field is rotation equivariant") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 5; ++t) {
        const std::size_t d = 6;
        const auto q = randomOrthogonal(d, rng);
        const KernelVector w = randomVec(d, rng);
        const KernelVector ws = randomVec(d, rng);
        const KernelVector lhs = expected_delta_single(applyQ(q, w), applyQ(q, ws));
        const KernelVector rhs = applyQ(q, expected_delta_single(w, ws));
        for (std::size_t i = 0; i < d; ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-10));
    }
}

TEST_CASE("field is 1-homogeneous in positive scalings") {
    std::mt19937_64 rng(19);
    for (double c : {0.1, 0.7, 3.0, 42.0}) {
        const KernelVector w = randomVec(8, rng);
        const KernelVector ws = randomVec(8, rng);
        KernelVector cw = w, cws = ws;
        for (auto& x : cw) x *= c;
        for (auto& x : cws) x *= c;
        const KernelVector scaled = expected_delta_single(cw, cws);
        const KernelVector base = expected_delta_single(w, ws);
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(scaled[i] == doctest::Approx(c * base[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("monte carlo oracle agrees with the closed form") {
    std::mt19937_64 rng(23);
    const std::size_t d = 8, N = 200000;
    for (int t = 0; t < 6; ++t) {
        const KernelVector w = randomVec(d, rng);
        const KernelVector ws = randomVec(d, rng);
        const KernelVector closed = expected_delta_single(w, ws);
        const McEstimate est = mc_expected_delta(w, ws, N, 100 + t, 2);
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(std::abs(est.mean[i] - closed[i]) <= 4.0 * est.std_error[i]);
        }
    }
    for (int t = 0; t < 3; ++t) {
        const KernelVector wf = randomVec(d, rng);
        const TeacherPair teachers{randomVec(d, rng), randomVec(d, rng)};
        const KernelVector closed = expected_delta_shared(wf, teachers);
        const McEstimate est = mc_expected_delta_shared(wf, teachers, N, 200 + t, 2);
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(std::abs(est.mean[i] - closed[i]) <= 4.0 * est.std_error[i]);
        }
    }
}

TEST_CASE("monte carlo at the fixed point and the orthogonal case") {
    const KernelVector e1{1, 0};
    const McEstimate zero = mc_expected_delta(e1, e1, 50000, 3, 1);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(zero.mean[i]) <= 4.0 * std::max(zero.std_error[i], 1e-12));
    }
    const McEstimate ortho = mc_expected_delta({0, 1}, e1, 200000, 4, 2);
    CHECK(std::abs(ortho.mean[0] - 0.25) <= 4.0 * ortho.std_error[0]);
    CHECK(std::abs(ortho.mean[1] - (-0.340845056908)) <= 4.0 * ortho.std_error[1]);
    CHECK_THROWS_AS(mc_expected_delta(e1, e1, 10, 1, 1), ArgumentError);
}

TEST_CASE("monte carlo standard error shrinks like 1/sqrt(2) when N doubles") {
    const KernelVector w{0.3, -1.1, 0.4}, ws{1.0, 0.2, -0.5};
    double ratioSum = 0.0;
    const int trials = 5;
    for (int t = 0; t < trials; ++t) {
        const McEstimate a = mc_expected_delta(w, ws, 40000, 900 + t, 1);
        const McEstimate b = mc_expected_delta(w, ws, 80000, 950 + t, 1);
        double ra = 0, rb = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            ra += a.std_error[i];
            rb += b.std_error[i];
        }
        ratioSum += rb / ra;
    }
    const double meanRatio = ratioSum / trials;
    CHECK(meanRatio >= 0.6);
    CHECK(meanRatio <= 0.82);
}

TEST_CASE("population loss closed form") {
    const KernelVector e1{1, 0}, e2{0, 1};
    CHECK(population_loss(e1, e1) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(population_loss(e2, e1) == doctest::Approx(1.0 - 1.0 / pi).epsilon(1e-13));
    const KernelVector ne1{-1, 0};
    CHECK(population_loss(ne1, e1) == doctest::Approx(1.0).epsilon(1e-13));

    // Nonnegative on a parameter grid; zero only at w = w*.
    for (double scale : {0.25, 0.5, 1.0, 2.0}) {
        for (double theta = 0.0; theta <= pi + 1e-9; theta += pi / 12) {
            const KernelVector w{scale * std::cos(theta), scale * std::sin(theta)};
            const double loss = population_loss(w, e1);
            CHECK(loss >= -1e-12);
            if (std::abs(scale - 1.0) > 1e-9 || theta > 1e-9) {
                CHECK(loss > 1e-6 * std::min(1.0, (scale - 1) * (scale - 1) + theta * theta));
            }
        }
    }
}

TEST_CASE("population loss agrees with a Monte Carlo estimate") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const KernelVector w{0.8, -0.4, 1.2}, ws{-0.2, 0.9, 0.3};
    const double closed = population_loss(w, ws);
    const std::size_t N = 400000;
    double sum = 0, sumsq = 0;
    for (std::size_t s = 0; s < N; ++s) {
        double xw = 0, xs = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double x = gauss(rng);
            xw += x * w[i];
            xs += x * ws[i];
        }
        const double e = std::max(0.0, xw) - std::max(0.0, xs);
        sum += e * e;
        sumsq += e * e * e * e;
    }
    const double mean = sum / N;
    const double se = std::sqrt(std::max(0.0, sumsq / N - mean * mean) / N);
    CHECK(std::abs(mean - closed) <= 5.0 * se);
}

TEST_CASE("in_basin strict boundary") {
    const KernelVector ws{2, 0, 0};
    CHECK(in_basin(ws, ws));
    CHECK_FALSE(in_basin({0, 0, 0}, ws));  // boundary is excluded
    CHECK(in_basin({2 * 1.999, 0, 0}, ws));
    CHECK_FALSE(in_basin({2 * -0.001, 0, 0}, ws));
}

TEST_CASE("integrate_flow converges from the teacher immediately") {
    const KernelVector ws{1, 0, 0, 0};
    FlowConfig cfg;
    const TrajectoryRecord rec = integrate_flow_single(ws, ws, cfg);
    CHECK(rec.converged);
    CHECK(rec.rows.size() == 1);
    CHECK(rec.steps_taken == 0);
    CHECK(rec.rows[0].v == 0.0);
}

TEST_CASE("integrate_flow from inside the basin: converges, V never increases") {
    std::mt19937_64 rng(41);
    const std::size_t d = 10;
    KernelVector ws(d, 0.0);
    ws[0] = 1.0;
    FlowConfig cfg;
    cfg.eta = 0.01;
    cfg.max_steps = 20000;
    cfg.stop_tol = 1e-3;
    for (int t = 0; t < 5; ++t) {
        KernelVector start = ws;
        const KernelVector dir = randomVec(d, rng);
        const double n = norm(dir);
        for (std::size_t i = 0; i < d; ++i) start[i] += 0.9 * dir[i] / n;
        const TrajectoryRecord rec = integrate_flow_single(start, ws, cfg);
        CHECK(rec.converged);
        CHECK(rec.max_v_increase <= 1e-10);
        CHECK(rec.rows.back().dist_rel < 1e-3);
        // Rows are consecutive steps from 0.
        for (std::size_t i = 0; i < rec.rows.size(); ++i) CHECK(rec.rows[i].step == i);
    }
}

TEST_CASE("shared flow with distinct teachers never reaches the optimum") {
    const TeacherPair teachers{{1, 0, 0}, {0, 1, 0}};
    FlowConfig cfg;
    cfg.eta = 0.01;
    cfg.max_steps = 3000;
    std::mt19937_64 rng(43);
    for (int t = 0; t < 5; ++t) {
        const KernelVector start = randomVec(3, rng);
        const TrajectoryRecord rec = integrate_flow_shared(start, teachers, cfg);
        CHECK_FALSE(rec.converged);
        CHECK(rec.rows.back().loss > 1e-3);
    }
}

TEST_CASE("basin experiment: all starts at the teacher converge trivially") {
    const KernelVector ws{1, 0, 0, 0};
    SamplerSpec sampler{ws, 1e-9, false};
    FlowConfig cfg;
    const BasinSummary s = basin_experiment_single(ws, 10, sampler, cfg, 2);
    CHECK(s.converged_fraction == 1.0);
    CHECK(s.max_v_increase == 0.0);
}

TEST_CASE("basin experiment summary is thread-count independent") {
    KernelVector ws(6, 0.0);
    ws[0] = 1.5;
    SamplerSpec sampler{ws, 0.95 * 1.5, true};
    FlowConfig cfg;
    cfg.max_steps = 5000;
    cfg.seed = 77;
    const BasinSummary a = basin_experiment_single(ws, 12, sampler, cfg, 1);
    const BasinSummary b = basin_experiment_single(ws, 12, sampler, cfg, 3);
    REQUIRE(a.starts.size() == b.starts.size());
    CHECK(a.converged_fraction == b.converged_fraction);
    CHECK(a.max_v_increase == b.max_v_increase);
    for (std::size_t i = 0; i < a.starts.size(); ++i) {
        CHECK(a.starts[i].terminal_loss == b.starts[i].terminal_loss);
        CHECK(a.starts[i].steps == b.starts[i].steps);
    }
}

TEST_CASE("trajectory CSV has the pinned header and is reproducible") {
    namespace fs = std::filesystem;
    const KernelVector ws{1, 0};
    FlowConfig cfg;
    cfg.max_steps = 50;
    const TrajectoryRecord rec = integrate_flow_single({0.4, 0.3}, ws, cfg);
    const std::string p1 = (fs::temp_directory_path() / "kfcn_traj_a.csv").string();
    const std::string p2 = (fs::temp_directory_path() / "kfcn_traj_b.csv").string();
    write_trajectory_csv(p1, rec);
    write_trajectory_csv(p2, rec);
    std::ifstream f1(p1), f2(p2);
    std::string line;
    std::getline(f1, line);
    CHECK(line == "step,v,dist_rel,theta1,theta2,loss");
    std::string all1(line), all2;
    while (std::getline(f1, line)) all1 += line;
    while (std::getline(f2, line)) all2 += line;
    CHECK(all1.size() > 0);
    std::ifstream g1(p1), g2(p2);
    std::string s1((std::istreambuf_iterator<char>(g1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(g2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("flow config validation") {
    FlowConfig cfg;
    cfg.eta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.eta = 0.1;
    cfg.max_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.max_steps = 10;
    cfg.stop_tol = -1;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}
