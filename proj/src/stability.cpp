#include "kfcn/stability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "kfcn/parallel.hpp"
#include "kfcn/tensor.hpp"

namespace kfcn::stability {

namespace {

constexpr double kPi = std::numbers::pi;

void requireSymmetric(const StabilityMatrix& m, const char* what) {
    double scale = 1.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) scale = std::max(scale, std::abs(m(i, j)));
    for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) {
            if (std::abs(m(i, j) - m(j, i)) > 1e-12 * scale) {
                throw ArgumentError(std::string(what) + ": matrix is not symmetric");
            }
        }
    }
}

}  // namespace

void AngleConfig::validate() const {
    const double eps = 1e-12;
    for (double a : {theta1, theta2, alpha}) {
        if (!(a >= -eps && a <= kPi + eps)) {
            throw ArgumentError("AngleConfig: angle out of [0, pi]: " + std::to_string(a));
        }
    }
}

StabilityMatrix m_as_printed(const AngleConfig& cfg) {
    cfg.validate();
    const double t1 = cfg.theta1, t2 = cfg.theta2, a = cfg.alpha;
    const double q = 1.0 / (4.0 * kPi);
    StabilityMatrix m;
    m(0, 0) = q * (std::sin(2 * t1) + 2 * kPi - 2 * t1);
    m(1, 1) = q * (std::sin(2 * t2) + 2 * kPi - 2 * t2);
    m(0, 1) = m(1, 0) = q * ((2 * kPi - t1 - t2) * std::cos(a) + std::sin(t1 + t2));
    m(0, 2) = m(2, 0) = q * (-(2 * kPi - t1) * std::cos(t1) - std::sin(t1));
    m(1, 2) = m(2, 1) = q * (-(2 * kPi - t2) * std::cos(t2) - std::sin(t2));
    m(2, 2) = -1.0;
    return m;
}

StabilityMatrix m_derived(const AngleConfig& cfg) {
    StabilityMatrix m = m_as_printed(cfg);
    // Expansion of -dV/dt in (a, b, c) doubles the printed (1,3)/(2,3)
    // entries and replaces the (3,3) entry by +2.
    m(0, 2) *= 2.0;
    m(2, 0) *= 2.0;
    m(1, 2) *= 2.0;
    m(2, 1) *= 2.0;
    m(2, 2) = 2.0;
    return m;
}

double vdot_direct(const dynamics::TeacherPair& teachers, const dynamics::KernelVector& w_f) {
    const dynamics::KernelVector delta = dynamics::expected_delta_shared(w_f, teachers);
    double acc = 0.0;
    for (std::size_t i = 0; i < w_f.size(); ++i) {
        acc += (2.0 * w_f[i] - teachers.w_star_1[i] - teachers.w_star_2[i]) * delta[i];
    }
    return acc;
}

PdResult is_positive_definite(const StabilityMatrix& m) {
    requireSymmetric(m, "is_positive_definite");
    PdResult r{};
    r.d11 = m(0, 0);
    r.d22 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    r.d33 = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
            m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
            m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    r.positive_definite = r.d11 > 0.0 && r.d22 > 0.0 && r.d33 > 0.0;
    return r;
}

bool pd_oracle(const StabilityMatrix& m) {
    requireSymmetric(m, "pd_oracle");
    // Characteristic polynomial x^3 - tr x^2 + m2 x - det; symmetric input
    // means three real roots. PD iff the smallest root is positive.
    const double tr = m(0, 0) + m(1, 1) + m(2, 2);
    const double m2 = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) +
                      (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) +
                      (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1));
    const double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                       m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                       m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    // Depressed cubic t^3 + p t + q with x = t + tr/3.
    const double p = m2 - tr * tr / 3.0;
    const double q = -2.0 * tr * tr * tr / 27.0 + tr * m2 / 3.0 - det;
    double minRoot;
    if (p >= -1e-300) {
        // Triple (or near-triple) root.
        minRoot = tr / 3.0 - std::cbrt(q);
    } else {
        const double r = std::sqrt(-p / 3.0);
        double arg = 3.0 * q / (2.0 * p * r);
        arg = std::min(1.0, std::max(-1.0, arg));
        const double phi = std::acos(arg) / 3.0;
        minRoot = tr / 3.0 + 2.0 * r * std::cos(phi + 4.0 * kPi / 3.0);
        for (int k = 0; k < 3; ++k) {
            const double root = tr / 3.0 + 2.0 * r * std::cos(phi - 2.0 * kPi * k / 3.0);
            minRoot = std::min(minRoot, root);
        }
    }
    return minRoot > 0.0;
}

ScanReport scan_grid(double step, MatrixVariant variant, int threads, bool keep_cells) {
    if (!(step > 0.0) || step > kPi / 8.0 + 1e-12) {
        throw ArgumentError("scan_grid: step must satisfy 0 < step <= pi/8");
    }
    ScanReport report;
    report.step = step;
    report.variant = variant;
    const std::size_t perAxis = static_cast<std::size_t>(std::floor(kPi / step + 1e-9)) + 1;
    report.per_axis = perAxis;
    report.cell_count = perAxis * perAxis * perAxis;

    std::vector<ScanCell> cells(report.cell_count);
    auto gridValue = [&](std::size_t i) { return std::min(kPi, static_cast<double>(i) * step); };

    parallel_for(perAxis, threads, [&](std::size_t i1) {
        const double t1 = gridValue(i1);
        for (std::size_t i2 = 0; i2 < perAxis; ++i2) {
            const double t2 = gridValue(i2);
            for (std::size_t i3 = 0; i3 < perAxis; ++i3) {
                const double a = gridValue(i3);
                AngleConfig cfg{t1, t2, a};
                const StabilityMatrix m =
                    variant == MatrixVariant::AsPrinted ? m_as_printed(cfg) : m_derived(cfg);
                const PdResult pd = is_positive_definite(m);
                ScanCell cell{};
                cell.cfg = cfg;
                cell.d11 = pd.d11;
                cell.d22 = pd.d22;
                cell.d33 = pd.d33;
                cell.pd = pd.positive_definite;
                const double eps = 1e-12;
                cell.feasible = std::abs(t1 - t2) <= a + eps && a <= t1 + t2 + eps &&
                                t1 + t2 + a <= 2.0 * kPi + eps;
                cells[(i1 * perAxis + i2) * perAxis + i3] = cell;
            }
        }
    });

    for (const ScanCell& c : cells) {
        if (c.pd) ++report.pd_count;
        if (c.feasible) ++report.feasible_count;
        if (c.pd && c.feasible) ++report.feasible_pd_count;
        if (c.d11 > 0) ++report.d11_pos;
        if (c.d22 > 0) ++report.d22_pos;
        if (c.d33 > 0) ++report.d33_pos;
    }
    if (keep_cells) report.cells = std::move(cells);
    return report;
}

void write_scan_csv(const std::string& path, const ScanReport& report) {
    if (report.cells.empty() && report.cell_count > 0) {
        throw ArgumentError("write_scan_csv: report was built without cells");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("write_scan_csv: cannot open " + path);
    f << "theta1,theta2,alpha,d11,d22,d33,pd,feasible\n";
    char buf[256];
    for (const ScanCell& c : report.cells) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.12g,%.12g,%.12g,%d,%d\n", c.cfg.theta1,
                      c.cfg.theta2, c.cfg.alpha, c.d11, c.d22, c.d33, c.pd ? 1 : 0,
                      c.feasible ? 1 : 0);
        f << buf;
    }
}

}  // namespace kfcn::stability
