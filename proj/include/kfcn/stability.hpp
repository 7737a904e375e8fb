#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kfcn/dynamics.hpp"

namespace kfcn::stability {

/// Angles (theta1, theta2, alpha), each in [0, pi]: student vs teacher 1,
/// student vs teacher 2, and teacher 1 vs teacher 2.
struct AngleConfig {
    double theta1 = 0;
    double theta2 = 0;
    double alpha = 0;
    void validate() const;
};

/// 3x3 symmetric quadratic-form matrix in y = (||w*1||, ||w*2||, ||w_f||).
struct StabilityMatrix {
    std::array<std::array<double, 3>, 3> m{};
    double operator()(int i, int j) const { return m[i][j]; }
    double& operator()(int i, int j) { return m[i][j]; }
};

enum class MatrixVariant { AsPrinted, Derived };

/// The quadratic-form matrix exactly as printed: (3,3) entry is -1 for every
/// angle configuration, so the matrix is never positive definite.
StabilityMatrix m_as_printed(const AngleConfig& cfg);

/// Matrix recovered by expanding dV/dt = (2 w_f - w*1 - w*2)^T E[dw_f] in the
/// three norms at fixed angles. Agrees with the printed matrix on the top-left
/// 2x2 block; the (1,3)/(2,3) entries come out twice the printed ones and the
/// (3,3) entry is +2. vdot_direct is the validation oracle for these entries.
StabilityMatrix m_derived(const AngleConfig& cfg);

/// dV/dt for the shared-kernel Lyapunov function
/// V = (||w_f - w*1||^2 + ||w_f - w*2||^2) / 2, computed from first
/// principles via the expected update field.
double vdot_direct(const dynamics::TeacherPair& teachers, const dynamics::KernelVector& w_f);

struct PdResult {
    bool positive_definite;
    double d11, d22, d33;  // leading principal minors
};

/// Sylvester criterion on the three leading principal minors.
/// Input must be symmetric within 1e-12.
PdResult is_positive_definite(const StabilityMatrix& m);

/// Independent positive-definiteness check through the roots of the
/// characteristic polynomial (trigonometric solution of the cubic).
bool pd_oracle(const StabilityMatrix& m);

struct ScanCell {
    AngleConfig cfg;
    double d11, d22, d33;
    bool pd;
    bool feasible;  // spherical triangle inequalities hold
};

struct ScanReport {
    double step = 0;
    std::size_t per_axis = 0;
    MatrixVariant variant = MatrixVariant::AsPrinted;
    std::vector<ScanCell> cells;  // empty when keep_cells = false
    std::size_t cell_count = 0;
    std::size_t pd_count = 0;
    std::size_t feasible_count = 0;
    std::size_t feasible_pd_count = 0;
    std::size_t d11_pos = 0, d22_pos = 0, d33_pos = 0;
};

/// Evaluates the chosen matrix on the full [0, pi]^3 grid with the given step
/// (0 < step <= pi/8). Cells are keyed by index, so parallel evaluation gives
/// identical reports for any thread count.
ScanReport scan_grid(double step, MatrixVariant variant, int threads = 1, bool keep_cells = true);

/// CSV with header theta1,theta2,alpha,d11,d22,d33,pd,feasible; angles with
/// six decimals. Requires a report built with keep_cells = true.
void write_scan_csv(const std::string& path, const ScanReport& report);

}  // namespace kfcn::stability
