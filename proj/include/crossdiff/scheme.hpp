#pragma once

#include "crossdiff/grid.hpp"
#include "crossdiff/hypotheses.hpp"
#include "crossdiff/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace crossdiff {

struct NewtonControls {
    double tolerance = 1e-10;   // max-norm of the nodal residual
    int max_iterations = 60;
    double damping = 0.5;       // backtracking factor in (0,1)
    double min_step = 1e-8;
};

struct SchemeParams {
    double tau = 1e-3;
    double eps = 0.0;    // elliptic regularization strength
    double delta = 0.0;  // reaction regularization
    int m = 1;           // regularization order, 1 or 2
    NewtonControls newton;
    double t_end = 0.0;
    // Initial cutoff level; 0 derives it from eps (floored at 1e-12 and
    // capped below min(1, exp(-lambda_i))).
    double cutoff = 0.0;
};

struct StepReport {
    int step = 0;
    double time = 0.0;
    int newton_iterations = 0;
    double residual_norm = 0.0;
    int damping_events = 0;
    double entropy_before = 0.0;
    double entropy_after = 0.0;
    Vector mass_before;
    Vector mass_after;
    GradNorms production;
    Vector mass_balance_residual;  // (<u^k>-<u^{k-1}>)/tau + eps<w^k> - <f_delta>
    double dissipation = 0.0;      // face quadratic form grad w : A(u) grad u
};

struct Trajectory {
    Grid grid = Grid::line(1.0, 3);
    SystemSpec spec;
    SchemeParams params;
    Field initial;  // after cutoff, strictly positive
    std::vector<std::pair<double, Field>> states;  // (k tau, u^k), k = 1..N
    std::vector<StepReport> reports;
};

struct NewtonFailure {
    int step = 0;
    std::vector<double> residual_trace;
    std::string message;
};

struct MarchResult {
    Trajectory trajectory;
    bool completed = true;
    std::optional<NewtonFailure> failure;
};

struct NewtonResult {
    Field w;
    StepReport report;
    bool converged = false;
    std::vector<double> residual_trace;
};

/// Nodewise clamp to [eps_cut, 1/eps_cut]; requires
/// 0 < eps_cut < min(1, exp(-lambda_i)).
Field initial_cutoff(const Field& u0, double eps_cut, const EntropyParams& entropy);

/// f / (1 + delta |f|), Euclidean norm on the species vector.
Vector regularize_reaction(const Vector& f, double delta);

/// Time-averaged drift for step k, realized by midpoint sampling at
/// t = (k - 1/2) tau (exact for drifts affine in t).
struct DriftStepSample {
    const DriftSpec* spec = nullptr;
    double t_mid = 0.0;
    int n = 0;
    int dim = 1;
    Matrix at(const Eigen::Vector2d& x) const {
        return drift_eval(*spec, x, t_mid, n, dim);
    }
};
DriftStepSample drift_average(const DriftSpec& b, int k, double tau, int n, int dim);

/// Nodal residual of the regularized implicit Euler step in entropy
/// variables: (u(w)-u(w_prev))/tau - div(flux) + eps((-Lap)^m w + w) -
/// f_delta(u(w)), where flux_i = sum_j A_ij(u_face) grad u_j - u_i b_i^k,
/// A evaluated at arithmetic face averages. Throws on non-finite
/// intermediates (overflow in the exponential map), naming the node.
Field assemble_residual(const Field& w, const Field& w_prev, const SchemeParams& params,
                        const SystemSpec& spec, const Grid& grid, int step_index);

/// Sparse analytic Jacobian of assemble_residual with respect to w,
/// species-major ordering matching Field::values.
Eigen::SparseMatrix<double> assemble_jacobian(const Field& w, const SchemeParams& params,
                                              const SystemSpec& spec, const Grid& grid,
                                              int step_index);

/// Damped Newton with backtracking on the residual max-norm, warm-started
/// fixed-point relaxation as a stagnation fallback. Non-convergence is a
/// result, not an exception; the documented recovery is to halve tau and
/// retry.
NewtonResult newton_solve(const Field& w_init, const Field& w_prev,
                          const SchemeParams& params, const SystemSpec& spec,
                          const Grid& grid, int step_index);

/// Cutoff, then N = round(t_end / tau) implicit Euler steps. All primal
/// values stay strictly positive (exponential map). On Newton failure the
/// partial trajectory is returned.
MarchResult march(const SystemSpec& spec, const Grid& grid, const Field& u0,
                  const SchemeParams& params, const HypothesisReport* advisory = nullptr);

struct SweepRung {
    std::string kind;  // "epstau" or "delta"
    double eps = 0.0;
    double tau = 0.0;
    double delta = 0.0;
    int steps = 0;
    bool completed = true;
    double l1_diff_prev = std::numeric_limits<double>::quiet_NaN();
    double entropy_final = 0.0;
    double min_density = 0.0;
};

struct SweepReport {
    std::vector<SweepRung> rungs;
    std::vector<MarchResult> runs;
};

/// Marches the (grid, params) ladder (the eps = tau -> 0 experiment), then a
/// delta ladder on the last rung's grid, recording successive L1 distances
/// between final-time fields. Evidence tables, not a proof.
SweepReport limit_sweep(const SystemSpec& spec, const std::vector<Grid>& grids,
                        const std::vector<SchemeParams>& params,
                        const std::function<Field(const Grid&)>& initial,
                        const std::vector<double>& delta_ladder);

// Helpers shared with the audit modules.
Field to_entropy(const Field& primal, const EntropyParams& entropy);
Field to_primal(const Field& entropy_field, const EntropyParams& entropy);
double entropy_integral(const Grid& grid, const EntropyParams& entropy, const Field& primal);
double interpolate(const Grid& grid, const Field& field, int species,
                   const Eigen::Vector2d& x);

}  // namespace crossdiff
