#pragma once

#include "crossdiff/scheme.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace crossdiff {

/// C-infinity transition: 1 for x <= 0, 0 for x >= 1, realized by the
/// exp(-1/x) partition construction, so the plateaus are exact.
double base_cutoff(double x);
double base_cutoff_d1(double x);
double base_cutoff_d2(double x);

/// Smooth truncation phi_i^L(v) = v_i phi(s) + 2L (1 - phi(s)) with
/// s = sum(v)/L - 1: equals v_i below total density L, constant 2L above 2L.
/// Real levels >= 1 are allowed so defect ladders can align with trajectory
/// maxima; every law holds verbatim for real L.
struct TruncationFamily {
    double level = 1.0;  // L >= 1
    int n = 1;           // species count
};

double phi_value(const TruncationFamily& fam, int i, const Vector& v);
Vector phi_grad(const TruncationFamily& fam, int i, const Vector& v);
Matrix phi_hessian(const TruncationFamily& fam, int i, const Vector& v);

struct TruncationLawReport {
    std::array<int, 8> violations{};  // per law, index 0 = first law
    std::optional<Vector> witness;
    int witness_level = 0;
    std::string witness_law;
    double empirical_k1 = 0.0;  // sup |d_j phi_i^L| observed
    double empirical_k2 = 0.0;  // sup of the weighted second-derivative bound
    std::vector<std::pair<int, double>> sup_second;  // (L, sup |d_j d_k phi_i^L|)
    int samples_per_level = 0;

    int total_violations() const {
        int t = 0;
        for (int v : violations) t += v;
        return t;
    }
};

/// Samples every truncation law across the level ladder; any violated law
/// is reported with its witness (v, L).
TruncationLawReport check_truncation_laws(const std::vector<int>& ladder, int n,
                                          const LogUniformSampler& sampler, int count);

struct AuditRow {
    int step = 0;
    double time = 0.0;
    double entropy = 0.0;
    Vector mass;
    Vector prod_l2;
    Vector prod_sqrt;
    Matrix prod_pair;
    double dissipation = 0.0;
    Vector mass_balance;
    double decay_violation = 0.0;  // max(0, h_k - h_{k-1}), meaningful when b = 0
};

struct AuditReport {
    std::vector<AuditRow> rows;
    bool drift_free = true;
    double initial_entropy = 0.0;
    double max_decay_violation = 0.0;
    double fitted_budget_constant = 0.0;  // C in h_k + sum production <= h_0 + C t
    double mass_entropy_slack = 0.0;      // max_k (pi.mass - entropy - bound); <= 0
};

/// Per-step entropy, production norms, the cumulative budget and the
/// entropy-controls-mass bound, recomputed from the stored fields.
AuditReport entropy_audit(const Trajectory& traj);

struct DefectEstimate {
    double level = 0.0;
    double delta = 0.0;
    Vector total;  // per-species total variation over the space-time grid
};

/// Space-time quadrature of |sum_{j,k} d_j d_k phi_i^L(u) (sum_l A_jl(u)
/// grad u_l - u_j b_j) . grad u_k|; exactly zero wherever sum_j u_j < L.
DefectEstimate defect_estimate(const Trajectory& traj, const TruncationFamily& fam);

/// Space-time test function with analytic time derivative and gradient;
/// must vanish at t = T.
struct SpaceTimeTest {
    std::string id;
    std::function<double(const Eigen::Vector2d&, double)> value;
    std::function<double(const Eigen::Vector2d&, double)> dt;
    std::function<Eigen::Vector2d(const Eigen::Vector2d&, double)> grad;
};

/// Renormalization test pair: a smooth xi with compactly supported gradient
/// (declared per-coordinate bound) and a space-time test function.
struct RenormTestFunction {
    std::string xi_id;
    std::function<double(const Vector&)> xi;
    std::function<Vector(const Vector&)> xi_grad;
    std::function<Matrix(const Vector&)> xi_hess;
    double support_upper = std::numeric_limits<double>::infinity();
    SpaceTimeTest phi;
};

RenormTestFunction make_xi_constant(int n);
/// Smoothed clamp of one coordinate, windowed in the total density so the
/// gradient support is a box: xi(u) = C_theta(u_coord) * H_window(sum u).
RenormTestFunction make_xi_clamp_coord(int coord, double theta, double window, int n);
/// Smoothed clamp of the total density: xi(u) = C_theta(sum u).
RenormTestFunction make_xi_clamp_sum(double theta, int n);

SpaceTimeTest make_phi_ramp(double t_end);
SpaceTimeTest make_phi_bump(const Grid& grid, double t_end);

struct RenormResidual {
    std::string xi_id;
    std::string phi_id;
    double residual = 0.0;    // |LHS - RHS| / normalizer
    double normalizer = 0.0;  // magnitude of the largest integral
    bool truncation_inactive = false;
};

/// Evaluates the five integrals of the renormalized weak formulation on the
/// trajectory (nodal-lumped in space; time pairs the slab state u^k with
/// exact slab increments of phi for the d_t term and left endpoints for the
/// rest) and returns the normalized defect.
RenormResidual renorm_residual(const Trajectory& traj, const RenormTestFunction& tf);

struct RenormAuditBundle {
    MarchResult run;
    std::vector<DefectEstimate> defects;
    std::vector<RenormResidual> residuals;
};

/// Runs march once, then the defect ladder and the xi suite on the result.
RenormAuditBundle renorm_audit(const SystemSpec& spec, const Grid& grid, const Field& u0,
                               const SchemeParams& params, const std::vector<double>& ladder,
                               const std::vector<RenormTestFunction>& suite);

/// Max over a trajectory's quadrature states of the nodal density sum; the
/// defect estimate vanishes exactly for levels at or above it.
double max_density_sum(const Trajectory& traj);

}  // namespace crossdiff
