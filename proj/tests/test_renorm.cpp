#include "crossdiff/renorm.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace crossdiff;

namespace {

SystemSpec skt_system() {
    Vector a0(2);
    a0 << 0.1, 0.1;
    Matrix a(2, 2);
    a << 1.0, 4.0, 1.0, 1.0;
    return SystemSpec(a0, a, EntropyParams::trivial(2));
}

MarchResult small_skt_run() {
    const SystemSpec spec = skt_system();
    const Grid g = Grid::line(1.0, 64);
    SchemeParams params;
    params.tau = 0.001;
    params.eps = 1e-8;
    params.t_end = 0.08;
    Field u0(g, 2);
    for (int p = 0; p < g.num_nodes(); ++p) {
        const double x = g.node_position(p)[0];
        u0.at(0, p) = 0.05 + 2.5 * std::exp(-std::pow((x - 0.5) / 0.22, 2));
        double comb = 0.0;
        for (double c : {0.04, 0.1, 0.9, 0.96}) {
            comb += 0.5 * std::exp(-std::pow((x - c) / 0.025, 2));
        }
        u0.at(1, p) = 0.05 + comb;
    }
    return march(spec, g, u0, params);
}

}  // namespace

TEST_CASE("base cutoff has exact plateaus and is nonincreasing") {
    CHECK(base_cutoff(-0.5) == 1.0);
    CHECK(base_cutoff(0.0) == 1.0);
    CHECK(base_cutoff(1.0) == 0.0);
    CHECK(base_cutoff(2.0) == 0.0);
    CHECK(base_cutoff_d1(0.0) == 0.0);
    CHECK(base_cutoff_d2(1.0) == 0.0);
    double prev = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double v = base_cutoff(k / 100.0);
        CHECK(v <= prev + 1e-15);
        prev = v;
    }
    // Derivatives are consistent with finite differences in the transition.
    for (double x : {0.2, 0.35, 0.5, 0.65, 0.8}) {
        const double h = 1e-6;
        const double fd1 = (base_cutoff(x + h) - base_cutoff(x - h)) / (2.0 * h);
        CHECK(base_cutoff_d1(x) == doctest::Approx(fd1).epsilon(1e-7));
        const double fd2 = (base_cutoff_d1(x + h) - base_cutoff_d1(x - h)) / (2.0 * h);
        CHECK(base_cutoff_d2(x) == doctest::Approx(fd2).epsilon(1e-7));
    }
}

TEST_CASE("truncation identity below L and plateau above 2L") {
    const TruncationFamily fam{4.0, 3};
    Vector v(3);
    v << 0.5, 1.0, 1.5;  // sum 3 < 4
    for (int i = 0; i < 3; ++i) {
        CHECK(phi_value(fam, i, v) == v[i]);
        const Vector g = phi_grad(fam, i, v);
        for (int j = 0; j < 3; ++j) CHECK(g[j] == (i == j ? 1.0 : 0.0));
        CHECK(phi_hessian(fam, i, v).cwiseAbs().maxCoeff() == 0.0);
    }
    Vector big(3);
    big << 4.0, 3.0, 2.0;  // sum 9 > 8
    for (int i = 0; i < 3; ++i) {
        CHECK(phi_value(fam, i, big) == 8.0);
        CHECK(phi_grad(fam, i, big).cwiseAbs().maxCoeff() == 0.0);
        CHECK(phi_hessian(fam, i, big).cwiseAbs().maxCoeff() == 0.0);
    }
    // In between: the L1 sandwich.
    Vector mid(3);
    mid << 2.0, 2.0, 2.0;  // sum 6 in (4, 8)
    for (int i = 0; i < 3; ++i) {
        const double val = phi_value(fam, i, mid);
        CHECK(val >= 0.0);
        CHECK(val <= mid[i] + 2.0 * mid.sum());
    }
}

TEST_CASE("truncation derivatives match finite differences") {
    const TruncationFamily fam{2.0, 2};
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> unif(0.3, 2.4);
    for (int trial = 0; trial < 50; ++trial) {
        Vector v(2);
        v << unif(rng), unif(rng);
        for (int i = 0; i < 2; ++i) {
            const Vector g = phi_grad(fam, i, v);
            const Matrix H = phi_hessian(fam, i, v);
            for (int j = 0; j < 2; ++j) {
                const double h = 1e-6;
                Vector vp = v, vm = v;
                vp[j] += h;
                vm[j] -= h;
                const double fd = (phi_value(fam, i, vp) - phi_value(fam, i, vm)) / (2.0 * h);
                CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6));
                const Vector gp = phi_grad(fam, i, vp);
                const Vector gm = phi_grad(fam, i, vm);
                for (int k = 0; k < 2; ++k) {
                    const double fdH = (gp[k] - gm[k]) / (2.0 * h);
                    CHECK(H(j, k) == doctest::Approx(fdH).epsilon(2e-6));
                }
            }
        }
    }
}

TEST_CASE("truncation laws hold on a sampled ladder") {
    LogUniformSampler sampler(123);
    const auto rep = check_truncation_laws({1, 2, 4, 8, 16}, 3, sampler, 2000);
    CHECK(rep.total_violations() == 0);
    CHECK(rep.empirical_k1 > 0.0);
    // sup |second derivative| scales like C / L.
    for (std::size_t i = 1; i < rep.sup_second.size(); ++i) {
        CHECK(rep.sup_second[i].second <= rep.sup_second[i - 1].second * 1.02);
    }
    const double c0 = rep.sup_second.front().second * rep.sup_second.front().first;
    for (const auto& [L, sup] : rep.sup_second) {
        CHECK(sup * L > c0 / 2.0);
        CHECK(sup * L < c0 * 2.0);
    }
}

TEST_CASE("entropy audit on a drift-free run") {
    const auto run = small_skt_run();
    REQUIRE(run.completed);
    const auto audit = entropy_audit(run.trajectory);
    CHECK(audit.drift_free);
    CHECK(audit.max_decay_violation <= 1e-9);
    CHECK(audit.mass_entropy_slack <= 1e-10);
    double prev = audit.initial_entropy;
    for (const auto& row : audit.rows) {
        CHECK(row.entropy <= prev + 1e-9);
        CHECK(row.dissipation >= -1e-12);
        prev = row.entropy;
    }
}

TEST_CASE("entropy audit: constant trajectories produce nothing") {
    const SystemSpec spec = skt_system();
    const Grid g = Grid::line(1.0, 16);
    SchemeParams params;
    params.tau = 0.01;
    params.eps = 0.0;
    params.t_end = 0.03;
    Field u0(g, 2);
    u0.component(0).setConstant(1.1);
    u0.component(1).setConstant(0.7);
    const auto run = march(spec, g, u0, params);
    REQUIRE(run.completed);
    const auto audit = entropy_audit(run.trajectory);
    for (const auto& row : audit.rows) {
        CHECK(row.prod_l2.cwiseAbs().maxCoeff() == 0.0);
        CHECK(row.prod_sqrt.cwiseAbs().maxCoeff() == 0.0);
        CHECK(row.dissipation == 0.0);
    }
    CHECK(audit.fitted_budget_constant == 0.0);
}

TEST_CASE("defect estimate vanishes below the truncation level") {
    const auto run = small_skt_run();
    REQUIRE(run.completed);
    const double M = max_density_sum(run.trajectory);
    CHECK(M > 1.0);

    // L at the max density sum: identically zero (exact plateau).
    const auto top = defect_estimate(run.trajectory, TruncationFamily{M, 2});
    CHECK(top.total.cwiseAbs().maxCoeff() == 0.0);
    const auto above = defect_estimate(run.trajectory, TruncationFamily{2.0 * M, 2});
    CHECK(above.total.cwiseAbs().maxCoeff() == 0.0);

    // The dyadic ladder {M/4, M/2, M, 2M} is nonincreasing within 5% noise,
    // with two genuinely positive rungs on this trajectory.
    const auto d1 = defect_estimate(run.trajectory, TruncationFamily{M / 4.0, 2});
    const auto d2 = defect_estimate(run.trajectory, TruncationFamily{M / 2.0, 2});
    CHECK(d1.total.sum() > 0.0);
    CHECK(d2.total.sum() > 0.0);
    CHECK(d2.total.sum() <= d1.total.sum() * 1.05);
}

TEST_CASE("defect estimate is zero for spatially constant trajectories") {
    const SystemSpec spec = skt_system();
    const Grid g = Grid::line(1.0, 16);
    SchemeParams params;
    params.tau = 0.01;
    params.t_end = 0.03;
    Field u0(g, 2);
    u0.component(0).setConstant(2.0);
    u0.component(1).setConstant(2.0);
    const auto run = march(spec, g, u0, params);
    REQUIRE(run.completed);
    // Level inside the transition band, but all gradients vanish.
    const auto d = defect_estimate(run.trajectory, TruncationFamily{3.0, 2});
    CHECK(d.total.cwiseAbs().maxCoeff() == 0.0);
}

namespace {

MarchResult heat_run(int nodes, double tau, double t_end) {
    Vector a0(1);
    a0 << 1.0;
    const SystemSpec spec(a0, Matrix::Zero(1, 1), EntropyParams::trivial(1));
    const Grid g = Grid::line(1.0, nodes);
    SchemeParams params;
    params.tau = tau;
    params.t_end = t_end;
    Field u0(g, 1);
    for (int p = 0; p < nodes; ++p) {
        u0.at(0, p) = 2.0 + std::cos(M_PI * g.node_position(p)[0]);
    }
    return march(spec, g, u0, params);
}

}  // namespace

TEST_CASE("renormalized residual: constant xi telescopes") {
    const auto run = heat_run(33, 0.005, 0.05);
    REQUIRE(run.completed);
    RenormTestFunction tf = make_xi_constant(1);
    tf.phi = make_phi_bump(run.trajectory.grid, 0.05);
    const auto r = renorm_residual(run.trajectory, tf);
    CHECK(r.residual < 1e-12);
}

TEST_CASE("renormalized residual decays under joint refinement") {
    auto residual_for = [](int nodes, double tau) {
        const auto run = heat_run(nodes, tau, 0.08);
        REQUIRE(run.completed);
        RenormTestFunction tf = make_xi_clamp_coord(0, 8.0, 32.0, 1);
        tf.phi = make_phi_bump(run.trajectory.grid, 0.08);
        const auto r = renorm_residual(run.trajectory, tf);
        CHECK(r.truncation_inactive);  // support well beyond max density
        return r.residual;
    };
    const double r1 = residual_for(17, 0.01);
    const double r2 = residual_for(33, 0.005);
    CHECK(std::log2(r1 / r2) > 0.8);
}

TEST_CASE("renormalized residual is invariant under shifting xi by a constant") {
    const auto run = heat_run(25, 0.005, 0.04);
    REQUIRE(run.completed);
    RenormTestFunction tf = make_xi_clamp_coord(0, 5.0, 20.0, 1);
    tf.phi = make_phi_ramp(0.04);
    const auto r0 = renorm_residual(run.trajectory, tf);

    RenormTestFunction shifted = tf;
    auto base_xi = tf.xi;
    shifted.xi = [base_xi](const Vector& u) { return base_xi(u) + 5.0; };
    const auto r1 = renorm_residual(run.trajectory, shifted);
    CHECK(r1.residual == doctest::Approx(r0.residual).epsilon(1e-9));
}

TEST_CASE("renorm audit bundles defects and residuals") {
    Vector a0(1);
    a0 << 1.0;
    const SystemSpec spec(a0, Matrix::Zero(1, 1), EntropyParams::trivial(1));
    const Grid g = Grid::line(1.0, 17);
    SchemeParams params;
    params.tau = 0.01;
    params.t_end = 0.03;
    Field u0(g, 1);
    for (int p = 0; p < 17; ++p) {
        u0.at(0, p) = 2.0 + std::cos(M_PI * g.node_position(p)[0]);
    }
    const auto bundle = renorm_audit(spec, g, u0, params, {4.0, 8.0}, {});
    CHECK(bundle.run.completed);
    CHECK(bundle.defects.size() == 2);
    CHECK(bundle.residuals.empty());
    // Max density ~3: level 4 is already above it.
    CHECK(bundle.defects[0].total.cwiseAbs().maxCoeff() == 0.0);
}
