#include "crossdiff/grid.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace crossdiff;

TEST_CASE("grid construction and quadrature") {
    const Grid g = Grid::line(2.0, 9);
    CHECK(g.num_nodes() == 9);
    CHECK(g.hx() == doctest::Approx(0.25));
    CHECK(integrate(g, Eigen::VectorXd::Ones(9)) == doctest::Approx(2.0));

    const Grid g2 = Grid::rectangle(1.0, 3.0, 5, 7);
    CHECK(g2.num_nodes() == 35);
    CHECK(integrate(g2, Eigen::VectorXd::Ones(35)) == doctest::Approx(3.0));

    CHECK_THROWS(Grid::line(1.0, 2));
    CHECK_THROWS(Grid::line(-1.0, 5));
}

TEST_CASE("gradient of constants and affine functions") {
    const Grid g = Grid::line(1.0, 11);
    CHECK(gradient(g, Eigen::VectorXd::Constant(11, 3.7)).cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd x(11);
    for (int i = 0; i < 11; ++i) x[i] = g.node_position(i)[0];
    const Eigen::VectorXd gx = gradient(g, x);
    for (int f = 0; f < gx.size(); ++f) {
        CHECK(gx[f] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("summation by parts: divergence is the negative adjoint of gradient") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (const Grid& g : {Grid::line(1.5, 12), Grid::rectangle(1.0, 2.0, 6, 9)}) {
        Eigen::VectorXd flux(g.faces().size());
        Eigen::VectorXd phi(g.num_nodes());
        for (auto& v : flux) v = unif(rng);
        for (auto& v : phi) v = unif(rng);
        const double lhs = integrate(g, divergence(g, flux).cwiseProduct(phi).eval());
        double rhs = 0.0;
        const Eigen::VectorXd gphi = gradient(g, phi);
        for (std::size_t f = 0; f < g.faces().size(); ++f) {
            rhs -= g.faces()[f].area * flux[f] * gphi[f];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
        // Integral of any divergence vanishes exactly (no-flux telescoping).
        CHECK(integrate(g, divergence(g, flux)) == doctest::Approx(0.0).epsilon(1e-13));
    }
}

TEST_CASE("laplacian adjointness and definiteness") {
    const Grid g = Grid::rectangle(1.0, 1.0, 7, 8);
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Eigen::VectorXd w(g.num_nodes()), v(g.num_nodes());
    for (auto& q : w) q = unif(rng);
    for (auto& q : v) q = unif(rng);

    // <w, (-Lap) w>_M = |grad w|^2.
    const Eigen::VectorXd Lw = g.laplacian() * w;
    double lhs = 0.0;
    for (int p = 0; p < g.num_nodes(); ++p) lhs += g.node_weight(p) * w[p] * (-Lw[p]);
    const Eigen::VectorXd gw = gradient(g, w);
    double gn = 0.0;
    for (std::size_t f = 0; f < g.faces().size(); ++f) {
        gn += g.faces()[f].area * gw[f] * gw[f];
    }
    CHECK(lhs == doctest::Approx(gn).epsilon(1e-12));
    CHECK(lhs >= 0.0);

    // Symmetry in the weighted inner product.
    const Eigen::VectorXd Lv = g.laplacian() * v;
    double wLv = 0.0, vLw = 0.0;
    for (int p = 0; p < g.num_nodes(); ++p) {
        wLv += g.node_weight(p) * w[p] * Lv[p];
        vLw += g.node_weight(p) * v[p] * Lw[p];
    }
    CHECK(wLv == doctest::Approx(vLw).epsilon(1e-12));

    // Constants are annihilated by both operators.
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(g.num_nodes());
    CHECK((g.laplacian() * ones).cwiseAbs().maxCoeff() < 1e-13);
    Field cf(g, 1);
    cf.component(0) = ones * 4.2;
    CHECK(laplacian_apply(g, cf).values.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(bilaplacian_apply(g, cf).values.cwiseAbs().maxCoeff() < 1e-10);

    // <w, (-Lap)^2 w>_M equals the lumped norm of Lap w.
    double wL2w = 0.0, lumped = 0.0;
    const Eigen::VectorXd LLw = g.laplacian() * Lw;
    for (int p = 0; p < g.num_nodes(); ++p) {
        wL2w += g.node_weight(p) * w[p] * LLw[p];
        lumped += g.node_weight(p) * Lw[p] * Lw[p];
    }
    CHECK(wL2w == doctest::Approx(lumped).epsilon(1e-12));
    CHECK(wL2w >= 0.0);
}

TEST_CASE("gradient norms: constants and the x^2 refinement study") {
    const Grid g = Grid::line(1.0, 17);
    Field c(g, 1);
    c.component(0).setConstant(2.5);
    const GradNorms n0 = l2_grad_norms(g, c);
    CHECK(n0.grad_sq[0] == doctest::Approx(0.0));
    CHECK(n0.sqrt_grad_sq[0] == doctest::Approx(0.0));

    // |grad u|^2 for u = x^2 on (0,1) converges to 4/3 at second order.
    double prev_err = -1.0;
    for (int nodes : {17, 33, 65, 129}) {
        const Grid gr = Grid::line(1.0, nodes);
        Field f(gr, 1);
        for (int p = 0; p < nodes; ++p) {
            const double x = gr.node_position(p)[0];
            f.at(0, p) = x * x;
        }
        const double err = std::abs(l2_grad_norms(gr, f).grad_sq[0] - 4.0 / 3.0);
        if (prev_err > 0.0) {
            CHECK(std::log2(prev_err / err) > 1.9);
        }
        prev_err = err;
    }

    Field neg(g, 1);
    neg.component(0).setConstant(-1.0);
    CHECK_THROWS(l2_grad_norms(g, neg));
}

TEST_CASE("laplacian second-order consistency on a smooth profile") {
    // Neumann-compatible manufactured function cos(pi x) cos(2 pi y).
    double prev_err = -1.0;
    for (int nodes : {17, 33, 65}) {
        const Grid g = Grid::rectangle(1.0, 1.0, nodes, nodes);
        Eigen::VectorXd u(g.num_nodes()), exact(g.num_nodes());
        for (int p = 0; p < g.num_nodes(); ++p) {
            const auto pos = g.node_position(p);
            u[p] = std::cos(M_PI * pos[0]) * std::cos(2.0 * M_PI * pos[1]);
            exact[p] = -5.0 * M_PI * M_PI * u[p];
        }
        const Eigen::VectorXd Lu = g.laplacian() * u;
        // Interior max error (the boundary rows are first-order pointwise but
        // feed a summation-by-parts weak form).
        double err = 0.0;
        for (int iy = 1; iy + 1 < g.ny(); ++iy) {
            for (int ix = 1; ix + 1 < g.nx(); ++ix) {
                const int p = iy * g.nx() + ix;
                err = std::max(err, std::abs(Lu[p] - exact[p]));
            }
        }
        if (prev_err > 0.0) {
            CHECK(std::log2(prev_err / err) > 1.9);
        }
        prev_err = err;
    }
}

TEST_CASE("field shape errors") {
    const Grid g = Grid::line(1.0, 5);
    CHECK_THROWS(gradient(g, Eigen::VectorXd::Ones(4)));
    CHECK_THROWS(divergence(g, Eigen::VectorXd::Ones(99)));
    CHECK_THROWS(integrate(g, Eigen::VectorXd::Ones(4)));
}
