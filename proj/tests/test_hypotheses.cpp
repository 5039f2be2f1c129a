#include "crossdiff/hypotheses.hpp"

#include <doctest.h>

#include <cmath>

using namespace crossdiff;

TEST_CASE("weak cross-diffusion alpha") {
    Matrix sym(3, 3);
    sym << 2.0, 1.0, 0.5,
           1.0, 3.0, 0.7,
           0.5, 0.7, 1.5;
    CHECK(weak_cross_diffusion_alpha(sym) == 1.5);  // min_i a_ii exactly

    Matrix a(2, 2);
    a << 1.0, 4.0, 1.0, 1.0;
    CHECK(weak_cross_diffusion_alpha(a) == doctest::Approx(0.75));

    Matrix b(2, 2);
    b << 1.0, 9.0, 1.0, 1.0;
    CHECK(weak_cross_diffusion_alpha(b) == doctest::Approx(0.0));

    // Invariant under swapping the off-diagonal pair.
    Matrix bt = b.transpose();
    CHECK(weak_cross_diffusion_alpha(bt) == doctest::Approx(weak_cross_diffusion_alpha(b)));

    Matrix neg(2, 2);
    neg << 1.0, -1.0, 0.0, 1.0;
    CHECK_THROWS(weak_cross_diffusion_alpha(neg));
}

TEST_CASE("detailed balance measure") {
    Matrix a2(2, 2);
    a2 << 0.0, 2.0, 1.0, 0.0;
    const auto pi2 = detailed_balance_measure(a2);
    REQUIRE(pi2.has_value());
    CHECK((*pi2)[0] == doctest::Approx(1.0));
    CHECK((*pi2)[1] == doctest::Approx(2.0));

    Matrix a3(3, 3);
    a3 << 0.0, 2.0, 3.0,
          1.0, 0.0, 3.0,
          1.0, 2.0, 0.0;
    const auto pi3 = detailed_balance_measure(a3);
    REQUIRE(pi3.has_value());
    CHECK((*pi3)[0] == doctest::Approx(1.0).epsilon(1e-13));
    CHECK((*pi3)[1] == doctest::Approx(2.0).epsilon(1e-13));
    CHECK((*pi3)[2] == doctest::Approx(3.0).epsilon(1e-13));
    // Reversibility on every pair, not just tree edges.
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            CHECK((*pi3)[i] * a3(i, j) ==
                  doctest::Approx((*pi3)[j] * a3(j, i)).epsilon(1e-12));
        }
    }

    // Kolmogorov cycle violation: all off-diagonals 1 except a_13 = 2.
    Matrix bad(3, 3);
    bad << 0.0, 1.0, 2.0,
           1.0, 0.0, 1.0,
           1.0, 1.0, 0.0;
    CHECK_FALSE(detailed_balance_measure(bad).has_value());

    // Scale equivariance.
    const auto pi3s = detailed_balance_measure((a3 * 7.5).eval());
    REQUIRE(pi3s.has_value());
    CHECK(((*pi3s) - (*pi3)).cwiseAbs().maxCoeff() < 1e-12);

    // A vanishing off-diagonal entry leaves the condition unmet.
    Matrix zero_od(2, 2);
    zero_od << 1.0, 0.0, 1.0, 1.0;
    CHECK_FALSE(detailed_balance_measure(zero_od).has_value());
}

namespace {

MassActionReaction single_reversible(double kf, double kb) {
    MassActionReaction ma;
    Reaction r;
    r.alpha = Eigen::VectorXi::Zero(2);
    r.beta = Eigen::VectorXi::Zero(2);
    r.alpha[0] = 1;
    r.beta[1] = 1;
    r.k_forward = kf;
    r.k_backward = kb;
    ma.reactions.push_back(r);
    return ma;
}

}  // namespace

TEST_CASE("lambda from mass action") {
    const auto res = lambda_from_mass_action(single_reversible(2.0, 1.0));
    REQUIRE(res.ok);
    CHECK(res.lambda[0] == doctest::Approx(0.5 * std::log(2.0)));
    CHECK(res.lambda[1] == doctest::Approx(-0.5 * std::log(2.0)));

    // kf = kb: lambda = 0 is admissible (and minimum-norm).
    const auto res0 = lambda_from_mass_action(single_reversible(3.0, 3.0));
    REQUIRE(res0.ok);
    CHECK(res0.lambda.cwiseAbs().maxCoeff() < 1e-14);

    // Two copies of the same reaction with incompatible ratios: inconsistent.
    MassActionReaction twice = single_reversible(2.0, 1.0);
    twice.reactions.push_back(single_reversible(1.0, 2.0).reactions[0]);
    const auto bad = lambda_from_mass_action(twice);
    CHECK_FALSE(bad.ok);
    CHECK_FALSE(bad.violating_reactions.empty());
    CHECK(bad.message.find("Wegscheider") != std::string::npos);
}

TEST_CASE("dissipativity certification") {
    // f == 0: margin 0.
    SystemSpec zero(Vector::Ones(2), Matrix::Identity(2, 2), EntropyParams::trivial(2));
    LogUniformSampler sampler(42);
    const auto rz = verify_dissipativity(zero, sampler, 500);
    CHECK(rz.margin == 0.0);

    // Mass action with the derived lambda: margin <= 1e-10 * scale.
    const auto ma = single_reversible(2.0, 1.0);
    const auto lr = lambda_from_mass_action(ma);
    REQUIRE(lr.ok);
    SystemSpec spec(Vector::Ones(2), Matrix::Identity(2, 2),
                    EntropyParams(Vector::Ones(2), lr.lambda), DriftSpec{}, ma);
    const auto rd = verify_dissipativity(spec, sampler, 10000);
    CHECK(rd.margin <= 1e-10 * rd.scale);

    // A constant production term violates (1.f) and yields a witness.
    CustomReaction bad;
    bad.f = [](const Vector& u) {
        Vector f = Vector::Zero(u.size());
        f[0] = 1.0;
        return f;
    };
    SystemSpec specbad(Vector::Ones(2), Matrix::Identity(2, 2), EntropyParams::trivial(2),
                       DriftSpec{}, ReactionSpec(bad));
    const auto rb = verify_dissipativity(specbad, sampler, 2000);
    CHECK(rb.margin > 0.0);
    CHECK(rb.witness.has_value());
}

TEST_CASE("quasi-positivity sampling") {
    // Lotka-Volterra style f_i = u_i (...) vanishes on its own face.
    CustomReaction lv;
    lv.f = [](const Vector& u) {
        Vector f(u.size());
        f[0] = u[0] * (1.0 - u[0] - 0.3 * u[1]);
        f[1] = u[1] * (0.5 - 0.2 * u[0] - u[1]);
        return f;
    };
    SystemSpec spec(Vector::Ones(2), Matrix::Identity(2, 2), EntropyParams::trivial(2),
                    DriftSpec{}, ReactionSpec(lv));
    LogUniformSampler sampler(1);
    const auto rep = verify_quasi_positivity(spec, sampler, 1000);
    CHECK(rep.margin >= 0.0);

    CustomReaction sink;
    sink.f = [](const Vector& u) {
        Vector f = Vector::Zero(u.size());
        f[0] = -1.0;  // removes mass even at u_1 = 0
        return f;
    };
    SystemSpec specbad(Vector::Ones(2), Matrix::Identity(2, 2), EntropyParams::trivial(2),
                       DriftSpec{}, ReactionSpec(sink));
    const auto repbad = verify_quasi_positivity(specbad, sampler, 1000);
    CHECK(repbad.margin < 0.0);
    CHECK(repbad.witness_species == 0);
}

TEST_CASE("rayleigh sampling and the detailed-balance lower bound") {
    Vector pi(3);
    pi << 1.0, 2.0, 3.0;
    Matrix a(3, 3);
    a << 1.0, 2.0, 3.0,
         1.0, 1.0, 3.0,
         1.0, 2.0, 1.0;
    SystemSpec spec(Vector::Ones(3) * 0.3, a, EntropyParams(pi, Vector::Zero(3)));
    LogUniformSampler sampler(17);
    const auto r = verify_hA_positive(spec, sampler, 2000);
    CHECK(r.bound_checked);
    CHECK(r.min_quotient > 0.0);
    CHECK(r.max_bound_violation <= 1e-9 * std::max(1.0, r.min_quotient));
}

TEST_CASE("hypothesis classification") {
    // (H5') example: alpha = 0.75 with trivial pi.
    {
        Matrix a(2, 2);
        a << 1.0, 4.0, 1.0, 1.0;
        SystemSpec spec(Vector::Zero(2), a, EntropyParams::trivial(2));
        const auto rep = classify_hypotheses(spec, 7, 500);
        CHECK(rep.classification == HypothesisClass::H5Prime);
        REQUIRE(rep.alpha.has_value());
        CHECK(*rep.alpha == doctest::Approx(0.75));
    }
    // Zero diagonal, positive a_i0, detailed-balanced off-diagonal.
    {
        Matrix a(2, 2);
        a << 0.0, 2.0, 1.0, 0.0;
        Vector pi(2);
        pi << 1.0, 2.0;
        SystemSpec spec(Vector::Ones(2), a, EntropyParams(pi, Vector::Zero(2)));
        const auto rep = classify_hypotheses(spec, 7, 500);
        CHECK(rep.classification == HypothesisClass::H5DoublePrimeA0);
        CHECK_FALSE(rep.alpha.has_value());  // moot with a_ii = 0
    }
    // Detailed balance with positive diagonal but nontrivial pi: the aii case.
    {
        Matrix a(3, 3);
        a << 1.0, 2.0, 3.0,
             1.0, 1.0, 3.0,
             1.0, 2.0, 1.0;
        Vector pi(3);
        pi << 1.0, 2.0, 3.0;
        SystemSpec spec(Vector::Zero(3), a, EntropyParams(pi, Vector::Zero(3)));
        const auto rep = classify_hypotheses(spec, 7, 500);
        CHECK(rep.classification == HypothesisClass::H5DoublePrimeAii);
    }
    // Nothing certified.
    {
        Matrix a(2, 2);
        a << 1.0, 9.0, 1.0, 1.0;  // alpha = 0, no detailed balance
        SystemSpec spec(Vector::Zero(2), a, EntropyParams::trivial(2));
        const auto rep = classify_hypotheses(spec, 7, 500);
        CHECK(rep.classification == HypothesisClass::None);
    }
}
