#include "crossdiff/renorm.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdiff {

namespace {

double sigma(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }
double sigma_d1(double x) { return x > 0.0 ? std::exp(-1.0 / x) / (x * x) : 0.0; }
double sigma_d2(double x) {
    return x > 0.0 ? std::exp(-1.0 / x) * (1.0 - 2.0 * x) / (x * x * x * x) : 0.0;
}

// Numeric sups of |phi'| and |phi''| on the transition interval, scanned
// once; they back the uniform-bound laws.
struct CutoffBounds {
    double m1;
    double m2;
};

const CutoffBounds& cutoff_bounds() {
    static const CutoffBounds b = [] {
        CutoffBounds out{0.0, 0.0};
        const int K = 200000;
        for (int k = 1; k < K; ++k) {
            const double x = static_cast<double>(k) / K;
            out.m1 = std::max(out.m1, std::abs(base_cutoff_d1(x)));
            out.m2 = std::max(out.m2, std::abs(base_cutoff_d2(x)));
        }
        return out;
    }();
    return b;
}

}  // namespace

double base_cutoff(double x) {
    if (x <= 0.0) return 1.0;
    if (x >= 1.0) return 0.0;
    const double a = sigma(1.0 - x), b = sigma(x);
    return a / (a + b);
}

double base_cutoff_d1(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double a = sigma(1.0 - x), b = sigma(x);
    const double ad = -sigma_d1(1.0 - x), bd = sigma_d1(x);
    const double den = a + b;
    return (ad * b - a * bd) / (den * den);
}

double base_cutoff_d2(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double a = sigma(1.0 - x), b = sigma(x);
    const double ad = -sigma_d1(1.0 - x), bd = sigma_d1(x);
    const double add = sigma_d2(1.0 - x), bdd = sigma_d2(x);
    const double den = a + b;
    return ((add * b - a * bdd) * den - 2.0 * (ad * b - a * bd) * (ad + bd)) /
           (den * den * den);
}

namespace {

void check_phi_args(const TruncationFamily& fam, int i, const Vector& v) {
    if (!(fam.level >= 1.0)) throw std::invalid_argument("truncation level must be >= 1");
    if (v.size() != fam.n) throw std::invalid_argument("truncation: wrong vector length");
    if (i < 0 || i >= fam.n) throw std::invalid_argument("truncation: species out of range");
    if (v.minCoeff() < 0.0) throw std::domain_error("truncation: negative density");
}

}  // namespace

double phi_value(const TruncationFamily& fam, int i, const Vector& v) {
    check_phi_args(fam, i, v);
    const double L = fam.level;
    const double s = v.sum() / L - 1.0;
    const double ph = base_cutoff(s);
    return v[i] * ph + 2.0 * L * (1.0 - ph);
}

Vector phi_grad(const TruncationFamily& fam, int i, const Vector& v) {
    check_phi_args(fam, i, v);
    const double L = fam.level;
    const double s = v.sum() / L - 1.0;
    const double ph = base_cutoff(s);
    const double ph1 = base_cutoff_d1(s);
    Vector g = Vector::Constant(fam.n, (v[i] / L - 2.0) * ph1);
    g[i] += ph;
    return g;
}

Matrix phi_hessian(const TruncationFamily& fam, int i, const Vector& v) {
    check_phi_args(fam, i, v);
    const double L = fam.level;
    const double s = v.sum() / L - 1.0;
    const double ph1 = base_cutoff_d1(s);
    const double ph2 = base_cutoff_d2(s);
    Matrix H = Matrix::Constant(fam.n, fam.n, (v[i] / L - 2.0) * ph2 / L);
    for (int k = 0; k < fam.n; ++k) {
        H(i, k) += ph1 / L;
        H(k, i) += ph1 / L;
    }
    return H;
}

TruncationLawReport check_truncation_laws(const std::vector<int>& ladder, int n,
                                          const LogUniformSampler& sampler, int count) {
    TruncationLawReport rep;
    rep.samples_per_level = count;
    const auto& cb = cutoff_bounds();
    const double k1_bound = 1.0 + 2.0 * cb.m1;
    const double dd_scale = 2.0 * (cb.m1 + cb.m2);
    const double k2_bound = 4.0 * dd_scale;
    const double slack = 1e-9;

    auto record = [&](int law, const Vector& v, int L) {
        ++rep.violations[law - 1];
        if (!rep.witness) {
            rep.witness = v;
            rep.witness_level = L;
            rep.witness_law = "law " + std::to_string(law);
        }
    };

    for (std::size_t li = 0; li < ladder.size(); ++li) {
        const int L = ladder[li];
        TruncationFamily fam{static_cast<double>(L), n};
        double sup_dd = 0.0;
        for (int k = 0; k < count; ++k) {
            const std::uint64_t key = static_cast<std::uint64_t>(li) * count + k;
            // Totals log-uniform in [0.01 L, 4 L]: identity region, transition
            // band, and plateau all get sampled.
            const double total =
                0.01 * L * std::exp(std::log(400.0) * sampler.unit(key, 7));
            Vector v(n);
            double dsum = 0.0;
            for (int i = 0; i < n; ++i) {
                v[i] = -std::log(1.0 - 0.999999 * sampler.unit(key, 20 + i));
                dsum += v[i];
            }
            v *= total / dsum;
            if (sampler.unit(key, 60) < 0.15) {
                v[static_cast<int>(sampler.unit(key, 61) * n) % n] = 0.0;
            }
            const double vs = v.sum();

            for (int i = 0; i < n; ++i) {
                const double val = phi_value(fam, i, v);
                const Vector g = phi_grad(fam, i, v);
                const Matrix H = phi_hessian(fam, i, v);

                if (!(val >= 0.0) || val > v[i] + 2.0 * vs + slack * (1.0 + vs)) {
                    record(1, v, L);
                }
                if (vs < L) {
                    bool ok = (val == v[i]);
                    for (int j = 0; j < n; ++j) {
                        if (g[j] != (j == i ? 1.0 : 0.0)) ok = false;
                    }
                    if (!ok) record(2, v, L);
                }
                if (vs > 2.0 * L && g.cwiseAbs().maxCoeff() != 0.0) {
                    record(3, v, L);
                }
                const double gmax = g.cwiseAbs().maxCoeff();
                rep.empirical_k1 = std::max(rep.empirical_k1, gmax);
                if (gmax > k1_bound + slack) record(5, v, L);

                const double hmax = H.cwiseAbs().maxCoeff();
                sup_dd = std::max(sup_dd, hmax);
                if (hmax > dd_scale / L + slack) record(6, v, L);

                const double vmax = v.maxCoeff();
                for (int j = 0; j < n; ++j) {
                    for (int k2 = 0; k2 < n; ++k2) {
                        const double lhs = (1.0 + vmax) * std::abs(H(j, k2)) +
                                           std::sqrt(v[j] * v[k2]) * std::abs(H(j, k2));
                        rep.empirical_k2 = std::max(rep.empirical_k2, lhs);
                        if (lhs > k2_bound + slack) record(7, v, L);
                    }
                }

                // L8 with L0 = L/2.
                const double L0 = 0.5 * L;
                if (vs >= L0) {
                    double phisum = 0.0;
                    for (int j = 0; j < n; ++j) phisum += phi_value(fam, j, v);
                    if (phisum < L0 * (1.0 - 1e-12)) record(8, v, L);
                }
            }
        }
        rep.sup_second.emplace_back(L, sup_dd);
    }

    // L6 also asks for decrease toward zero along the ladder.
    for (std::size_t li = 1; li < rep.sup_second.size(); ++li) {
        if (rep.sup_second[li].second > rep.sup_second[li - 1].second * 1.02) {
            ++rep.violations[5];
        }
    }

    // L4: the gradient settles at the Kronecker delta once L exceeds the
    // density sum; checked at the top of the ladder for fixed samples.
    const int l4_samples = std::min(count, 200);
    const int Lbig = ladder.back();
    TruncationFamily top{static_cast<double>(Lbig), n};
    for (int k = 0; k < l4_samples; ++k) {
        Vector v(n);
        for (int i = 0; i < n; ++i) {
            v[i] = 3.0 * sampler.unit(static_cast<std::uint64_t>(k), 90 + i);
        }
        if (v.sum() >= Lbig) continue;
        for (int i = 0; i < n; ++i) {
            const Vector g = phi_grad(top, i, v);
            for (int j = 0; j < n; ++j) {
                if (g[j] != (j == i ? 1.0 : 0.0)) record(4, v, Lbig);
            }
        }
    }
    return rep;
}

namespace {

// Per-species nodal gradients (N x dim), face differences averaged back to
// nodes; boundary nodes take their single adjacent face per axis.
std::vector<Matrix> nodal_gradients(const Grid& grid, const Field& u) {
    const int N = grid.num_nodes();
    std::vector<Matrix> grads(u.species, Matrix::Zero(N, grid.dim()));
    Matrix counts = Matrix::Zero(N, grid.dim());
    for (const Face& f : grid.faces()) {
        counts(f.p, f.axis) += 1.0;
        counts(f.q, f.axis) += 1.0;
    }
    for (int i = 0; i < u.species; ++i) {
        for (const Face& f : grid.faces()) {
            const double g = (u.at(i, f.q) - u.at(i, f.p)) * f.inv_h;
            grads[i](f.p, f.axis) += g;
            grads[i](f.q, f.axis) += g;
        }
        for (int p = 0; p < N; ++p) {
            for (int ax = 0; ax < grid.dim(); ++ax) {
                grads[i](p, ax) /= counts(p, ax);
            }
        }
    }
    return grads;
}

}  // namespace

AuditReport entropy_audit(const Trajectory& traj) {
    AuditReport rep;
    const Grid& grid = traj.grid;
    const SystemSpec& spec = traj.spec;
    rep.drift_free = spec.drift.is_zero();
    rep.initial_entropy = entropy_integral(grid, spec.entropy, traj.initial);

    const double e_minus_1 = std::exp(1.0) - 1.0;
    double mass_bound_const = 0.0;
    for (int i = 0; i < spec.n; ++i) {
        mass_bound_const += spec.entropy.pi[i] * std::exp(-spec.entropy.lambda[i]);
    }
    mass_bound_const *= e_minus_1 * grid.volume();

    double prev_entropy = rep.initial_entropy;
    double cum_production = 0.0;
    rep.mass_entropy_slack = -std::numeric_limits<double>::infinity();

    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const auto& [time, u] = traj.states[k];
        AuditRow row;
        row.step = static_cast<int>(k + 1);
        row.time = time;
        row.entropy = entropy_integral(grid, spec.entropy, u);
        row.mass = Vector(spec.n);
        for (int i = 0; i < spec.n; ++i) row.mass[i] = integrate(grid, u, i);
        const GradNorms norms = l2_grad_norms(grid, u);
        row.prod_l2 = norms.grad_sq;
        row.prod_sqrt = norms.sqrt_grad_sq;
        row.prod_pair = norms.pair_grad_sq;

        const Field w = to_entropy(u, spec.entropy);
        {
            // Face quadratic form of the step, grad w : A(u_face) grad u.
            Vector ubar(spec.n), gu(spec.n), gw(spec.n);
            double total = 0.0;
            for (const Face& f : grid.faces()) {
                for (int j = 0; j < spec.n; ++j) {
                    ubar[j] = 0.5 * (u.at(j, f.p) + u.at(j, f.q));
                    gu[j] = (u.at(j, f.q) - u.at(j, f.p)) * f.inv_h;
                    gw[j] = (w.at(j, f.q) - w.at(j, f.p)) * f.inv_h;
                }
                const Matrix A = diffusion_matrix(spec, ubar);
                total += f.area * gw.dot(A * gu);
            }
            row.dissipation = total;
        }

        const Field& u_prev_field =
            k == 0 ? traj.initial : traj.states[k - 1].second;
        row.mass_balance = Vector(spec.n);
        for (int i = 0; i < spec.n; ++i) {
            double fint = 0.0;
            for (int p = 0; p < grid.num_nodes(); ++p) {
                const Vector f = reaction_eval(spec.reaction, u.node(p));
                fint += grid.node_weight(p) * regularize_reaction(f, traj.params.delta)[i];
            }
            row.mass_balance[i] =
                (row.mass[i] - integrate(grid, u_prev_field, i)) / traj.params.tau +
                traj.params.eps * integrate(grid, w.component(i)) - fint;
        }

        row.decay_violation = std::max(0.0, row.entropy - prev_entropy);
        rep.max_decay_violation = std::max(rep.max_decay_violation, row.decay_violation);

        cum_production += traj.params.tau * row.dissipation;
        if (time > 0.0) {
            rep.fitted_budget_constant =
                std::max(rep.fitted_budget_constant,
                         (row.entropy + cum_production - rep.initial_entropy) / time);
        }
        rep.mass_entropy_slack =
            std::max(rep.mass_entropy_slack,
                     spec.entropy.pi.dot(row.mass) - row.entropy - mass_bound_const);

        prev_entropy = row.entropy;
        rep.rows.push_back(std::move(row));
    }
    if (rep.rows.empty()) rep.mass_entropy_slack = 0.0;
    rep.fitted_budget_constant = std::max(0.0, rep.fitted_budget_constant);
    return rep;
}

DefectEstimate defect_estimate(const Trajectory& traj, const TruncationFamily& fam) {
    const Grid& grid = traj.grid;
    const SystemSpec& spec = traj.spec;
    if (fam.n != spec.n) throw std::invalid_argument("defect_estimate: species mismatch");
    DefectEstimate est;
    est.level = fam.level;
    est.delta = traj.params.delta;
    est.total = Vector::Zero(spec.n);
    const double L = fam.level;
    const bool has_drift = !spec.drift.is_zero();

    for (const auto& [time, u] : traj.states) {
        const auto grads = nodal_gradients(grid, u);
        const double t_mid = time - 0.5 * traj.params.tau;
        for (int p = 0; p < grid.num_nodes(); ++p) {
            const Vector up = u.node(p);
            const double s = up.sum() / L - 1.0;
            if (s <= 0.0 || s >= 1.0) continue;  // second derivatives vanish
            const double ph1 = base_cutoff_d1(s);
            const double ph2 = base_cutoff_d2(s);
            const Matrix A = diffusion_matrix(spec, up);
            const auto pos = grid.node_position(p);
            Matrix b = Matrix::Zero(spec.n, grid.dim());
            if (has_drift) {
                b = drift_eval(spec.drift, {pos[0], pos[1]}, t_mid, spec.n, grid.dim());
            }
            // vec_j = sum_l A_jl grad u_l - u_j b_j in R^dim.
            Matrix vec = Matrix::Zero(spec.n, grid.dim());
            Eigen::RowVectorXd gsum = Eigen::RowVectorXd::Zero(grid.dim());
            Eigen::RowVectorXd vsum = Eigen::RowVectorXd::Zero(grid.dim());
            for (int j = 0; j < spec.n; ++j) {
                for (int l = 0; l < spec.n; ++l) {
                    vec.row(j) += A(j, l) * grads[l].row(p);
                }
                if (has_drift) vec.row(j) -= up[j] * b.row(j);
                gsum += grads[j].row(p);
                vsum += vec.row(j);
            }
            const double vg = vsum.dot(gsum);
            const double wgt = traj.params.tau * grid.node_weight(p);
            for (int i = 0; i < spec.n; ++i) {
                // sum_{j,k} d_j d_k phi_i^L (vec_j . g_k) with the closed-form
                // hessian structure of the truncation.
                const double term =
                    (ph1 / L) * (vec.row(i).dot(gsum) + vsum.dot(grads[i].row(p))) +
                    ((up[i] / L - 2.0) * ph2 / L) * vg;
                est.total[i] += wgt * std::abs(term);
            }
        }
    }
    return est;
}

namespace {

// Smoothed clamp C_theta(s): identity below theta, constant above 2 theta;
// values by composite Simpson over the transition (the derivative is the
// base cutoff, which has no elementary antiderivative).
double clamp_value(double s, double theta) {
    if (s <= theta) return s;
    const double hi = std::min(s, 2.0 * theta);
    const int segments = 200;
    const double h = (hi - theta) / segments;
    double acc = base_cutoff(0.0) + base_cutoff((hi - theta) / theta);
    for (int k = 1; k < segments; ++k) {
        const double x = theta + k * h;
        acc += (k % 2 == 1 ? 4.0 : 2.0) * base_cutoff(x / theta - 1.0);
    }
    return theta + acc * h / 3.0;
}

double clamp_d1(double s, double theta) { return base_cutoff(s / theta - 1.0); }
double clamp_d2(double s, double theta) { return base_cutoff_d1(s / theta - 1.0) / theta; }

}  // namespace

RenormTestFunction make_xi_constant(int n) {
    RenormTestFunction tf;
    tf.xi_id = "constant";
    tf.xi = [](const Vector&) { return 1.0; };
    tf.xi_grad = [n](const Vector&) { return Vector::Zero(n); };
    tf.xi_hess = [n](const Vector&) { return Matrix::Zero(n, n); };
    tf.support_upper = 0.0;
    return tf;
}

RenormTestFunction make_xi_clamp_coord(int coord, double theta, double window, int n) {
    if (coord < 0 || coord >= n) throw std::invalid_argument("xi clamp: coord out of range");
    if (!(theta > 0.0) || !(window > 0.0)) {
        throw std::invalid_argument("xi clamp: theta and window must be positive");
    }
    RenormTestFunction tf;
    tf.xi_id = "clamp_u" + std::to_string(coord + 1);
    tf.support_upper = 2.0 * window;
    const double th = theta, K = window;
    tf.xi = [coord, th, K](const Vector& u) {
        return clamp_value(u[coord], th) * base_cutoff(u.sum() / K - 1.0);
    };
    tf.xi_grad = [coord, th, K, n](const Vector& u) {
        const double C = clamp_value(u[coord], th);
        const double C1 = clamp_d1(u[coord], th);
        const double H = base_cutoff(u.sum() / K - 1.0);
        const double H1 = base_cutoff_d1(u.sum() / K - 1.0) / K;
        Vector g = Vector::Constant(n, C * H1);
        g[coord] += C1 * H;
        return g;
    };
    tf.xi_hess = [coord, th, K, n](const Vector& u) {
        const double C = clamp_value(u[coord], th);
        const double C1 = clamp_d1(u[coord], th);
        const double C2 = clamp_d2(u[coord], th);
        const double sarg = u.sum() / K - 1.0;
        const double H = base_cutoff(sarg);
        const double H1 = base_cutoff_d1(sarg) / K;
        const double H2 = base_cutoff_d2(sarg) / (K * K);
        Matrix hess = Matrix::Constant(n, n, C * H2);
        for (int j = 0; j < n; ++j) {
            hess(coord, j) += C1 * H1;
            hess(j, coord) += C1 * H1;
        }
        hess(coord, coord) += C2 * H;
        return hess;
    };
    return tf;
}

RenormTestFunction make_xi_clamp_sum(double theta, int n) {
    if (!(theta > 0.0)) throw std::invalid_argument("xi clamp: theta must be positive");
    RenormTestFunction tf;
    tf.xi_id = "clamp_sum";
    tf.support_upper = 2.0 * theta;
    tf.xi = [theta](const Vector& u) { return clamp_value(u.sum(), theta); };
    tf.xi_grad = [theta, n](const Vector& u) {
        return Vector::Constant(n, clamp_d1(u.sum(), theta));
    };
    tf.xi_hess = [theta, n](const Vector& u) {
        return Matrix::Constant(n, n, clamp_d2(u.sum(), theta));
    };
    return tf;
}

SpaceTimeTest make_phi_ramp(double t_end) {
    SpaceTimeTest st;
    st.id = "ramp";
    const double T = t_end > 0.0 ? t_end : 1.0;
    st.value = [T](const Eigen::Vector2d&, double t) { return 1.0 - t / T; };
    st.dt = [T](const Eigen::Vector2d&, double) { return -1.0 / T; };
    st.grad = [](const Eigen::Vector2d&, double) { return Eigen::Vector2d::Zero().eval(); };
    return st;
}

SpaceTimeTest make_phi_bump(const Grid& grid, double t_end) {
    SpaceTimeTest st;
    st.id = "bump";
    const double T = t_end > 0.0 ? t_end : 1.0;
    const int dim = grid.dim();
    const double lx = grid.extent(0);
    const double ly = dim == 2 ? grid.extent(1) : 1.0;
    // Deliberately asymmetric in space: a symmetric profile would pair with
    // symmetric states to an identically vanishing gradient integral.
    auto axis_profile = [](double s, double len) {
        return 0.75 + 0.25 * std::sin(M_PI * s / len + 0.6);
    };
    auto axis_slope = [](double s, double len) {
        return 0.25 * M_PI / len * std::cos(M_PI * s / len + 0.6);
    };
    auto spatial = [=](const Eigen::Vector2d& x) {
        double v = axis_profile(x[0], lx);
        if (dim == 2) v *= axis_profile(x[1], ly);
        return v;
    };
    st.value = [spatial, T](const Eigen::Vector2d& x, double t) {
        return (1.0 - t / T) * spatial(x);
    };
    st.dt = [spatial, T](const Eigen::Vector2d& x, double) { return -spatial(x) / T; };
    st.grad = [=](const Eigen::Vector2d& x, double t) {
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        if (dim == 1) {
            g[0] = (1.0 - t / T) * axis_slope(x[0], lx);
        } else {
            g[0] = (1.0 - t / T) * axis_slope(x[0], lx) * axis_profile(x[1], ly);
            g[1] = (1.0 - t / T) * axis_profile(x[0], lx) * axis_slope(x[1], ly);
        }
        return g;
    };
    return st;
}

RenormResidual renorm_residual(const Trajectory& traj, const RenormTestFunction& tf) {
    const Grid& grid = traj.grid;
    const SystemSpec& spec = traj.spec;
    const double tau = traj.params.tau;
    const bool has_drift = !spec.drift.is_zero();

    RenormResidual out;
    out.xi_id = tf.xi_id;
    out.phi_id = tf.phi.id;

    double max_density = traj.initial.values.maxCoeff();
    for (const auto& [t, u] : traj.states) {
        max_density = std::max(max_density, u.values.maxCoeff());
    }
    out.truncation_inactive = tf.support_upper > max_density;

    double time_term = 0.0;     // -int xi(u) d_t phi
    double initial_term = 0.0;  // -int xi(u0) phi(.,0)
    double hess_term = 0.0;     // -int d2 xi (A grad u - u b) . grad u phi
    double grad_term = 0.0;     // -int d xi (A grad u - u b) . grad phi
    double reaction_term = 0.0; // +int d xi f phi

    for (int p = 0; p < grid.num_nodes(); ++p) {
        const auto pos = grid.node_position(p);
        initial_term -= grid.node_weight(p) * tf.xi(traj.initial.node(p)) *
                        tf.phi.value({pos[0], pos[1]}, 0.0);
    }

    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const auto& [time, u] = traj.states[k];
        const double t_prev = time - tau;
        const double t_mid = time - 0.5 * tau;
        const auto grads = nodal_gradients(grid, u);
        for (int p = 0; p < grid.num_nodes(); ++p) {
            const auto posarr = grid.node_position(p);
            const Eigen::Vector2d pos{posarr[0], posarr[1]};
            const Vector up = u.node(p);
            const double mw = grid.node_weight(p);

            // Exact slab integral of d_t phi against the piecewise-constant
            // interpolant: the increments telescope for constant xi.
            time_term -= mw * tf.xi(up) *
                         (tf.phi.value(pos, time) - tf.phi.value(pos, t_prev));

            const Vector xg = tf.xi_grad(up);
            const bool grad_active = xg.cwiseAbs().maxCoeff() != 0.0;
            const Matrix xh = tf.xi_hess(up);
            const bool hess_active = xh.cwiseAbs().maxCoeff() != 0.0;
            if (!grad_active && !hess_active) continue;

            const Matrix A = diffusion_matrix(spec, up);
            Matrix b = Matrix::Zero(spec.n, grid.dim());
            if (has_drift) {
                b = drift_eval(spec.drift, pos, t_mid, spec.n, grid.dim());
            }
            Matrix vec = Matrix::Zero(spec.n, grid.dim());
            for (int i = 0; i < spec.n; ++i) {
                for (int l = 0; l < spec.n; ++l) {
                    vec.row(i) += A(i, l) * grads[l].row(p);
                }
                if (has_drift) vec.row(i) -= up[i] * b.row(i);
            }

            const double phv = tf.phi.value(pos, t_prev);
            if (hess_active) {
                double acc = 0.0;
                for (int i = 0; i < spec.n; ++i) {
                    for (int k2 = 0; k2 < spec.n; ++k2) {
                        acc += xh(i, k2) * vec.row(i).dot(grads[k2].row(p));
                    }
                }
                hess_term -= tau * mw * acc * phv;
            }
            if (grad_active) {
                const Eigen::Vector2d gphi = tf.phi.grad(pos, t_prev);
                double accg = 0.0, accf = 0.0;
                const Vector f = reaction_eval(spec.reaction, up);
                const Vector fd = regularize_reaction(f, traj.params.delta);
                for (int i = 0; i < spec.n; ++i) {
                    double dot = 0.0;
                    for (int ax = 0; ax < grid.dim(); ++ax) {
                        dot += vec(i, ax) * gphi[ax];
                    }
                    accg += xg[i] * dot;
                    accf += xg[i] * fd[i];
                }
                grad_term -= tau * mw * accg;
                reaction_term += tau * mw * accf * phv;
            }
        }
    }

    const double lhs = time_term + initial_term;
    const double rhs = hess_term + grad_term + reaction_term;
    out.normalizer = std::max({std::abs(time_term), std::abs(initial_term),
                               std::abs(hess_term), std::abs(grad_term),
                               std::abs(reaction_term)});
    const double floor = 1e-300;
    out.residual = std::abs(lhs - rhs) / std::max(out.normalizer, floor);
    return out;
}

double max_density_sum(const Trajectory& traj) {
    double m = 0.0;
    for (const auto& [t, u] : traj.states) {
        for (int p = 0; p < u.num_nodes; ++p) {
            double s = 0.0;
            for (int i = 0; i < u.species; ++i) s += u.at(i, p);
            m = std::max(m, s);
        }
    }
    return m;
}

RenormAuditBundle renorm_audit(const SystemSpec& spec, const Grid& grid, const Field& u0,
                               const SchemeParams& params, const std::vector<double>& ladder,
                               const std::vector<RenormTestFunction>& suite) {
    RenormAuditBundle bundle;
    bundle.run = march(spec, grid, u0, params);
    for (double L : ladder) {
        bundle.defects.push_back(
            defect_estimate(bundle.run.trajectory, TruncationFamily{L, spec.n}));
    }
    for (const auto& tf : suite) {
        bundle.residuals.push_back(renorm_residual(bundle.run.trajectory, tf));
    }
    return bundle;
}

}  // namespace crossdiff
