#include "crossdiff/scheme.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace crossdiff {

namespace {

constexpr double kPecletThreshold = 2.0;

void validate_params(const SchemeParams& p) {
    if (!(p.tau > 0.0)) throw std::invalid_argument("scheme: tau must be positive");
    if (p.eps < 0.0 || p.delta < 0.0) {
        throw std::invalid_argument("scheme: eps and delta must be nonnegative");
    }
    if (p.m != 1 && p.m != 2) throw std::invalid_argument("scheme: m must be 1 or 2");
    if (!(p.newton.tolerance > 0.0)) {
        throw std::invalid_argument("scheme: newton tolerance must be positive");
    }
    if (!(p.newton.damping > 0.0 && p.newton.damping < 1.0)) {
        throw std::invalid_argument("scheme: damping factor must lie in (0,1)");
    }
}

struct NodeIndexError {
    int node;
};

// Primal values from entropy values; reports the offending node on overflow.
Field primal_of(const Field& w, const EntropyParams& entropy) {
    Field u = w;
    u.repr = FieldRepr::Primal;
    for (int i = 0; i < w.species; ++i) {
        const double pi = entropy.pi[i];
        const double lam = entropy.lambda[i];
        for (int p = 0; p < w.num_nodes; ++p) {
            const double v = std::exp(w.at(i, p) / pi - lam);
            if (!std::isfinite(v)) throw NodeIndexError{p};
            u.at(i, p) = v;
        }
    }
    return u;
}

struct Workspace {
    Eigen::SparseMatrix<double> reg;  // (-Lap)^m + I
};

// Residual and (optionally) Jacobian of the implicit Euler step, assembled
// in one pass over nodes and faces.
bool assemble(const Field& w, const Field& u_prev, const SchemeParams& params,
              const SystemSpec& spec, const Grid& grid, int step_index,
              const Workspace& ws, Field& residual,
              std::vector<Eigen::Triplet<double>>* jac, int* bad_node) {
    const int n = spec.n;
    const int N = grid.num_nodes();
    const auto& pi = spec.entropy.pi;

    Field u(grid, n, FieldRepr::Primal);
    try {
        u = primal_of(w, spec.entropy);
    } catch (const NodeIndexError& e) {
        if (bad_node) *bad_node = e.node;
        return false;
    }

    residual = Field(grid, n, FieldRepr::Primal);
    const double inv_tau = 1.0 / params.tau;

    // Time term, elliptic regularization, reaction.
    for (int p = 0; p < N; ++p) {
        const Vector up = u.node(p);
        const Vector f = reaction_eval(spec.reaction, up);
        const Vector fd = regularize_reaction(f, params.delta);
        for (int i = 0; i < n; ++i) {
            residual.at(i, p) =
                (u.at(i, p) - u_prev.at(i, p)) * inv_tau + params.eps * w.at(i, p) - fd[i];
        }
        if (jac) {
            for (int i = 0; i < n; ++i) {
                jac->emplace_back(i * N + p, i * N + p,
                                  inv_tau * u.at(i, p) / pi[i] + params.eps);
            }
            // d f_delta / d u, then chain rule to w.
            const Matrix J = reaction_jacobian(spec.reaction, up);
            const double fn = f.norm();
            const double s = 1.0 + params.delta * fn;
            for (int j = 0; j < n; ++j) {
                const double du_dw = up[j] / pi[j];
                for (int i = 0; i < n; ++i) {
                    double d = J(i, j) / s;
                    if (params.delta > 0.0 && fn > 0.0) {
                        d -= f[i] * params.delta * f.dot(J.col(j)) / (fn * s * s);
                    }
                    jac->emplace_back(i * N + p, j * N + p, -d * du_dw);
                }
            }
        }
    }

    if (params.eps > 0.0) {
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd ri = ws.reg * w.component(i);
            // The +I part is already in the time loop via eps * w.
            ri -= w.component(i);
            for (int p = 0; p < N; ++p) residual.at(i, p) += params.eps * ri[p];
            if (jac) {
                for (int c = 0; c < ws.reg.outerSize(); ++c) {
                    for (Eigen::SparseMatrix<double>::InnerIterator it(ws.reg, c); it; ++it) {
                        if (it.row() == it.col()) {
                            if (it.value() != 1.0) {
                                jac->emplace_back(i * N + it.row(), i * N + it.col(),
                                                  params.eps * (it.value() - 1.0));
                            }
                        } else {
                            jac->emplace_back(i * N + it.row(), i * N + it.col(),
                                              params.eps * it.value());
                        }
                    }
                }
            }
        }
    }

    // Fluxes: sum_j A_ij(u_face) grad u_j - u_i b_i, u_face arithmetic.
    const DriftStepSample bk = drift_average(spec.drift, step_index, params.tau, n, grid.dim());
    const bool has_drift = !spec.drift.is_zero();
    Vector ubar(n), gu(n);
    Matrix dAsum(n, n);
    for (const Face& face : grid.faces()) {
        for (int j = 0; j < n; ++j) {
            ubar[j] = 0.5 * (u.at(j, face.p) + u.at(j, face.q));
            gu[j] = (u.at(j, face.q) - u.at(j, face.p)) * face.inv_h;
        }
        const Matrix A = diffusion_matrix(spec, ubar);
        Vector bcomp = Vector::Zero(n);
        if (has_drift) {
            const Matrix b = bk.at({face.midpoint[0], face.midpoint[1]});
            bcomp = b.col(face.axis);
        }
        if (jac) {
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int l = 0; l < n; ++l) {
                        s += diffusion_matrix_derivative(spec, i, l, j) * gu[l];
                    }
                    dAsum(j, i) = s;
                }
            }
        }
        const double wp = face.transverse_weight / grid.node_weight(face.p);
        const double wq = face.transverse_weight / grid.node_weight(face.q);
        for (int i = 0; i < n; ++i) {
            double flux = A.row(i).dot(gu);
            bool upwind = false;
            int up_node = face.p;
            if (has_drift && bcomp[i] != 0.0) {
                const double diff_coeff = A(i, i);
                const double pe = diff_coeff > 0.0
                                      ? std::abs(bcomp[i]) / (diff_coeff * face.inv_h)
                                      : std::numeric_limits<double>::infinity();
                upwind = pe > kPecletThreshold;
                up_node = bcomp[i] > 0.0 ? face.p : face.q;
                const double ui_face =
                    upwind ? u.at(i, up_node) : 0.5 * (u.at(i, face.p) + u.at(i, face.q));
                flux -= ui_face * bcomp[i];
            }
            residual.at(i, face.p) -= wp * flux;
            residual.at(i, face.q) += wq * flux;
            if (jac) {
                for (int j = 0; j < n; ++j) {
                    for (int r = 0; r < 2; ++r) {
                        const int node = r == 0 ? face.p : face.q;
                        const double du_dw = u.at(j, node) / pi[j];
                        const double sgn = r == 0 ? -1.0 : 1.0;
                        double d = (A(i, j) * sgn * face.inv_h + 0.5 * dAsum(j, i)) * du_dw;
                        if (has_drift && bcomp[i] != 0.0 && j == i) {
                            if (upwind) {
                                if (node == up_node) d -= bcomp[i] * du_dw;
                            } else {
                                d -= 0.5 * bcomp[i] * du_dw;
                            }
                        }
                        jac->emplace_back(i * N + face.p, j * N + node, -wp * d);
                        jac->emplace_back(i * N + face.q, j * N + node, wq * d);
                    }
                }
            }
        }
    }

    if (!residual.values.allFinite()) {
        if (bad_node) {
            for (int p = 0; p < N; ++p) {
                for (int i = 0; i < n; ++i) {
                    if (!std::isfinite(residual.at(i, p))) {
                        *bad_node = p;
                        return false;
                    }
                }
            }
        }
        return false;
    }
    return true;
}

Vector mass_vector(const Grid& grid, const Field& u) {
    Vector m(u.species);
    for (int i = 0; i < u.species; ++i) m[i] = integrate(grid, u, i);
    return m;
}

// Face quadratic form grad w : A(u_face) grad u, the actual entropy
// dissipation of the step.
double step_dissipation(const Grid& grid, const SystemSpec& spec, const Field& w,
                        const Field& u) {
    const int n = spec.n;
    Vector ubar(n), gu(n), gw(n);
    double total = 0.0;
    for (const Face& face : grid.faces()) {
        for (int j = 0; j < n; ++j) {
            ubar[j] = 0.5 * (u.at(j, face.p) + u.at(j, face.q));
            gu[j] = (u.at(j, face.q) - u.at(j, face.p)) * face.inv_h;
            gw[j] = (w.at(j, face.q) - w.at(j, face.p)) * face.inv_h;
        }
        const Matrix A = diffusion_matrix(spec, ubar);
        total += face.area * gw.dot(A * gu);
    }
    return total;
}

}  // namespace

Field initial_cutoff(const Field& u0, double eps_cut, const EntropyParams& entropy) {
    double cap = 1.0;
    for (int i = 0; i < entropy.species(); ++i) {
        cap = std::min(cap, std::exp(-entropy.lambda[i]));
    }
    if (!(eps_cut > 0.0) || !(eps_cut < cap)) {
        throw std::invalid_argument("initial_cutoff: eps_cut out of (0, min(1, exp(-lambda)))");
    }
    Field out = u0;
    const double hi = 1.0 / eps_cut;
    for (Eigen::Index k = 0; k < out.values.size(); ++k) {
        out.values[k] = std::clamp(out.values[k], eps_cut, hi);
    }
    return out;
}

Vector regularize_reaction(const Vector& f, double delta) {
    if (delta < 0.0) throw std::invalid_argument("regularize_reaction: delta must be >= 0");
    if (delta == 0.0) return f;
    return f / (1.0 + delta * f.norm());
}

DriftStepSample drift_average(const DriftSpec& b, int k, double tau, int n, int dim) {
    DriftStepSample s;
    s.spec = &b;
    s.t_mid = (k - 0.5) * tau;
    s.n = n;
    s.dim = dim;
    return s;
}

Field assemble_residual(const Field& w, const Field& w_prev, const SchemeParams& params,
                        const SystemSpec& spec, const Grid& grid, int step_index) {
    validate_params(params);
    Workspace ws;
    if (params.eps > 0.0) ws.reg = grid.regularizer(params.m);
    Field u_prev = to_primal(w_prev, spec.entropy);
    Field residual;
    int bad_node = -1;
    if (!assemble(w, u_prev, params, spec, grid, step_index, ws, residual, nullptr,
                  &bad_node)) {
        std::ostringstream msg;
        msg << "assemble_residual: non-finite intermediate at node " << bad_node;
        throw std::overflow_error(msg.str());
    }
    return residual;
}

Eigen::SparseMatrix<double> assemble_jacobian(const Field& w, const SchemeParams& params,
                                              const SystemSpec& spec, const Grid& grid,
                                              int step_index) {
    validate_params(params);
    Workspace ws;
    if (params.eps > 0.0) ws.reg = grid.regularizer(params.m);
    Field u_prev = to_primal(w, spec.entropy);  // w_prev does not enter the Jacobian
    Field residual;
    std::vector<Eigen::Triplet<double>> trips;
    int bad_node = -1;
    if (!assemble(w, u_prev, params, spec, grid, step_index, ws, residual, &trips,
                  &bad_node)) {
        std::ostringstream msg;
        msg << "assemble_jacobian: non-finite intermediate at node " << bad_node;
        throw std::overflow_error(msg.str());
    }
    const int dim = spec.n * grid.num_nodes();
    Eigen::SparseMatrix<double> J(dim, dim);
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
}

namespace {

NewtonResult newton_solve_impl(const Field& w_init, const Field& u_prev,
                               const SchemeParams& params, const SystemSpec& spec,
                               const Grid& grid, int step_index, const Workspace& ws) {
    const int n = spec.n;
    const int N = grid.num_nodes();
    const int dim = n * N;
    const auto& ctl = params.newton;

    NewtonResult result;
    result.w = w_init;

    Field residual;
    int bad_node = -1;
    if (!assemble(result.w, u_prev, params, spec, grid, step_index, ws, residual, nullptr,
                  &bad_node)) {
        result.converged = false;
        result.residual_trace = {std::numeric_limits<double>::infinity()};
        return result;
    }
    double rnorm = residual.values.cwiseAbs().maxCoeff();
    result.residual_trace.push_back(rnorm);

    int iterations = 0;
    int damping_events = 0;
    while (rnorm > ctl.tolerance && iterations < ctl.max_iterations) {
        std::vector<Eigen::Triplet<double>> trips;
        Field dummy;
        assemble(result.w, u_prev, params, spec, grid, step_index, ws, dummy, &trips,
                 nullptr);
        Eigen::SparseMatrix<double> J(dim, dim);
        J.setFromTriplets(trips.begin(), trips.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(J);

        bool accepted = false;
        if (lu.info() == Eigen::Success) {
            const Eigen::VectorXd dw = lu.solve(-residual.values);
            double s = 1.0;
            while (s >= ctl.min_step) {
                Field w_try = result.w;
                w_try.values += s * dw;
                Field r_try;
                if (assemble(w_try, u_prev, params, spec, grid, step_index, ws, r_try,
                             nullptr, nullptr)) {
                    const double rn = r_try.values.cwiseAbs().maxCoeff();
                    if (rn < rnorm) {
                        result.w = std::move(w_try);
                        residual = std::move(r_try);
                        rnorm = rn;
                        accepted = true;
                        break;
                    }
                }
                s *= ctl.damping;
                ++damping_events;
            }
        }

        if (!accepted) {
            // Stagnation fallback: damped Jacobi sweeps on the residual,
            // preconditioned by the Jacobian diagonal. A sweep is kept only
            // if it reduces the residual, so the best iterate survives.
            ++damping_events;
            const double before = rnorm;
            Eigen::VectorXd diag = Eigen::VectorXd::Zero(dim);
            for (const auto& t : trips) {
                if (t.row() == t.col()) diag[t.row()] += t.value();
            }
            for (int c = 0; c < dim; ++c) {
                if (!(std::abs(diag[c]) > 1e-300)) diag[c] = 1.0;
            }
            double theta = 0.5;
            for (int sweep = 0; sweep < 80 && theta >= 1e-4; ++sweep) {
                Field w_try = result.w;
                w_try.values -= theta * residual.values.cwiseQuotient(diag);
                Field r_try;
                bool improved = false;
                if (assemble(w_try, u_prev, params, spec, grid, step_index, ws, r_try,
                             nullptr, nullptr)) {
                    const double rn = r_try.values.cwiseAbs().maxCoeff();
                    if (rn < rnorm) {
                        result.w = std::move(w_try);
                        residual = std::move(r_try);
                        rnorm = rn;
                        improved = true;
                    }
                }
                if (!improved) theta *= 0.5;
                if (rnorm <= ctl.tolerance) break;
            }
            if (!(rnorm < before)) {
                result.converged = false;
                result.residual_trace.push_back(rnorm);
                result.report.newton_iterations = iterations;
                result.report.residual_norm = rnorm;
                result.report.damping_events = damping_events;
                return result;
            }
        }
        ++iterations;
        result.residual_trace.push_back(rnorm);
    }

    result.converged = rnorm <= ctl.tolerance;
    result.report.newton_iterations = iterations;
    result.report.residual_norm = rnorm;
    result.report.damping_events = damping_events;
    return result;
}

}  // namespace

NewtonResult newton_solve(const Field& w_init, const Field& w_prev,
                          const SchemeParams& params, const SystemSpec& spec,
                          const Grid& grid, int step_index) {
    validate_params(params);
    Workspace ws;
    if (params.eps > 0.0) ws.reg = grid.regularizer(params.m);
    const Field u_prev = to_primal(w_prev, spec.entropy);
    return newton_solve_impl(w_init, u_prev, params, spec, grid, step_index, ws);
}

MarchResult march(const SystemSpec& spec, const Grid& grid, const Field& u0,
                  const SchemeParams& params, const HypothesisReport* advisory) {
    validate_params(params);
    if (u0.species != spec.n || u0.num_nodes != grid.num_nodes()) {
        throw std::invalid_argument("march: initial field shape mismatch");
    }
    if (advisory && advisory->classification == HypothesisClass::None) {
        std::cerr << "warning: no structural hypothesis certified for this system; "
                     "marching anyway\n";
    }

    double cap = 1.0;
    for (int i = 0; i < spec.n; ++i) {
        cap = std::min(cap, std::exp(-spec.entropy.lambda[i]));
    }
    double eps_cut = params.cutoff > 0.0 ? params.cutoff : std::max(params.eps, 1e-12);
    eps_cut = std::min(eps_cut, 0.5 * cap);

    MarchResult result;
    result.trajectory.grid = grid;
    result.trajectory.spec = spec;
    result.trajectory.params = params;
    result.trajectory.initial = initial_cutoff(u0, eps_cut, spec.entropy);

    Workspace ws;
    if (params.eps > 0.0) ws.reg = grid.regularizer(params.m);

    const long long steps = std::llround(params.t_end / params.tau);
    Field w_prev = to_entropy(result.trajectory.initial, spec.entropy);
    Field u_prev = result.trajectory.initial;

    for (long long k = 1; k <= steps; ++k) {
        NewtonResult nr =
            newton_solve_impl(w_prev, u_prev, params, spec, grid, static_cast<int>(k), ws);
        if (!nr.converged) {
            result.completed = false;
            result.failure = NewtonFailure{
                static_cast<int>(k), nr.residual_trace,
                "newton did not converge; halve tau and retry"};
            return result;
        }
        Field u_k = to_primal(nr.w, spec.entropy);

        StepReport rep = nr.report;
        rep.step = static_cast<int>(k);
        rep.time = k * params.tau;
        rep.entropy_before = entropy_integral(grid, spec.entropy, u_prev);
        rep.entropy_after = entropy_integral(grid, spec.entropy, u_k);
        rep.mass_before = mass_vector(grid, u_prev);
        rep.mass_after = mass_vector(grid, u_k);
        rep.production = l2_grad_norms(grid, u_k);
        rep.dissipation = step_dissipation(grid, spec, nr.w, u_k);
        rep.mass_balance_residual = Vector(spec.n);
        for (int i = 0; i < spec.n; ++i) {
            double fint = 0.0;
            for (int p = 0; p < grid.num_nodes(); ++p) {
                const Vector f = reaction_eval(spec.reaction, u_k.node(p));
                fint += grid.node_weight(p) * regularize_reaction(f, params.delta)[i];
            }
            const double wint = integrate(grid, nr.w.component(i));
            rep.mass_balance_residual[i] =
                (rep.mass_after[i] - rep.mass_before[i]) / params.tau +
                params.eps * wint - fint;
        }

        result.trajectory.states.emplace_back(rep.time, u_k);
        result.trajectory.reports.push_back(std::move(rep));
        u_prev = std::move(u_k);
        w_prev = std::move(nr.w);
    }
    return result;
}

namespace {

double l1_final_difference(const MarchResult& coarse, const MarchResult& fine) {
    const Field& uc = coarse.trajectory.states.empty() ? coarse.trajectory.initial
                                                       : coarse.trajectory.states.back().second;
    const Field& uf = fine.trajectory.states.empty() ? fine.trajectory.initial
                                                     : fine.trajectory.states.back().second;
    const Grid& gc = coarse.trajectory.grid;
    const Grid& gf = fine.trajectory.grid;
    double total = 0.0;
    for (int i = 0; i < uc.species; ++i) {
        for (int p = 0; p < gc.num_nodes(); ++p) {
            const auto pos = gc.node_position(p);
            const double vf = interpolate(gf, uf, i, {pos[0], pos[1]});
            total += gc.node_weight(p) * std::abs(uc.at(i, p) - vf);
        }
    }
    return total;
}

double min_density(const MarchResult& r) {
    double m = r.trajectory.initial.values.minCoeff();
    for (const auto& [t, u] : r.trajectory.states) m = std::min(m, u.values.minCoeff());
    return m;
}

}  // namespace

SweepReport limit_sweep(const SystemSpec& spec, const std::vector<Grid>& grids,
                        const std::vector<SchemeParams>& params,
                        const std::function<Field(const Grid&)>& initial,
                        const std::vector<double>& delta_ladder) {
    if (grids.size() != params.size() || grids.empty()) {
        throw std::invalid_argument("limit_sweep: grid and parameter ladders must match");
    }
    SweepReport report;
    for (std::size_t r = 0; r < grids.size(); ++r) {
        MarchResult run = march(spec, grids[r], initial(grids[r]), params[r]);
        SweepRung rung;
        rung.kind = "epstau";
        rung.eps = params[r].eps;
        rung.tau = params[r].tau;
        rung.delta = params[r].delta;
        rung.steps = static_cast<int>(run.trajectory.states.size());
        rung.completed = run.completed;
        rung.entropy_final = run.trajectory.reports.empty()
                                 ? entropy_integral(grids[r], spec.entropy, run.trajectory.initial)
                                 : run.trajectory.reports.back().entropy_after;
        rung.min_density = min_density(run);
        if (r > 0) {
            rung.l1_diff_prev = l1_final_difference(report.runs[r - 1], run);
        }
        report.rungs.push_back(rung);
        report.runs.push_back(std::move(run));
    }
    const Grid& g = grids.back();
    SchemeParams base = params.back();
    bool first_delta = true;
    for (double delta : delta_ladder) {
        SchemeParams p = base;
        p.delta = delta;
        MarchResult run = march(spec, g, initial(g), p);
        SweepRung rung;
        rung.kind = "delta";
        rung.eps = p.eps;
        rung.tau = p.tau;
        rung.delta = delta;
        rung.steps = static_cast<int>(run.trajectory.states.size());
        rung.completed = run.completed;
        rung.entropy_final = run.trajectory.reports.empty()
                                 ? entropy_integral(g, spec.entropy, run.trajectory.initial)
                                 : run.trajectory.reports.back().entropy_after;
        rung.min_density = min_density(run);
        if (!first_delta) {
            rung.l1_diff_prev = l1_final_difference(report.runs.back(), run);
        }
        first_delta = false;
        report.rungs.push_back(rung);
        report.runs.push_back(std::move(run));
    }
    return report;
}

Field to_entropy(const Field& primal, const EntropyParams& entropy) {
    Field w = primal;
    w.repr = FieldRepr::Entropy;
    for (int i = 0; i < primal.species; ++i) {
        for (int p = 0; p < primal.num_nodes; ++p) {
            const double u = primal.at(i, p);
            if (!(u > 0.0)) {
                throw std::domain_error("to_entropy: nonpositive density");
            }
            w.at(i, p) = entropy.pi[i] * (std::log(u) + entropy.lambda[i]);
        }
    }
    return w;
}

Field to_primal(const Field& entropy_field, const EntropyParams& entropy) {
    Field u = entropy_field;
    u.repr = FieldRepr::Primal;
    for (int i = 0; i < u.species; ++i) {
        for (int p = 0; p < u.num_nodes; ++p) {
            u.at(i, p) = std::exp(entropy_field.at(i, p) / entropy.pi[i] - entropy.lambda[i]);
        }
    }
    return u;
}

double entropy_integral(const Grid& grid, const EntropyParams& entropy, const Field& primal) {
    double total = 0.0;
    for (int p = 0; p < grid.num_nodes(); ++p) {
        total += grid.node_weight(p) * entropy_density(entropy, primal.node(p));
    }
    return total;
}

double interpolate(const Grid& grid, const Field& field, int species,
                   const Eigen::Vector2d& x) {
    const int nx = grid.nx();
    const double sx = std::clamp(x[0] / grid.hx(), 0.0, double(nx - 1));
    const int ix = std::min(static_cast<int>(sx), nx - 2);
    const double tx = sx - ix;
    if (grid.dim() == 1) {
        return (1.0 - tx) * field.at(species, ix) + tx * field.at(species, ix + 1);
    }
    const int ny = grid.ny();
    const double sy = std::clamp(x[1] / grid.hy(), 0.0, double(ny - 1));
    const int iy = std::min(static_cast<int>(sy), ny - 2);
    const double ty = sy - iy;
    auto v = [&](int i, int j) { return field.at(species, j * nx + i); };
    return (1.0 - tx) * (1.0 - ty) * v(ix, iy) + tx * (1.0 - ty) * v(ix + 1, iy) +
           (1.0 - tx) * ty * v(ix, iy + 1) + tx * ty * v(ix + 1, iy + 1);
}

}  // namespace crossdiff
