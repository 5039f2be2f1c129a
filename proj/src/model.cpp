#include "crossdiff/model.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdiff {

namespace {

void check_density(const Vector& u, int n, bool strictly_positive) {
    if (u.size() != n) {
        throw std::invalid_argument("density vector has wrong length");
    }
    for (int i = 0; i < n; ++i) {
        if (!(u[i] >= 0.0)) {
            throw std::domain_error("density must be nonnegative");
        }
        if (strictly_positive && u[i] <= 0.0) {
            throw std::domain_error("operation requires strictly positive densities");
        }
    }
}

}  // namespace

EntropyParams::EntropyParams(Vector pi_, Vector lambda_)
    : pi(std::move(pi_)), lambda(std::move(lambda_)) {
    if (pi.size() != lambda.size() || pi.size() == 0) {
        throw std::invalid_argument("entropy params: pi and lambda must have equal positive length");
    }
    for (int i = 0; i < pi.size(); ++i) {
        if (!(pi[i] > 0.0)) {
            throw std::invalid_argument("entropy params: pi must be strictly positive");
        }
    }
}

EntropyParams EntropyParams::trivial(int n) {
    return EntropyParams(Vector::Ones(n), Vector::Zero(n));
}

SystemSpec::SystemSpec(Vector a0_, Matrix a_, EntropyParams entropy_,
                       DriftSpec drift_, ReactionSpec reaction_)
    : n(static_cast<int>(a0_.size())),
      a0(std::move(a0_)),
      a(std::move(a_)),
      entropy(std::move(entropy_)),
      drift(std::move(drift_)),
      reaction(std::move(reaction_)) {
    if (n < 1) {
        throw std::invalid_argument("system: need at least one species");
    }
    if (a.rows() != n || a.cols() != n) {
        throw std::invalid_argument("system: coefficient matrix must be n x n");
    }
    if (entropy.species() != n) {
        throw std::invalid_argument("system: entropy params have wrong species count");
    }
    for (int i = 0; i < n; ++i) {
        if (!(a0[i] >= 0.0)) {
            throw std::invalid_argument("system: a_i0 must be nonnegative");
        }
        for (int j = 0; j < n; ++j) {
            if (!(a(i, j) >= 0.0)) {
                throw std::invalid_argument("system: a_ij must be nonnegative");
            }
        }
    }
    if (const auto* ma = std::get_if<MassActionReaction>(&reaction)) {
        for (const auto& r : ma->reactions) {
            if (r.alpha.size() != n || r.beta.size() != n) {
                throw std::invalid_argument("reaction: stoichiometry length mismatch");
            }
            if (!(r.k_forward > 0.0) || !(r.k_backward > 0.0)) {
                throw std::invalid_argument("reaction: rates must be positive");
            }
            if (r.alpha == r.beta) {
                throw std::invalid_argument("reaction: alpha and beta must differ");
            }
            if (r.alpha.minCoeff() < 0 || r.beta.minCoeff() < 0) {
                throw std::invalid_argument("reaction: stoichiometries must be nonnegative");
            }
        }
    }
}

Matrix diffusion_matrix(const SystemSpec& spec, const Vector& u) {
    check_density(u, spec.n, false);
    Matrix A(spec.n, spec.n);
    for (int i = 0; i < spec.n; ++i) {
        const double diag = spec.a0[i] + spec.a.row(i).dot(u);
        for (int j = 0; j < spec.n; ++j) {
            A(i, j) = spec.a(i, j) * u[i] + (i == j ? diag : 0.0);
        }
    }
    return A;
}

double diffusion_matrix_derivative(const SystemSpec& spec, int i, int l, int j) {
    double d = 0.0;
    if (i == l) d += spec.a(i, j);
    if (i == j) d += spec.a(i, l);
    return d;
}

double entropy_density(const EntropyParams& p, const Vector& u) {
    check_density(u, p.species(), false);
    double h = 0.0;
    for (int i = 0; i < p.species(); ++i) {
        const double s = u[i];
        const double slogs = s > 0.0 ? s * std::log(s) : 0.0;
        h += p.pi[i] * (slogs + s * (p.lambda[i] - 1.0) + std::exp(-p.lambda[i]));
    }
    return h;
}

Vector entropy_gradient(const EntropyParams& p, const Vector& u) {
    check_density(u, p.species(), true);
    Vector w(u.size());
    for (int i = 0; i < u.size(); ++i) {
        w[i] = p.pi[i] * (std::log(u[i]) + p.lambda[i]);
    }
    return w;
}

Matrix entropy_hessian(const EntropyParams& p, const Vector& u) {
    check_density(u, p.species(), true);
    Matrix H = Matrix::Zero(u.size(), u.size());
    for (int i = 0; i < u.size(); ++i) {
        H(i, i) = p.pi[i] / u[i];
    }
    return H;
}

Vector entropy_to_primal(const EntropyParams& p, const Vector& w) {
    if (w.size() != p.species()) {
        throw std::invalid_argument("entropy vector has wrong length");
    }
    Vector u(w.size());
    for (int i = 0; i < w.size(); ++i) {
        u[i] = std::exp(w[i] / p.pi[i] - p.lambda[i]);
        if (!std::isfinite(u[i])) {
            throw std::domain_error("entropy_to_primal: overflow in exponential map");
        }
    }
    return u;
}

Matrix onsager_matrix(const SystemSpec& spec, const Vector& u) {
    check_density(u, spec.n, true);
    Matrix B = diffusion_matrix(spec, u);
    for (int j = 0; j < spec.n; ++j) {
        B.col(j) *= u[j] / spec.entropy.pi[j];
    }
    return B;
}

namespace {

double monomial(const Vector& u, const Eigen::VectorXi& expo) {
    double m = 1.0;
    for (int k = 0; k < u.size(); ++k) {
        for (int e = 0; e < expo[k]; ++e) m *= u[k];
    }
    return m;
}

// d/du_j of prod_k u_k^{e_k}; zero when e_j = 0.
double monomial_derivative(const Vector& u, const Eigen::VectorXi& expo, int j) {
    if (expo[j] == 0) return 0.0;
    double m = expo[j];
    for (int k = 0; k < u.size(); ++k) {
        int e = expo[k] - (k == j ? 1 : 0);
        for (int q = 0; q < e; ++q) m *= u[k];
    }
    return m;
}

}  // namespace

Vector reaction_eval(const ReactionSpec& spec, const Vector& u) {
    if (std::holds_alternative<ZeroReaction>(spec)) {
        return Vector::Zero(u.size());
    }
    if (const auto* ma = std::get_if<MassActionReaction>(&spec)) {
        Vector f = Vector::Zero(u.size());
        for (const auto& r : ma->reactions) {
            const double rate = r.k_forward * monomial(u, r.alpha) -
                                r.k_backward * monomial(u, r.beta);
            for (int i = 0; i < u.size(); ++i) {
                f[i] += (r.beta[i] - r.alpha[i]) * rate;
            }
        }
        return f;
    }
    return std::get<CustomReaction>(spec).f(u);
}

Matrix reaction_jacobian(const ReactionSpec& spec, const Vector& u) {
    const int n = static_cast<int>(u.size());
    if (std::holds_alternative<ZeroReaction>(spec)) {
        return Matrix::Zero(n, n);
    }
    if (const auto* ma = std::get_if<MassActionReaction>(&spec)) {
        Matrix J = Matrix::Zero(n, n);
        for (const auto& r : ma->reactions) {
            for (int j = 0; j < n; ++j) {
                const double drate = r.k_forward * monomial_derivative(u, r.alpha, j) -
                                     r.k_backward * monomial_derivative(u, r.beta, j);
                for (int i = 0; i < n; ++i) {
                    J(i, j) += (r.beta[i] - r.alpha[i]) * drate;
                }
            }
        }
        return J;
    }
    const auto& custom = std::get<CustomReaction>(spec);
    if (custom.jacobian) {
        return custom.jacobian(u);
    }
    // Central differences, step scaled to the density magnitude.
    Matrix J(n, n);
    for (int j = 0; j < n; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(u[j]));
        Vector up = u, um = u;
        up[j] += h;
        um[j] = std::max(0.0, um[j] - h);
        const Vector fp = custom.f(up);
        const Vector fm = custom.f(um);
        J.col(j) = (fp - fm) / (up[j] - um[j]);
    }
    return J;
}

namespace {

// Multilinear interpolation on the tabulated tensor grid; exact at nodes.
double interpolate_tabulated(const TabulatedDrift& tab, const std::vector<double>& vals,
                             const Eigen::Vector2d& x) {
    const int nx = tab.nodes[0];
    const double hx = tab.extents[0] / (nx - 1);
    double sx = std::clamp(x[0] / hx, 0.0, double(nx - 1));
    int ix = std::min(static_cast<int>(sx), nx - 2);
    double tx = sx - ix;
    if (tab.dim == 1) {
        return (1.0 - tx) * vals[ix] + tx * vals[ix + 1];
    }
    const int ny = tab.nodes[1];
    const double hy = tab.extents[1] / (ny - 1);
    double sy = std::clamp(x[1] / hy, 0.0, double(ny - 1));
    int iy = std::min(static_cast<int>(sy), ny - 2);
    double ty = sy - iy;
    auto v = [&](int i, int j) { return vals[j * nx + i]; };
    return (1.0 - tx) * (1.0 - ty) * v(ix, iy) + tx * (1.0 - ty) * v(ix + 1, iy) +
           (1.0 - tx) * ty * v(ix, iy + 1) + tx * ty * v(ix + 1, iy + 1);
}

}  // namespace

Matrix drift_eval(const DriftSpec& spec, const Eigen::Vector2d& x, double t, int n, int dim) {
    Matrix b = Matrix::Zero(n, dim);
    const double scale = spec.time_scale[0] + spec.time_scale[1] * t;
    if (std::holds_alternative<ZeroDrift>(spec.spatial)) {
        return b;
    }
    if (const auto* c = std::get_if<ConstantDrift>(&spec.spatial)) {
        if (static_cast<int>(c->vectors.size()) != n) {
            throw std::invalid_argument("constant drift: one vector per species required");
        }
        for (int i = 0; i < n; ++i) {
            for (int ax = 0; ax < dim; ++ax) b(i, ax) = scale * c->vectors[i][ax];
        }
        return b;
    }
    const auto& tab = std::get<TabulatedDrift>(spec.spatial);
    if (static_cast<int>(tab.values.size()) != n) {
        throw std::invalid_argument("tabulated drift: one table per species required");
    }
    for (int i = 0; i < n; ++i) {
        for (int ax = 0; ax < dim; ++ax) {
            b(i, ax) = scale * interpolate_tabulated(tab, tab.values[i][ax], x);
        }
    }
    return b;
}

bool is_zero_reaction(const ReactionSpec& spec) {
    return std::holds_alternative<ZeroReaction>(spec);
}

}  // namespace crossdiff
