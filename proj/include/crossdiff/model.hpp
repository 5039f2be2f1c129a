#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace crossdiff {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Entropy parameters: positive weights pi and real shifts lambda, one per
/// species. The entropy density is sum_i pi_i * h_i(u_i) with
/// h_i(s) = s (log s - 1 + lambda_i) + exp(-lambda_i), which is nonnegative
/// and vanishes exactly at s = exp(-lambda_i).
struct EntropyParams {
    Vector pi;
    Vector lambda;

    EntropyParams() = default;
    EntropyParams(Vector pi_, Vector lambda_);

    int species() const { return static_cast<int>(pi.size()); }
    static EntropyParams trivial(int n);  // pi = 1, lambda = 0
};

/// One reversible reaction with mass-action kinetics: nonnegative integer
/// stoichiometries alpha (educts) and beta (products), positive rates.
struct Reaction {
    Eigen::VectorXi alpha;
    Eigen::VectorXi beta;
    double k_forward = 1.0;
    double k_backward = 1.0;
};

struct ZeroReaction {};

struct MassActionReaction {
    std::vector<Reaction> reactions;
};

/// Caller-supplied continuous reaction map; jacobian optional (finite
/// differences are used when absent).
struct CustomReaction {
    std::function<Vector(const Vector&)> f;
    std::function<Matrix(const Vector&)> jacobian;  // may be empty
    std::string label = "custom";
};

using ReactionSpec = std::variant<ZeroReaction, MassActionReaction, CustomReaction>;

/// Drift field b_i(x,t) in R^d per species. The spatial part is zero,
/// constant, or tabulated on a tensor grid (multilinear interpolation);
/// the whole field is modulated in time by scale(t) = time_scale[0] +
/// time_scale[1] * t.
struct ZeroDrift {};

struct ConstantDrift {
    // vectors[i] is the R^d drift of species i (d entries used).
    std::vector<Eigen::Vector2d> vectors;
};

struct TabulatedDrift {
    int dim = 1;
    std::array<int, 2> nodes{2, 1};
    std::array<double, 2> extents{1.0, 0.0};
    // values[i][axis][node], node index row-major (x fastest).
    std::vector<std::array<std::vector<double>, 2>> values;
};

struct DriftSpec {
    std::variant<ZeroDrift, ConstantDrift, TabulatedDrift> spatial = ZeroDrift{};
    std::array<double, 2> time_scale{1.0, 0.0};

    bool is_zero() const { return std::holds_alternative<ZeroDrift>(spatial); }
};

/// Full problem description: species count, self-mobility constants a_i0,
/// coefficient matrix a_ij, entropy parameters, drift and reaction networks.
/// All a_i0 and a_ij must be nonnegative; shapes are checked at construction.
struct SystemSpec {
    int n = 0;
    Vector a0;
    Matrix a;
    EntropyParams entropy;
    DriftSpec drift;
    ReactionSpec reaction = ZeroReaction{};

    SystemSpec() = default;
    SystemSpec(Vector a0_, Matrix a_, EntropyParams entropy_,
               DriftSpec drift_ = {}, ReactionSpec reaction_ = ZeroReaction{});
};

// Densities are plain nonnegative vectors; operations that need entropy
// variables additionally require strict positivity and say so.

/// A_ij(u) = delta_ij (a_i0 + sum_k a_ik u_k) + a_ij u_i.
Matrix diffusion_matrix(const SystemSpec& spec, const Vector& u);

/// d A_il / d u_j = delta_il a_ij + a_il delta_ij (density-independent).
double diffusion_matrix_derivative(const SystemSpec& spec, int i, int l, int j);

/// sum_i pi_i h_i(u_i), continuously extended by s log s -> 0 at s = 0.
double entropy_density(const EntropyParams& p, const Vector& u);

/// w_i = pi_i (log u_i + lambda_i); requires u > 0.
Vector entropy_gradient(const EntropyParams& p, const Vector& u);

/// diag(pi_i / u_i); requires u > 0.
Matrix entropy_hessian(const EntropyParams& p, const Vector& u);

/// u_i = exp(w_i / pi_i - lambda_i); inverse of entropy_gradient.
Vector entropy_to_primal(const EntropyParams& p, const Vector& w);

/// Onsager matrix B = A(u) h''(u)^{-1} = A(u) diag(u_j / pi_j); requires u > 0.
Matrix onsager_matrix(const SystemSpec& spec, const Vector& u);

/// f(u); total on the nonnegative orthant.
Vector reaction_eval(const ReactionSpec& spec, const Vector& u);

/// d f / d u; analytic for zero and mass-action, caller-supplied or central
/// finite differences for custom reactions.
Matrix reaction_jacobian(const ReactionSpec& spec, const Vector& u);

/// b_i(x, t) for all species; rows are species, columns the d components.
Matrix drift_eval(const DriftSpec& spec, const Eigen::Vector2d& x, double t, int n, int dim);

bool is_zero_reaction(const ReactionSpec& spec);

}  // namespace crossdiff
