#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <vector>

namespace crossdiff {

/// A face between two adjacent nodes. Gradients live on faces; boundary
/// faces do not exist, so zero normal flux is built into the operators.
struct Face {
    int p;       // west/south node
    int q;       // east/north node
    int axis;    // 0 = x, 1 = y
    double inv_h;
    double area;              // quadrature weight q_f = h_axis * transverse weight
    double transverse_weight; // q_f / h_axis
    std::array<double, 2> midpoint;
};

/// Uniform 1D/2D tensor grid with lumped (trapezoidal-consistent) nodal
/// quadrature. Divergence is the negative adjoint of the face gradient
/// under these weights, so integrate(divergence(F)) = 0 exactly.
class Grid {
public:
    Grid(int dim, std::array<double, 2> extents, std::array<int, 2> nodes);

    static Grid line(double length, int nodes);
    static Grid rectangle(double lx, double ly, int nx, int ny);

    int dim() const { return dim_; }
    int nx() const { return nodes_[0]; }
    int ny() const { return nodes_[1]; }
    int num_nodes() const { return nodes_[0] * nodes_[1]; }
    double hx() const { return spacing_[0]; }
    double hy() const { return spacing_[1]; }
    double spacing(int axis) const { return spacing_[axis]; }
    double extent(int axis) const { return extents_[axis]; }
    double volume() const;

    std::array<double, 2> node_position(int p) const;
    double node_weight(int p) const { return weights_[p]; }
    const Eigen::VectorXd& weights() const { return weights_; }
    const std::vector<Face>& faces() const { return faces_; }

    /// Nodal Neumann Laplacian (divergence of gradient), N x N sparse.
    const Eigen::SparseMatrix<double>& laplacian() const { return laplacian_; }

    /// (-Laplacian)^m + I for the elliptic regularization, m in {1, 2}.
    Eigen::SparseMatrix<double> regularizer(int m) const;

private:
    int dim_;
    std::array<int, 2> nodes_;
    std::array<double, 2> extents_;
    std::array<double, 2> spacing_;
    Eigen::VectorXd weights_;
    std::vector<Face> faces_;
    Eigen::SparseMatrix<double> laplacian_;
};

enum class FieldRepr { Primal, Entropy };

/// Nodal values of all species on a grid, species-major layout.
struct Field {
    Field() = default;
    Field(const Grid& grid, int n_species, FieldRepr repr = FieldRepr::Primal);

    int species = 0;
    FieldRepr repr = FieldRepr::Primal;
    Eigen::VectorXd values;  // size = species * num_nodes
    int num_nodes = 0;

    double& at(int i, int p) { return values[i * num_nodes + p]; }
    double at(int i, int p) const { return values[i * num_nodes + p]; }
    Eigen::Map<Eigen::VectorXd> component(int i) {
        return {values.data() + i * num_nodes, num_nodes};
    }
    Eigen::Map<const Eigen::VectorXd> component(int i) const {
        return {values.data() + i * num_nodes, num_nodes};
    }
    /// Density vector of all species at node p.
    Eigen::VectorXd node(int p) const {
        Eigen::VectorXd u(species);
        for (int i = 0; i < species; ++i) u[i] = at(i, p);
        return u;
    }
};

/// Face-valued gradient of a nodal scalar; entry f matches grid.faces()[f].
Eigen::VectorXd gradient(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> nodal);

/// Node-valued divergence of a face flux (negative adjoint of gradient).
Eigen::VectorXd divergence(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> flux);

/// Lumped quadrature of a nodal scalar.
double integrate(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> nodal);
double integrate(const Grid& grid, const Field& field, int species);

struct GradNorms {
    Eigen::VectorXd grad_sq;        // |grad u_i|^2 integrated
    Eigen::VectorXd sqrt_grad_sq;   // |grad sqrt(u_i)|^2 integrated
    Eigen::MatrixXd pair_grad_sq;   // |grad sqrt(u_i u_j)|^2 integrated, i != j
};

/// The entropy-production gradient norms; square roots are taken nodewise
/// before differencing. Requires nonnegative primal values.
GradNorms l2_grad_norms(const Grid& grid, const Field& field);

Field laplacian_apply(const Grid& grid, const Field& field);
Field bilaplacian_apply(const Grid& grid, const Field& field);

}  // namespace crossdiff
