#include "crossdiff/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdiff {

Grid::Grid(int dim, std::array<double, 2> extents, std::array<int, 2> nodes)
    : dim_(dim), nodes_(nodes), extents_(extents) {
    if (dim != 1 && dim != 2) {
        throw std::invalid_argument("grid: dim must be 1 or 2");
    }
    if (dim == 1) {
        nodes_[1] = 1;
        extents_[1] = 0.0;
    }
    for (int ax = 0; ax < dim; ++ax) {
        if (nodes_[ax] < 3) {
            throw std::invalid_argument("grid: need at least 3 nodes per axis");
        }
        if (!(extents_[ax] > 0.0)) {
            throw std::invalid_argument("grid: extents must be positive");
        }
        spacing_[ax] = extents_[ax] / (nodes_[ax] - 1);
    }
    if (dim == 1) spacing_[1] = 1.0;

    const int nx = nodes_[0], ny = nodes_[1];
    const int N = nx * ny;

    // Trapezoidal weights per axis; boundary nodes carry half cells.
    auto axis_weight = [&](int idx, int count, double h) {
        return (idx == 0 || idx == count - 1) ? 0.5 * h : h;
    };
    weights_.resize(N);
    for (int iy = 0; iy < ny; ++iy) {
        const double wy = dim_ == 2 ? axis_weight(iy, ny, spacing_[1]) : 1.0;
        for (int ix = 0; ix < nx; ++ix) {
            weights_[iy * nx + ix] = wy * axis_weight(ix, nx, spacing_[0]);
        }
    }

    faces_.reserve((nx - 1) * ny + (dim_ == 2 ? nx * (ny - 1) : 0));
    for (int iy = 0; iy < ny; ++iy) {
        const double wy = dim_ == 2 ? axis_weight(iy, ny, spacing_[1]) : 1.0;
        for (int ix = 0; ix + 1 < nx; ++ix) {
            Face f;
            f.p = iy * nx + ix;
            f.q = iy * nx + ix + 1;
            f.axis = 0;
            f.inv_h = 1.0 / spacing_[0];
            f.transverse_weight = wy;
            f.area = wy * spacing_[0];
            f.midpoint = {(ix + 0.5) * spacing_[0], dim_ == 2 ? iy * spacing_[1] : 0.0};
            faces_.push_back(f);
        }
    }
    if (dim_ == 2) {
        for (int iy = 0; iy + 1 < ny; ++iy) {
            for (int ix = 0; ix < nx; ++ix) {
                Face f;
                f.p = iy * nx + ix;
                f.q = (iy + 1) * nx + ix;
                f.axis = 1;
                f.inv_h = 1.0 / spacing_[1];
                f.transverse_weight = axis_weight(ix, nx, spacing_[0]);
                f.area = f.transverse_weight * spacing_[1];
                f.midpoint = {ix * spacing_[0], (iy + 0.5) * spacing_[1]};
                faces_.push_back(f);
            }
        }
    }

    // Laplacian = divergence(gradient(.)) assembled once.
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(faces_.size() * 4);
    for (const Face& f : faces_) {
        const double cp = f.transverse_weight * f.inv_h / weights_[f.p];
        const double cq = f.transverse_weight * f.inv_h / weights_[f.q];
        trips.emplace_back(f.p, f.q, cp);
        trips.emplace_back(f.p, f.p, -cp);
        trips.emplace_back(f.q, f.p, cq);
        trips.emplace_back(f.q, f.q, -cq);
    }
    laplacian_.resize(N, N);
    laplacian_.setFromTriplets(trips.begin(), trips.end());
}

Grid Grid::line(double length, int nodes) {
    return Grid(1, {length, 0.0}, {nodes, 1});
}

Grid Grid::rectangle(double lx, double ly, int nx, int ny) {
    return Grid(2, {lx, ly}, {nx, ny});
}

double Grid::volume() const {
    return dim_ == 1 ? extents_[0] : extents_[0] * extents_[1];
}

std::array<double, 2> Grid::node_position(int p) const {
    const int ix = p % nodes_[0];
    const int iy = p / nodes_[0];
    return {ix * spacing_[0], dim_ == 2 ? iy * spacing_[1] : 0.0};
}

Eigen::SparseMatrix<double> Grid::regularizer(int m) const {
    if (m != 1 && m != 2) {
        throw std::invalid_argument("regularizer order must be 1 or 2");
    }
    Eigen::SparseMatrix<double> op;
    if (m == 1) {
        op = -laplacian_;
    } else {
        op = laplacian_ * laplacian_;  // (-Lap)^2 = Lap^2
    }
    Eigen::SparseMatrix<double> id(num_nodes(), num_nodes());
    id.setIdentity();
    op += id;
    return op;
}

Field::Field(const Grid& grid, int n_species, FieldRepr repr_)
    : species(n_species), repr(repr_), num_nodes(grid.num_nodes()) {
    if (n_species < 1) {
        throw std::invalid_argument("field: need at least one species");
    }
    values = Eigen::VectorXd::Zero(species * num_nodes);
}

Eigen::VectorXd gradient(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> nodal) {
    if (nodal.size() != grid.num_nodes()) {
        throw std::invalid_argument("gradient: nodal size mismatch");
    }
    const auto& faces = grid.faces();
    Eigen::VectorXd g(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        g[f] = (nodal[faces[f].q] - nodal[faces[f].p]) * faces[f].inv_h;
    }
    return g;
}

Eigen::VectorXd divergence(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> flux) {
    const auto& faces = grid.faces();
    if (flux.size() != static_cast<Eigen::Index>(faces.size())) {
        throw std::invalid_argument("divergence: flux size mismatch");
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.num_nodes());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const double w = faces[f].transverse_weight * flux[f];
        out[faces[f].p] += w / grid.node_weight(faces[f].p);
        out[faces[f].q] -= w / grid.node_weight(faces[f].q);
    }
    return out;
}

double integrate(const Grid& grid, Eigen::Ref<const Eigen::VectorXd> nodal) {
    if (nodal.size() != grid.num_nodes()) {
        throw std::invalid_argument("integrate: nodal size mismatch");
    }
    return grid.weights().dot(nodal);
}

double integrate(const Grid& grid, const Field& field, int species) {
    return integrate(grid, field.component(species));
}

GradNorms l2_grad_norms(const Grid& grid, const Field& field) {
    const int n = field.species;
    GradNorms out;
    out.grad_sq = Eigen::VectorXd::Zero(n);
    out.sqrt_grad_sq = Eigen::VectorXd::Zero(n);
    out.pair_grad_sq = Eigen::MatrixXd::Zero(n, n);
    if (field.values.minCoeff() < 0.0) {
        throw std::domain_error("l2_grad_norms: negative value under square root");
    }
    const auto& faces = grid.faces();
    for (const Face& f : faces) {
        for (int i = 0; i < n; ++i) {
            const double up = field.at(i, f.p), uq = field.at(i, f.q);
            const double g = (uq - up) * f.inv_h;
            out.grad_sq[i] += f.area * g * g;
            const double gs = (std::sqrt(uq) - std::sqrt(up)) * f.inv_h;
            out.sqrt_grad_sq[i] += f.area * gs * gs;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const double gp = (std::sqrt(uq * field.at(j, f.q)) -
                                   std::sqrt(up * field.at(j, f.p))) * f.inv_h;
                out.pair_grad_sq(i, j) += f.area * gp * gp;
            }
        }
    }
    return out;
}

Field laplacian_apply(const Grid& grid, const Field& field) {
    Field out(grid, field.species, field.repr);
    for (int i = 0; i < field.species; ++i) {
        out.component(i) = grid.laplacian() * field.component(i);
    }
    return out;
}

Field bilaplacian_apply(const Grid& grid, const Field& field) {
    Field out(grid, field.species, field.repr);
    for (int i = 0; i < field.species; ++i) {
        out.component(i) = grid.laplacian() * (grid.laplacian() * field.component(i)).eval();
    }
    return out;
}

}  // namespace crossdiff
