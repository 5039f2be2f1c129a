#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace crossdiff {

/// Counter-based sampler: the k-th draw depends only on (seed, k), so
/// sampling loops can be partitioned across workers without coordination.
class LogUniformSampler {
public:
    LogUniformSampler(std::uint64_t seed, double lo = 1e-3, double hi = 1e3)
        : seed_(seed), lo_(lo), hi_(hi) {}

    /// Log-uniform vector in [lo, hi]^n for sample index k.
    Eigen::VectorXd density(std::uint64_t k, int n) const {
        Eigen::VectorXd u(n);
        const double llo = std::log(lo_), lhi = std::log(hi_);
        for (int i = 0; i < n; ++i) {
            u[i] = std::exp(llo + (lhi - llo) * unit(k, static_cast<std::uint64_t>(i)));
        }
        return u;
    }

    /// Uniform in [-1, 1]^n (test directions).
    Eigen::VectorXd direction(std::uint64_t k, int n) const {
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) {
            z[i] = 2.0 * unit(k, 1000 + static_cast<std::uint64_t>(i)) - 1.0;
        }
        return z;
    }

    double unit(std::uint64_t k, std::uint64_t lane) const {
        std::uint64_t x = splitmix(seed_ ^ splitmix(k * 0x9E3779B97F4A7C15ULL + lane));
        return (x >> 11) * 0x1.0p-53;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
    double lo_, hi_;
};

}  // namespace crossdiff
