#pragma once

#include "crossdiff/model.hpp"
#include "crossdiff/sampling.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace crossdiff {

enum class HypothesisClass {
    H5Prime,          // weak cross-diffusion alpha > 0 and pi == 1
    H5DoublePrimeAii, // detailed balance and all a_ii > 0
    H5DoublePrimeA0,  // detailed balance and all a_i0 > 0
    None,
};

std::string to_string(HypothesisClass c);

struct DissipativityResult {
    double margin = 0.0;  // max sampled sum_i pi_i f_i(u) (log u_i + lambda_i)
    double scale = 0.0;   // max sampled sum_i |pi_i f_i(u) (log u_i + lambda_i)|
    std::optional<Vector> witness;  // density achieving the margin when positive
};

struct QuasiPositivityResult {
    double margin = 0.0;  // min over faces u_i = 0 of f_i(u); violation if < 0
    std::optional<Vector> witness;
    int witness_species = -1;
};

struct RayleighResult {
    double min_quotient = 0.0;       // empirical eta: min z.(h''A)z / |z|^2
    double max_bound_violation = 0.0;  // max(LB - quad), detailed-balance bound
    bool bound_checked = false;
};

/// Which of the structural hypotheses a system satisfies, with the sampled
/// evidence (seed and count recorded for reproducibility).
struct HypothesisReport {
    std::optional<double> alpha;  // absent when some a_ii = 0 makes (1.wcd) moot
    std::optional<Vector> db_measure;
    DissipativityResult h4;
    QuasiPositivityResult quasi_positivity;
    RayleighResult rayleigh;
    HypothesisClass classification = HypothesisClass::None;
    int sample_count = 0;
    std::uint64_t seed = 0;
};

/// min_i ( a_ii - (1/4) sum_j (sqrt(a_ij) - sqrt(a_ji))^2 ).
double weak_cross_diffusion_alpha(const Matrix& a);

/// Reversible measure pi with pi_i a_ij = pi_j a_ji, built along a spanning
/// tree and verified on every pair to 1e-12 relative; absent when some
/// off-diagonal entry vanishes or a Kolmogorov cycle fails. Normalized to
/// min_i pi_i = 1.
std::optional<Vector> detailed_balance_measure(const Matrix& a);

struct LambdaResult {
    bool ok = false;
    Vector lambda;
    std::vector<int> violating_reactions;  // indices of inconsistent rows
    std::string message;
};

/// Minimum-norm lambda with sum_i (beta_i - alpha_i) lambda_i =
/// log(k_b / k_f) per reaction (pi = 1 construction). Fails when the rows
/// are inconsistent (Wegscheider condition violated).
LambdaResult lambda_from_mass_action(const MassActionReaction& ma);

DissipativityResult verify_dissipativity(const SystemSpec& spec,
                                         const LogUniformSampler& sampler, int count);

QuasiPositivityResult verify_quasi_positivity(const SystemSpec& spec,
                                              const LogUniformSampler& sampler, int count);

RayleighResult verify_hA_positive(const SystemSpec& spec,
                                  const LogUniformSampler& sampler, int count);

HypothesisReport classify_hypotheses(const SystemSpec& spec,
                                     std::uint64_t seed = 42, int count = 10000);

}  // namespace crossdiff
