#pragma once

#include "crossdiff/renorm.hpp"
#include "crossdiff/scheme.hpp"

#include <json.hpp>  // vendored nlohmann/json

#include <cstdint>
#include <string>
#include <vector>

namespace crossdiff {

using json = nlohmann::json;

struct GridSpec {
    int dim = 1;
    std::array<double, 2> extents{1.0, 0.0};
    std::array<int, 2> nodes{65, 1};
    Grid build() const { return Grid(dim, extents, nodes); }
};

struct InitialCosine {
    double amplitude = 0.0;
    int mode_x = 0;
    int mode_y = 0;
};

struct InitialBump {
    double amplitude = 0.0;
    std::array<double, 2> center{0.0, 0.0};
    std::array<double, 2> width{1.0, 1.0};
};

struct InitialSpecies {
    double offset = 0.0;
    std::vector<InitialCosine> cosines;
    std::vector<InitialBump> bumps;
    std::vector<double> values;  // explicit nodal values; overrides the rest
};

struct XiSpec {
    std::string type;  // "constant" | "clamp_coord" | "clamp_sum"
    int coord = 0;     // 0-based species index for clamp_coord
    double theta = 1.0;
    double window = 0.0;  // 0 -> default 2 n theta
};

struct AuditConfig {
    bool auto_ladder = true;
    std::vector<double> l_ladder;
    std::vector<XiSpec> xi;
    std::vector<std::string> phi{"ramp"};
    std::uint64_t seed = 42;
    int sample_count = 10000;
};

struct SweepConfig {
    int eps_tau_rungs = 0;
    std::vector<double> delta_ladder;
};

/// Parsed and validated scenario; `normalized` is the defaults-filled echo
/// used for hashing and the manifest.
struct Scenario {
    int schema_version = 1;
    SystemSpec system;
    bool entropy_derived = false;
    GridSpec grid;
    SchemeParams scheme;
    int snapshot_stride = 0;  // 0: snapshots only at t = 0 and t = T
    std::vector<InitialSpecies> initial;
    AuditConfig audit;
    SweepConfig sweep;
    std::string output_dir = "out";
    json normalized;
};

/// Configuration problems carry a JSON-pointer-style path in what().
struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
std::string preset_text(const std::string& name);

/// Loads a preset by name or a JSON file by path; validates against the
/// schema (unknown keys rejected), resolves the "derive" entropy directive,
/// fills defaults.
Scenario parse_scenario(const std::string& path_or_preset);
Scenario parse_scenario_text(const std::string& text, const std::string& origin);

/// Instantiates the configured initial data on a grid.
Field build_initial(const Scenario& sc, const Grid& grid);

json hypothesis_report_json(const HypothesisReport& rep);

struct DispatchOptions {
    std::string out_override;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> snapshot_stride_override;
};

/// Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
/// 3 internal invariant violation.
int dispatch(const std::string& subcommand, const std::string& scenario_arg,
             const DispatchOptions& opts);

std::uint64_t fnv1a_hash(const std::string& data);

}  // namespace crossdiff
