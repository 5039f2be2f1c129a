#include "crossdiff/scenario.hpp"

#include "crossdiff/csv.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace crossdiff {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& ptr, const std::string& what) {
    throw ScenarioError(ptr + ": " + what);
}

void require_keys(const json& j, const std::string& ptr,
                  const std::set<std::string>& allowed,
                  const std::set<std::string>& required) {
    if (!j.is_object()) fail(ptr, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) fail(ptr + "/" + it.key(), "unknown key");
    }
    for (const auto& k : required) {
        if (!j.contains(k)) fail(ptr, "missing required key '" + k + "'");
    }
}

double get_number(const json& j, const std::string& ptr) {
    if (!j.is_number()) fail(ptr, "expected a number");
    return j.get<double>();
}

int get_int(const json& j, const std::string& ptr) {
    if (!j.is_number_integer()) fail(ptr, "expected an integer");
    return j.get<int>();
}

Vector get_vector(const json& j, const std::string& ptr, int expect = -1) {
    if (!j.is_array()) fail(ptr, "expected an array");
    if (expect >= 0 && static_cast<int>(j.size()) != expect) {
        fail(ptr, "expected " + std::to_string(expect) + " entries");
    }
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        v[i] = get_number(j[i], ptr + "/" + std::to_string(i));
    }
    return v;
}

Matrix get_matrix(const json& j, const std::string& ptr, int n) {
    if (!j.is_array() || static_cast<int>(j.size()) != n) {
        fail(ptr, "expected " + std::to_string(n) + " rows");
    }
    Matrix m(n, n);
    for (int r = 0; r < n; ++r) {
        const Vector row = get_vector(j[r], ptr + "/" + std::to_string(r), n);
        m.row(r) = row;
    }
    return m;
}

ReactionSpec parse_reaction(const json& j, const std::string& ptr, int n) {
    require_keys(j, ptr, {"type", "reactions"}, {"type"});
    const std::string type = j.at("type").get<std::string>();
    if (type == "zero") return ZeroReaction{};
    if (type == "mass_action") {
        if (!j.contains("reactions")) fail(ptr, "mass_action needs 'reactions'");
        MassActionReaction ma;
        const auto& arr = j.at("reactions");
        if (!arr.is_array() || arr.empty()) fail(ptr + "/reactions", "expected a nonempty array");
        for (std::size_t r = 0; r < arr.size(); ++r) {
            const std::string rptr = ptr + "/reactions/" + std::to_string(r);
            require_keys(arr[r], rptr, {"alpha", "beta", "kf", "kb"},
                         {"alpha", "beta", "kf", "kb"});
            Reaction rx;
            const Vector a = get_vector(arr[r].at("alpha"), rptr + "/alpha", n);
            const Vector b = get_vector(arr[r].at("beta"), rptr + "/beta", n);
            rx.alpha = a.cast<int>();
            rx.beta = b.cast<int>();
            for (int i = 0; i < n; ++i) {
                if (rx.alpha[i] != a[i] || rx.beta[i] != b[i]) {
                    fail(rptr, "stoichiometries must be integers");
                }
            }
            rx.k_forward = get_number(arr[r].at("kf"), rptr + "/kf");
            rx.k_backward = get_number(arr[r].at("kb"), rptr + "/kb");
            ma.reactions.push_back(std::move(rx));
        }
        return ma;
    }
    fail(ptr + "/type", "unknown reaction type '" + type + "'");
}

DriftSpec parse_drift(const json& j, const std::string& ptr, int n, int dim) {
    require_keys(j, ptr, {"type", "vectors", "time_scale", "nodes", "extents", "values"},
                 {"type"});
    DriftSpec spec;
    if (j.contains("time_scale")) {
        const Vector ts = get_vector(j.at("time_scale"), ptr + "/time_scale", 2);
        spec.time_scale = {ts[0], ts[1]};
    }
    const std::string type = j.at("type").get<std::string>();
    if (type == "zero") {
        spec.spatial = ZeroDrift{};
        return spec;
    }
    if (type == "constant") {
        if (!j.contains("vectors")) fail(ptr, "constant drift needs 'vectors'");
        ConstantDrift c;
        const auto& arr = j.at("vectors");
        if (!arr.is_array() || static_cast<int>(arr.size()) != n) {
            fail(ptr + "/vectors", "expected one vector per species");
        }
        for (int i = 0; i < n; ++i) {
            const Vector v = get_vector(arr[i], ptr + "/vectors/" + std::to_string(i), dim);
            Eigen::Vector2d b = Eigen::Vector2d::Zero();
            for (int ax = 0; ax < dim; ++ax) b[ax] = v[ax];
            c.vectors.push_back(b);
        }
        spec.spatial = std::move(c);
        return spec;
    }
    if (type == "tabulated") {
        for (const char* k : {"nodes", "extents", "values"}) {
            if (!j.contains(k)) fail(ptr, std::string("tabulated drift needs '") + k + "'");
        }
        TabulatedDrift tab;
        tab.dim = dim;
        const Vector nd = get_vector(j.at("nodes"), ptr + "/nodes", dim);
        const Vector ex = get_vector(j.at("extents"), ptr + "/extents", dim);
        for (int ax = 0; ax < dim; ++ax) {
            tab.nodes[ax] = static_cast<int>(nd[ax]);
            tab.extents[ax] = ex[ax];
            if (tab.nodes[ax] < 2) fail(ptr + "/nodes", "need at least 2 nodes per axis");
        }
        int total = tab.nodes[0] * (dim == 2 ? tab.nodes[1] : 1);
        const auto& vals = j.at("values");
        if (!vals.is_array() || static_cast<int>(vals.size()) != n) {
            fail(ptr + "/values", "expected one table per species");
        }
        for (int i = 0; i < n; ++i) {
            const auto& per_axis = vals[i];
            const std::string vptr = ptr + "/values/" + std::to_string(i);
            if (!per_axis.is_array() || static_cast<int>(per_axis.size()) != dim) {
                fail(vptr, "expected one array per axis");
            }
            std::array<std::vector<double>, 2> tables;
            for (int ax = 0; ax < dim; ++ax) {
                const Vector t = get_vector(per_axis[ax], vptr + "/" + std::to_string(ax), total);
                tables[ax].assign(t.data(), t.data() + t.size());
            }
            tab.values.push_back(std::move(tables));
        }
        spec.spatial = std::move(tab);
        return spec;
    }
    fail(ptr + "/type", "unknown drift type '" + type + "'");
}

// Presets ------------------------------------------------------------------

const std::map<std::string, std::string>& preset_table() {
    static const std::map<std::string, std::string> presets = {
        {"skt2", R"json({
  "schema_version": 1,
  "system": {
    "species": 2,
    "a0": [0.1, 0.1],
    "a": [[1.0, 4.0], [1.0, 1.0]],
    "entropy": {"pi": [1.0, 1.0], "lambda": [0.0, 0.0]},
    "drift": {"type": "zero"},
    "reaction": {"type": "zero"}
  },
  "grid": {"dim": 1, "extents": [1.0], "nodes": [128]},
  "scheme": {"tau": 0.001, "eps": 1e-8, "delta": 0.0, "m": 1, "t_end": 0.2,
             "snapshot_stride": 20},
  "initial": [
    {"offset": 0.05, "bumps": [{"amplitude": 2.5, "center": [0.5], "width": [0.22]}]},
    {"offset": 0.05, "bumps": [
      {"amplitude": 0.5, "center": [0.04], "width": [0.025]},
      {"amplitude": 0.5, "center": [0.1], "width": [0.025]},
      {"amplitude": 0.5, "center": [0.9], "width": [0.025]},
      {"amplitude": 0.5, "center": [0.96], "width": [0.025]}
    ]}
  ],
  "audit": {"l_ladder": "auto", "xi": [{"type": "clamp_sum", "theta": 8.0}],
            "phi": ["ramp", "bump"], "seed": 42, "sample_count": 10000},
  "sweep": {"eps_tau_rungs": 3, "delta_ladder": []},
  "output": "out/skt2"
})json"},
        {"skt3-db", R"json({
  "schema_version": 1,
  "system": {
    "species": 3,
    "a0": [0.1, 0.1, 0.1],
    "a": [[1.0, 2.0, 3.0], [1.0, 1.0, 3.0], [1.0, 2.0, 1.0]],
    "entropy": "derive",
    "drift": {"type": "zero"},
    "reaction": {"type": "zero"}
  },
  "grid": {"dim": 1, "extents": [1.0], "nodes": [96]},
  "scheme": {"tau": 0.002, "eps": 1e-8, "delta": 0.0, "m": 1, "t_end": 0.1,
             "snapshot_stride": 10},
  "initial": [
    {"offset": 1.0, "cosines": [{"amplitude": 0.4, "mode": 1}]},
    {"offset": 1.0, "cosines": [{"amplitude": 0.4, "mode": 2}]},
    {"offset": 1.0, "cosines": [{"amplitude": 0.4, "mode": 3}]}
  ],
  "audit": {"l_ladder": "auto", "xi": [{"type": "clamp_sum", "theta": 10.0}],
            "phi": ["ramp"], "seed": 42, "sample_count": 10000},
  "sweep": {"eps_tau_rungs": 3, "delta_ladder": []},
  "output": "out/skt3-db"
})json"},
        {"heat1", R"json({
  "schema_version": 1,
  "system": {
    "species": 1,
    "a0": [1.0],
    "a": [[0.0]],
    "entropy": {"pi": [1.0], "lambda": [0.0]},
    "drift": {"type": "zero"},
    "reaction": {"type": "zero"}
  },
  "grid": {"dim": 1, "extents": [1.0], "nodes": [129]},
  "scheme": {"tau": 0.001, "eps": 0.0, "delta": 0.0, "m": 1, "t_end": 0.1,
             "snapshot_stride": 20},
  "initial": [{"offset": 2.0, "cosines": [{"amplitude": 1.0, "mode": 1}]}],
  "audit": {"l_ladder": "auto",
            "xi": [{"type": "clamp_coord", "coord": 0, "theta": 8.0, "window": 32.0}],
            "phi": ["ramp", "bump"], "seed": 42, "sample_count": 10000},
  "sweep": {"eps_tau_rungs": 4, "delta_ladder": []},
  "output": "out/heat1"
})json"},
        {"ma2", R"json({
  "schema_version": 1,
  "system": {
    "species": 2,
    "a0": [0.1, 0.1],
    "a": [[1.0, 0.5], [0.5, 1.0]],
    "entropy": "derive",
    "drift": {"type": "zero"},
    "reaction": {"type": "mass_action",
                 "reactions": [{"alpha": [1, 0], "beta": [0, 1], "kf": 2.0, "kb": 1.0}]}
  },
  "grid": {"dim": 1, "extents": [1.0], "nodes": [64]},
  "scheme": {"tau": 0.001, "eps": 0.0, "delta": 0.0, "m": 1, "t_end": 0.2,
             "snapshot_stride": 25},
  "initial": [{"offset": 1.5}, {"offset": 0.3}],
  "audit": {"l_ladder": "auto", "xi": [{"type": "clamp_sum", "theta": 6.0}],
            "phi": ["ramp"], "seed": 42, "sample_count": 10000},
  "sweep": {"eps_tau_rungs": 3, "delta_ladder": [0.01, 0.005, 0.0025]},
  "output": "out/ma2"
})json"},
    };
    return presets;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : preset_table()) names.push_back(k);
    return names;
}

bool is_preset(const std::string& name) { return preset_table().count(name) > 0; }

std::string preset_text(const std::string& name) {
    auto it = preset_table().find(name);
    if (it == preset_table().end()) throw ScenarioError("unknown preset '" + name + "'");
    return it->second;
}

namespace {

// Finds a violating detailed-balance cycle for error reporting: the star
// measure pi_j = a_0j / a_j0 fails on pair (i, j) iff the cycle
// 1 -> i -> j -> 1 has Kolmogorov product != 1.
std::string describe_db_violation(const Matrix& a) {
    const int n = static_cast<int>(a.rows());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j && !(a(i, j) > 0.0)) {
                std::ostringstream os;
                os << "a[" << i + 1 << "][" << j + 1 << "] is not strictly positive";
                return os.str();
            }
        }
    }
    Vector pi(n);
    pi[0] = 1.0;
    for (int j = 1; j < n; ++j) pi[j] = a(0, j) / a(j, 0);
    for (int i = 1; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double lhs = pi[i] * a(i, j);
            const double rhs = pi[j] * a(j, i);
            if (std::abs(lhs - rhs) > 1e-12 * std::max(lhs, rhs)) {
                std::ostringstream os;
                os << "Kolmogorov cycle 1 -> " << i + 1 << " -> " << j + 1
                   << " -> 1 violated: a_1i a_ij a_j1 = "
                   << a(0, i) * a(i, j) * a(j, 0) << " but a_i1 a_jj' a_1j = "
                   << a(i, 0) * a(j, i) * a(0, j);
                return os.str();
            }
        }
    }
    return "detailed balance holds";
}

}  // namespace

Scenario parse_scenario_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ScenarioError(origin + ": " + e.what());
    }

    require_keys(root, "",
                 {"schema_version", "system", "grid", "scheme", "initial", "audit",
                  "sweep", "output"},
                 {"schema_version", "system", "grid", "scheme", "initial"});

    Scenario sc;
    sc.schema_version = get_int(root.at("schema_version"), "/schema_version");
    if (sc.schema_version != 1) fail("/schema_version", "unsupported schema version");

    // Grid first: drift tables and initial data refer to it.
    {
        const auto& g = root.at("grid");
        require_keys(g, "/grid", {"dim", "extents", "nodes"}, {"dim", "extents", "nodes"});
        sc.grid.dim = get_int(g.at("dim"), "/grid/dim");
        if (sc.grid.dim != 1 && sc.grid.dim != 2) fail("/grid/dim", "dim must be 1 or 2");
        const Vector ex = get_vector(g.at("extents"), "/grid/extents", sc.grid.dim);
        const Vector nd = get_vector(g.at("nodes"), "/grid/nodes", sc.grid.dim);
        for (int ax = 0; ax < sc.grid.dim; ++ax) {
            sc.grid.extents[ax] = ex[ax];
            sc.grid.nodes[ax] = static_cast<int>(nd[ax]);
            if (sc.grid.nodes[ax] != nd[ax] || sc.grid.nodes[ax] < 3) {
                fail("/grid/nodes", "node counts must be integers >= 3");
            }
            if (!(ex[ax] > 0.0)) fail("/grid/extents", "extents must be positive");
        }
        if (sc.grid.dim == 1) {
            sc.grid.extents[1] = 0.0;
            sc.grid.nodes[1] = 1;
        }
    }

    // System.
    {
        const auto& s = root.at("system");
        require_keys(s, "/system", {"species", "a0", "a", "entropy", "drift", "reaction"},
                     {"species", "a0", "a", "entropy"});
        const int n = get_int(s.at("species"), "/system/species");
        if (n < 1) fail("/system/species", "need at least one species");
        const Vector a0 = get_vector(s.at("a0"), "/system/a0", n);
        const Matrix a = get_matrix(s.at("a"), "/system/a", n);

        ReactionSpec reaction = ZeroReaction{};
        if (s.contains("reaction")) {
            reaction = parse_reaction(s.at("reaction"), "/system/reaction", n);
        }
        DriftSpec drift;
        if (s.contains("drift")) {
            drift = parse_drift(s.at("drift"), "/system/drift", n, sc.grid.dim);
        }

        EntropyParams entropy;
        const auto& ej = s.at("entropy");
        if (ej.is_string() && ej.get<std::string>() == "derive") {
            sc.entropy_derived = true;
            Vector pi;
            auto db = detailed_balance_measure(a);
            const bool mass_action = std::holds_alternative<MassActionReaction>(reaction);
            if (db) {
                pi = *db;
            } else if (mass_action) {
                pi = Vector::Ones(n);
            } else {
                fail("/system/entropy",
                     "cannot derive (pi, lambda): " + describe_db_violation(a) +
                         ", and no mass-action reaction is given");
            }
            Vector lambda = Vector::Zero(n);
            if (mass_action) {
                const auto lr = lambda_from_mass_action(std::get<MassActionReaction>(reaction));
                if (!lr.ok) fail("/system/entropy", "cannot derive lambda: " + lr.message);
                lambda = lr.lambda;
            }
            entropy = EntropyParams(pi, lambda);
        } else if (ej.is_object()) {
            require_keys(ej, "/system/entropy", {"pi", "lambda"}, {"pi", "lambda"});
            entropy = EntropyParams(get_vector(ej.at("pi"), "/system/entropy/pi", n),
                                    get_vector(ej.at("lambda"), "/system/entropy/lambda", n));
        } else {
            fail("/system/entropy", "expected an object or the string \"derive\"");
        }

        try {
            sc.system = SystemSpec(a0, a, entropy, drift, reaction);
        } catch (const std::exception& e) {
            fail("/system", e.what());
        }
    }

    // Scheme.
    {
        const auto& s = root.at("scheme");
        require_keys(s, "/scheme",
                     {"tau", "eps", "delta", "m", "t_end", "snapshot_stride", "cutoff",
                      "newton"},
                     {"tau", "t_end"});
        sc.scheme.tau = get_number(s.at("tau"), "/scheme/tau");
        sc.scheme.t_end = get_number(s.at("t_end"), "/scheme/t_end");
        if (s.contains("eps")) sc.scheme.eps = get_number(s.at("eps"), "/scheme/eps");
        if (s.contains("delta")) sc.scheme.delta = get_number(s.at("delta"), "/scheme/delta");
        sc.scheme.m = sc.grid.dim == 2 ? 2 : 1;
        if (s.contains("m")) sc.scheme.m = get_int(s.at("m"), "/scheme/m");
        if (s.contains("cutoff")) sc.scheme.cutoff = get_number(s.at("cutoff"), "/scheme/cutoff");
        if (s.contains("snapshot_stride")) {
            sc.snapshot_stride = get_int(s.at("snapshot_stride"), "/scheme/snapshot_stride");
        }
        if (s.contains("newton")) {
            const auto& nj = s.at("newton");
            require_keys(nj, "/scheme/newton",
                         {"tolerance", "max_iterations", "damping", "min_step"}, {});
            if (nj.contains("tolerance")) {
                sc.scheme.newton.tolerance = get_number(nj.at("tolerance"), "/scheme/newton/tolerance");
            }
            if (nj.contains("max_iterations")) {
                sc.scheme.newton.max_iterations =
                    get_int(nj.at("max_iterations"), "/scheme/newton/max_iterations");
            }
            if (nj.contains("damping")) {
                sc.scheme.newton.damping = get_number(nj.at("damping"), "/scheme/newton/damping");
            }
            if (nj.contains("min_step")) {
                sc.scheme.newton.min_step = get_number(nj.at("min_step"), "/scheme/newton/min_step");
            }
        }
        if (!(sc.scheme.tau > 0.0)) fail("/scheme/tau", "tau must be positive");
        if (sc.scheme.t_end < 0.0) fail("/scheme/t_end", "t_end must be nonnegative");
        if (sc.scheme.eps < 0.0 || sc.scheme.delta < 0.0) {
            fail("/scheme", "eps and delta must be nonnegative");
        }
        if (sc.scheme.m != 1 && sc.scheme.m != 2) fail("/scheme/m", "m must be 1 or 2");
    }

    // Initial data.
    {
        const auto& arr = root.at("initial");
        if (!arr.is_array() || static_cast<int>(arr.size()) != sc.system.n) {
            fail("/initial", "expected one entry per species");
        }
        for (int i = 0; i < sc.system.n; ++i) {
            const std::string ptr = "/initial/" + std::to_string(i);
            require_keys(arr[i], ptr, {"offset", "cosines", "bumps", "values"}, {});
            InitialSpecies is;
            if (arr[i].contains("offset")) {
                is.offset = get_number(arr[i].at("offset"), ptr + "/offset");
            }
            if (arr[i].contains("cosines")) {
                for (std::size_t c = 0; c < arr[i].at("cosines").size(); ++c) {
                    const auto& cj = arr[i].at("cosines")[c];
                    const std::string cptr = ptr + "/cosines/" + std::to_string(c);
                    require_keys(cj, cptr, {"amplitude", "mode", "mode_y"}, {"amplitude", "mode"});
                    InitialCosine ic;
                    ic.amplitude = get_number(cj.at("amplitude"), cptr + "/amplitude");
                    ic.mode_x = get_int(cj.at("mode"), cptr + "/mode");
                    if (cj.contains("mode_y")) ic.mode_y = get_int(cj.at("mode_y"), cptr + "/mode_y");
                    is.cosines.push_back(ic);
                }
            }
            if (arr[i].contains("bumps")) {
                for (std::size_t c = 0; c < arr[i].at("bumps").size(); ++c) {
                    const auto& bj = arr[i].at("bumps")[c];
                    const std::string bptr = ptr + "/bumps/" + std::to_string(c);
                    require_keys(bj, bptr, {"amplitude", "center", "width"},
                                 {"amplitude", "center", "width"});
                    InitialBump ib;
                    ib.amplitude = get_number(bj.at("amplitude"), bptr + "/amplitude");
                    const Vector c0 = get_vector(bj.at("center"), bptr + "/center", sc.grid.dim);
                    const Vector w0 = get_vector(bj.at("width"), bptr + "/width", sc.grid.dim);
                    for (int ax = 0; ax < sc.grid.dim; ++ax) {
                        ib.center[ax] = c0[ax];
                        ib.width[ax] = w0[ax];
                        if (!(w0[ax] > 0.0)) fail(bptr + "/width", "widths must be positive");
                    }
                    is.bumps.push_back(ib);
                }
            }
            if (arr[i].contains("values")) {
                const int total = sc.grid.nodes[0] * (sc.grid.dim == 2 ? sc.grid.nodes[1] : 1);
                const Vector v = get_vector(arr[i].at("values"), ptr + "/values", total);
                is.values.assign(v.data(), v.data() + v.size());
            }
            sc.initial.push_back(std::move(is));
        }
    }

    // Audit.
    if (root.contains("audit")) {
        const auto& a = root.at("audit");
        require_keys(a, "/audit", {"l_ladder", "xi", "phi", "seed", "sample_count"}, {});
        if (a.contains("l_ladder")) {
            if (a.at("l_ladder").is_string()) {
                if (a.at("l_ladder").get<std::string>() != "auto") {
                    fail("/audit/l_ladder", "expected an array or \"auto\"");
                }
                sc.audit.auto_ladder = true;
            } else {
                sc.audit.auto_ladder = false;
                const Vector lv = get_vector(a.at("l_ladder"), "/audit/l_ladder");
                for (int k = 0; k < lv.size(); ++k) {
                    if (!(lv[k] >= 1.0)) fail("/audit/l_ladder", "levels must be >= 1");
                    sc.audit.l_ladder.push_back(lv[k]);
                }
            }
        }
        if (a.contains("xi")) {
            const auto& xj = a.at("xi");
            if (!xj.is_array()) fail("/audit/xi", "expected an array");
            for (std::size_t k = 0; k < xj.size(); ++k) {
                const std::string xptr = "/audit/xi/" + std::to_string(k);
                require_keys(xj[k], xptr, {"type", "coord", "theta", "window"}, {"type"});
                XiSpec xs;
                xs.type = xj[k].at("type").get<std::string>();
                if (xs.type != "constant" && xs.type != "clamp_coord" && xs.type != "clamp_sum") {
                    fail(xptr + "/type", "unknown xi type '" + xs.type + "'");
                }
                if (xj[k].contains("coord")) xs.coord = get_int(xj[k].at("coord"), xptr + "/coord");
                if (xj[k].contains("theta")) xs.theta = get_number(xj[k].at("theta"), xptr + "/theta");
                if (xj[k].contains("window")) {
                    xs.window = get_number(xj[k].at("window"), xptr + "/window");
                }
                if (xs.type == "clamp_coord" && (xs.coord < 0 || xs.coord >= sc.system.n)) {
                    fail(xptr + "/coord", "species index out of range");
                }
                sc.audit.xi.push_back(xs);
            }
        }
        if (a.contains("phi")) {
            sc.audit.phi.clear();
            for (const auto& pj : a.at("phi")) {
                const std::string name = pj.get<std::string>();
                if (name != "ramp" && name != "bump") {
                    fail("/audit/phi", "unknown test function '" + name + "'");
                }
                sc.audit.phi.push_back(name);
            }
        }
        if (a.contains("seed")) sc.audit.seed = a.at("seed").get<std::uint64_t>();
        if (a.contains("sample_count")) {
            sc.audit.sample_count = get_int(a.at("sample_count"), "/audit/sample_count");
        }
    }
    if (sc.audit.xi.empty()) {
        sc.audit.xi.push_back(XiSpec{"clamp_sum", 0, 8.0, 0.0});
    }

    // Sweep.
    if (root.contains("sweep")) {
        const auto& s = root.at("sweep");
        require_keys(s, "/sweep", {"eps_tau_rungs", "delta_ladder"}, {});
        if (s.contains("eps_tau_rungs")) {
            sc.sweep.eps_tau_rungs = get_int(s.at("eps_tau_rungs"), "/sweep/eps_tau_rungs");
        }
        if (s.contains("delta_ladder")) {
            const Vector dl = get_vector(s.at("delta_ladder"), "/sweep/delta_ladder");
            sc.sweep.delta_ladder.assign(dl.data(), dl.data() + dl.size());
        }
    }

    if (root.contains("output")) {
        sc.output_dir = root.at("output").get<std::string>();
    }

    // Normalized echo with defaults filled; the scenario hash is over this.
    json norm = root;
    norm["scheme"]["eps"] = sc.scheme.eps;
    norm["scheme"]["delta"] = sc.scheme.delta;
    norm["scheme"]["m"] = sc.scheme.m;
    norm["scheme"]["cutoff"] = sc.scheme.cutoff;
    norm["scheme"]["snapshot_stride"] = sc.snapshot_stride;
    norm["scheme"]["newton"] = {{"tolerance", sc.scheme.newton.tolerance},
                                {"max_iterations", sc.scheme.newton.max_iterations},
                                {"damping", sc.scheme.newton.damping},
                                {"min_step", sc.scheme.newton.min_step}};
    if (sc.entropy_derived) {
        norm["system"]["entropy_resolved"] = {
            {"pi", std::vector<double>(sc.system.entropy.pi.data(),
                                       sc.system.entropy.pi.data() + sc.system.n)},
            {"lambda", std::vector<double>(sc.system.entropy.lambda.data(),
                                           sc.system.entropy.lambda.data() + sc.system.n)}};
    }
    norm["audit"]["seed"] = sc.audit.seed;
    norm["audit"]["sample_count"] = sc.audit.sample_count;
    norm["output"] = sc.output_dir;
    sc.normalized = norm;
    return sc;
}

Scenario parse_scenario(const std::string& path_or_preset) {
    if (is_preset(path_or_preset)) {
        return parse_scenario_text(preset_text(path_or_preset), "preset:" + path_or_preset);
    }
    std::ifstream in(path_or_preset);
    if (!in) {
        throw ScenarioError("cannot read scenario '" + path_or_preset +
                            "' (not a file, and not one of the presets)");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_text(ss.str(), path_or_preset);
}

Field build_initial(const Scenario& sc, const Grid& grid) {
    Field u0(grid, sc.system.n, FieldRepr::Primal);
    for (int i = 0; i < sc.system.n; ++i) {
        const InitialSpecies& is = sc.initial[i];
        if (!is.values.empty()) {
            if (static_cast<int>(is.values.size()) != grid.num_nodes()) {
                throw ScenarioError("/initial: tabulated values do not match the grid");
            }
            for (int p = 0; p < grid.num_nodes(); ++p) u0.at(i, p) = is.values[p];
        } else {
            for (int p = 0; p < grid.num_nodes(); ++p) {
                const auto pos = grid.node_position(p);
                double v = is.offset;
                for (const auto& c : is.cosines) {
                    double term = c.amplitude *
                                  std::cos(c.mode_x * M_PI * pos[0] / grid.extent(0));
                    if (grid.dim() == 2 && c.mode_y > 0) {
                        term *= std::cos(c.mode_y * M_PI * pos[1] / grid.extent(1));
                    }
                    v += term;
                }
                for (const auto& b : is.bumps) {
                    double arg = std::pow((pos[0] - b.center[0]) / b.width[0], 2);
                    if (grid.dim() == 2) {
                        arg += std::pow((pos[1] - b.center[1]) / b.width[1], 2);
                    }
                    v += b.amplitude * std::exp(-arg);
                }
                u0.at(i, p) = v;
            }
        }
    }
    if (u0.values.minCoeff() < 0.0) {
        throw ScenarioError("/initial: densities must be nonnegative on the grid");
    }
    return u0;
}

json hypothesis_report_json(const HypothesisReport& rep) {
    json j;
    if (rep.alpha) {
        j["alpha"] = *rep.alpha;
    } else {
        j["alpha"] = "undefined";
    }
    if (rep.db_measure) {
        j["db_measure"] = std::vector<double>(rep.db_measure->data(),
                                              rep.db_measure->data() + rep.db_measure->size());
    } else {
        j["db_measure"] = nullptr;
    }
    j["h4_margin"] = rep.h4.margin;
    j["h4_scale"] = rep.h4.scale;
    if (rep.h4.witness) {
        j["h4_witness"] = std::vector<double>(rep.h4.witness->data(),
                                              rep.h4.witness->data() + rep.h4.witness->size());
    }
    j["quasi_positivity_margin"] = rep.quasi_positivity.margin;
    if (rep.quasi_positivity.witness) {
        j["quasi_positivity_witness"] = std::vector<double>(
            rep.quasi_positivity.witness->data(),
            rep.quasi_positivity.witness->data() + rep.quasi_positivity.witness->size());
        j["quasi_positivity_species"] = rep.quasi_positivity.witness_species + 1;
    }
    j["min_rayleigh"] = rep.rayleigh.min_quotient;
    j["rayleigh_bound_checked"] = rep.rayleigh.bound_checked;
    j["rayleigh_bound_violation"] = rep.rayleigh.max_bound_violation;
    j["classification"] = to_string(rep.classification);
    j["sample_count"] = rep.sample_count;
    j["seed"] = rep.seed;
    return j;
}

std::uint64_t fnv1a_hash(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

struct ArtifactLog {
    fs::path dir;
    std::vector<std::string> files;

    std::string path(const std::string& name) {
        files.push_back(name);
        return (dir / name).string();
    }
};

void write_manifest(ArtifactLog& log, const Scenario& sc, const std::string& command,
                    const std::string& classification, double wall_seconds) {
    json m;
    m["schema_version"] = 1;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(sc.normalized.dump())));
    m["scenario_hash"] = hash;
    m["seed"] = sc.audit.seed;
    m["command"] = command;
    m["classification"] = classification;
    m["wall_clock_seconds"] = wall_seconds;
    m["artifacts"] = log.files;
    m["scenario"] = sc.normalized;
    std::ofstream out(log.dir / "manifest.json");
    out << m.dump(2) << "\n";
}

std::vector<std::string> audit_header(int n) {
    std::vector<std::string> h{"step", "time", "newton_iters", "residual", "entropy"};
    for (int i = 1; i <= n; ++i) h.push_back("mass_" + std::to_string(i));
    for (int i = 1; i <= n; ++i) h.push_back("prodL2_" + std::to_string(i));
    for (int i = 1; i <= n; ++i) h.push_back("prodSqrt_" + std::to_string(i));
    for (int i = 1; i <= n; ++i) h.push_back("massbal_" + std::to_string(i));
    return h;
}

void write_audit_csv(const std::string& path, const Trajectory& traj) {
    const int n = traj.spec.n;
    CsvWriter csv(path, audit_header(n));
    for (const StepReport& r : traj.reports) {
        std::vector<std::string> row{CsvWriter::cell(r.step), CsvWriter::cell(r.time),
                                     CsvWriter::cell(r.newton_iterations),
                                     CsvWriter::cell(r.residual_norm),
                                     CsvWriter::cell(r.entropy_after)};
        for (int i = 0; i < n; ++i) row.push_back(CsvWriter::cell(r.mass_after[i]));
        for (int i = 0; i < n; ++i) row.push_back(CsvWriter::cell(r.production.grad_sq[i]));
        for (int i = 0; i < n; ++i) row.push_back(CsvWriter::cell(r.production.sqrt_grad_sq[i]));
        for (int i = 0; i < n; ++i) row.push_back(CsvWriter::cell(r.mass_balance_residual[i]));
        csv.row(row);
    }
}

void write_snapshot_csv(const std::string& path, const Grid& grid, const Field& u) {
    std::vector<std::string> header;
    header.push_back("x");
    if (grid.dim() == 2) header.push_back("y");
    for (int i = 1; i <= u.species; ++i) header.push_back("u_" + std::to_string(i));
    CsvWriter csv(path, header);
    for (int p = 0; p < grid.num_nodes(); ++p) {
        const auto pos = grid.node_position(p);
        std::vector<std::string> row{CsvWriter::cell(pos[0])};
        if (grid.dim() == 2) row.push_back(CsvWriter::cell(pos[1]));
        for (int i = 0; i < u.species; ++i) row.push_back(CsvWriter::cell(u.at(i, p)));
        csv.row(row);
    }
}

std::string snapshot_name(long long k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "snapshot_%06lld.csv", k);
    return buf;
}

void write_snapshots(ArtifactLog& log, const Trajectory& traj, int stride) {
    write_snapshot_csv(log.path(snapshot_name(0)), traj.grid, traj.initial);
    const long long N = static_cast<long long>(traj.states.size());
    for (long long k = 1; k <= N; ++k) {
        const bool strided = stride > 0 && k % stride == 0;
        const bool final_state = (k == N && stride <= 0);
        if (strided || final_state) {
            write_snapshot_csv(log.path(snapshot_name(k)), traj.grid,
                               traj.states[k - 1].second);
        }
    }
}

struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_positivity(const Trajectory& traj) {
    if (traj.initial.values.minCoeff() <= 0.0) {
        throw InternalError("positivity violated in the initial cutoff field");
    }
    for (const auto& [t, u] : traj.states) {
        if (u.values.minCoeff() <= 0.0) {
            throw InternalError("positivity violated at t = " + format_double(t));
        }
    }
}

std::vector<RenormTestFunction> build_xi_suite(const Scenario& sc, const Grid& grid) {
    std::vector<RenormTestFunction> suite;
    for (const XiSpec& xs : sc.audit.xi) {
        RenormTestFunction base;
        if (xs.type == "constant") {
            base = make_xi_constant(sc.system.n);
        } else if (xs.type == "clamp_coord") {
            const double window = xs.window > 0.0 ? xs.window : 2.0 * sc.system.n * xs.theta;
            base = make_xi_clamp_coord(xs.coord, xs.theta, window, sc.system.n);
        } else {
            base = make_xi_clamp_sum(xs.theta, sc.system.n);
        }
        for (const std::string& phi_name : sc.audit.phi) {
            RenormTestFunction tf = base;
            tf.phi = phi_name == "bump" ? make_phi_bump(grid, sc.scheme.t_end)
                                        : make_phi_ramp(sc.scheme.t_end);
            suite.push_back(std::move(tf));
        }
    }
    return suite;
}

int run_check(const Scenario& sc, ArtifactLog& log) {
    const auto t0 = std::chrono::steady_clock::now();
    HypothesisReport rep =
        classify_hypotheses(sc.system, sc.audit.seed, sc.audit.sample_count);
    const json j = hypothesis_report_json(rep);
    {
        std::ofstream out(log.path("hypotheses.json"));
        out << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(log, sc, "check", to_string(rep.classification), secs);
    return 0;
}

int run_run(const Scenario& sc, ArtifactLog& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid grid = sc.grid.build();
    const Field u0 = build_initial(sc, grid);
    HypothesisReport rep =
        classify_hypotheses(sc.system, sc.audit.seed, sc.audit.sample_count);
    MarchResult mr = march(sc.system, grid, u0, sc.scheme, &rep);
    check_positivity(mr.trajectory);
    write_audit_csv(log.path("audit.csv"), mr.trajectory);
    write_snapshots(log, mr.trajectory, sc.snapshot_stride);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(log, sc, "run", to_string(rep.classification), secs);
    if (!mr.completed) {
        std::cerr << "non-convergence at step " << mr.failure->step << ": "
                  << mr.failure->message << "\n";
        return 2;
    }
    return 0;
}

int run_sweep(const Scenario& sc, ArtifactLog& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid grid = sc.grid.build();
    const int rungs = std::max(1, sc.sweep.eps_tau_rungs);
    std::vector<Grid> grids;
    std::vector<SchemeParams> params;
    for (int r = 0; r < rungs; ++r) {
        SchemeParams p = sc.scheme;
        p.tau = sc.scheme.tau / std::pow(2.0, r);
        p.eps = sc.scheme.eps / std::pow(2.0, r);
        grids.push_back(grid);
        params.push_back(p);
    }
    auto initial = [&sc](const Grid& g) { return build_initial(sc, g); };
    SweepReport rep = limit_sweep(sc.system, grids, params, initial, sc.sweep.delta_ladder);

    CsvWriter csv(log.path("sweep.csv"),
                  {"rung", "kind", "eps", "tau", "delta", "steps", "completed",
                   "l1_diff_prev", "entropy_final", "min_density"});
    for (std::size_t r = 0; r < rep.rungs.size(); ++r) {
        const SweepRung& rung = rep.rungs[r];
        csv.row({CsvWriter::cell(static_cast<int>(r)), rung.kind, CsvWriter::cell(rung.eps),
                 CsvWriter::cell(rung.tau), CsvWriter::cell(rung.delta),
                 CsvWriter::cell(rung.steps), rung.completed ? "1" : "0",
                 CsvWriter::cell(rung.l1_diff_prev), CsvWriter::cell(rung.entropy_final),
                 CsvWriter::cell(rung.min_density)});
    }
    bool all_ok = true;
    for (std::size_t r = 0; r < rep.runs.size(); ++r) {
        char sub[32];
        std::snprintf(sub, sizeof(sub), "rung_%02zu", r);
        fs::create_directories(log.dir / sub);
        const std::string rel = std::string(sub) + "/audit.csv";
        write_audit_csv(log.path(rel), rep.runs[r].trajectory);
        all_ok = all_ok && rep.runs[r].completed;
    }
    HypothesisReport hrep =
        classify_hypotheses(sc.system, sc.audit.seed, sc.audit.sample_count);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(log, sc, "sweep", to_string(hrep.classification), secs);
    return all_ok ? 0 : 2;
}

int run_renorm_audit(const Scenario& sc, ArtifactLog& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid grid = sc.grid.build();
    const Field u0 = build_initial(sc, grid);
    const auto suite = build_xi_suite(sc, grid);

    RenormAuditBundle bundle;
    if (sc.audit.auto_ladder) {
        // Ladder anchored at the trajectory's max density sum: the top level
        // gives an exactly-zero defect.
        bundle.run = march(sc.system, grid, u0, sc.scheme);
        const double M = std::max(1.0, max_density_sum(bundle.run.trajectory));
        const std::vector<double> ladder{std::max(1.0, M / 8.0), std::max(1.0, M / 4.0),
                                         std::max(1.0, M / 2.0), M};
        for (double L : ladder) {
            bundle.defects.push_back(
                defect_estimate(bundle.run.trajectory, TruncationFamily{L, sc.system.n}));
        }
        for (const auto& tf : suite) {
            bundle.residuals.push_back(renorm_residual(bundle.run.trajectory, tf));
        }
    } else {
        std::vector<double> ladder(sc.audit.l_ladder.begin(), sc.audit.l_ladder.end());
        bundle = renorm_audit(sc.system, grid, u0, sc.scheme, ladder, suite);
    }
    check_positivity(bundle.run.trajectory);

    {
        CsvWriter csv(log.path("defects.csv"), {"species", "L", "delta", "total_variation"});
        for (const DefectEstimate& d : bundle.defects) {
            for (int i = 0; i < d.total.size(); ++i) {
                csv.row({CsvWriter::cell(i + 1), CsvWriter::cell(d.level),
                         CsvWriter::cell(d.delta), CsvWriter::cell(d.total[i])});
            }
        }
    }
    {
        CsvWriter csv(log.path("residuals.csv"), {"xi_id", "phi_id", "residual", "normalizer"});
        for (const RenormResidual& r : bundle.residuals) {
            if (r.truncation_inactive) {
                std::cerr << "warning: xi '" << r.xi_id
                          << "' support exceeds the sampled density range; truncation inactive\n";
            }
            csv.row({r.xi_id, r.phi_id, CsvWriter::cell(r.residual),
                     CsvWriter::cell(r.normalizer)});
        }
    }
    write_audit_csv(log.path("audit.csv"), bundle.run.trajectory);
    HypothesisReport hrep =
        classify_hypotheses(sc.system, sc.audit.seed, sc.audit.sample_count);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(log, sc, "renorm-audit", to_string(hrep.classification), secs);
    return bundle.run.completed ? 0 : 2;
}

}  // namespace

int dispatch(const std::string& subcommand, const std::string& scenario_arg,
             const DispatchOptions& opts) {
    Scenario sc;
    try {
        sc = parse_scenario(scenario_arg);
        if (!opts.out_override.empty()) sc.output_dir = opts.out_override;
        if (opts.seed_override) {
            sc.audit.seed = *opts.seed_override;
            sc.normalized["audit"]["seed"] = sc.audit.seed;
        }
        if (opts.snapshot_stride_override) {
            sc.snapshot_stride = *opts.snapshot_stride_override;
            sc.normalized["scheme"]["snapshot_stride"] = sc.snapshot_stride;
        }
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    }

    ArtifactLog log;
    log.dir = sc.output_dir;
    try {
        fs::create_directories(log.dir);
        if (subcommand == "check") return run_check(sc, log);
        if (subcommand == "run") return run_run(sc, log);
        if (subcommand == "sweep") return run_sweep(sc, log);
        if (subcommand == "renorm-audit") return run_renorm_audit(sc, log);
        std::cerr << "unknown subcommand '" << subcommand << "'\n";
        return 1;
    } catch (const ScenarioError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const InternalError& e) {
        std::cerr << "internal invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace crossdiff
