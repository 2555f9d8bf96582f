#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/measurement.hpp"
#include "etdkf/state.hpp"
#include "etdkf/trajectory.hpp"

namespace etdkf {

inline constexpr int kScenarioSchemaVersion = 1;

// Per-node configuration: where the node is (or moves), its true initial
// clock, the per-step process noise variances, and the initial covariance.
struct NodeConfig {
    std::string name;
    TrajectoryModel trajectory;
    double initial_offset{0.0};
    double initial_bias{0.0};
    Vec5 process_noise_diag{Vec5::Zero()};  // variances per step: x,y,z,o,b
    Vec5 initial_cov_diag{Vec5::Ones()};    // diagonal of the initial P

    ProcessNoise process_noise() const {
        ProcessNoise q;
        q.Q = process_noise_diag.asDiagonal();
        return q;
    }

    Mat5 initial_covariance() const { return initial_cov_diag.asDiagonal(); }

    NodeState initial_truth() const {
        NodeState s;
        s.position = trajectory.kind == "waypoints" && !trajectory.waypoints.empty()
                         ? trajectory.waypoints.front()
                         : trajectory.start;
        s.offset = initial_offset;
        s.bias = initial_bias;
        return s;
    }
};

// Full experiment description.  One file (plus optional overrides) pins a run
// exactly: same scenario and seed give identical output bytes.
struct Scenario {
    int schema_version{kScenarioSchemaVersion};
    std::string name{"unnamed"};
    std::uint64_t seed{1};
    int n_steps{1};
    double delta_t{0.1};
    RangingParams ranging;
    Mat3 R{Mat3::Identity()};
    MeasurementSelection selection{MeasurementSelection::all()};
    std::string noise_model{"per_sender"};       // per_sender | per_edge
    std::string neighbor_context{"estimates"};   // estimates | truth
    std::string notification{"per_trigger"};     // per_trigger | per_step | none
    std::string topology_kind{"fully_connected"};
    int k_nearest{1};
    std::string diffusion_kind{"metropolis"};    // metropolis | identity | self_biased
    double diffusion_alpha{0.1};                 // self_biased mixing fraction
    double pi_max{0.0};
    int leader{-1};                              // -1: auto (first mobile node)
    std::string init_estimate{"prior_draw"};     // prior_draw | truth
    std::vector<NodeConfig> nodes;

    int n_nodes() const { return static_cast<int>(nodes.size()); }

    // Leader choice: configured id, else the first non-static node, else 0.
    int leader_id() const {
        if (leader >= 0) return leader;
        for (int k = 0; k < n_nodes(); ++k)
            if (nodes[k].trajectory.kind != "static") return k;
        return 0;
    }

    void validate() const {
        if (schema_version != kScenarioSchemaVersion)
            throw ScenarioError("field 'schema_version': expected " +
                                std::to_string(kScenarioSchemaVersion));
        if (nodes.size() < 2) throw ScenarioError("field 'nodes': need at least 2 nodes");
        if (n_steps < 1) throw ScenarioError("field 'n_steps': must be >= 1");
        if (!(delta_t > 0.0)) throw ScenarioError("field 'delta_t': must be > 0");
        if (std::isnan(pi_max) || pi_max < 0.0)
            throw ScenarioError("field 'trigger.pi_max': must be >= 0 (or \"inf\")");
        if (leader >= n_nodes())
            throw ScenarioError("field 'trigger.leader': node id out of range");
        try {
            ranging.validate();
        } catch (const Error& e) {
            throw ScenarioError(std::string("field 'ranging': ") + e.what());
        }
        try {
            MeasurementNoise{R}.validate();
        } catch (const Error& e) {
            throw ScenarioError(std::string("field 'measurement_noise': ") + e.what());
        }
        if (selection.count() == 0)
            throw ScenarioError("field 'enabled_measurements': need at least one kind");
        if (noise_model != "per_sender" && noise_model != "per_edge")
            throw ScenarioError("field 'noise_model': expected per_sender or per_edge");
        if (neighbor_context != "estimates" && neighbor_context != "truth")
            throw ScenarioError("field 'neighbor_context': expected estimates or truth");
        if (notification != "per_trigger" && notification != "per_step" &&
            notification != "none")
            throw ScenarioError("field 'notification': expected per_trigger, per_step or none");
        if (topology_kind != "fully_connected" && topology_kind != "k_nearest")
            throw ScenarioError("field 'topology.kind': expected fully_connected or k_nearest");
        if (topology_kind == "k_nearest" && (k_nearest < 1 || k_nearest >= n_nodes()))
            throw ScenarioError("field 'topology.k': must be in [1, n_nodes-1]");
        if (diffusion_kind != "metropolis" && diffusion_kind != "identity" &&
            diffusion_kind != "self_biased")
            throw ScenarioError(
                "field 'diffusion.kind': expected metropolis, identity or self_biased");
        if (diffusion_kind == "self_biased" && !(diffusion_alpha >= 0.0 && diffusion_alpha <= 1.0))
            throw ScenarioError("field 'diffusion.alpha': must be in [0, 1]");
        if (init_estimate != "prior_draw" && init_estimate != "truth")
            throw ScenarioError("field 'init_estimate': expected prior_draw or truth");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const std::string where = "field 'nodes[" + std::to_string(i) + "]'";
            const NodeConfig& n = nodes[i];
            try {
                n.trajectory.validate();
            } catch (const Error& e) {
                throw ScenarioError(where + ".trajectory: " + e.what());
            }
            for (int d = 0; d < kStateDim; ++d) {
                if (n.process_noise_diag(d) < 0.0)
                    throw ScenarioError(where + ".process_noise: variances must be >= 0");
                if (!(n.initial_cov_diag(d) > 0.0))
                    throw ScenarioError(where + ".initial_covariance: variances must be > 0");
            }
        }
    }
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& key,
                                           const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ScenarioError("field '" + where + "': missing");
    return *it;
}

// Unknown fields are errors, not silence: a typo'd file or --set override that
// would otherwise change nothing must fail loudly.
inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
    const std::string label = where.empty() ? "<root>" : where;
    if (!j.is_object()) throw ScenarioError("field '" + label + "': expected an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known)
            throw ScenarioError("field '" + (where.empty() ? item.key() : where + "." + item.key()) +
                                "': unknown field");
    }
}

inline double as_number(const nlohmann::json& j, const std::string& where) {
    if (!j.is_number()) throw ScenarioError("field '" + where + "': expected a number");
    return j.get<double>();
}

inline double number_field(const nlohmann::json& j, const std::string& key,
                           const std::string& where) {
    return as_number(require_field(j, key, where + "." + key), where + "." + key);
}

inline std::string string_field(const nlohmann::json& j, const std::string& key,
                                const std::string& where) {
    const nlohmann::json& v = require_field(j, key, where + "." + key);
    if (!v.is_string()) throw ScenarioError("field '" + where + "." + key + "': expected a string");
    return v.get<std::string>();
}

inline Vec3 vec3_field(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw ScenarioError("field '" + where + "': expected an array of 3 numbers");
    Vec3 v;
    for (int i = 0; i < 3; ++i) v(i) = as_number(j[i], where);
    return v;
}

inline TrajectoryModel parse_trajectory(const nlohmann::json& j, const std::string& where) {
    reject_unknown_keys(j, {"kind", "start", "step_sigma", "speed", "bounds", "waypoints"}, where);
    TrajectoryModel m;
    m.kind = string_field(j, "kind", where);
    if (j.contains("start")) m.start = vec3_field(j["start"], where + ".start");
    if (j.contains("step_sigma")) m.step_sigma = number_field(j, "step_sigma", where);
    if (j.contains("speed")) m.speed = number_field(j, "speed", where);
    if (j.contains("bounds")) {
        const nlohmann::json& b = j["bounds"];
        reject_unknown_keys(b, {"lo", "hi"}, where + ".bounds");
        m.bounds.lo = vec3_field(require_field(b, "lo", where + ".bounds.lo"), where + ".bounds.lo");
        m.bounds.hi = vec3_field(require_field(b, "hi", where + ".bounds.hi"), where + ".bounds.hi");
    }
    if (j.contains("waypoints")) {
        for (std::size_t i = 0; i < j["waypoints"].size(); ++i)
            m.waypoints.push_back(
                vec3_field(j["waypoints"][i], where + ".waypoints[" + std::to_string(i) + "]"));
    }
    return m;
}

// Diagonal written as {position, offset, bias}: position applies per axis.
inline Vec5 parse_state_diag(const nlohmann::json& j, const std::string& where) {
    reject_unknown_keys(j, {"position", "offset", "bias"}, where);
    Vec5 v;
    const double p = number_field(j, "position", where);
    v(kIdxPx) = p;
    v(kIdxPy) = p;
    v(kIdxPz) = p;
    v(kIdxOffset) = number_field(j, "offset", where);
    v(kIdxBias) = number_field(j, "bias", where);
    return v;
}

inline MeasurementKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "counter_difference") return MeasurementKind::counter_difference;
    if (s == "single_sided") return MeasurementKind::single_sided;
    if (s == "double_sided") return MeasurementKind::double_sided;
    throw ScenarioError("field '" + where + "': unknown measurement kind '" + s + "'");
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
    using namespace detail;
    reject_unknown_keys(j,
                        {"schema_version", "name", "seed", "n_steps", "delta_t", "ranging",
                         "measurement_noise", "enabled_measurements", "noise_model",
                         "neighbor_context", "notification", "init_estimate", "topology",
                         "diffusion", "trigger", "nodes"},
                        "");
    Scenario s;
    const nlohmann::json& ver = require_field(j, "schema_version", "schema_version");
    if (!ver.is_number_integer())
        throw ScenarioError("field 'schema_version': expected an integer");
    s.schema_version = ver.get<int>();
    if (j.contains("name")) s.name = string_field(j, "name", "");
    const nlohmann::json& seed = require_field(j, "seed", "seed");
    if (!seed.is_number_unsigned() && !seed.is_number_integer())
        throw ScenarioError("field 'seed': expected a nonnegative integer");
    if (seed.is_number_integer() && seed.get<std::int64_t>() < 0)
        throw ScenarioError("field 'seed': expected a nonnegative integer");
    s.seed = seed.get<std::uint64_t>();
    const nlohmann::json& steps = require_field(j, "n_steps", "n_steps");
    if (!steps.is_number_integer()) throw ScenarioError("field 'n_steps': expected an integer");
    s.n_steps = steps.get<int>();
    s.delta_t = as_number(require_field(j, "delta_t", "delta_t"), "delta_t");

    if (j.contains("ranging")) {
        const nlohmann::json& r = j["ranging"];
        reject_unknown_keys(r, {"c", "t_rsp1", "gamma_bias_coeff"}, "ranging");
        if (r.contains("c")) s.ranging.c = number_field(r, "c", "ranging");
        if (r.contains("t_rsp1")) s.ranging.t_rsp1 = number_field(r, "t_rsp1", "ranging");
        if (r.contains("gamma_bias_coeff"))
            s.ranging.gamma_bias_coeff = number_field(r, "gamma_bias_coeff", "ranging");
    }

    const nlohmann::json& noise = require_field(j, "measurement_noise", "measurement_noise");
    reject_unknown_keys(noise, {"R_diag", "R"}, "measurement_noise");
    if (noise.contains("R_diag")) {
        const nlohmann::json& d = noise["R_diag"];
        if (!d.is_array() || d.size() != 3)
            throw ScenarioError("field 'measurement_noise.R_diag': expected 3 numbers");
        s.R = Mat3::Zero();
        for (int i = 0; i < 3; ++i)
            s.R(i, i) = as_number(d[i], "measurement_noise.R_diag");
    } else if (noise.contains("R")) {
        const nlohmann::json& m = noise["R"];
        if (!m.is_array() || m.size() != 3)
            throw ScenarioError("field 'measurement_noise.R': expected a 3x3 matrix");
        for (int r = 0; r < 3; ++r) {
            if (!m[r].is_array() || m[r].size() != 3)
                throw ScenarioError("field 'measurement_noise.R': expected a 3x3 matrix");
            for (int c = 0; c < 3; ++c) s.R(r, c) = as_number(m[r][c], "measurement_noise.R");
        }
    } else {
        throw ScenarioError("field 'measurement_noise': needs R_diag or R");
    }

    if (j.contains("enabled_measurements")) {
        const nlohmann::json& kinds = j["enabled_measurements"];
        if (!kinds.is_array())
            throw ScenarioError("field 'enabled_measurements': expected an array");
        MeasurementSelection sel = MeasurementSelection::none();
        for (const auto& k : kinds) {
            if (!k.is_string())
                throw ScenarioError("field 'enabled_measurements': expected strings");
            sel.set(parse_kind(k.get<std::string>(), "enabled_measurements"), true);
        }
        s.selection = sel;
    }

    if (j.contains("noise_model")) s.noise_model = string_field(j, "noise_model", "");
    if (j.contains("neighbor_context")) s.neighbor_context = string_field(j, "neighbor_context", "");
    if (j.contains("notification")) s.notification = string_field(j, "notification", "");
    if (j.contains("init_estimate")) s.init_estimate = string_field(j, "init_estimate", "");

    if (j.contains("topology")) {
        const nlohmann::json& t = j["topology"];
        reject_unknown_keys(t, {"kind", "k"}, "topology");
        s.topology_kind = string_field(t, "kind", "topology");
        if (s.topology_kind == "k_nearest") {
            const nlohmann::json& k = require_field(t, "k", "topology.k");
            if (!k.is_number_integer()) throw ScenarioError("field 'topology.k': expected an integer");
            s.k_nearest = k.get<int>();
        }
    }

    if (j.contains("diffusion")) {
        const nlohmann::json& d = j["diffusion"];
        reject_unknown_keys(d, {"kind", "alpha"}, "diffusion");
        s.diffusion_kind = string_field(d, "kind", "diffusion");
        if (s.diffusion_kind == "self_biased")
            s.diffusion_alpha = number_field(d, "alpha", "diffusion");
    }

    const nlohmann::json& trig = require_field(j, "trigger", "trigger");
    reject_unknown_keys(trig, {"pi_max", "leader"}, "trigger");
    const nlohmann::json& pm = require_field(trig, "pi_max", "trigger.pi_max");
    if (pm.is_string()) {
        if (pm.get<std::string>() != "inf")
            throw ScenarioError("field 'trigger.pi_max': expected a number or \"inf\"");
        s.pi_max = std::numeric_limits<double>::infinity();
    } else {
        s.pi_max = as_number(pm, "trigger.pi_max");
    }
    if (trig.contains("leader")) {
        const nlohmann::json& l = trig["leader"];
        if (l.is_string()) {
            if (l.get<std::string>() != "auto")
                throw ScenarioError("field 'trigger.leader': expected a node id or \"auto\"");
            s.leader = -1;
        } else if (l.is_number_integer()) {
            s.leader = l.get<int>();
            if (s.leader < 0) throw ScenarioError("field 'trigger.leader': node id out of range");
        } else {
            throw ScenarioError("field 'trigger.leader': expected a node id or \"auto\"");
        }
    }

    const nlohmann::json& nodes = require_field(j, "nodes", "nodes");
    if (!nodes.is_array()) throw ScenarioError("field 'nodes': expected an array");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::string where = "nodes[" + std::to_string(i) + "]";
        const nlohmann::json& n = nodes[i];
        reject_unknown_keys(
            n, {"name", "trajectory", "initial_clock", "process_noise", "initial_covariance"},
            where);
        NodeConfig cfg;
        cfg.name = n.contains("name") ? string_field(n, "name", where) : "node" + std::to_string(i);
        cfg.trajectory =
            detail::parse_trajectory(require_field(n, "trajectory", where + ".trajectory"),
                                     where + ".trajectory");
        if (n.contains("initial_clock")) {
            const nlohmann::json& c = n["initial_clock"];
            reject_unknown_keys(c, {"offset", "bias"}, where + ".initial_clock");
            cfg.initial_offset = number_field(c, "offset", where + ".initial_clock");
            cfg.initial_bias = number_field(c, "bias", where + ".initial_clock");
        }
        cfg.process_noise_diag = parse_state_diag(
            require_field(n, "process_noise", where + ".process_noise"), where + ".process_noise");
        cfg.initial_cov_diag =
            parse_state_diag(require_field(n, "initial_covariance", where + ".initial_covariance"),
                             where + ".initial_covariance");
        s.nodes.push_back(std::move(cfg));
    }

    s.validate();
    return s;
}

// Dotted-path override, e.g. "trigger.pi_max=2" or "nodes.3.process_noise.offset=1e-16".
// The value is parsed as JSON when possible and falls back to a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ScenarioError("override '" + assignment + "': expected KEY=VALUE");
    std::string path = assignment.substr(0, eq);
    for (auto& ch : path)
        if (ch == '.') ch = '/';
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    try {
        j[nlohmann::json::json_pointer("/" + path)] = value;
    } catch (const nlohmann::json::exception&) {
        throw ScenarioError("override '" + assignment + "': invalid path");
    }
}

inline Scenario load_scenario(const std::string& path,
                              const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw ScenarioError("scenario file '" + path + "' is not valid JSON");
    for (const auto& o : overrides) apply_override(j, o);
    return scenario_from_json(j);
}

namespace detail {

inline nlohmann::json vec3_to_json(const Vec3& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline nlohmann::json trajectory_to_json(const TrajectoryModel& m) {
    nlohmann::json j;
    j["kind"] = m.kind;
    if (m.kind == "waypoints") {
        nlohmann::json w = nlohmann::json::array();
        for (const auto& p : m.waypoints) w.push_back(vec3_to_json(p));
        j["waypoints"] = std::move(w);
        j["speed"] = m.speed;
    } else {
        j["start"] = vec3_to_json(m.start);
    }
    if (m.kind == "random_walk") {
        j["step_sigma"] = m.step_sigma;
        j["bounds"] = {{"lo", vec3_to_json(m.bounds.lo)}, {"hi", vec3_to_json(m.bounds.hi)}};
    }
    return j;
}

inline nlohmann::json state_diag_to_json(const Vec5& v) {
    return {{"position", v(kIdxPx)}, {"offset", v(kIdxOffset)}, {"bias", v(kIdxBias)}};
}

inline const char* kind_name(MeasurementKind k) {
    switch (k) {
        case MeasurementKind::counter_difference: return "counter_difference";
        case MeasurementKind::single_sided: return "single_sided";
        case MeasurementKind::double_sided: return "double_sided";
    }
    return "unknown";
}

}  // namespace detail

// Round-trip serialization: the emitted document parses back into an equal
// scenario, and its canonical text is what the config hash covers.
inline nlohmann::json scenario_to_json(const Scenario& s) {
    nlohmann::json j;
    j["schema_version"] = s.schema_version;
    j["name"] = s.name;
    j["seed"] = s.seed;
    j["n_steps"] = s.n_steps;
    j["delta_t"] = s.delta_t;
    j["ranging"] = {{"c", s.ranging.c},
                    {"t_rsp1", s.ranging.t_rsp1},
                    {"gamma_bias_coeff", s.ranging.gamma_bias_coeff}};
    const bool diagonal = s.R(0, 1) == 0.0 && s.R(0, 2) == 0.0 && s.R(1, 0) == 0.0 &&
                          s.R(1, 2) == 0.0 && s.R(2, 0) == 0.0 && s.R(2, 1) == 0.0;
    if (diagonal) {
        j["measurement_noise"] = {{"R_diag", {s.R(0, 0), s.R(1, 1), s.R(2, 2)}}};
    } else {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < 3; ++r) rows.push_back({s.R(r, 0), s.R(r, 1), s.R(r, 2)});
        j["measurement_noise"] = {{"R", std::move(rows)}};
    }
    nlohmann::json kinds = nlohmann::json::array();
    for (int k = 0; k < 3; ++k)
        if (s.selection.enabled[k])
            kinds.push_back(detail::kind_name(static_cast<MeasurementKind>(k)));
    j["enabled_measurements"] = std::move(kinds);
    j["noise_model"] = s.noise_model;
    j["neighbor_context"] = s.neighbor_context;
    j["notification"] = s.notification;
    j["init_estimate"] = s.init_estimate;
    j["topology"] = {{"kind", s.topology_kind}};
    if (s.topology_kind == "k_nearest") j["topology"]["k"] = s.k_nearest;
    j["diffusion"] = {{"kind", s.diffusion_kind}};
    if (s.diffusion_kind == "self_biased") j["diffusion"]["alpha"] = s.diffusion_alpha;
    j["trigger"] = nlohmann::json::object();
    if (std::isinf(s.pi_max))
        j["trigger"]["pi_max"] = "inf";
    else
        j["trigger"]["pi_max"] = s.pi_max;
    if (s.leader < 0)
        j["trigger"]["leader"] = "auto";
    else
        j["trigger"]["leader"] = s.leader;
    nlohmann::json nodes = nlohmann::json::array();
    for (const NodeConfig& n : s.nodes) {
        nlohmann::json nj;
        nj["name"] = n.name;
        nj["trajectory"] = detail::trajectory_to_json(n.trajectory);
        nj["initial_clock"] = {{"offset", n.initial_offset}, {"bias", n.initial_bias}};
        nj["process_noise"] = detail::state_diag_to_json(n.process_noise_diag);
        nj["initial_covariance"] = detail::state_diag_to_json(n.initial_cov_diag);
        nodes.push_back(std::move(nj));
    }
    j["nodes"] = std::move(nodes);
    return j;
}

// Canonical dump (sorted keys, fixed spacing) used for the config hash.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

// FNV-1a 64-bit over the canonical scenario text: a stable fingerprint that
// ties output files back to the exact configuration that produced them.
inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t scenario_hash(const Scenario& s) {
    return fnv1a64(canonical_json(scenario_to_json(s)));
}

}  // namespace etdkf
