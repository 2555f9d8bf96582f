#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etdkf/errors.hpp"
#include "etdkf/state.hpp"

namespace etdkf {

// runlog.csv column layout, bumped only on breaking changes.
inline constexpr int kRunLogCsvVersion = 1;
inline constexpr const char* kRunLogCsvHeader =
    "step,node,x,y,z,o,b,est_x,est_y,est_z,est_o,est_b,trace,triggered,msgs_step";

struct NodeStepRecord {
    NodeState truth;
    NodeState estimate;       // after the full step
    double trace_prior{0.0};  // tr(W P W^T) right after the time update
    double trace_post{0.0};   // tr(W P W^T) at the end of the step
    std::int64_t msgs_sent{0};
};

struct StepRecord {
    std::int64_t step{0};  // 1-based
    bool triggered{false};
    double leader_trace{0.0};  // the monitored trace the trigger rule saw
    std::vector<NodeStepRecord> nodes;
    std::array<std::int64_t, 3> measurement_msgs{{0, 0, 0}};  // indexed by MeasurementKind
    std::int64_t diffusion_msgs{0};
    std::int64_t notification_msgs{0};

    std::int64_t total_msgs() const {
        return measurement_msgs[0] + measurement_msgs[1] + measurement_msgs[2] +
               diffusion_msgs + notification_msgs;
    }
};

struct RunLog {
    std::string scenario_name;
    std::uint64_t seed{0};
    std::uint64_t config_hash{0};
    int n_nodes{0};
    int leader{0};
    double pi_max{0.0};
    std::vector<StepRecord> steps;

    std::int64_t triggered_steps() const {
        std::int64_t n = 0;
        for (const auto& s : steps) n += s.triggered ? 1 : 0;
        return n;
    }

    std::array<std::int64_t, 3> measurement_totals() const {
        std::array<std::int64_t, 3> t{{0, 0, 0}};
        for (const auto& s : steps)
            for (int k = 0; k < 3; ++k) t[k] += s.measurement_msgs[k];
        return t;
    }

    std::int64_t diffusion_total() const {
        std::int64_t n = 0;
        for (const auto& s : steps) n += s.diffusion_msgs;
        return n;
    }

    std::int64_t notification_total() const {
        std::int64_t n = 0;
        for (const auto& s : steps) n += s.notification_msgs;
        return n;
    }

    std::int64_t total_msgs() const {
        std::int64_t n = 0;
        for (const auto& s : steps) n += s.total_msgs();
        return n;
    }

    // Largest number of steps from one triggered step to the next.
    // 0 when fewer than two steps triggered.
    std::int64_t max_inter_trigger_gap() const {
        std::int64_t best = 0;
        std::int64_t last = -1;
        for (const auto& s : steps) {
            if (!s.triggered) continue;
            if (last >= 0 && s.step - last > best) best = s.step - last;
            last = s.step;
        }
        return best;
    }
};

namespace detail {

// Shortest round-trip decimal form, so reruns produce identical bytes and
// parsers recover the exact double.
inline void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

inline void append_int(std::string& out, std::int64_t v) {
    char buf[24];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

}  // namespace detail

// One row per (step, node).  `trace` is the node's own monitored trace right
// after the time update (the quantity the trigger rule evaluates on the
// leader's row); `msgs_step` counts messages sent by that node in that step.
inline std::string runlog_to_csv(const RunLog& log) {
    std::string out(kRunLogCsvHeader);
    out.push_back('\n');
    for (const auto& s : log.steps) {
        for (std::size_t k = 0; k < s.nodes.size(); ++k) {
            const NodeStepRecord& n = s.nodes[k];
            detail::append_int(out, s.step);
            out.push_back(',');
            detail::append_int(out, static_cast<std::int64_t>(k));
            out.push_back(',');
            for (int i = 0; i < 3; ++i) {
                detail::append_double(out, n.truth.position(i));
                out.push_back(',');
            }
            detail::append_double(out, n.truth.offset);
            out.push_back(',');
            detail::append_double(out, n.truth.bias);
            out.push_back(',');
            for (int i = 0; i < 3; ++i) {
                detail::append_double(out, n.estimate.position(i));
                out.push_back(',');
            }
            detail::append_double(out, n.estimate.offset);
            out.push_back(',');
            detail::append_double(out, n.estimate.bias);
            out.push_back(',');
            detail::append_double(out, n.trace_prior);
            out.push_back(',');
            out.push_back(s.triggered ? '1' : '0');
            out.push_back(',');
            detail::append_int(out, n.msgs_sent);
            out.push_back('\n');
        }
    }
    return out;
}

inline void write_runlog_csv(const RunLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << runlog_to_csv(log);
}

inline nlohmann::json run_summary(const RunLog& log, const std::string& tool_version) {
    const auto meas = log.measurement_totals();
    // Mean and max 3D position error of the monitored (leader) node.
    double sum = 0.0, peak = 0.0;
    for (const auto& s : log.steps) {
        const NodeStepRecord& n = s.nodes[log.leader];
        const double e = (n.truth.position - n.estimate.position).norm();
        sum += e;
        if (e > peak) peak = e;
    }
    const double mean = log.steps.empty() ? 0.0 : sum / static_cast<double>(log.steps.size());
    nlohmann::json j;
    j["csv_version"] = kRunLogCsvVersion;
    j["tool_version"] = tool_version;
    j["scenario"] = log.scenario_name;
    j["seed"] = log.seed;
    j["config_hash"] = log.config_hash;
    j["n_nodes"] = log.n_nodes;
    j["n_steps"] = log.steps.size();
    j["leader"] = log.leader;
    j["pi_max"] = log.pi_max;
    j["triggered_steps"] = log.triggered_steps();
    j["max_inter_trigger_gap"] = log.max_inter_trigger_gap();
    j["messages"] = {{"counter_difference", meas[0]},
                     {"single_sided", meas[1]},
                     {"double_sided", meas[2]},
                     {"diffusion", log.diffusion_total()},
                     {"notification", log.notification_total()},
                     {"total", log.total_msgs()}};
    j["leader_mean_position_error_m"] = mean;
    j["leader_max_position_error_m"] = peak;
    return j;
}

inline void write_run_summary(const RunLog& log, const std::string& tool_version,
                              const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << run_summary(log, tool_version).dump(2) << '\n';
}

}  // namespace etdkf
