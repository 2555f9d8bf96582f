#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "etdkf/errors.hpp"
#include "etdkf/filter.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/measurement.hpp"
#include "etdkf/rng.hpp"
#include "etdkf/runlog.hpp"
#include "etdkf/scenario.hpp"
#include "etdkf/state.hpp"
#include "etdkf/topology.hpp"
#include "etdkf/trajectory.hpp"

namespace etdkf {

// Optional per-phase hooks.  The simulator publishes filter states around
// each update so diagnostics can track covariance histories without the run
// log having to store every matrix.
struct SimulationObserver {
    virtual ~SimulationObserver() = default;
    virtual void on_time_update(std::int64_t /*step*/, int /*node*/,
                                const FilterState& /*after*/) {}
    virtual void on_measurement_update(std::int64_t /*step*/, int /*node*/,
                                       const FilterState& /*prior*/,
                                       const FilterState& /*posterior*/,
                                       const IntermediateEstimate& /*psi*/) {}
    virtual void on_diffusion(std::int64_t /*step*/, int /*node*/,
                              const FilterState& /*before*/, const FilterState& /*after*/) {}
};

// Scenario-level diffusion matrix: metropolis as built by the topology,
// identity (no mixing; the psi exchange still runs and refreshes neighbor
// contexts), or a self-biased blend (1-alpha)I + alpha*Metropolis.
inline Eigen::MatrixXd diffusion_matrix(const Scenario& sc, const Topology& topo) {
    const int n = topo.size();
    if (sc.diffusion_kind == "identity") return Eigen::MatrixXd::Identity(n, n);
    if (sc.diffusion_kind == "self_biased")
        return (1.0 - sc.diffusion_alpha) * Eigen::MatrixXd::Identity(n, n) +
               sc.diffusion_alpha * topo.C;
    return topo.C;
}

inline Topology scenario_topology(const Scenario& sc) {
    std::vector<Vec3> positions;
    positions.reserve(sc.nodes.size());
    for (const auto& n : sc.nodes) positions.push_back(n.initial_truth().position);
    try {
        return build_topology(sc.topology_kind, positions, sc.k_nearest);
    } catch (const Error& e) {
        throw ScenarioError(std::string("field 'topology': ") + e.what());
    }
}

inline int leader_election(const Scenario& sc) { return sc.leader_id(); }

namespace detail {

inline Vec3 draw_measurement_noise(const Mat3& chol, Prng& rng) {
    Vec3 z;
    for (int i = 0; i < 3; ++i) z(i) = standard_normal(rng);
    return chol * z;
}

[[noreturn]] inline void abort_run(std::int64_t step, int node, const Error& e) {
    throw NumericalFailureError("aborted at step " + std::to_string(step) + ", node " +
                                std::to_string(node) + ": " + e.what());
}

}  // namespace detail

// Run one scenario end to end.  Phases per step: propagate truth, time
// update everywhere, leader trigger, then (only when triggered) measurement
// synthesis, measurement updates, psi exchange, diffusion, and message
// accounting.  Identical scenario and seed give an identical RunLog.
inline RunLog simulate(const Scenario& sc, SimulationObserver* observer = nullptr) {
    sc.validate();
    const int n = sc.n_nodes();
    const Topology topo = scenario_topology(sc);
    const Eigen::MatrixXd C = diffusion_matrix(sc, topo);
    const int leader = leader_election(sc);
    const TriggerPolicy policy = TriggerPolicy::position_trace(sc.pi_max);
    policy.validate();
    const MeasurementNoise noise{sc.R};
    noise.validate();
    const Mat3 noise_chol = sc.R.llt().matrixL();

    // Pre-generate every node's position sequence; clock truth evolves below.
    std::vector<std::vector<Vec3>> paths(n);
    for (int k = 0; k < n; ++k) {
        Prng traj_rng = derive_stream(sc.seed, {kStreamTrajectory, static_cast<std::uint32_t>(k)});
        paths[k] = generate_trajectory(sc.nodes[k].trajectory, sc.n_steps, sc.delta_t, traj_rng);
    }

    Prng init_rng = derive_stream(sc.seed, {kStreamInit});
    Prng truth_rng = derive_stream(sc.seed, {kStreamTruth});
    Prng meas_rng = derive_stream(sc.seed, {kStreamMeasurement});

    std::vector<NodeState> truth(n);
    std::vector<FilterState> filters(n);
    std::vector<ProcessNoise> q(n);
    // context[k][j]: node k's working copy of neighbor j's state, used to
    // evaluate h; seeded with the initial estimates, time-propagated every
    // step, replaced by the exchanged psi on triggered steps.
    std::vector<std::map<int, NodeState>> context(n);

    for (int k = 0; k < n; ++k) {
        truth[k] = sc.nodes[k].initial_truth();
        truth[k].position = paths[k][0];
        q[k] = sc.nodes[k].process_noise();

        NodeState est = truth[k];
        if (sc.init_estimate == "prior_draw") {
            Vec5 z;
            for (int i = 0; i < kStateDim; ++i) z(i) = standard_normal(init_rng);
            est = NodeState::from_vector(
                truth[k].to_vector() + sc.nodes[k].initial_cov_diag.cwiseSqrt().cwiseProduct(z));
        }
        filters[k].x_hat = est;
        filters[k].P = sc.nodes[k].initial_covariance();
        filters[k].node_id = k;
        filters[k].neighborhood = topo.neighborhoods[k];
        for (int j : topo.neighborhoods[k]) filters[k].diffusion_weights[j] = C(k, j);
        filters[k].validate();
    }
    for (int k = 0; k < n; ++k)
        for (int j : topo.neighborhoods[k])
            if (j != k) context[k][j] = filters[j].x_hat;

    // Receiver-side message cost of one neighbor exchange, per enabled kind.
    std::int64_t cost_per_exchange = 0;
    for (int m = 0; m < kMeasurementDim; ++m)
        if (sc.selection.enabled[m])
            cost_per_exchange += message_cost(static_cast<MeasurementKind>(m));

    RunLog log;
    log.scenario_name = sc.name;
    log.seed = sc.seed;
    log.config_hash = scenario_hash(sc);
    log.n_nodes = n;
    log.leader = leader;
    log.pi_max = sc.pi_max;
    log.steps.reserve(sc.n_steps);

    for (std::int64_t t = 1; t <= sc.n_steps; ++t) {
        // Truth: positions follow the trajectories; clocks integrate the
        // linear model plus process noise.  Draws happen for every node every
        // step so the truth sequence is invariant across trigger thresholds.
        for (int k = 0; k < n; ++k) {
            const double zo = standard_normal(truth_rng);
            const double zb = standard_normal(truth_rng);
            truth[k].position = paths[k][t];
            truth[k].offset += truth[k].bias * sc.delta_t +
                               std::sqrt(sc.nodes[k].process_noise_diag(kIdxOffset)) * zo;
            truth[k].bias += std::sqrt(sc.nodes[k].process_noise_diag(kIdxBias)) * zb;
        }

        // Stored neighbor snapshots age alongside the real clocks.
        for (int k = 0; k < n; ++k)
            for (auto& [j, state] : context[k]) state = propagate(state, sc.delta_t);

        StepRecord rec;
        rec.step = t;
        rec.nodes.resize(n);

        for (int k = 0; k < n; ++k) {
            try {
                filters[k] = time_update(filters[k], sc.delta_t, q[k]);
            } catch (const Error& e) {
                detail::abort_run(t, k, e);
            }
            rec.nodes[k].trace_prior = weighted_trace(filters[k].P, policy.W);
            if (observer) observer->on_time_update(t, k, filters[k]);
        }
        rec.leader_trace = rec.nodes[leader].trace_prior;
        rec.triggered = trigger_check(filters[leader].P, policy);

        if (rec.triggered) {
            // Per-sender noise: one draw per sender, shared by every receiver
            // of that sender this step.  Per-edge: independent per pair.
            std::vector<Vec3> sender_noise;
            if (sc.noise_model == "per_sender") {
                sender_noise.resize(n);
                for (int j = 0; j < n; ++j)
                    sender_noise[j] = detail::draw_measurement_noise(noise_chol, meas_rng);
            }

            std::map<int, IntermediateEstimate> psis;
            std::vector<FilterState> updated = filters;
            for (int k = 0; k < n; ++k) {
                std::vector<MeasurementInput> inputs;
                for (int j : topo.neighborhoods[k]) {
                    if (j == k) continue;
                    const Vec3 v = sc.noise_model == "per_sender"
                                       ? sender_noise[j]
                                       : detail::draw_measurement_noise(noise_chol, meas_rng);
                    const Vec3 y = h(truth[k], truth[j], sc.ranging) + v;
                    Measurement m;
                    m.d = y(0);
                    m.r = y(1);
                    m.gamma = y(2);
                    m.from_node = j;
                    m.to_node = k;
                    m.timestamp_step = t;
                    MeasurementInput in;
                    in.measurement = m;
                    in.neighbor_estimate =
                        sc.neighbor_context == "truth" ? truth[j] : context[k].at(j);
                    inputs.push_back(std::move(in));
                }
                try {
                    auto [psi, post] =
                        measurement_update(filters[k], inputs, noise, sc.ranging, sc.selection, t);
                    if (observer) observer->on_measurement_update(t, k, filters[k], post, psi);
                    psis[k] = psi;
                    updated[k] = post;
                } catch (const Error& e) {
                    detail::abort_run(t, k, e);
                }
                rec.nodes[k].trace_post = weighted_trace(updated[k].P, policy.W);
            }

            // psi exchange doubles as the neighbor-context refresh.
            for (int k = 0; k < n; ++k)
                for (int j : topo.neighborhoods[k])
                    if (j != k) context[k][j] = NodeState::from_vector(psis[j].psi);

            for (int k = 0; k < n; ++k) {
                std::map<int, IntermediateEstimate> local;
                for (int j : topo.neighborhoods[k]) local[j] = psis[j];
                const FilterState before = updated[k];
                try {
                    updated[k].x_hat = diffusion_update(local, updated[k].diffusion_weights);
                } catch (const Error& e) {
                    detail::abort_run(t, k, e);
                }
                if (observer) observer->on_diffusion(t, k, before, updated[k]);
            }
            filters = std::move(updated);

            for (int k = 0; k < n; ++k) {
                const std::int64_t deg = topo.degree(k);
                rec.nodes[k].msgs_sent += deg * cost_per_exchange + deg;
                rec.diffusion_msgs += deg;
                for (int m = 0; m < kMeasurementDim; ++m)
                    if (sc.selection.enabled[m])
                        rec.measurement_msgs[m] +=
                            deg * message_cost(static_cast<MeasurementKind>(m));
            }
        } else {
            for (int k = 0; k < n; ++k) rec.nodes[k].trace_post = rec.nodes[k].trace_prior;
        }

        const bool notify = sc.notification == "per_step" ||
                            (sc.notification == "per_trigger" && rec.triggered);
        if (notify) {
            rec.notification_msgs = n - 1;
            rec.nodes[leader].msgs_sent += n - 1;
        }

        for (int k = 0; k < n; ++k) {
            rec.nodes[k].truth = truth[k];
            rec.nodes[k].estimate = filters[k].x_hat;
        }
        log.steps.push_back(std::move(rec));
    }
    return log;
}

}  // namespace etdkf
