#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/measurement.hpp"
#include "etdkf/state.hpp"

namespace etdkf {

// Tolerances from the covariance maintenance contract: P is re-symmetrized
// after every update and must stay PSD to within these bounds.
inline constexpr double kCovSymTol = 1e-9;
inline constexpr double kCovEigTol = 1e-9;
inline constexpr double kSolveJitter = 1e-12;

// Trigger rule: fire when tr(W P W^T) exceeds pi_max.
struct TriggerPolicy {
    Eigen::MatrixXd W;
    double pi_max{0.0};

    // W from the position-monitoring setup: selects the first three rows.
    static TriggerPolicy position_trace(double pi_max) {
        TriggerPolicy p;
        p.W = Eigen::MatrixXd::Zero(3, kStateDim);
        p.W(0, kIdxPx) = 1.0;
        p.W(1, kIdxPy) = 1.0;
        p.W(2, kIdxPz) = 1.0;
        p.pi_max = pi_max;
        return p;
    }

    void validate() const {
        if (std::isnan(pi_max) || pi_max < 0.0)
            throw PreconditionError("trigger policy: pi_max must be >= 0");
        if (W.rows() == 0 || W.cols() != kStateDim)
            throw PreconditionError("trigger policy: W must have 5 columns");
        Eigen::FullPivLU<Eigen::MatrixXd> lu(W);
        if (lu.rank() != W.rows())
            throw PreconditionError("trigger policy: W must have full row rank");
    }
};

inline double weighted_trace(const Mat5& P, const Eigen::MatrixXd& W) {
    return (W * P * W.transpose()).trace();
}

inline bool trigger_check(const Mat5& P, const TriggerPolicy& policy) {
    return weighted_trace(P, policy.W) > policy.pi_max;
}

// Post-measurement, pre-diffusion estimate exchanged between neighbors.
struct IntermediateEstimate {
    Vec5 psi{Vec5::Zero()};
    int node_id{-1};
    std::int64_t step{0};
};

// Per-node filter state.  The neighborhood includes the node itself; the
// diffusion weights are the node's row of C, supported on the neighborhood.
struct FilterState {
    NodeState x_hat;
    Mat5 P{Mat5::Identity()};
    int node_id{-1};
    std::vector<int> neighborhood;
    std::map<int, double> diffusion_weights;

    void validate() const {
        if (!x_hat.finite()) throw InvalidStateError("filter state: non-finite estimate");
        if (!P.allFinite()) throw CovarianceCorruptError("filter state: non-finite P");
        if (symmetry_defect(P) > kCovSymTol * (1.0 + P.cwiseAbs().maxCoeff()))
            throw CovarianceCorruptError("filter state: P not symmetric");
        if (min_eigenvalue(P) < -kCovEigTol)
            throw CovarianceCorruptError("filter state: P not PSD");
        double sum = 0.0;
        for (const auto& [id, w] : diffusion_weights) {
            if (w < 0.0) throw TopologyError("filter state: negative diffusion weight");
            if (!std::binary_search(neighborhood.begin(), neighborhood.end(), id))
                throw TopologyError("filter state: diffusion weight outside neighborhood");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw TopologyError("filter state: diffusion weights must sum to 1");
    }
};

// Step 1: x <- F x + u, P <- F P F^T + Q.
inline FilterState time_update(const FilterState& fs, double delta_t, const ProcessNoise& q) {
    if (!fs.P.allFinite() || min_eigenvalue(fs.P) < -kCovEigTol)
        throw CovarianceCorruptError("time_update: prior P is not PSD");
    q.validate();
    const Mat5 f = jacobian_f(fs.x_hat, delta_t);
    FilterState out = fs;
    out.x_hat = NodeState::from_vector(f * fs.x_hat.to_vector() + affine_offset(fs.x_hat, delta_t));
    out.P = symmetrized(f * fs.P * f.transpose() + q.Q);
    return out;
}

// One already-linearized measurement block: y residual, Jacobian, and noise.
// Dimension-generic so synthetic blocks can exercise the update directly.
struct LinearizedBlock {
    Eigen::MatrixXd H;           // m x 5
    Eigen::VectorXd innovation;  // m
    Eigen::MatrixXd R;           // m x m, positive definite
};

// Information-form update over a set of linearized blocks:
//   P^-1 <- P^-1 + sum H^T R^-1 H,  psi = x + P_new sum H^T R^-1 innovation.
//
// Computed in the algebraically identical covariance form (stacked gain with
// a Joseph covariance update; the innovation system is solved after symmetric
// equilibration).  Covariance units keep the problem benign when the
// information matrix spans many orders of magnitude -- nanosecond-grade clock
// rows next to meter-grade ranging rows put P^-1 entries near 1e19, whose
// rounding noise would otherwise drown the weakly informed directions.
inline std::pair<IntermediateEstimate, FilterState> information_update(
    const FilterState& fs, const std::vector<LinearizedBlock>& blocks, std::int64_t step = 0) {
    if (blocks.empty()) throw PreconditionError("measurement update: no measurements");
    Eigen::Index rows = 0;
    for (const auto& b : blocks) {
        if (b.H.cols() != kStateDim)
            throw PreconditionError("measurement update: H must have kStateDim columns");
        if (b.innovation.size() != b.H.rows() || b.R.rows() != b.H.rows() ||
            b.R.cols() != b.H.rows())
            throw PreconditionError("measurement update: block shapes disagree");
        rows += b.H.rows();
    }
    Eigen::MatrixXd h_all(rows, kStateDim);
    Eigen::VectorXd innovation(rows);
    Eigen::MatrixXd r_all = Eigen::MatrixXd::Zero(rows, rows);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        const Eigen::Index m = b.H.rows();
        h_all.middleRows(at, m) = b.H;
        innovation.segment(at, m) = b.innovation;
        r_all.block(at, at, m, m) = b.R;
        at += m;
    }

    const Eigen::MatrixXd pht = fs.P * h_all.transpose();
    const Eigen::MatrixXd s = symmetrized(Eigen::MatrixXd(h_all * pht + r_all));
    Eigen::VectorXd scale = s.diagonal().cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i)
        if (!(scale(i) > 0.0)) scale(i) = 1.0;
    const Eigen::VectorXd inv_scale = scale.cwiseInverse();
    const Eigen::MatrixXd s_eq =
        symmetrized(Eigen::MatrixXd(inv_scale.asDiagonal() * s * inv_scale.asDiagonal()));
    // gain = P H^T S^-1, assembled through the equilibrated system.
    const Eigen::MatrixXd rhs = inv_scale.asDiagonal() * pht.transpose();
    const Eigen::MatrixXd gain =
        (inv_scale.asDiagonal() * spd_solve(s_eq, rhs, kSolveJitter)).transpose();

    const Mat5 ikh = Mat5::Identity() - gain * h_all;
    FilterState out = fs;
    out.P = symmetrized(ikh * fs.P * ikh.transpose() + gain * r_all * gain.transpose());
    IntermediateEstimate psi;
    psi.psi = fs.x_hat.to_vector() + gain * innovation;
    psi.node_id = fs.node_id;
    psi.step = step;
    out.x_hat = NodeState::from_vector(psi.psi);
    return {psi, out};
}

// A received measurement plus the receiver's current estimate of the sender,
// which anchors the linearization of h.  R_override supplies a per-edge noise
// matrix; by default all edges share one R.
struct MeasurementInput {
    Measurement measurement;
    NodeState neighbor_estimate;
    std::optional<Mat3> R_override;
};

// Step 2: information-form measurement update over all received measurements.
inline std::pair<IntermediateEstimate, FilterState> measurement_update(
    const FilterState& fs, const std::vector<MeasurementInput>& inputs,
    const MeasurementNoise& shared_noise, const RangingParams& params,
    const MeasurementSelection& selection = MeasurementSelection::all(),
    std::int64_t step = 0) {
    if (inputs.empty()) throw PreconditionError("measurement update: no measurements");
    if (selection.count() == 0)
        throw PreconditionError("measurement update: no measurement kinds enabled");
    std::vector<LinearizedBlock> blocks;
    blocks.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.measurement.to_node != fs.node_id)
            throw TopologyError("measurement update: measurement not addressed to this node");
        if (in.measurement.from_node == fs.node_id)
            throw TopologyError("measurement update: self measurement");
        if (!in.measurement.finite())
            throw InvalidStateError("measurement update: non-finite measurement");
        LinearizedBlock b;
        b.H = select_rows(jacobian_h(fs.x_hat, in.neighbor_estimate, params), selection);
        const Vec3 predicted = h(fs.x_hat, in.neighbor_estimate, params);
        b.innovation = select_rows(Vec3(in.measurement.to_vector() - predicted), selection);
        MeasurementNoise noise = in.R_override ? MeasurementNoise{*in.R_override} : shared_noise;
        noise.validate();
        b.R = noise.selected(selection);
        blocks.push_back(std::move(b));
    }
    return information_update(fs, blocks, step);
}

// Step 3: convex combination of the exchanged intermediate estimates.
// P is deliberately left untouched.
inline NodeState diffusion_update(const std::map<int, IntermediateEstimate>& psis,
                                  const std::map<int, double>& weights) {
    if (psis.size() != weights.size())
        throw TopologyError("diffusion update: weight/psi key mismatch");
    Vec5 combined = Vec5::Zero();
    double sum = 0.0;
    for (const auto& [id, w] : weights) {
        auto it = psis.find(id);
        if (it == psis.end()) throw TopologyError("diffusion update: weight/psi key mismatch");
        if (w < 0.0) throw TopologyError("diffusion update: weights must be nonnegative");
        combined += w * it->second.psi;
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw TopologyError("diffusion update: weights must sum to 1");
    return NodeState::from_vector(combined);
}

struct StepResult {
    FilterState state;
    std::optional<IntermediateEstimate> shared_psi;  // set only when triggered
};

// One full filter step.  The time update always runs; measurement and
// diffusion run only when `triggered`.  `psis_from_neighbors` holds the
// intermediate estimates received this step (own node excluded; it is
// inserted internally).
inline StepResult step(const FilterState& fs, double delta_t, const ProcessNoise& q,
                       bool triggered, const std::vector<MeasurementInput>& measurements,
                       const MeasurementNoise& noise, const RangingParams& params,
                       const std::map<int, IntermediateEstimate>& psis_from_neighbors,
                       const MeasurementSelection& selection = MeasurementSelection::all(),
                       std::int64_t step_index = 0) {
    FilterState predicted = time_update(fs, delta_t, q);
    if (!triggered) return {std::move(predicted), std::nullopt};
    auto [psi, updated] = measurement_update(predicted, measurements, noise, params,
                                             selection, step_index);
    std::map<int, IntermediateEstimate> psis = psis_from_neighbors;
    if (psis.count(fs.node_id) != 0)
        throw TopologyError("step: psis_from_neighbors must not contain the node itself");
    psis.emplace(fs.node_id, psi);
    updated.x_hat = diffusion_update(psis, updated.diffusion_weights);
    return {std::move(updated), psi};
}

}  // namespace etdkf
