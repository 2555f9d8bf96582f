#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/state.hpp"

namespace etdkf {

// Row order in the measurement vector: d, r, Gamma.
enum class MeasurementKind : int {
    counter_difference = 0,  // one message: clock counter difference
    single_sided = 1,        // two messages: single-sided two-way range
    double_sided = 2,        // three messages: double-sided two-way range
};

// Messages exchanged per pairwise measurement of the given kind.
inline int message_cost(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::counter_difference: return 1;
        case MeasurementKind::single_sided: return 2;
        case MeasurementKind::double_sided: return 3;
    }
    throw PreconditionError("message_cost: unknown measurement kind");
}

// Which of the three rows a scenario actually uses.
struct MeasurementSelection {
    std::array<bool, 3> enabled{true, true, true};

    static MeasurementSelection all() { return {}; }

    static MeasurementSelection none() {
        MeasurementSelection s;
        s.enabled = {false, false, false};
        return s;
    }

    bool is_enabled(MeasurementKind k) const { return enabled[static_cast<int>(k)]; }

    void set(MeasurementKind k, bool on) { enabled[static_cast<int>(k)] = on; }

    int count() const {
        int n = 0;
        for (bool e : enabled) n += e ? 1 : 0;
        return n;
    }

    std::vector<int> rows() const {
        std::vector<int> r;
        for (int i = 0; i < 3; ++i)
            if (enabled[i]) r.push_back(i);
        return r;
    }

    int messages_per_exchange() const {
        int n = 0;
        for (int i = 0; i < 3; ++i)
            if (enabled[i]) n += message_cost(static_cast<MeasurementKind>(i));
        return n;
    }
};

// One pairwise measurement from `from_node`, received by `to_node`.
struct Measurement {
    double d{0.0};      // counter difference [s]
    double r{0.0};      // single-sided two-way range [m]
    double gamma{0.0};  // double-sided two-way range [m]
    int from_node{-1};
    int to_node{-1};
    std::int64_t timestamp_step{0};

    Vec3 to_vector() const { return Vec3(d, r, gamma); }

    bool finite() const {
        return std::isfinite(d) && std::isfinite(r) && std::isfinite(gamma);
    }
};

// Measurement noise covariance over the full 3-row vector, units s^2, m^2, m^2.
struct MeasurementNoise {
    Mat3 R{Mat3::Identity()};

    void validate() const {
        if (!R.allFinite()) throw InvalidStateError("measurement noise R has non-finite entries");
        if (symmetry_defect(R) > 1e-12 * (1.0 + R.cwiseAbs().maxCoeff()))
            throw CovarianceCorruptError("measurement noise R is not symmetric");
        if (min_eigenvalue(R) <= 0.0)
            throw CovarianceCorruptError("measurement noise R is not positive definite");
    }

    // Sub-matrix over the enabled rows.
    Eigen::MatrixXd selected(const MeasurementSelection& sel) const {
        const auto rows = sel.rows();
        Eigen::MatrixXd out(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < rows.size(); ++j) out(i, j) = R(rows[i], rows[j]);
        return out;
    }
};

// Two-way-ranging model constants.
struct RangingParams {
    double t_rsp1{1e-3};          // response duration [s]
    double c{299792458.0};        // propagation speed [m/s]
    double gamma_bias_coeff{0.0}; // residual bias sensitivity of the Gamma row [m per s/s]

    void validate() const {
        if (!(t_rsp1 > 0.0)) throw PreconditionError("ranging params: t_rsp1 must be > 0");
        if (!(c > 0.0)) throw PreconditionError("ranging params: c must be > 0");
        if (!std::isfinite(gamma_bias_coeff))
            throw PreconditionError("ranging params: gamma_bias_coeff must be finite");
    }
};

// Distance below which the measurement Jacobian is treated as degenerate.
inline constexpr double kDistanceEpsilon = 1e-6;

// Measurement function: what node k would observe of neighbor j.
//   row d:     (o_j - o_k) + |p_j - p_k| / c
//   row r:     |p_j - p_k| + (c/2)(b_j - b_k) t_rsp1
//   row Gamma: |p_j - p_k| + gamma_bias_coeff (b_j - b_k)
inline Vec3 h(const NodeState& x_k, const NodeState& x_j, const RangingParams& params) {
    if (!x_k.finite() || !x_j.finite()) throw InvalidStateError("h: non-finite state");
    const double dist = (x_j.position - x_k.position).norm();
    const double db = x_j.bias - x_k.bias;
    Vec3 y;
    y(0) = (x_j.offset - x_k.offset) + dist / params.c;
    y(1) = dist + 0.5 * params.c * db * params.t_rsp1;
    y(2) = dist + params.gamma_bias_coeff * db;
    return y;
}

// Analytic Jacobian of h with respect to x_k.  The neighbor state is a
// parameter, not a differentiation variable.
inline Mat35 jacobian_h(const NodeState& x_k, const NodeState& x_j, const RangingParams& params) {
    if (!x_k.finite() || !x_j.finite()) throw InvalidStateError("jacobian_h: non-finite state");
    const Vec3 diff = x_j.position - x_k.position;
    const double dist = diff.norm();
    if (dist < kDistanceEpsilon)
        throw DegenerateGeometryError("jacobian_h: nodes closer than distance epsilon");
    const Vec3 unit = diff / dist;  // d dist / d p_k = -unit
    Mat35 H = Mat35::Zero();
    H.block<1, 3>(0, 0) = -unit.transpose() / params.c;
    H(0, kIdxOffset) = -1.0;
    H.block<1, 3>(1, 0) = -unit.transpose();
    H(1, kIdxBias) = -0.5 * params.c * params.t_rsp1;
    H.block<1, 3>(2, 0) = -unit.transpose();
    H(2, kIdxBias) = -params.gamma_bias_coeff;
    return H;
}

// Rows of a 3x5 Jacobian restricted to the enabled kinds.
inline Eigen::MatrixXd select_rows(const Mat35& H, const MeasurementSelection& sel) {
    const auto rows = sel.rows();
    Eigen::MatrixXd out(rows.size(), kStateDim);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = H.row(rows[i]);
    return out;
}

inline Eigen::VectorXd select_rows(const Vec3& y, const MeasurementSelection& sel) {
    const auto rows = sel.rows();
    Eigen::VectorXd out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out(i) = y(rows[i]);
    return out;
}

// Draws y = h(truth) + v with v ~ N(0, R).  Always consumes exactly three
// standard normal variates so the caller's stream does not depend on R.
template <class URBG>
Measurement simulate_measurement(const NodeState& truth_k, const NodeState& truth_j,
                                 const RangingParams& params, const MeasurementNoise& noise,
                                 URBG& rng) {
    noise.validate();
    std::normal_distribution<double> std_normal(0.0, 1.0);
    Vec3 z;
    for (int i = 0; i < 3; ++i) z(i) = std_normal(rng);
    const Mat3 chol = noise.R.llt().matrixL();
    const Vec3 y = h(truth_k, truth_j, params) + chol * z;
    Measurement m;
    m.d = y(0);
    m.r = y(1);
    m.gamma = y(2);
    return m;
}

}  // namespace etdkf
