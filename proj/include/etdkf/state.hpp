#pragma once

#include <cmath>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"

namespace etdkf {

// Per-node state: 3D position [m], clock offset [s] and clock frequency bias
// [s/s], both relative to the master clock.  Flat ordering is
// [p_x, p_y, p_z, o, b].
struct NodeState {
    Vec3 position{Vec3::Zero()};
    double offset{0.0};
    double bias{0.0};

    Vec5 to_vector() const {
        Vec5 v;
        v << position(0), position(1), position(2), offset, bias;
        return v;
    }

    static NodeState from_vector(const Vec5& v) {
        NodeState s;
        s.position = v.head<3>();
        s.offset = v(kIdxOffset);
        s.bias = v(kIdxBias);
        return s;
    }

    bool finite() const {
        return position.allFinite() && std::isfinite(offset) && std::isfinite(bias);
    }
};

// Process noise covariance for the 5-dim state.  Mixed units on the diagonal:
// m^2 for position, s^2 for offset, (s/s)^2 for bias.
struct ProcessNoise {
    Mat5 Q{Mat5::Zero()};

    // Symmetry to 1e-12 and eigenvalues >= -1e-12.  A zero Q is accepted here;
    // the inter-trigger bound separately requires tr(W Q W^T) > 0.
    void validate() const {
        if (!Q.allFinite()) throw InvalidStateError("process noise Q has non-finite entries");
        if (symmetry_defect(Q) > 1e-12) throw CovarianceCorruptError("process noise Q is not symmetric");
        if (min_eigenvalue(Q) < -1e-12) throw CovarianceCorruptError("process noise Q is not PSD");
    }

    bool is_zero() const { return Q.isZero(0.0); }
};

// Clock propagation over delta_t seconds: position and bias are constant,
// the offset advances by bias * delta_t.
inline NodeState propagate(const NodeState& x, double delta_t) {
    if (!x.finite()) throw InvalidStateError("propagate: non-finite state");
    if (!(delta_t >= 0.0)) throw PreconditionError("propagate: delta_t must be >= 0");
    NodeState out = x;
    out.offset = x.offset + x.bias * delta_t;
    return out;
}

// Jacobian of the process model.  The model is linear, so this is independent
// of the state: identity plus the offset-bias coupling delta_t.
inline Mat5 jacobian_f(const NodeState&, double delta_t) {
    if (!(delta_t >= 0.0)) throw PreconditionError("jacobian_f: delta_t must be >= 0");
    Mat5 f = Mat5::Identity();
    f(kIdxOffset, kIdxBias) = delta_t;
    return f;
}

// Affine remainder f(x) - F x.  Zero for this linear model; computed
// explicitly so the defining identity holds by construction.
inline Vec5 affine_offset(const NodeState& x, double delta_t) {
    if (!x.finite()) throw InvalidStateError("affine_offset: non-finite state");
    const Vec5 v = x.to_vector();
    return propagate(x, delta_t).to_vector() - jacobian_f(x, delta_t) * v;
}

}  // namespace etdkf
