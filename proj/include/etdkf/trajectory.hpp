#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "etdkf/errors.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/rng.hpp"

namespace etdkf {

// Axis-aligned box with reflecting walls, matching the indoor test volume.
struct Bounds {
    Vec3 lo{0.0, 0.0, 0.0};
    Vec3 hi{10.0, 9.0, 2.5};

    void validate() const {
        for (int i = 0; i < 3; ++i)
            if (!(lo(i) < hi(i))) throw PreconditionError("bounds: lo must be below hi");
    }

    // Fold a coordinate back into [lo, hi] as if bouncing off the walls.
    double reflect(double x, int axis) const {
        const double a = lo(axis), b = hi(axis);
        const double width = b - a;
        double y = std::fmod(x - a, 2.0 * width);
        if (y < 0.0) y += 2.0 * width;
        return a + (y <= width ? y : 2.0 * width - y);
    }
};

struct TrajectoryModel {
    std::string kind{"static"};  // static | random_walk | waypoints
    Vec3 start{Vec3::Zero()};    // static position / random-walk origin
    double step_sigma{0.0};      // random_walk: per-axis stddev per step, meters
    Bounds bounds;               // random_walk reflection box
    std::vector<Vec3> waypoints; // waypoints: polyline vertices
    double speed{0.0};           // waypoints: meters per second along the path

    void validate() const {
        if (kind == "static") return;
        if (kind == "random_walk") {
            if (step_sigma < 0.0) throw PreconditionError("trajectory: step_sigma must be >= 0");
            bounds.validate();
            return;
        }
        if (kind == "waypoints") {
            if (waypoints.size() < 2)
                throw PreconditionError("trajectory: waypoints needs at least 2 vertices");
            if (!(speed > 0.0)) throw PreconditionError("trajectory: speed must be > 0");
            return;
        }
        throw PreconditionError("trajectory: unknown kind '" + kind + "'");
    }
};

// Position sequence for step boundaries 0..n_steps inclusive.  Waypoint paths
// are traversed at constant speed and hold the final vertex once exhausted;
// random walks reflect at the box walls.
inline std::vector<Vec3> generate_trajectory(const TrajectoryModel& model, int n_steps,
                                             double delta_t, Prng& rng) {
    if (n_steps < 1) throw PreconditionError("trajectory: n_steps must be >= 1");
    if (!(delta_t > 0.0)) throw PreconditionError("trajectory: delta_t must be > 0");
    model.validate();
    std::vector<Vec3> out;
    out.reserve(n_steps + 1);
    if (model.kind == "static") {
        out.assign(n_steps + 1, model.start);
        return out;
    }
    if (model.kind == "random_walk") {
        Vec3 pos = model.start;
        for (int i = 0; i < 3; ++i) pos(i) = model.bounds.reflect(pos(i), i);
        out.push_back(pos);
        for (int t = 1; t <= n_steps; ++t) {
            for (int i = 0; i < 3; ++i)
                pos(i) = model.bounds.reflect(pos(i) + model.step_sigma * standard_normal(rng), i);
            out.push_back(pos);
        }
        return out;
    }
    // waypoints: arc-length parameterization of the polyline
    std::vector<double> cumulative{0.0};
    for (std::size_t i = 1; i < model.waypoints.size(); ++i)
        cumulative.push_back(cumulative.back() +
                             (model.waypoints[i] - model.waypoints[i - 1]).norm());
    const double total = cumulative.back();
    for (int t = 0; t <= n_steps; ++t) {
        double s = std::min(model.speed * delta_t * t, total);
        std::size_t seg = 1;
        while (seg + 1 < cumulative.size() && cumulative[seg] < s) ++seg;
        const double len = cumulative[seg] - cumulative[seg - 1];
        const double frac = len > 0.0 ? (s - cumulative[seg - 1]) / len : 0.0;
        out.push_back(model.waypoints[seg - 1] +
                      frac * (model.waypoints[seg] - model.waypoints[seg - 1]));
    }
    return out;
}

}  // namespace etdkf
