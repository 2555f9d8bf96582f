#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "etdkf/analysis.hpp"
#include "etdkf/errors.hpp"
#include "etdkf/parallel.hpp"
#include "etdkf/runlog.hpp"
#include "etdkf/scenario.hpp"
#include "etdkf/simulator.hpp"

namespace etdkf {

// Communication/accuracy trade-off study: the same scenario swept over
// trigger thresholds, several seeds per threshold.
struct SweepSpec {
    std::vector<double> thresholds;
    int seeds_per_point{5};

    void validate() const {
        if (thresholds.empty()) throw PreconditionError("sweep: need at least one threshold");
        if (seeds_per_point < 1) throw PreconditionError("sweep: need at least one seed");
        for (double t : thresholds)
            if (std::isnan(t) || t < 0.0)
                throw PreconditionError("sweep: thresholds must be >= 0");
    }
};

// One output row: per-seed runs at this threshold aggregated.  msgs_total and
// mean_err_m are means over seeds; saved_frac averages the per-seed savings
// against the paired pi_max = 0 run (same seed); std_err_m is the spread of
// the per-run mean errors across seeds.
struct SweepRow {
    double pi_max{0.0};
    int seed_count{0};
    double msgs_total{0.0};
    double saved_frac{0.0};
    double mean_err_m{0.0};
    double std_err_m{0.0};
};

namespace detail {

struct SweepPoint {
    std::int64_t msgs{0};
    double mean_err{0.0};
};

}  // namespace detail

// Runs the full grid (thresholds x seeds) on a bounded pool.  A pi_max = 0
// baseline column is always included — prepended when absent — because the
// saved fraction is defined against it.  Rows come back sorted by threshold.
inline std::vector<SweepRow> run_sweep(const Scenario& base, const SweepSpec& spec) {
    spec.validate();
    base.validate();
    std::vector<double> thresholds = spec.thresholds;
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    if (thresholds.front() != 0.0) thresholds.insert(thresholds.begin(), 0.0);

    const int n_thresholds = static_cast<int>(thresholds.size());
    const int seeds = spec.seeds_per_point;
    const int n_jobs = n_thresholds * seeds;
    std::vector<detail::SweepPoint> points(static_cast<std::size_t>(n_jobs));

    parallel_for_slots(n_jobs, [&](int slot) {
        const int ti = slot / seeds;
        const int si = slot % seeds;
        Scenario sc = base;
        sc.pi_max = thresholds[static_cast<std::size_t>(ti)];
        sc.seed = base.seed + static_cast<std::uint64_t>(si);
        const RunLog log = simulate(sc);
        detail::SweepPoint& p = points[static_cast<std::size_t>(slot)];
        p.msgs = log.total_msgs();
        double sum = 0.0;
        for (const auto& s : log.steps) {
            const NodeStepRecord& rec = s.nodes[log.leader];
            sum += (rec.truth.position - rec.estimate.position).norm();
        }
        p.mean_err = sum / static_cast<double>(log.steps.size());
    });

    std::vector<SweepRow> rows;
    rows.reserve(thresholds.size());
    for (int ti = 0; ti < n_thresholds; ++ti) {
        SweepRow row;
        row.pi_max = thresholds[static_cast<std::size_t>(ti)];
        row.seed_count = seeds;
        double msgs_sum = 0.0, err_sum = 0.0, err_sq = 0.0, saved_sum = 0.0;
        for (int si = 0; si < seeds; ++si) {
            const auto& p = points[static_cast<std::size_t>(ti * seeds + si)];
            const auto& baseline = points[static_cast<std::size_t>(si)];  // pi_max = 0 row
            msgs_sum += static_cast<double>(p.msgs);
            err_sum += p.mean_err;
            err_sq += p.mean_err * p.mean_err;
            if (baseline.msgs > 0)
                saved_sum += 1.0 - static_cast<double>(p.msgs) / static_cast<double>(baseline.msgs);
        }
        const double count = static_cast<double>(seeds);
        row.msgs_total = msgs_sum / count;
        row.mean_err_m = err_sum / count;
        row.std_err_m = std::sqrt(std::max(0.0, err_sq / count - row.mean_err_m * row.mean_err_m));
        row.saved_frac = saved_sum / count;
        rows.push_back(row);
    }
    return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "pi_max,seed_count,msgs_total,saved_frac,mean_err_m,std_err_m";

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out{kSweepCsvHeader};
    out += '\n';
    for (const SweepRow& r : rows) {
        detail::append_double(out, r.pi_max);
        out += ',';
        detail::append_int(out, r.seed_count);
        out += ',';
        detail::append_double(out, r.msgs_total);
        out += ',';
        detail::append_double(out, r.saved_frac);
        out += ',';
        detail::append_double(out, r.mean_err_m);
        out += ',';
        detail::append_double(out, r.std_err_m);
        out += '\n';
    }
    return out;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << sweep_to_csv(rows);
    if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace etdkf
