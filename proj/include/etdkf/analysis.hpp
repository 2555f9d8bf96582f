#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "etdkf/errors.hpp"
#include "etdkf/filter.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/parallel.hpp"
#include "etdkf/runlog.hpp"
#include "etdkf/scenario.hpp"
#include "etdkf/simulator.hpp"

namespace etdkf {

// Scalars of the covariance bound: gamma is a noise ceiling with R <= gamma*I,
// beta converts it into a per-measurement information floor, and
// neighborhood_size counts the measurement terms a node sums per update.
struct BoundParams {
    double gamma{0.0};
    double beta{0.0};
    int neighborhood_size{0};

    void validate() const {
        if (!(gamma > 0.0)) throw PreconditionError("bound params: gamma must be > 0");
        if (!(beta > 0.0)) throw PreconditionError("bound params: beta must be > 0");
        if (neighborhood_size < 1)
            throw PreconditionError("bound params: neighborhood size must be >= 1");
    }
};

inline double compute_gamma(const Mat3& R) { return max_eigenvalue(R); }

// Tightest scalar with (1/beta) I <= (1/gamma) diag(c^2,1,1,1,(c^2/4)T^2+coeff^2).
inline double compute_beta(double gamma, double c, double t_rsp1, double gamma_bias_coeff) {
    if (!(gamma > 0.0)) throw PreconditionError("compute_beta: gamma must be > 0");
    const double bias_entry =
        (c * c / 4.0) * t_rsp1 * t_rsp1 + gamma_bias_coeff * gamma_bias_coeff;
    const double smallest = std::min({c * c, 1.0, bias_entry});
    if (!(smallest > 0.0))
        throw BoundUndefinedError("compute_beta: zero diagonal entry (t_rsp1 and "
                                  "gamma_bias_coeff both zero?)");
    return gamma / smallest;
}

inline BoundParams compute_bound_params(const Mat3& R, const RangingParams& params,
                                        int neighborhood_size) {
    BoundParams b;
    b.gamma = compute_gamma(R);
    b.beta = compute_beta(b.gamma, params.c, params.t_rsp1, params.gamma_bias_coeff);
    b.neighborhood_size = neighborhood_size;
    b.validate();
    return b;
}

// Bound-side measurement update: P^-1 <- P^-1 + (N_k/beta) I.  Alternated with
// the ordinary time update it dominates the filter covariance from the same
// initialization, provided the scenario geometry actually delivers the
// per-neighbor information floor (see information_floor_margin).
inline Mat5 covariance_upper_bound_step(const Mat5& p_bound, int n_k, double beta) {
    if (n_k < 0) throw PreconditionError("covariance bound: N_k must be >= 0");
    if (!(beta > 0.0)) throw PreconditionError("covariance bound: beta must be > 0");
    const Mat5 identity = Mat5::Identity();
    Mat5 info = symmetrized(spd_solve(p_bound, identity, kSolveJitter));
    info += (static_cast<double>(n_k) / beta) * identity;
    return symmetrized(spd_solve(info, identity, kSolveJitter));
}

// Measured applicability margin of the bound at one update: the ratio
// lambda_min(sum H^T R^-1 H) / (N_k/beta).  Values >= 1 mean the real update
// carried at least as much information in every direction as the bound's
// replacement term assumes.
inline double information_floor_margin(const Mat5& information_sum, int n_k, double beta) {
    if (n_k < 1) throw PreconditionError("information floor: N_k must be >= 1");
    return jacobi_min_eigenvalue(information_sum) * beta / static_cast<double>(n_k);
}

// Largest possible number of steps between consecutive triggered steps:
// ceil((pi_max - 3 beta / N_k) / tr(W Q W^T)), clamped to at least 1.
inline int max_inter_trigger_interval(double pi_max, double beta, int n_k, const Mat5& Q,
                                      const Eigen::MatrixXd& W) {
    if (n_k < 1) throw PreconditionError("trigger interval: N_k must be >= 1");
    if (!(beta > 0.0)) throw PreconditionError("trigger interval: beta must be > 0");
    if (std::isinf(pi_max))
        throw BoundInfiniteError("trigger interval: pi_max is infinite, no finite bound");
    const double q_trace = (W * Q * W.transpose()).trace();
    if (!(q_trace > 0.0))
        throw BoundInfiniteError("trigger interval: tr(WQW^T) = 0, bound is infinite");
    const double floor_trace = 3.0 * beta / static_cast<double>(n_k);
    if (pi_max <= floor_trace) return 1;
    return std::max(1, static_cast<int>(std::ceil((pi_max - floor_trace) / q_trace)));
}

// 5N x 5N second moment of the stacked estimation errors.
struct GlobalCovariance {
    Eigen::MatrixXd Sigma;

    void validate() const {
        if (Sigma.rows() != Sigma.cols() || Sigma.rows() % kStateDim != 0)
            throw PreconditionError("global covariance: size must be a multiple of 5");
        if (!Sigma.allFinite()) throw CovarianceCorruptError("global covariance: non-finite");
        const double scale = 1.0 + Sigma.cwiseAbs().maxCoeff();
        if ((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
            throw CovarianceCorruptError("global covariance: not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            0.5 * (Sigma + Sigma.transpose()), Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-9 * scale)
            throw CovarianceCorruptError("global covariance: not PSD");
    }
};

namespace detail {

inline Eigen::MatrixXd kron_identity(const Eigen::MatrixXd& a, int block) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() * block, a.cols() * block);
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c)
            if (a(r, c) != 0.0)
                out.block(r * block, c * block, block, block) =
                    a(r, c) * Eigen::MatrixXd::Identity(block, block);
    return out;
}

inline void require_blocks(std::size_t n, std::size_t got, const char* what) {
    if (got != n)
        throw PreconditionError(std::string("global covariance: expected one ") + what +
                                " block per node");
}

}  // namespace detail

// Stacked time update: Sigma <- F Sigma F^* + Q with block-diagonal F and Q.
inline Eigen::MatrixXd global_sigma_time_update(const Eigen::MatrixXd& sigma,
                                                const std::vector<Mat5>& f_blocks,
                                                const std::vector<Mat5>& q_blocks) {
    const std::size_t n = f_blocks.size();
    detail::require_blocks(n, q_blocks.size(), "Q");
    if (sigma.rows() != static_cast<Eigen::Index>(n * kStateDim) || sigma.rows() != sigma.cols())
        throw PreconditionError("global covariance: Sigma size mismatch");
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(sigma.rows(), sigma.cols());
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(sigma.rows(), sigma.cols());
    for (std::size_t k = 0; k < n; ++k) {
        f.block(k * kStateDim, k * kStateDim, kStateDim, kStateDim) = f_blocks[k];
        q.block(k * kStateDim, k * kStateDim, kStateDim, kStateDim) = q_blocks[k];
    }
    Eigen::MatrixXd out = f * sigma * f.transpose() + q;
    return 0.5 * (out + out.transpose());
}

// Stacked measurement update:
//   Sigma <- P+ P-^-1 Sigma P-^-1 P+  +  P+ L^T H^* R^-1 H L P+,
// with P+/P- block-diagonal, H block-diagonal per sender, and L (n x n)
// selecting which senders' terms each node sums.  The shared R expands to a
// block-diagonal over senders.
inline Eigen::MatrixXd global_sigma_measurement_update(const Eigen::MatrixXd& sigma,
                                                       const std::vector<Mat5>& p_post,
                                                       const std::vector<Mat5>& p_prior,
                                                       const std::vector<Eigen::MatrixXd>& h_blocks,
                                                       const Eigen::MatrixXd& L,
                                                       const Eigen::MatrixXd& R) {
    const std::size_t n = p_post.size();
    detail::require_blocks(n, p_prior.size(), "prior covariance");
    detail::require_blocks(n, h_blocks.size(), "measurement");
    if (L.rows() != static_cast<Eigen::Index>(n) || L.cols() != static_cast<Eigen::Index>(n))
        throw PreconditionError("global covariance: L size mismatch");
    if (sigma.rows() != static_cast<Eigen::Index>(n * kStateDim) || sigma.rows() != sigma.cols())
        throw PreconditionError("global covariance: Sigma size mismatch");
    const Eigen::Index rows = h_blocks[0].rows();
    for (const auto& h : h_blocks)
        if (h.rows() != rows || h.cols() != kStateDim)
            throw PreconditionError("global covariance: inconsistent measurement block shape");
    if (R.rows() != rows || R.cols() != rows)
        throw PreconditionError("global covariance: R shape does not match measurement blocks");

    const Mat5 identity = Mat5::Identity();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(sigma.rows(), sigma.cols());
    for (std::size_t k = 0; k < n; ++k) {
        if (min_eigenvalue(p_prior[k]) <= 0.0)
            throw NumericalFailureError("global covariance: singular prior block " +
                                        std::to_string(k));
        const Mat5 prior_inv = symmetrized(spd_solve(p_prior[k], identity, kSolveJitter));
        a.block(k * kStateDim, k * kStateDim, kStateDim, kStateDim) = p_post[k] * prior_inv;
    }

    // X = H L P+ assembled blockwise: X_{l,m} = H_l * L(l,m) * P+_m.
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n * rows, n * kStateDim);
    for (std::size_t l = 0; l < n; ++l)
        for (std::size_t m = 0; m < n; ++m)
            if (L(l, m) != 0.0)
                x.block(l * rows, m * kStateDim, rows, kStateDim) =
                    h_blocks[l] * (L(l, m) * p_post[m]);

    const Eigen::MatrixXd r_inv_x_rows = [&] {
        Eigen::MatrixXd out(x.rows(), x.cols());
        for (std::size_t l = 0; l < n; ++l)
            out.middleRows(l * rows, rows) = spd_solve(R, x.middleRows(l * rows, rows).eval(),
                                                       kSolveJitter);
        return out;
    }();

    Eigen::MatrixXd out = a * sigma * a.transpose() + x.transpose() * r_inv_x_rows;
    return 0.5 * (out + out.transpose());
}

// Stacked diffusion: congruence by C (x) I_5 in the row-stochastic
// convention x_hat_k = sum_j C(k,j) psi_j.
inline Eigen::MatrixXd global_sigma_diffusion_update(const Eigen::MatrixXd& sigma,
                                                     const Eigen::MatrixXd& C) {
    if (sigma.rows() != C.rows() * kStateDim || sigma.rows() != sigma.cols())
        throw PreconditionError("global covariance: Sigma/C size mismatch");
    for (int k = 0; k < C.rows(); ++k) {
        double sum = 0.0;
        for (int j = 0; j < C.cols(); ++j) sum += C(k, j);
        if (std::abs(sum - 1.0) > 1e-9)
            throw PreconditionError("global covariance: C rows must sum to 1");
    }
    const Eigen::MatrixXd big_c = detail::kron_identity(C, kStateDim);
    Eigen::MatrixXd out = big_c * sigma * big_c.transpose();
    return 0.5 * (out + out.transpose());
}

// Monte-Carlo oracle: second moment of the stacked final-step estimation
// errors over independently seeded replicate runs.  Replicates run on a
// bounded pool; the accumulation order is fixed, so the result is
// reproducible regardless of thread scheduling.
inline GlobalCovariance monte_carlo_covariance(const Scenario& sc, int n_runs) {
    if (n_runs < 100) throw PreconditionError("monte carlo: need at least 100 runs");
    sc.validate();
    const int n = sc.n_nodes();
    const int dim = n * kStateDim;
    std::vector<Eigen::VectorXd> errors(static_cast<std::size_t>(n_runs));

    parallel_for_slots(n_runs, [&](int i) {
        Scenario replicate = sc;
        replicate.seed = sc.seed + static_cast<std::uint64_t>(i);
        const RunLog log = simulate(replicate);
        const StepRecord& last = log.steps.back();
        Eigen::VectorXd e(dim);
        for (int k = 0; k < n; ++k)
            e.segment(k * kStateDim, kStateDim) =
                last.nodes[k].truth.to_vector() - last.nodes[k].estimate.to_vector();
        errors[static_cast<std::size_t>(i)] = std::move(e);
    });

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& e : errors) sum.noalias() += e * e.transpose();
    GlobalCovariance out;
    out.Sigma = sum / static_cast<double>(n_runs);
    out.validate();
    return out;
}

// Per-run headline numbers, with savings measured against a paired baseline
// (same scenario and seed at pi_max = 0).
struct RunMetrics {
    double pi_max{0.0};
    double mean_error_m{0.0};
    double std_error_m{0.0};
    std::int64_t total_msgs{0};
    double saved_fraction{0.0};
    std::int64_t triggered_steps{0};
};

inline RunMetrics summarize(const RunLog& log, const RunLog& baseline) {
    if (log.steps.size() != baseline.steps.size())
        throw ComparisonError("summarize: step counts differ");
    if (log.n_nodes != baseline.n_nodes)
        throw ComparisonError("summarize: node counts differ");
    RunMetrics m;
    m.pi_max = log.pi_max;
    m.total_msgs = log.total_msgs();
    m.triggered_steps = log.triggered_steps();
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& s : log.steps) {
        const NodeStepRecord& rec = s.nodes[log.leader];
        const double e = (rec.truth.position - rec.estimate.position).norm();
        sum += e;
        sum_sq += e * e;
    }
    const double count = static_cast<double>(log.steps.size());
    m.mean_error_m = sum / count;
    m.std_error_m = std::sqrt(std::max(0.0, sum_sq / count - m.mean_error_m * m.mean_error_m));
    const std::int64_t base = baseline.total_msgs();
    if (base > 0) {
        m.saved_fraction = 1.0 - static_cast<double>(m.total_msgs) / static_cast<double>(base);
        if (m.saved_fraction < -1e-12)
            throw ComparisonError("summarize: baseline carries fewer messages than the run");
        m.saved_fraction = std::clamp(m.saved_fraction, 0.0, 1.0);
    }
    return m;
}

}  // namespace etdkf
