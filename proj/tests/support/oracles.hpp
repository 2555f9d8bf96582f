#pragma once

// Independent reference implementations the test suite checks the library
// against.  Nothing here reuses library update code: the EKF oracle is the
// plain textbook gain form with a Joseph covariance update, and derivatives
// come from central finite differences.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

// Central finite differences of a vector-valued function, one column per
// perturbed input coordinate.  Step size scales with the coordinate.
inline Eigen::MatrixXd finite_difference_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double rel_step = 1e-5) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * (1.0 + std::abs(x(i)));
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

// Textbook extended Kalman filter in gain form.  The linearization is
// supplied by the caller, so the same class serves linear and linearized
// problems.
struct GainFormEkf {
    Eigen::VectorXd x;
    Eigen::MatrixXd P;

    void predict(const Eigen::MatrixXd& F, const Eigen::VectorXd& offset,
                 const Eigen::MatrixXd& Q) {
        x = F * x + offset;
        P = F * P * F.transpose() + Q;
        P = 0.5 * (P + P.transpose());
    }

    // Measurement update with gain K = P H^T (H P H^T + R)^-1 and the Joseph
    // covariance form.  `innovation` is y - h(x).
    void update(const Eigen::MatrixXd& H, const Eigen::VectorXd& innovation,
                const Eigen::MatrixXd& R) {
        const Eigen::MatrixXd S = H * P * H.transpose() + R;
        const Eigen::MatrixXd K = P * H.transpose() * S.inverse();
        x = x + K * innovation;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P.rows(), P.cols());
        const Eigen::MatrixXd A = I - K * H;
        P = A * P * A.transpose() + K * R * K.transpose();
        P = 0.5 * (P + P.transpose());
    }
};

// Stacks per-sensor blocks into one measurement for the oracle.
struct StackedMeasurement {
    Eigen::MatrixXd H;
    Eigen::VectorXd innovation;
    Eigen::MatrixXd R;
};

inline StackedMeasurement stack(const std::vector<Eigen::MatrixXd>& hs,
                                const std::vector<Eigen::VectorXd>& innovations,
                                const std::vector<Eigen::MatrixXd>& rs) {
    Eigen::Index rows = 0;
    for (const auto& h : hs) rows += h.rows();
    StackedMeasurement out;
    out.H = Eigen::MatrixXd::Zero(rows, hs[0].cols());
    out.innovation = Eigen::VectorXd::Zero(rows);
    out.R = Eigen::MatrixXd::Zero(rows, rows);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        out.H.middleRows(at, hs[i].rows()) = hs[i];
        out.innovation.segment(at, innovations[i].size()) = innovations[i];
        out.R.block(at, at, rs[i].rows(), rs[i].cols()) = rs[i];
        at += hs[i].rows();
    }
    return out;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace oracles
