#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "etdkf/etdkf.hpp"
#include "support/builders.hpp"
#include "support/oracles.hpp"

using namespace etdkf;

namespace {

FilterState make_filter(Prng& rng, int node_id = 0) {
    FilterState fs;
    fs.x_hat = builders::random_state(rng);
    fs.P = builders::spd5(rng);
    fs.node_id = node_id;
    fs.neighborhood = {node_id};
    fs.diffusion_weights = {{node_id, 1.0}};
    return fs;
}

}  // namespace

TEST_CASE("trigger policy monitors the position trace", "[filter]") {
    const TriggerPolicy policy = TriggerPolicy::position_trace(2.0);
    policy.validate();
    REQUIRE(policy.W.rows() == 3);
    REQUIRE(policy.W.cols() == kStateDim);

    Mat5 P = Vec5(1.0, 2.0, 3.0, 100.0, 100.0).asDiagonal();
    REQUIRE(weighted_trace(P, policy.W) == Catch::Approx(6.0));  // clock variances excluded

    SECTION("the trigger is strict") {
        REQUIRE(trigger_check(P, TriggerPolicy::position_trace(5.9)));
        REQUIRE_FALSE(trigger_check(P, TriggerPolicy::position_trace(6.0)));
        REQUIRE_FALSE(trigger_check(P, TriggerPolicy::position_trace(6.1)));
    }
    SECTION("invalid policies rejected") {
        TriggerPolicy bad = policy;
        bad.pi_max = -1.0;
        REQUIRE_THROWS_AS(bad.validate(), PreconditionError);
        bad = policy;
        bad.W = Eigen::MatrixXd::Zero(2, kStateDim);  // rank deficient
        REQUIRE_THROWS_AS(bad.validate(), PreconditionError);
        bad.W = Eigen::MatrixXd::Zero(0, kStateDim);
        REQUIRE_THROWS_AS(bad.validate(), PreconditionError);
        bad.W = Eigen::MatrixXd::Zero(2, 4);
        REQUIRE_THROWS_AS(bad.validate(), PreconditionError);
    }
}

TEST_CASE("filter state validation", "[filter]") {
    Prng rng = derive_stream(21, {1});
    FilterState fs = make_filter(rng);
    fs.validate();

    SECTION("weights must sum to 1") {
        fs.diffusion_weights[0] = 0.9;
        REQUIRE_THROWS_AS(fs.validate(), TopologyError);
    }
    SECTION("weights must live on the neighborhood") {
        fs.diffusion_weights = {{0, 0.5}, {3, 0.5}};
        REQUIRE_THROWS_AS(fs.validate(), TopologyError);
    }
    SECTION("weights must be nonnegative") {
        fs.neighborhood = {0, 1};
        fs.diffusion_weights = {{0, 1.5}, {1, -0.5}};
        REQUIRE_THROWS_AS(fs.validate(), TopologyError);
    }
    SECTION("P must stay symmetric PSD") {
        fs.P(0, 1) += 1.0;
        REQUIRE_THROWS_AS(fs.validate(), CovarianceCorruptError);
        fs.P = -Mat5::Identity();
        REQUIRE_THROWS_AS(fs.validate(), CovarianceCorruptError);
    }
    SECTION("estimate must be finite") {
        fs.x_hat.offset = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(fs.validate(), InvalidStateError);
    }
}

TEST_CASE("time update matches the oracle prediction", "[filter]") {
    Prng rng = derive_stream(22, {1});
    for (int trial = 0; trial < 50; ++trial) {
        FilterState fs = make_filter(rng);
        const double dt = 0.1 + std::abs(standard_normal(rng));
        ProcessNoise q;
        q.Q = builders::spd5(rng, 0.01);

        oracles::GainFormEkf oracle;
        oracle.x = fs.x_hat.to_vector();
        oracle.P = fs.P;
        oracle.predict(jacobian_f(fs.x_hat, dt), affine_offset(fs.x_hat, dt), q.Q);

        const FilterState out = time_update(fs, dt, q);
        REQUIRE((out.x_hat.to_vector() - oracle.x).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((out.P - oracle.P).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(out.node_id == fs.node_id);
    }

    SECTION("corrupt prior rejected") {
        FilterState fs = make_filter(rng);
        fs.P = -Mat5::Identity();
        REQUIRE_THROWS_AS(time_update(fs, 0.1, ProcessNoise{}), CovarianceCorruptError);
    }
    SECTION("invalid Q rejected") {
        FilterState fs = make_filter(rng);
        ProcessNoise q;
        q.Q = Mat5::Identity();
        q.Q(0, 1) = 0.5;
        REQUIRE_THROWS_AS(time_update(fs, 0.1, q), CovarianceCorruptError);
    }
}

TEST_CASE("information update agrees with the gain-form oracle", "[filter]") {
    Prng rng = derive_stream(23, {1});
    for (int trial = 0; trial < 50; ++trial) {
        FilterState fs = make_filter(rng);
        const int n_blocks = 1 + static_cast<int>(std::abs(standard_normal(rng)) * 1.5) % 3;
        std::vector<LinearizedBlock> blocks;
        std::vector<Eigen::MatrixXd> hs, rs;
        std::vector<Eigen::VectorXd> innovations;
        for (int b = 0; b < n_blocks; ++b) {
            const int m = 1 + (trial + b) % 3;
            LinearizedBlock blk;
            blk.H = Eigen::MatrixXd(m, kStateDim);
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < kStateDim; ++c) blk.H(r, c) = standard_normal(rng);
            blk.innovation = Eigen::VectorXd(m);
            for (int r = 0; r < m; ++r) blk.innovation(r) = standard_normal(rng);
            blk.R = builders::spd(rng, m, 0.5);
            hs.push_back(blk.H);
            innovations.push_back(blk.innovation);
            rs.push_back(blk.R);
            blocks.push_back(std::move(blk));
        }

        oracles::GainFormEkf oracle;
        oracle.x = fs.x_hat.to_vector();
        oracle.P = fs.P;
        const oracles::StackedMeasurement stacked = oracles::stack(hs, innovations, rs);
        oracle.update(stacked.H, stacked.innovation, stacked.R);

        const auto [psi, out] = information_update(fs, blocks, 7);
        const double x_scale = std::max(1.0, oracle.x.norm());
        const double p_scale = std::max(1.0, oracle.P.norm());
        REQUIRE((psi.psi - oracle.x).norm() / x_scale < 1e-10);
        REQUIRE((out.P - oracle.P).norm() / p_scale < 1e-10);
        REQUIRE(out.x_hat.to_vector() == psi.psi);
        REQUIRE(psi.node_id == fs.node_id);
        REQUIRE(psi.step == 7);
    }

    SECTION("no blocks rejected") {
        FilterState fs = make_filter(rng);
        REQUIRE_THROWS_AS(information_update(fs, {}), PreconditionError);
    }
}

TEST_CASE("measurement update wraps the information update", "[filter]") {
    Prng rng = derive_stream(24, {1});
    RangingParams params;
    params.c = 2.0;
    params.t_rsp1 = 0.5;
    params.gamma_bias_coeff = 0.3;
    MeasurementNoise noise;
    noise.R = Vec3(0.01, 0.04, 0.09).asDiagonal();

    FilterState fs = make_filter(rng, 1);
    NodeState sender = builders::random_state(rng);
    sender.position = fs.x_hat.position + Vec3(3.0, 1.0, 0.5);

    Measurement m;
    const Vec3 y = h(fs.x_hat, sender, params) + Vec3(0.01, -0.02, 0.03);
    m.d = y(0);
    m.r = y(1);
    m.gamma = y(2);
    m.from_node = 0;
    m.to_node = 1;

    MeasurementInput input;
    input.measurement = m;
    input.neighbor_estimate = sender;

    SECTION("equals a manually linearized information update") {
        LinearizedBlock blk;
        blk.H = select_rows(jacobian_h(fs.x_hat, sender, params), MeasurementSelection::all());
        blk.innovation = Vec3(0.01, -0.02, 0.03);
        blk.R = noise.R;
        const auto [psi_manual, out_manual] = information_update(fs, {blk}, 3);
        const auto [psi, out] = measurement_update(fs, {input}, noise, params,
                                                   MeasurementSelection::all(), 3);
        REQUIRE((psi.psi - psi_manual.psi).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((out.P - out_manual.P).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("an exact prediction leaves the estimate in place") {
        Measurement exact = m;
        const Vec3 clean = h(fs.x_hat, sender, params);
        exact.d = clean(0);
        exact.r = clean(1);
        exact.gamma = clean(2);
        MeasurementInput in2;
        in2.measurement = exact;
        in2.neighbor_estimate = sender;
        const auto [psi, out] = measurement_update(fs, {in2}, noise, params);
        REQUIRE((psi.psi - fs.x_hat.to_vector()).cwiseAbs().maxCoeff() < 1e-12);
        // ... but the covariance still shrinks.
        REQUIRE(weighted_trace(out.P, TriggerPolicy::position_trace(0).W) <
                weighted_trace(fs.P, TriggerPolicy::position_trace(0).W));
    }
    SECTION("per-edge noise override changes the result") {
        MeasurementInput overridden = input;
        overridden.R_override = Mat3(Vec3(1.0, 1.0, 1.0).asDiagonal());
        const auto [psi_a, out_a] = measurement_update(fs, {input}, noise, params);
        const auto [psi_b, out_b] = measurement_update(fs, {overridden}, noise, params);
        REQUIRE((psi_a.psi - psi_b.psi).cwiseAbs().maxCoeff() > 1e-9);
        REQUIRE((out_a.P - out_b.P).cwiseAbs().maxCoeff() > 1e-9);
    }
    SECTION("selection restricts the update to the enabled rows") {
        MeasurementSelection only_gamma = MeasurementSelection::none();
        only_gamma.set(MeasurementKind::double_sided, true);
        LinearizedBlock blk;
        blk.H = select_rows(jacobian_h(fs.x_hat, sender, params), only_gamma);
        blk.innovation = Eigen::VectorXd::Constant(1, 0.03);
        blk.R = noise.selected(only_gamma);
        const auto [psi_manual, out_manual] = information_update(fs, {blk});
        const auto [psi, out] = measurement_update(fs, {input}, noise, params, only_gamma);
        REQUIRE((psi.psi - psi_manual.psi).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((out.P - out_manual.P).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("routing violations rejected") {
        MeasurementInput wrong = input;
        wrong.measurement.to_node = 0;
        REQUIRE_THROWS_AS(measurement_update(fs, {wrong}, noise, params), TopologyError);
        wrong = input;
        wrong.measurement.from_node = 1;
        wrong.measurement.to_node = 1;
        REQUIRE_THROWS_AS(measurement_update(fs, {wrong}, noise, params), TopologyError);
    }
    SECTION("non-finite measurement rejected") {
        MeasurementInput bad = input;
        bad.measurement.r = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(measurement_update(fs, {bad}, noise, params), InvalidStateError);
    }
    SECTION("empty selection and empty input rejected") {
        REQUIRE_THROWS_AS(measurement_update(fs, {}, noise, params), PreconditionError);
        REQUIRE_THROWS_AS(
            measurement_update(fs, {input}, noise, params, MeasurementSelection::none()),
            PreconditionError);
    }
}

TEST_CASE("diffusion update is a checked convex combination", "[filter]") {
    IntermediateEstimate p0, p1;
    p0.psi << 1.0, 2.0, 3.0, 4.0, 5.0;
    p0.node_id = 0;
    p1.psi << 3.0, 2.0, 1.0, 0.0, -1.0;
    p1.node_id = 1;
    std::map<int, IntermediateEstimate> psis{{0, p0}, {1, p1}};

    SECTION("midpoint") {
        const NodeState out = diffusion_update(psis, {{0, 0.5}, {1, 0.5}});
        REQUIRE(out.to_vector() == Vec5(2.0, 2.0, 2.0, 2.0, 2.0));
    }
    SECTION("identity weight returns the own estimate") {
        const NodeState out = diffusion_update({{0, p0}}, {{0, 1.0}});
        REQUIRE(out.to_vector() == p0.psi);
    }
    SECTION("keys must match exactly") {
        REQUIRE_THROWS_AS(diffusion_update(psis, {{0, 1.0}}), TopologyError);
        REQUIRE_THROWS_AS(diffusion_update(psis, {{0, 0.5}, {2, 0.5}}), TopologyError);
    }
    SECTION("weights must be a convex combination") {
        REQUIRE_THROWS_AS(diffusion_update(psis, {{0, 0.7}, {1, 0.7}}), TopologyError);
        REQUIRE_THROWS_AS(diffusion_update(psis, {{0, 1.5}, {1, -0.5}}), TopologyError);
    }
}

TEST_CASE("full step composes the three phases", "[filter]") {
    Prng rng = derive_stream(25, {1});
    RangingParams params;
    params.c = 2.0;
    params.t_rsp1 = 0.5;
    params.gamma_bias_coeff = 0.3;
    MeasurementNoise noise;
    noise.R = Vec3(0.01, 0.04, 0.09).asDiagonal();
    ProcessNoise q;
    q.Q = builders::spd5(rng, 0.001);
    const double dt = 0.2;

    FilterState fs = make_filter(rng, 0);
    fs.neighborhood = {0, 1};
    fs.diffusion_weights = {{0, 0.6}, {1, 0.4}};

    NodeState sender = builders::random_state(rng);
    sender.position = fs.x_hat.position + Vec3(2.0, -1.0, 1.0);
    const FilterState predicted = time_update(fs, dt, q);
    Measurement m;
    const Vec3 y = h(predicted.x_hat, sender, params) + Vec3(0.02, 0.01, -0.01);
    m.d = y(0);
    m.r = y(1);
    m.gamma = y(2);
    m.from_node = 1;
    m.to_node = 0;
    MeasurementInput input;
    input.measurement = m;
    input.neighbor_estimate = sender;

    IntermediateEstimate neighbor_psi;
    neighbor_psi.psi = sender.to_vector();
    neighbor_psi.node_id = 1;

    SECTION("untriggered step is the bare time update") {
        const StepResult out = step(fs, dt, q, false, {input}, noise, params, {{1, neighbor_psi}});
        REQUIRE_FALSE(out.shared_psi.has_value());
        REQUIRE((out.state.P - predicted.P).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(out.state.x_hat.to_vector() == predicted.x_hat.to_vector());
    }
    SECTION("triggered step equals the manual composition") {
        const auto [psi, post] = measurement_update(predicted, {input}, noise, params,
                                                    MeasurementSelection::all(), 9);
        std::map<int, IntermediateEstimate> psis{{0, psi}, {1, neighbor_psi}};
        const NodeState combined = diffusion_update(psis, fs.diffusion_weights);

        const StepResult out = step(fs, dt, q, true, {input}, noise, params, {{1, neighbor_psi}},
                                    MeasurementSelection::all(), 9);
        REQUIRE(out.shared_psi.has_value());
        REQUIRE(out.shared_psi->psi == psi.psi);
        REQUIRE((out.state.P - post.P).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(out.state.x_hat.to_vector() == combined.to_vector());
    }
    SECTION("own node must not appear among received estimates") {
        IntermediateEstimate self;
        self.psi = fs.x_hat.to_vector();
        self.node_id = 0;
        REQUIRE_THROWS_AS(
            step(fs, dt, q, true, {input}, noise, params, {{0, self}, {1, neighbor_psi}}),
            TopologyError);
    }
}
