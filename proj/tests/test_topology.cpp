#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "etdkf/etdkf.hpp"
#include "support/builders.hpp"

using namespace etdkf;

TEST_CASE("fully connected topology", "[topology]") {
    const Topology topo = build_fully_connected(9);
    REQUIRE(topo.size() == 9);
    for (int k = 0; k < 9; ++k) {
        REQUIRE(topo.degree(k) == 8);
        REQUIRE(topo.neighborhoods[k].size() == 9);  // includes the node itself
        REQUIRE(std::is_sorted(topo.neighborhoods[k].begin(), topo.neighborhoods[k].end()));
        for (int j = 0; j < 9; ++j) REQUIRE(topo.are_neighbors(k, j) == (j != k));
    }
    REQUIRE(topo.is_connected());
    REQUIRE_THROWS_AS(build_fully_connected(1), TopologyError);
}

TEST_CASE("two-node adjacency", "[topology]") {
    const Topology topo = build_fully_connected(2);
    REQUIRE(topo.adjacency(0, 0) == 0);
    REQUIRE(topo.adjacency(0, 1) == 1);
    REQUIRE(topo.adjacency(1, 0) == 1);
    REQUIRE(topo.adjacency(1, 1) == 0);
    REQUIRE(topo.C(0, 0) == Catch::Approx(0.5));
    REQUIRE(topo.C(0, 1) == Catch::Approx(0.5));
    REQUIRE(topo.C(1, 0) == Catch::Approx(0.5));
    REQUIRE(topo.C(1, 1) == Catch::Approx(0.5));
}

TEST_CASE("metropolis weights on known graphs", "[topology]") {
    SECTION("complete graph: every weight 1/n") {
        const Topology topo = build_fully_connected(4);
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 4; ++j) REQUIRE(topo.C(k, j) == Catch::Approx(0.25));
    }
    SECTION("path graph 0-1-2") {
        Eigen::MatrixXi a = Eigen::MatrixXi::Zero(3, 3);
        a(0, 1) = a(1, 0) = 1;
        a(1, 2) = a(2, 1) = 1;
        const Eigen::MatrixXd c = metropolis_weights(a);
        REQUIRE(c(0, 1) == Catch::Approx(1.0 / 3.0));  // 1/(1 + max(1, 2))
        REQUIRE(c(0, 0) == Catch::Approx(2.0 / 3.0));
        REQUIRE(c(0, 2) == 0.0);
        REQUIRE(c(1, 0) == Catch::Approx(1.0 / 3.0));
        REQUIRE(c(1, 1) == Catch::Approx(1.0 / 3.0));
        REQUIRE(c(1, 2) == Catch::Approx(1.0 / 3.0));
    }
    SECTION("rows and columns sum to 1 (doubly stochastic)") {
        const Topology topo = build_fully_connected(5);
        for (int k = 0; k < 5; ++k) {
            REQUIRE(topo.C.row(k).sum() == Catch::Approx(1.0).margin(1e-12));
            REQUIRE(topo.C.col(k).sum() == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("k-nearest topology over the default anchor layout", "[topology]") {
    const Scenario sc = builders::load_default();
    std::vector<Vec3> positions;
    for (const auto& n : sc.nodes) positions.push_back(n.initial_truth().position);

    const Topology topo = build_k_nearest(positions, 4);
    REQUIRE(topo.size() == 9);
    for (int k = 0; k < 9; ++k) {
        REQUIRE(topo.degree(k) >= 4);  // symmetrization can only add links
        REQUIRE(static_cast<int>(topo.neighborhoods[k].size()) == topo.degree(k) + 1);
    }
    REQUIRE(topo.is_connected());
    for (int k = 0; k < 9; ++k)
        for (int j = 0; j < 9; ++j) REQUIRE(topo.adjacency(k, j) == topo.adjacency(j, k));

    SECTION("degree out of range rejected") {
        REQUIRE_THROWS_AS(build_k_nearest(positions, 0), TopologyError);
        REQUIRE_THROWS_AS(build_k_nearest(positions, 9), TopologyError);
    }
}

TEST_CASE("build_topology dispatches on kind", "[topology]") {
    std::vector<Vec3> positions{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    REQUIRE(build_topology("fully_connected", positions, 1).degree(0) == 2);
    REQUIRE(build_topology("k_nearest", positions, 1).size() == 3);
    REQUIRE_THROWS_AS(build_topology("mesh", positions, 1), TopologyError);
}

TEST_CASE("topology validation catches malformed graphs", "[topology]") {
    SECTION("nonzero diagonal") {
        Eigen::MatrixXi a = Eigen::MatrixXi::Zero(2, 2);
        a(0, 0) = 1;
        a(0, 1) = a(1, 0) = 1;
        REQUIRE_THROWS_AS(topology_from_adjacency(a), TopologyError);
    }
    SECTION("asymmetric adjacency") {
        Eigen::MatrixXi a = Eigen::MatrixXi::Zero(2, 2);
        a(0, 1) = 1;
        REQUIRE_THROWS_AS(topology_from_adjacency(a), TopologyError);
    }
    SECTION("entries other than 0/1") {
        Eigen::MatrixXi a = Eigen::MatrixXi::Zero(2, 2);
        a(0, 1) = a(1, 0) = 2;
        REQUIRE_THROWS_AS(topology_from_adjacency(a), TopologyError);
    }
    SECTION("disconnected graph") {
        Eigen::MatrixXi a = Eigen::MatrixXi::Zero(4, 4);
        a(0, 1) = a(1, 0) = 1;
        a(2, 3) = a(3, 2) = 1;
        REQUIRE_THROWS_AS(topology_from_adjacency(a), TopologyError);
    }
    SECTION("tampered combination matrix") {
        Topology topo = build_fully_connected(3);
        topo.C(0, 0) += 0.1;
        REQUIRE_THROWS_AS(topo.validate(), TopologyError);
        topo = build_fully_connected(3);
        topo.C(1, 2) = -topo.C(1, 2);
        REQUIRE_THROWS_AS(topo.validate(), TopologyError);
    }
}

TEST_CASE("directed edges enumerate receiver-sender pairs in order", "[topology]") {
    const Topology topo = build_fully_connected(3);
    const auto edges = topo.directed_edges();
    const std::vector<std::pair<int, int>> expected{{0, 1}, {0, 2}, {1, 0},
                                                    {1, 2}, {2, 0}, {2, 1}};
    REQUIRE(edges == expected);
}
