#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "nestlab/autodiff.hpp"
#include "nestlab/rng.hpp"

using namespace nestlab;
using ad::DualNode;
using ad::Node;
using ad::Op;
using ad::Tape;

TEST_CASE("tape construction and node counts") {
    Tape t;
    CHECK(t.size() == 0);
    Node c = t.constant(1.0);
    CHECK(t.size() == 1);
    CHECK(t.value(c) == 1.0);
    Node a = t.constant(2.0);
    Node s = t.add(c, a);
    CHECK(t.size() == 3);
    CHECK(t.value(s) == 3.0);
}

TEST_CASE("leaf registration and non-finite rejection") {
    Tape t;
    Node a = t.leaf(3.0, false);
    CHECK(t.value(a) == 3.0);
    CHECK(t.trainable().empty());
    Node b = t.leaf(0.0, true);
    CHECK(t.trainable().size() == 1);
    CHECK(t.trainable()[0] == b.id);
    CHECK_THROWS_AS(t.leaf(std::nan(""), false), std::invalid_argument);
    CHECK_THROWS_AS(t.constant(std::numeric_limits<double>::infinity()), std::invalid_argument);
}

TEST_CASE("primitive values") {
    Tape t;
    CHECK(t.value(t.relu(t.constant(-1.0))) == 0.0);
    CHECK(t.value(t.relu(t.constant(2.5))) == 2.5);
    CHECK(t.value(t.sin(t.constant(0.0))) == 0.0);
    CHECK(t.value(t.square(t.constant(3.0))) == 9.0);
    CHECK(t.value(t.max(t.constant(2.0), t.constant(5.0))) == 5.0);
    CHECK_THROWS_AS(t.div(t.constant(1.0), t.constant(0.0)), std::domain_error);
    CHECK_THROWS_AS(t.sqrt(t.constant(-1.0)), std::domain_error);
}

TEST_CASE("backward on simple graphs") {
    SUBCASE("product") {
        Tape t;
        Node x = t.leaf(2.0, true);
        Node y = t.leaf(5.0, true);
        auto g = t.backward(t.mul(x, y));
        CHECK(g.at(x) == doctest::Approx(5.0));
        CHECK(g.at(y) == doctest::Approx(2.0));
    }
    SUBCASE("dead relu") {
        Tape t;
        Node x = t.leaf(-1.0, true);
        auto g = t.backward(t.relu(x));
        CHECK(g.at(x) == 0.0);
    }
    SUBCASE("constant-only output leaves zero adjoints") {
        Tape t;
        Node x = t.leaf(1.0, true);
        Node c = t.constant(4.0);
        auto g = t.backward(c);
        CHECK(g.at(x) == 0.0);
    }
    SUBCASE("sin gradient at 0 is 1") {
        Tape t;
        Node x = t.leaf(0.0, true);
        auto g = t.backward(t.sin(x));
        CHECK(g.at(x) == doctest::Approx(1.0));
    }
    SUBCASE("square gradient") {
        Tape t;
        Node x = t.leaf(3.0, true);
        auto g = t.backward(t.square(x));
        CHECK(g.at(x) == doctest::Approx(6.0));
    }
}

TEST_CASE("every primitive matches finite differences away from kinks") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> point = {rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
        auto rep = ad::finite_difference_check(
            [](Tape& t, std::span<const Node> p) {
                Node a = p[0], b = p[1];
                Node mix = t.add(t.mul(t.sin(a), t.exp(b)),
                                 t.div(t.square(a), t.sqrt(t.add(b, t.constant(1.0)))));
                mix = t.add(mix, t.relu(t.sub(a, b)));
                return t.add(mix, t.max(t.neg(a), t.cos(b)));
            },
            point, 1e-6);
        CHECK(rep.max_rel_err < 1e-6);
    }
}

TEST_CASE("finite_difference_check is near-exact on quadratics") {
    std::vector<double> point = {0.7, -1.3, 2.1};
    auto rep = ad::finite_difference_check(
        [](Tape& t, std::span<const Node> p) {
            Node acc = t.constant(0.0);
            for (std::size_t i = 0; i < p.size(); ++i) acc = t.add(acc, t.square(p[i]));
            return acc;
        },
        point, 1e-5);
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("finite_difference_check flags relu kinks") {
    std::vector<double> point = {0.0};
    auto rep = ad::finite_difference_check(
        [](Tape& t, std::span<const Node> p) { return t.relu(p[0]); }, point, 1e-6);
    CHECK(rep.skipped[0]);
}

TEST_CASE("dual seeds and tangent chains") {
    SUBCASE("seed values") {
        Tape t;
        Node x = t.leaf(0.5, true);
        DualNode d = t.dual_seed(x, 1.0);
        CHECK(t.value(d.tangent) == 1.0);
        DualNode z = t.dual_seed(x, 0.0);
        CHECK(t.value(z.tangent) == 0.0);
        CHECK_THROWS_AS(t.dual_seed(t.sin(x), 1.0), std::invalid_argument);
    }
    SUBCASE("sin tangent at 0") {
        Tape t;
        Node x = t.leaf(0.0, true);
        DualNode d = t.dual_sin(t.dual_seed(x, 1.0));
        CHECK(t.value(d.tangent) == doctest::Approx(1.0));
    }
    SUBCASE("x*x tangent and second derivative") {
        Tape t;
        Node x = t.leaf(3.0, true);
        DualNode dx = t.dual_seed(x, 1.0);
        DualNode u = t.dual_mul(dx, dx);
        CHECK(t.value(u.tangent) == doctest::Approx(6.0));
        auto g = t.backward(u.tangent);
        CHECK(g.at(x) == doctest::Approx(2.0));
    }
    SUBCASE("zero seed short-circuits downstream tangents") {
        Tape t;
        Node x = t.leaf(0.7, true);
        DualNode d = t.dual_seed(x, 0.0);
        DualNode u = t.dual_exp(t.dual_sin(d));
        CHECK(t.value(u.tangent) == 0.0);
    }
    SUBCASE("independent x and t tangent chains") {
        Tape t;
        Node x = t.leaf(0.4, true), y = t.leaf(-0.3, true);
        DualNode dx = t.dual_seed(x, 1.0);
        DualNode yl = t.lift(y);
        DualNode u = t.dual_mul(t.dual_sin(dx), yl);  // u = sin(x) y, du/dx = cos(x) y
        CHECK(t.value(u.tangent) == doctest::Approx(std::cos(0.4) * -0.3));
    }
}

TEST_CASE("relu tangent re-evaluates its gate under replay") {
    Tape t;
    Node x = t.leaf(1.0, true);
    DualNode u = t.dual_relu(t.dual_seed(x, 1.0));
    CHECK(t.value(u.tangent) == 1.0);
    t.set_value(x, -1.0);
    t.replay();
    CHECK(t.value(u.primal) == 0.0);
    CHECK(t.value(u.tangent) == 0.0);
}

TEST_CASE("tangent equals backward adjoint along seed direction") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Tape t;
        Node x = t.leaf(rng.uniform(-1.0, 1.0), true);
        Node y = t.leaf(rng.uniform(-1.0, 1.0), true);
        DualNode dx = t.dual_seed(x, 1.0);
        DualNode yl = t.lift(y);
        DualNode f = t.dual_add(t.dual_mul(t.dual_sin(dx), yl), t.dual_square(dx));
        auto g = t.backward(f.primal);
        CHECK(t.value(f.tangent) == doctest::Approx(g.at(x)).epsilon(1e-10));
    }
}

TEST_CASE("backward is linear in the output") {
    Tape t;
    Node x = t.leaf(0.8, true), y = t.leaf(-0.6, true);
    Node f = t.mul(t.sin(x), y);
    Node g = t.exp(t.mul(x, y));
    const double a = 1.7, b = -2.3;
    Node combo = t.add(t.mul(t.constant(a), f), t.mul(t.constant(b), g));
    auto gf = t.backward(f);
    auto gg = t.backward(g);
    auto gc = t.backward(combo);
    for (Node n : {x, y})
        CHECK(gc.at(n) == doctest::Approx(a * gf.at(n) + b * gg.at(n)).epsilon(1e-12));
}

TEST_CASE("replay reproduces primal values bit-identically") {
    Rng rng(23);
    Tape t;
    std::vector<Node> leaves;
    for (int i = 0; i < 8; ++i) leaves.push_back(t.leaf(rng.uniform(-2.0, 2.0), true));
    Node acc = t.constant(0.0);
    for (std::size_t i = 0; i + 1 < leaves.size(); ++i)
        acc = t.add(acc, t.mul(t.sin(leaves[i]), t.relu(leaves[i + 1])));
    std::vector<double> before;
    for (std::size_t i = 0; i < t.size(); ++i) before.push_back(t.value(Node{(std::uint32_t)i}));
    t.replay();
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = t.value(Node{(std::uint32_t)i});
        CHECK(std::memcmp(&v, &before[i], sizeof v) == 0);
    }
}

TEST_CASE("backward_into accumulates weighted seeds") {
    Tape t;
    Node x = t.leaf(1.5, true);
    Node f = t.square(x);
    std::vector<double> adj(t.size(), 0.0);
    t.backward_into(f, adj, 0.5);
    CHECK(adj[x.id] == doctest::Approx(0.5 * 3.0));
    // param adjoints keep accumulating if the interior is re-zeroed per pass
    std::fill(adj.begin() + 1, adj.end(), 0.0);
    t.backward_into(f, adj, 0.25);
    CHECK(adj[x.id] == doctest::Approx(0.75 * 3.0));
    CHECK_THROWS_AS(t.backward_into(Node{9999}, adj), std::invalid_argument);
}
