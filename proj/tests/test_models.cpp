#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "nestlab/models.hpp"
#include "nestlab/rng.hpp"

using namespace nestlab;

namespace {

std::vector<double> eval_point(const Model& m, std::span<const double> x) {
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    std::vector<Val> in;
    for (double v : x) in.push_back(Val::lift(tape, tape.constant(v)));
    std::vector<Val> out = forward(m, tape, params, std::span<const Val>(in));
    std::vector<double> vals;
    for (const Val& o : out) vals.push_back(tape.value(o.node));
    return vals;
}

}  // namespace

TEST_CASE("fourier encoding values") {
    Tape tape;
    SUBCASE("zero input") {
        EncodingSpec spec = EncodingSpec::fourier(2);
        std::vector<Val> x = {Val::lift(tape, tape.constant(0.0)),
                              Val::lift(tape, tape.constant(0.0))};
        auto f = encode(spec, tape, std::span<const Val>(x));
        REQUIRE(f.size() == 8);
        for (std::size_t i = 0; i < f.size(); i += 2) {
            CHECK(tape.value(f[i].node) == doctest::Approx(1.0));      // cos
            CHECK(tape.value(f[i + 1].node) == doctest::Approx(0.0));  // sin
        }
    }
    SUBCASE("fundamental spans the domain once") {
        // beta_1 = 1/2, so the first pair is cos(pi x), sin(pi x)
        EncodingSpec spec = EncodingSpec::fourier(1);
        std::vector<Val> x = {Val::lift(tape, tape.constant(0.5))};
        auto f = encode(spec, tape, std::span<const Val>(x));
        REQUIRE(f.size() == 2);
        CHECK(tape.value(f[0].node) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(tape.value(f[1].node) == doctest::Approx(1.0));
        std::vector<Val> lo = {Val::lift(tape, tape.constant(-1.0))};
        std::vector<Val> hi = {Val::lift(tape, tape.constant(1.0))};
        auto flo = encode(spec, tape, std::span<const Val>(lo));
        auto fhi = encode(spec, tape, std::span<const Val>(hi));
        CHECK(tape.value(flo[0].node) == doctest::Approx(tape.value(fhi[0].node)));
        CHECK(tape.value(flo[0].node) == doctest::Approx(-1.0));
    }
    SUBCASE("identity passthrough") {
        EncodingSpec spec = EncodingSpec::identity();
        std::vector<Val> x = {Val::lift(tape, tape.constant(0.3)),
                              Val::lift(tape, tape.constant(-0.7))};
        auto f = encode(spec, tape, std::span<const Val>(x));
        REQUIRE(f.size() == 2);
        CHECK(tape.value(f[0].node) == 0.3);
        CHECK(tape.value(f[1].node) == -0.7);
    }
    SUBCASE("features bounded by alpha") {
        EncodingSpec spec = EncodingSpec::fourier(4);
        Rng rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<Val> x = {Val::lift(tape, tape.constant(rng.uniform(-1.0, 1.0)))};
            auto f = encode(spec, tape, std::span<const Val>(x));
            for (std::size_t i = 0; i < f.size(); ++i) {
                double a = spec.alpha[(i / 2) % spec.alpha.size()];
                CHECK(std::abs(tape.value(f[i].node)) <= a + 1e-12);
            }
        }
    }
}

TEST_CASE("learned activation at its initialization") {
    LearnedActivation a;
    CHECK(a.eval(0.0) == doctest::Approx(0.0));
    CHECK(a.eval(1.0) == doctest::Approx(0.7));
    CHECK(a.eval(-1.0) == doctest::Approx(0.0));
    CHECK(a.eval(0.15) == doctest::Approx(-0.10));
}

TEST_CASE("rho_eval matches the closed form and carries gradients") {
    LearnedActivation ref;
    Tape tape;
    std::vector<Node> p;
    for (int j = 0; j < 3; ++j) p.push_back(tape.leaf(ref.w1[j], true));
    for (int j = 0; j < 3; ++j) p.push_back(tape.leaf(ref.b1[j], true));
    for (int j = 0; j < 3; ++j) p.push_back(tape.leaf(ref.w2[j], true));
    p.push_back(tape.leaf(ref.b2, true));
    Val h = Val::lift(tape, tape.constant(0.6));
    Val out = rho_eval(tape, std::span<const Node>(p), h);
    CHECK(tape.value(out.node) == doctest::Approx(ref.eval(0.6)));
    auto g = tape.backward(out.node);
    // all three pre-relu arguments are positive at h = 0.6, so every
    // parameter receives gradient
    int touched = 0;
    for (Node n : p)
        if (g.at(n) != 0.0) ++touched;
    CHECK(touched == 10);
}

TEST_CASE("sampled activation is piecewise linear with few breakpoints") {
    SUBCASE("at init") {
        LearnedActivation a;
        auto table = sample_activation(a);
        REQUIRE(table.size() == 601);
        CHECK(count_slope_changes(table) <= 3);
    }
    SUBCASE("random parameters") {
        Rng rng(9);
        for (int trial = 0; trial < 30; ++trial) {
            LearnedActivation a;
            for (int j = 0; j < 3; ++j) {
                a.w1[j] = rng.uniform(-2.0, 2.0);
                a.b1[j] = rng.uniform(-1.0, 1.0);
                a.w2[j] = rng.uniform(-2.0, 2.0);
            }
            a.b2 = rng.uniform(-1.0, 1.0);
            CHECK(count_slope_changes(sample_activation(a)) <= 3);
        }
    }
}

TEST_CASE("nestnet parameter count") {
    const int width = 32, depth = 2, K = 4, in_dim = 2, out_dim = 1;
    Model m = build_nestnet(width, depth, EncodingSpec::fourier(K), 0, in_dim, out_dim);
    const int feat = 2 * K * in_dim;
    int affine = (feat * width + width) + (width * width + width) + (width * out_dim + out_dim);
    CHECK(m.param_count() == static_cast<std::size_t>(affine + 10 * depth));
    CHECK(m.hidden_layers() == depth);
    CHECK(m.has_learned_activations());
}

TEST_CASE("minimal nestnet forward runs") {
    Model m = build_nestnet(1, 1, EncodingSpec::identity(), 0, 1, 1);
    auto out = eval_point(m, std::array<double, 1>{0.5});
    REQUIRE(out.size() == 1);
    CHECK(std::isfinite(out[0]));
}

TEST_CASE("same seed builds identical parameters") {
    Model a = build_nestnet(16, 2, EncodingSpec::fourier(4), 42);
    Model b = build_nestnet(16, 2, EncodingSpec::fourier(4), 42);
    REQUIRE(a.params.size() == b.params.size());
    CHECK(std::memcmp(a.params.data(), b.params.data(), a.params.size() * sizeof(double)) == 0);
    Model c = build_nestnet(16, 2, EncodingSpec::fourier(4), 43);
    CHECK(a.params != c.params);
}

TEST_CASE("learned activation at init propagates through a nestnet layer") {
    // zero out the affine weights of a width-1 net; the output reduces to
    // composed rho values of the biases
    Model m = build_nestnet(1, 1, EncodingSpec::identity(), 0, 1, 1);
    for (const auto& a : m.affine) {
        for (int i = 0; i < a.in * a.out; ++i) m.params[a.w_off + i] = 0.0;
        for (int o = 0; o < a.out; ++o) m.params[a.b_off + o] = 0.0;
    }
    m.params[m.affine[0].b_off] = 1.0;  // hidden pre-activation is 1
    LearnedActivation rho;
    auto out = eval_point(m, std::array<double, 1>{0.3});
    CHECK(out[0] == doctest::Approx(0.0));  // final W = 0, b = 0
    m.params[m.affine[1].w_off] = 1.0;
    out = eval_point(m, std::array<double, 1>{0.3});
    CHECK(out[0] == doctest::Approx(rho.eval(1.0)));  // = 0.7
}

TEST_CASE("baseline activations match closed forms") {
    Rng rng(17);
    ActivationSpec hyper;
    hyper.omega0 = 30.0;
    hyper.s0 = 30.0;
    SUBCASE("siren") {
        Model m = build_baseline(BaselineKind::Siren, 8, 1, ActivationSpec::sine(30.0),
                                 EncodingSpec::identity(), 1, 1, 1);
        // single input through layer 0 neuron 0: sin(omega0 (w x + b))
        double x = rng.uniform(-1.0, 1.0);
        double z = m.params[m.affine[0].w_off] * x + m.params[m.affine[0].b_off];
        Tape tape;
        std::vector<Node> params = make_param_leaves(m, tape);
        std::vector<Val> in = {Val::lift(tape, tape.constant(x))};
        std::vector<Val> lin =
            detail::affine_apply(m.affine[0], tape, params, std::span<const Val>(in));
        Val act = detail::apply_activation(m, tape, params, 0, 0, lin[0]);
        CHECK(tape.value(act.node) == doctest::Approx(std::sin(30.0 * z)).epsilon(1e-12));
    }
    SUBCASE("gaussian at zero is one") {
        Model m = build_baseline(BaselineKind::Gaussian, 4, 1, ActivationSpec::gaussian(30.0),
                                 EncodingSpec::identity(), 1, 1, 1);
        Tape tape;
        std::vector<Node> params = make_param_leaves(m, tape);
        Val z = Val::lift(tape, tape.constant(0.0));
        Val act = detail::apply_activation(m, tape, params, 0, 0, z);
        CHECK(tape.value(act.node) == 1.0);
    }
    SUBCASE("gabor real form") {
        Model m = build_baseline(BaselineKind::WireReal, 8, 1, ActivationSpec::gabor_real(20.0, 30.0),
                                 EncodingSpec::identity(), 1, 1, 1);
        double z = 0.03;
        Tape tape;
        std::vector<Node> params = make_param_leaves(m, tape);
        Val zn = Val::lift(tape, tape.constant(z));
        Val act = detail::apply_activation(m, tape, params, 0, 0, zn);
        CHECK(tape.value(act.node) ==
              doctest::Approx(std::cos(20.0 * z) * std::exp(-(30.0 * z) * (30.0 * z)))
                  .epsilon(1e-12));
    }
    SUBCASE("wire width reduction") {
        Model m = build_baseline(BaselineKind::WireReal, 32, 2, ActivationSpec::gabor_real(20, 30),
                                 EncodingSpec::identity(), 1);
        CHECK(m.affine[0].out == static_cast<int>(std::lround(32 / std::sqrt(2.0))));
    }
}

TEST_CASE("linear model computes W x + b exactly") {
    Model m = build_baseline(BaselineKind::MlpRelu, 4, 1, ActivationSpec::relu(),
                             EncodingSpec::identity(), 7, 2, 1);
    // bypass the hidden layer: evaluate just the output affine by hand
    auto out = eval_point(m, std::array<double, 2>{0.4, -0.2});
    // reference computed with plain doubles
    std::vector<double> h(4);
    const auto& a0 = m.affine[0];
    for (int o = 0; o < 4; ++o) {
        double acc = m.params[a0.b_off + o];
        acc += m.params[a0.w_off + o * 2] * 0.4 + m.params[a0.w_off + o * 2 + 1] * -0.2;
        h[o] = acc > 0 ? acc : 0;
    }
    const auto& a1 = m.affine[1];
    double ref = m.params[a1.b_off];
    for (int i = 0; i < 4; ++i) ref += m.params[a1.w_off + i] * h[i];
    CHECK(out[0] == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("forward purity") {
    Model m = build_nestnet(8, 2, EncodingSpec::fourier(3), 5);
    auto a = eval_point(m, std::array<double, 2>{0.1, -0.6});
    auto b = eval_point(m, std::array<double, 2>{0.1, -0.6});
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double)) == 0);
}

TEST_CASE("mfn forward runs and uses its filters") {
    Model m = build_baseline(BaselineKind::Mfn, 8, 2, ActivationSpec::none(),
                             EncodingSpec::identity(), 3);
    CHECK(m.arch == ArchKind::Mfn);
    CHECK(m.filters.size() == 3);
    auto out = eval_point(m, std::array<double, 2>{0.2, 0.8});
    CHECK(std::isfinite(out[0]));
}

TEST_CASE("one training-style gradient step touches all rho parameters") {
    Model m = build_nestnet(4, 1, EncodingSpec::identity(), 2, 1, 1);
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    std::vector<Val> x = {Val::lift(tape, tape.constant(0.37))};
    std::vector<Val> out = forward(m, tape, params, std::span<const Val>(x));
    Node loss = tape.square(tape.sub(out[0].node, tape.constant(2.0)));
    auto g = tape.backward(loss);
    const int off = m.act_off[0];
    int touched = 0;
    for (int j = 0; j < LearnedActivation::kParamCount; ++j)
        if (g.at(params[off + j]) != 0.0) ++touched;
    // w1, b1, w2 entries whose relu branch is active plus b2; at the default
    // init the b1 entries straddle zero so at least one branch of each group
    // is live
    CHECK(touched >= 4);
    CHECK(g.at(params[off + 9]) != 0.0);  // b2 always flows
}
