#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace nestlab {

using ad::DualNode;
using ad::Node;
using ad::Op;
using ad::Tape;

// --- tape value types --------------------------------------------------------
//
// Network forwards are written once, generically over a scalar value type:
//   Val    plain node (fitting losses, grid evaluation)
//   Dual2  node with two forward tangents recorded on the tape (PDE residuals
//          need u_x and u_t in one pass, both further differentiable)

struct Val {
    Tape* tape;
    Node node;
    static Val lift(Tape& t, Node n) { return {&t, n}; }
};

inline Val operator+(Val a, Val b) { return {a.tape, a.tape->add(a.node, b.node)}; }
inline Val operator-(Val a, Val b) { return {a.tape, a.tape->sub(a.node, b.node)}; }
inline Val operator*(Val a, Val b) { return {a.tape, a.tape->mul(a.node, b.node)}; }
inline Val operator/(Val a, Val b) { return {a.tape, a.tape->div(a.node, b.node)}; }
inline Val operator-(Val a) { return {a.tape, a.tape->neg(a.node)}; }
inline Val operator*(double c, Val a) { return {a.tape, a.tape->mul(a.tape->constant(c), a.node)}; }
inline Val vsin(Val a) { return {a.tape, a.tape->sin(a.node)}; }
inline Val vcos(Val a) { return {a.tape, a.tape->cos(a.node)}; }
inline Val vexp(Val a) { return {a.tape, a.tape->exp(a.node)}; }
inline Val vrelu(Val a) { return {a.tape, a.tape->relu(a.node)}; }
inline Val vsquare(Val a) { return {a.tape, a.tape->square(a.node)}; }

struct Dual2 {
    Tape* tape;
    Node p, t1, t2;
    static Dual2 lift(Tape& t, Node n) { return {&t, n, t.zero(), t.zero()}; }
};

namespace detail {
inline Dual2 d2op(Op o, Dual2 a, Dual2 b) {
    Tape& t = *a.tape;
    const Node prim[2] = {a.p, b.p};
    Node p = t.apply(o, prim);
    const Node tg1[2] = {a.t1, b.t1};
    const Node tg2[2] = {a.t2, b.t2};
    Node u1 = t.record_tangent(o, prim, tg1, p);
    Node u2 = t.record_tangent(o, prim, tg2, p);
    return {&t, p, u1, u2};
}
inline Dual2 d2op(Op o, Dual2 a) {
    Tape& t = *a.tape;
    const Node prim[1] = {a.p};
    Node p = t.apply(o, prim);
    const Node tg1[1] = {a.t1};
    const Node tg2[1] = {a.t2};
    Node u1 = t.record_tangent(o, prim, tg1, p);
    Node u2 = t.record_tangent(o, prim, tg2, p);
    return {&t, p, u1, u2};
}
}  // namespace detail

inline Dual2 operator+(Dual2 a, Dual2 b) { return detail::d2op(Op::Add, a, b); }
inline Dual2 operator-(Dual2 a, Dual2 b) { return detail::d2op(Op::Sub, a, b); }
inline Dual2 operator*(Dual2 a, Dual2 b) { return detail::d2op(Op::Mul, a, b); }
inline Dual2 operator/(Dual2 a, Dual2 b) { return detail::d2op(Op::Div, a, b); }
inline Dual2 operator-(Dual2 a) { return detail::d2op(Op::Neg, a); }
inline Dual2 operator*(double c, Dual2 a) {
    return detail::d2op(Op::Mul, Dual2::lift(*a.tape, a.tape->constant(c)), a);
}
inline Dual2 vsin(Dual2 a) { return detail::d2op(Op::Sin, a); }
inline Dual2 vcos(Dual2 a) { return detail::d2op(Op::Cos, a); }
inline Dual2 vexp(Dual2 a) { return detail::d2op(Op::Exp, a); }
inline Dual2 vrelu(Dual2 a) { return detail::d2op(Op::Relu, a); }
inline Dual2 vsquare(Dual2 a) { return detail::d2op(Op::Square, a); }

// --- specs -------------------------------------------------------------------

struct EncodingSpec {
    enum class Kind { Identity, Fourier } kind = Kind::Identity;
    std::vector<double> alpha;  // per frequency, > 0
    std::vector<double> beta;   // per frequency, applied per axis

    static EncodingSpec identity() { return {}; }

    /// Deterministic positional encoding: alpha_i = 1, beta_i = i/2, so the
    /// i-th feature pair completes i half-cycles per coordinate unit and the
    /// fundamental (i = 1) spans the [-1,1] domain exactly once. With these
    /// frequencies the feature set is the classic sin(pi x), cos(pi x), ...
    /// positional encoding; integer beta would make every feature 1-periodic
    /// and unable to represent signals whose period is the domain length.
    static EncodingSpec fourier(int num_frequencies) {
        EncodingSpec s;
        s.kind = Kind::Fourier;
        for (int i = 1; i <= num_frequencies; ++i) {
            s.alpha.push_back(1.0);
            s.beta.push_back(0.5 * i);
        }
        return s;
    }

    int num_frequencies() const { return static_cast<int>(beta.size()); }

    int out_dim(int in_dim) const {
        return kind == Kind::Identity ? in_dim : 2 * num_frequencies() * in_dim;
    }
};

struct ActivationSpec {
    enum class Kind { Relu, Sine, Gaussian, GaborReal, Learned, None } kind = Kind::Relu;
    double omega0 = 30.0;
    double s0 = 30.0;

    static ActivationSpec relu() { return {Kind::Relu}; }
    static ActivationSpec none() { return {Kind::None}; }
    static ActivationSpec sine(double w0) { return {Kind::Sine, w0, 0.0}; }
    static ActivationSpec gaussian(double s0) { return {Kind::Gaussian, 0.0, s0}; }
    static ActivationSpec gabor_real(double w0, double s0) { return {Kind::GaborReal, w0, s0}; }
    static ActivationSpec learned() { return {Kind::Learned}; }
};

/// Parameter values of one trainable activation subnetwork,
/// rho(h) = w2 . relu(w1 h + b1) + b2.
struct LearnedActivation {
    std::array<double, 3> w1{1.0, 1.0, 1.0};
    std::array<double, 3> b1{-0.2, -0.1, 0.0};
    std::array<double, 3> w2{1.0, 1.0, -1.0};
    double b2 = 0.0;

    static constexpr int kParamCount = 10;

    double eval(double h) const {
        double acc = b2;
        for (int j = 0; j < 3; ++j) {
            double z = w1[j] * h + b1[j];
            acc += w2[j] * (z > 0.0 ? z : 0.0);
        }
        return acc;
    }
};

// --- model -------------------------------------------------------------------

enum class ArchKind { MlpStack, Mfn };

enum class BaselineKind { MlpRelu, Ffn, Siren, Gaussian, WireReal, Mfn };

inline const char* to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::MlpRelu: return "mlp_relu";
        case BaselineKind::Ffn: return "ffn";
        case BaselineKind::Siren: return "siren";
        case BaselineKind::Gaussian: return "gaussian";
        case BaselineKind::WireReal: return "wire_real";
        case BaselineKind::Mfn: return "mfn";
    }
    return "?";
}

/// Architecture descriptor plus one flat parameter vector. The flat layout is
/// the checkpoint layout: per affine layer W (row-major out x in) then b; for
/// a hidden layer with learned activations, the subnetworks' (w1, b1, w2, b2)
/// follow that layer's bias; MFN filters store per filter Omega (row-major
/// width x in) then phase.
struct Model {
    ArchKind arch = ArchKind::MlpStack;
    std::string name;  // e.g. "nestnet", "siren"
    EncodingSpec encoding;
    int in_dim = 2;
    int out_dim = 1;

    struct Affine {
        int in = 0, out = 0;
        int w_off = 0, b_off = 0;
    };
    std::vector<Affine> affine;                 // hidden layers then output layer
    std::vector<ActivationSpec> activations;    // one per hidden layer
    int subnets_per_layer = 1;                  // r; neurons assigned round-robin
    std::vector<int> act_off;                   // per hidden layer: offset of its r subnets, -1 if none

    struct Filter {
        int in = 0, width = 0;
        int omega_off = 0, phase_off = 0;
    };
    std::vector<Filter> filters;  // mfn only; filters.size() == hidden affines + 1

    std::vector<double> params;

    std::size_t param_count() const { return params.size(); }
    int hidden_layers() const { return static_cast<int>(activations.size()); }

    bool has_learned_activations() const {
        for (const auto& a : activations)
            if (a.kind == ActivationSpec::Kind::Learned) return true;
        return false;
    }

    /// View of one learned activation's current parameter values.
    LearnedActivation learned_activation(int layer, int subnet = 0) const {
        if (layer < 0 || layer >= hidden_layers() || act_off[layer] < 0)
            throw std::invalid_argument("model: layer has no learned activation");
        const double* p = params.data() + act_off[layer] + subnet * LearnedActivation::kParamCount;
        LearnedActivation a;
        for (int j = 0; j < 3; ++j) a.w1[j] = p[j];
        for (int j = 0; j < 3; ++j) a.b1[j] = p[3 + j];
        for (int j = 0; j < 3; ++j) a.w2[j] = p[6 + j];
        a.b2 = p[9];
        return a;
    }
};

// --- construction ------------------------------------------------------------

namespace detail {

inline int reserve_params(Model& m, int n) {
    int off = static_cast<int>(m.params.size());
    m.params.resize(m.params.size() + n, 0.0);
    return off;
}

inline void add_affine(Model& m, int in, int out) {
    Model::Affine a;
    a.in = in;
    a.out = out;
    a.w_off = reserve_params(m, in * out);
    a.b_off = reserve_params(m, out);
    m.affine.push_back(a);
}

inline void init_uniform(Model& m, int off, int n, double bound, Rng& rng) {
    for (int i = 0; i < n; ++i) m.params[off + i] = rng.uniform(-bound, bound);
}

enum class InitScheme { KaimingUniform, SirenFirst, SirenHidden };

inline void init_affine(Model& m, const Model::Affine& a, InitScheme scheme, double omega0,
                        Rng& rng) {
    double bound;
    switch (scheme) {
        case InitScheme::SirenFirst: bound = 1.0 / a.in; break;
        case InitScheme::SirenHidden: bound = std::sqrt(6.0 / a.in) / omega0; break;
        default: bound = std::sqrt(6.0 / a.in); break;
    }
    init_uniform(m, a.w_off, a.in * a.out, bound, rng);
    init_uniform(m, a.b_off, a.out, bound, rng);
}

inline void add_learned_activations(Model& m, int layer_count) {
    for (int l = 0; l < layer_count; ++l) {
        int off = reserve_params(m, m.subnets_per_layer * LearnedActivation::kParamCount);
        m.act_off.push_back(off);
        const LearnedActivation init;  // reference leaky-ReLU-like start
        for (int s = 0; s < m.subnets_per_layer; ++s) {
            double* p = m.params.data() + off + s * LearnedActivation::kParamCount;
            for (int j = 0; j < 3; ++j) p[j] = init.w1[j];
            for (int j = 0; j < 3; ++j) p[3 + j] = init.b1[j];
            for (int j = 0; j < 3; ++j) p[6 + j] = init.w2[j];
            p[9] = init.b2;
        }
    }
}

}  // namespace detail

/// NestNet of height 2: an MLP stack whose hidden neurons are activated by
/// shallow trainable subnetworks, one (or r round-robin) per hidden layer.
inline Model build_nestnet(int width, int depth, EncodingSpec encoding, std::uint64_t seed,
                           int in_dim = 2, int out_dim = 1, int subnets_per_layer = 1) {
    if (width < 1 || depth < 1) throw std::invalid_argument("build_nestnet: width/depth >= 1");
    Model m;
    m.name = "nestnet";
    m.encoding = std::move(encoding);
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    m.subnets_per_layer = subnets_per_layer;
    Rng rng(seed);

    int feat = m.encoding.out_dim(in_dim);
    int prev = feat;
    for (int l = 0; l < depth; ++l) {
        detail::add_affine(m, prev, width);
        prev = width;
        m.activations.push_back(ActivationSpec::learned());
    }
    detail::add_affine(m, prev, out_dim);
    for (const auto& a : m.affine) detail::init_affine(m, a, detail::InitScheme::KaimingUniform, 0, rng);
    // learned-activation params come after all affine params
    detail::add_learned_activations(m, depth);
    return m;
}

inline Model build_baseline(BaselineKind kind, int width, int depth, ActivationSpec hyper,
                            EncodingSpec encoding, std::uint64_t seed, int in_dim = 2,
                            int out_dim = 1, double mfn_frequency_scale = 32.0) {
    if (width < 1 || depth < 1) throw std::invalid_argument("build_baseline: width/depth >= 1");
    Model m;
    m.name = to_string(kind);
    m.encoding = std::move(encoding);
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    Rng rng(seed);
    int feat = m.encoding.out_dim(in_dim);

    if (kind == BaselineKind::Mfn) {
        m.arch = ArchKind::Mfn;
        // depth hidden affines, depth+1 Fourier filters
        for (int f = 0; f < depth + 1; ++f) {
            Model::Filter flt;
            flt.in = feat;
            flt.width = width;
            flt.omega_off = detail::reserve_params(m, feat * width);
            flt.phase_off = detail::reserve_params(m, width);
            m.filters.push_back(flt);
        }
        for (int l = 0; l < depth; ++l) detail::add_affine(m, width, width);
        detail::add_affine(m, width, out_dim);
        for (const auto& f : m.filters) {
            detail::init_uniform(m, f.omega_off, f.in * f.width, mfn_frequency_scale, rng);
            for (int i = 0; i < f.width; ++i)
                m.params[f.phase_off + i] = rng.uniform(-std::numbers::pi, std::numbers::pi);
        }
        for (const auto& a : m.affine)
            detail::init_affine(m, a, detail::InitScheme::KaimingUniform, 0, rng);
        m.act_off.assign(depth, -1);
        for (int l = 0; l < depth; ++l) m.activations.push_back(ActivationSpec::none());
        return m;
    }

    ActivationSpec act;
    switch (kind) {
        case BaselineKind::MlpRelu:
        case BaselineKind::Ffn: act = ActivationSpec::relu(); break;
        case BaselineKind::Siren: act = ActivationSpec::sine(hyper.omega0); break;
        case BaselineKind::Gaussian: act = ActivationSpec::gaussian(hyper.s0); break;
        case BaselineKind::WireReal: act = ActivationSpec::gabor_real(hyper.omega0, hyper.s0); break;
        default: throw std::invalid_argument("build_baseline: unknown kind");
    }
    // WIRE trades width for its two-factor activation
    int w = kind == BaselineKind::WireReal
                ? std::max(1, static_cast<int>(std::lround(width / std::sqrt(2.0))))
                : width;

    int prev = feat;
    for (int l = 0; l < depth; ++l) {
        detail::add_affine(m, prev, w);
        prev = w;
        m.activations.push_back(act);
        m.act_off.push_back(-1);
    }
    detail::add_affine(m, prev, out_dim);

    for (std::size_t i = 0; i < m.affine.size(); ++i) {
        detail::InitScheme scheme = detail::InitScheme::KaimingUniform;
        if (kind == BaselineKind::Siren)
            scheme = i == 0 ? detail::InitScheme::SirenFirst : detail::InitScheme::SirenHidden;
        detail::init_affine(m, m.affine[i], scheme, act.omega0, rng);
    }
    return m;
}

// --- forward evaluation ------------------------------------------------------

/// Fourier features of one coordinate vector, axis-major then frequency:
/// for axis j, frequency i: [alpha_i cos(2 pi beta_i x_j), alpha_i sin(...)].
template <class V>
std::vector<V> encode(const EncodingSpec& spec, Tape&, std::span<const V> x) {
    if (spec.kind == EncodingSpec::Kind::Identity) return std::vector<V>(x.begin(), x.end());
    std::vector<V> out;
    out.reserve(spec.out_dim(static_cast<int>(x.size())));
    for (const V& xj : x) {
        for (int i = 0; i < spec.num_frequencies(); ++i) {
            V arg = (2.0 * std::numbers::pi * spec.beta[i]) * xj;
            out.push_back(spec.alpha[i] * vcos(arg));
            out.push_back(spec.alpha[i] * vsin(arg));
        }
    }
    return out;
}

/// Eq.-style trainable activation applied through the tape; `p` points at the
/// subnetwork's 10 parameter leaves (w1, b1, w2, b2).
template <class V>
V rho_eval(Tape& tape, std::span<const Node> p, V h) {
    V acc = V::lift(tape, p[9]);  // b2
    for (int j = 0; j < 3; ++j) {
        V z = V::lift(tape, p[j]) * h + V::lift(tape, p[3 + j]);
        acc = acc + V::lift(tape, p[6 + j]) * vrelu(z);
    }
    return acc;
}

namespace detail {

template <class V>
V apply_activation(const Model& m, Tape& tape, std::span<const Node> params, int layer, int neuron,
                   V z) {
    const ActivationSpec& a = m.activations[layer];
    switch (a.kind) {
        case ActivationSpec::Kind::Relu: return vrelu(z);
        case ActivationSpec::Kind::Sine: return vsin(a.omega0 * z);
        case ActivationSpec::Kind::Gaussian: return vexp(-vsquare(a.s0 * z));
        case ActivationSpec::Kind::GaborReal:
            return vcos(a.omega0 * z) * vexp(-vsquare(a.s0 * z));
        case ActivationSpec::Kind::Learned: {
            int subnet = neuron % m.subnets_per_layer;
            int off = m.act_off[layer] + subnet * LearnedActivation::kParamCount;
            return rho_eval(tape, params.subspan(off, LearnedActivation::kParamCount), z);
        }
        case ActivationSpec::Kind::None: return z;
    }
    throw std::logic_error("apply_activation: unreachable");
}

template <class V>
std::vector<V> affine_apply(const Model::Affine& a, Tape& tape, std::span<const Node> params,
                            std::span<const V> in) {
    std::vector<V> out;
    out.reserve(a.out);
    for (int o = 0; o < a.out; ++o) {
        V acc = V::lift(tape, params[a.b_off + o]);
        const int row = a.w_off + o * a.in;
        for (int i = 0; i < a.in; ++i) acc = acc + V::lift(tape, params[row + i]) * in[i];
        out.push_back(acc);
    }
    return out;
}

template <class V>
std::vector<V> filter_apply(const Model::Filter& f, Tape& tape, std::span<const Node> params,
                            std::span<const V> x) {
    std::vector<V> out;
    out.reserve(f.width);
    for (int o = 0; o < f.width; ++o) {
        V acc = V::lift(tape, params[f.phase_off + o]);
        const int row = f.omega_off + o * f.in;
        for (int i = 0; i < f.in; ++i) acc = acc + V::lift(tape, params[row + i]) * x[i];
        out.push_back(vsin(acc));
    }
    return out;
}

}  // namespace detail

/// Full network evaluation on the tape. `params` are the model's parameter
/// leaves, aligned with Model::params.
template <class V>
std::vector<V> forward(const Model& m, Tape& tape, std::span<const Node> params,
                       std::span<const V> x) {
    if (static_cast<int>(x.size()) != m.in_dim)
        throw std::invalid_argument("forward: input dimension mismatch");
    std::vector<V> h = encode(m.encoding, tape, x);

    if (m.arch == ArchKind::Mfn) {
        std::vector<V> feat(h);
        std::vector<V> z = detail::filter_apply(m.filters[0], tape, params, std::span<const V>(feat));
        for (int l = 0; l < m.hidden_layers(); ++l) {
            std::vector<V> lin =
                detail::affine_apply(m.affine[l], tape, params, std::span<const V>(z));
            std::vector<V> g =
                detail::filter_apply(m.filters[l + 1], tape, params, std::span<const V>(feat));
            z.clear();
            for (std::size_t i = 0; i < lin.size(); ++i) z.push_back(lin[i] * g[i]);
        }
        return detail::affine_apply(m.affine.back(), tape, params, std::span<const V>(z));
    }

    for (int l = 0; l < m.hidden_layers(); ++l) {
        std::vector<V> lin = detail::affine_apply(m.affine[l], tape, params, std::span<const V>(h));
        h.clear();
        for (std::size_t i = 0; i < lin.size(); ++i)
            h.push_back(detail::apply_activation(m, tape, params, l, static_cast<int>(i), lin[i]));
    }
    return detail::affine_apply(m.affine.back(), tape, params, std::span<const V>(h));
}

/// Register every model parameter as a trainable leaf.
inline std::vector<Node> make_param_leaves(const Model& m, Tape& tape) {
    std::vector<Node> leaves;
    leaves.reserve(m.params.size());
    for (double v : m.params) leaves.push_back(tape.leaf(v, true));
    return leaves;
}

/// Sample a learned activation on [-3, 3] with 601 points.
inline std::vector<std::pair<double, double>> sample_activation(const LearnedActivation& a,
                                                                int points = 601) {
    std::vector<std::pair<double, double>> table;
    table.reserve(points);
    for (int i = 0; i < points; ++i) {
        double h = -3.0 + 6.0 * i / (points - 1);
        table.emplace_back(h, a.eval(h));
    }
    return table;
}

/// Count breakpoints of a sampled piecewise-linear function. A breakpoint
/// between two sample points makes the secant through that interval take an
/// intermediate slope, so a lone interval whose slope lies strictly between
/// its neighbors' is one breakpoint, not two.
inline int count_slope_changes(const std::vector<std::pair<double, double>>& table,
                               double tol = 1e-9) {
    double max_slope = 0.0;
    std::vector<double> slopes;
    for (std::size_t i = 0; i + 1 < table.size(); ++i) {
        double s = (table[i + 1].second - table[i].second) / (table[i + 1].first - table[i].first);
        slopes.push_back(s);
        max_slope = std::max(max_slope, std::abs(s));
    }
    const double thresh = tol * std::max(1.0, max_slope);

    // compress into runs of equal slope
    struct Run {
        double slope;
        std::size_t len;
    };
    std::vector<Run> runs;
    for (double s : slopes) {
        if (!runs.empty() && std::abs(s - runs.back().slope) <= thresh)
            ++runs.back().len;
        else
            runs.push_back({s, 1});
    }
    auto strictly_between = [&](double mid, double lo, double hi) {
        return (lo + thresh < mid && mid < hi - thresh) || (hi + thresh < mid && mid < lo - thresh);
    };
    int kinks = 0;
    std::size_t i = 0;
    while (i + 1 < runs.size()) {
        if (runs[i + 1].len == 1 && i + 2 < runs.size() &&
            strictly_between(runs[i + 1].slope, runs[i].slope, runs[i + 2].slope)) {
            ++kinks;  // off-grid breakpoint inside one sampling interval
            i += 2;
        } else {
            ++kinks;
            ++i;
        }
    }
    return kinks;
}

}  // namespace nestlab
