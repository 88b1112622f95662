#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nestlab::ad {

enum class Op : std::uint8_t {
    Const,
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Relu,
    Square,
    Sqrt,
    Max,
    // Heaviside gate used by forward tangents of relu/max. Its own derivative
    // is zero almost everywhere, which is exactly what forward-over-reverse
    // needs for piecewise-linear primitives.
    ReluGate,
};

struct Node {
    std::uint32_t id = 0xffffffffu;
    bool valid() const { return id != 0xffffffffu; }
};

struct DualNode {
    Node primal;
    Node tangent;
};

class Tape;

/// Adjoints of one backward pass, indexed by node id. Entries exist for every
/// node; trainable leaves are listed by the tape.
class GradientMap {
  public:
    GradientMap() = default;
    explicit GradientMap(std::vector<double> adj) : adj_(std::move(adj)) {}
    double at(Node n) const { return adj_.at(n.id); }
    double operator[](Node n) const { return adj_[n.id]; }
    std::size_t size() const { return adj_.size(); }

  private:
    std::vector<double> adj_;
};

class Tape {
  public:
    Tape() = default;

    std::size_t size() const { return op_.size(); }
    double value(Node n) const { return val_[n.id]; }
    Op op(Node n) const { return static_cast<Op>(op_[n.id]); }
    const std::vector<std::uint32_t>& trainable() const { return trainable_; }

    Node constant(double v) {
        if (!std::isfinite(v)) throw std::invalid_argument("tape: non-finite constant");
        return push(Op::Const, 0, 0, v);
    }

    Node leaf(double v, bool trainable = false) {
        if (!std::isfinite(v)) throw std::invalid_argument("tape: non-finite leaf value");
        Node n = push(Op::Leaf, 0, 0, v);
        if (trainable) trainable_.push_back(n.id);
        return n;
    }

    /// Shared constant-zero node, created on first use.
    Node zero() {
        if (zero_id_ == 0xffffffffu) zero_id_ = constant(0.0).id;
        return Node{zero_id_};
    }
    bool is_zero_node(Node n) const { return n.id == zero_id_; }

    /// Overwrite the stored value of a leaf or constant (used between replays).
    void set_value(Node n, double v) {
        Op o = op(n);
        if (o != Op::Leaf && o != Op::Const)
            throw std::invalid_argument("tape: set_value on interior node");
        if (!std::isfinite(v)) throw std::invalid_argument("tape: non-finite value");
        val_[n.id] = v;
    }

    Node apply(Op o, std::span<const Node> in) {
        check_inputs(o, in);
        switch (o) {
            case Op::Add: return push(o, in[0].id, in[1].id, val_[in[0].id] + val_[in[1].id]);
            case Op::Sub: return push(o, in[0].id, in[1].id, val_[in[0].id] - val_[in[1].id]);
            case Op::Mul: return push(o, in[0].id, in[1].id, val_[in[0].id] * val_[in[1].id]);
            case Op::Div:
                if (val_[in[1].id] == 0.0) throw std::domain_error("tape: division by zero");
                return push(o, in[0].id, in[1].id, val_[in[0].id] / val_[in[1].id]);
            case Op::Neg: return push(o, in[0].id, 0, -val_[in[0].id]);
            case Op::Sin: return push(o, in[0].id, 0, std::sin(val_[in[0].id]));
            case Op::Cos: return push(o, in[0].id, 0, std::cos(val_[in[0].id]));
            case Op::Exp: return push(o, in[0].id, 0, std::exp(val_[in[0].id]));
            case Op::Relu: return push(o, in[0].id, 0, val_[in[0].id] > 0.0 ? val_[in[0].id] : 0.0);
            case Op::Square: return push(o, in[0].id, 0, val_[in[0].id] * val_[in[0].id]);
            case Op::Sqrt:
                if (val_[in[0].id] < 0.0) throw std::domain_error("tape: sqrt of negative value");
                return push(o, in[0].id, 0, std::sqrt(val_[in[0].id]));
            case Op::Max:
                return push(o, in[0].id, in[1].id,
                            val_[in[0].id] >= val_[in[1].id] ? val_[in[0].id] : val_[in[1].id]);
            case Op::ReluGate: return push(o, in[0].id, 0, val_[in[0].id] > 0.0 ? 1.0 : 0.0);
            default: throw std::invalid_argument("tape: apply on non-operation node kind");
        }
    }

    Node add(Node a, Node b) { return apply2(Op::Add, a, b); }
    Node sub(Node a, Node b) { return apply2(Op::Sub, a, b); }
    Node mul(Node a, Node b) { return apply2(Op::Mul, a, b); }
    Node div(Node a, Node b) { return apply2(Op::Div, a, b); }
    Node max(Node a, Node b) { return apply2(Op::Max, a, b); }
    Node neg(Node a) { return apply1(Op::Neg, a); }
    Node sin(Node a) { return apply1(Op::Sin, a); }
    Node cos(Node a) { return apply1(Op::Cos, a); }
    Node exp(Node a) { return apply1(Op::Exp, a); }
    Node relu(Node a) { return apply1(Op::Relu, a); }
    Node square(Node a) { return apply1(Op::Square, a); }
    Node sqrt(Node a) { return apply1(Op::Sqrt, a); }

    /// Recompute every primal value from the current leaf/constant values.
    /// The structure is fixed; only values change.
    void replay() {
        const std::size_t n = op_.size();
        const std::uint32_t* a = a_.data();
        const std::uint32_t* b = b_.data();
        double* v = val_.data();
        for (std::size_t i = 0; i < n; ++i) {
            switch (static_cast<Op>(op_[i])) {
                case Op::Const:
                case Op::Leaf: break;
                case Op::Add: v[i] = v[a[i]] + v[b[i]]; break;
                case Op::Sub: v[i] = v[a[i]] - v[b[i]]; break;
                case Op::Mul: v[i] = v[a[i]] * v[b[i]]; break;
                case Op::Div:
                    if (v[b[i]] == 0.0) throw std::domain_error("tape: division by zero in replay");
                    v[i] = v[a[i]] / v[b[i]];
                    break;
                case Op::Neg: v[i] = -v[a[i]]; break;
                case Op::Sin: v[i] = std::sin(v[a[i]]); break;
                case Op::Cos: v[i] = std::cos(v[a[i]]); break;
                case Op::Exp: v[i] = std::exp(v[a[i]]); break;
                case Op::Relu: v[i] = v[a[i]] > 0.0 ? v[a[i]] : 0.0; break;
                case Op::Square: v[i] = v[a[i]] * v[a[i]]; break;
                case Op::Sqrt:
                    if (v[a[i]] < 0.0) throw std::domain_error("tape: sqrt of negative in replay");
                    v[i] = std::sqrt(v[a[i]]);
                    break;
                case Op::Max: v[i] = v[a[i]] >= v[b[i]] ? v[a[i]] : v[b[i]]; break;
                case Op::ReluGate: v[i] = v[a[i]] > 0.0 ? 1.0 : 0.0; break;
            }
        }
    }

    /// Hash of all relu/max branch decisions at current values. Two replays
    /// with the same signature evaluated the same linear piece.
    std::uint64_t gate_signature() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (std::size_t i = 0; i < op_.size(); ++i) {
            Op o = static_cast<Op>(op_[i]);
            bool gate;
            if (o == Op::Relu || o == Op::ReluGate) gate = val_[a_[i]] > 0.0;
            else if (o == Op::Max) gate = val_[a_[i]] >= val_[b_[i]];
            else continue;
            h = (h ^ (gate ? 0x9eu : 0x31u)) * 1099511628211ULL;
        }
        return h;
    }

    /// Reverse accumulation into a caller-provided adjoint buffer of size().
    /// The buffer must be zeroed beforehand; `seed` is added to the output's
    /// adjoint, so batched per-point losses can be weighted and accumulated.
    void backward_into(Node output, std::span<double> adj, double seed = 1.0) const {
        if (output.id >= op_.size()) throw std::invalid_argument("tape: output not on this tape");
        if (adj.size() != op_.size()) throw std::invalid_argument("tape: adjoint buffer size");
        adj[output.id] += seed;
        const std::uint32_t* a = a_.data();
        const std::uint32_t* b = b_.data();
        const double* v = val_.data();
        double* g = adj.data();
        for (std::uint32_t i = output.id + 1; i-- > 0;) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            switch (static_cast<Op>(op_[i])) {
                case Op::Const:
                case Op::Leaf:
                case Op::ReluGate: break;
                case Op::Add:
                    g[a[i]] += gi;
                    g[b[i]] += gi;
                    break;
                case Op::Sub:
                    g[a[i]] += gi;
                    g[b[i]] -= gi;
                    break;
                case Op::Mul:
                    g[a[i]] += gi * v[b[i]];
                    g[b[i]] += gi * v[a[i]];
                    break;
                case Op::Div:
                    g[a[i]] += gi / v[b[i]];
                    g[b[i]] -= gi * v[i] / v[b[i]];
                    break;
                case Op::Neg: g[a[i]] -= gi; break;
                case Op::Sin: g[a[i]] += gi * std::cos(v[a[i]]); break;
                case Op::Cos: g[a[i]] -= gi * std::sin(v[a[i]]); break;
                case Op::Exp: g[a[i]] += gi * v[i]; break;
                case Op::Relu:
                    if (v[a[i]] > 0.0) g[a[i]] += gi;
                    break;
                case Op::Square: g[a[i]] += gi * 2.0 * v[a[i]]; break;
                case Op::Sqrt:
                    if (v[i] > 0.0) g[a[i]] += gi * 0.5 / v[i];
                    break;
                case Op::Max:
                    if (v[a[i]] >= v[b[i]]) g[a[i]] += gi;
                    else g[b[i]] += gi;
                    break;
            }
        }
    }

    GradientMap backward(Node output) const {
        std::vector<double> adj(op_.size(), 0.0);
        backward_into(output, adj);
        return GradientMap(std::move(adj));
    }

    // --- forward tangents recorded as tape nodes -----------------------------

    /// Declare a directional-derivative seed on a leaf. The tangent is a
    /// constant node, so backward() can run through anything built on top.
    DualNode dual_seed(Node input, double direction) {
        if (op(input) != Op::Leaf) throw std::invalid_argument("tape: dual_seed on non-leaf");
        Node t = direction == 0.0 ? zero() : constant(direction);
        return DualNode{input, t};
    }

    DualNode lift(Node n) { return DualNode{n, zero()}; }

    DualNode dual_apply(Op o, std::span<const DualNode> in) {
        std::vector<Node> prim(in.size()), tang(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) {
            prim[i] = in[i].primal;
            tang[i] = in[i].tangent;
        }
        Node p = apply(o, prim);
        Node t = record_tangent(o, prim, tang, p);
        return DualNode{p, t};
    }

    DualNode dual_add(DualNode a, DualNode b) { return dual2(Op::Add, a, b); }
    DualNode dual_sub(DualNode a, DualNode b) { return dual2(Op::Sub, a, b); }
    DualNode dual_mul(DualNode a, DualNode b) { return dual2(Op::Mul, a, b); }
    DualNode dual_div(DualNode a, DualNode b) { return dual2(Op::Div, a, b); }
    DualNode dual_max(DualNode a, DualNode b) { return dual2(Op::Max, a, b); }
    DualNode dual_neg(DualNode a) { return dual1(Op::Neg, a); }
    DualNode dual_sin(DualNode a) { return dual1(Op::Sin, a); }
    DualNode dual_cos(DualNode a) { return dual1(Op::Cos, a); }
    DualNode dual_exp(DualNode a) { return dual1(Op::Exp, a); }
    DualNode dual_relu(DualNode a) { return dual1(Op::Relu, a); }
    DualNode dual_square(DualNode a) { return dual1(Op::Square, a); }
    DualNode dual_sqrt(DualNode a) { return dual1(Op::Sqrt, a); }

    // Chain rule for each primitive, recorded as tape nodes. Tangents that are
    // the shared zero node are short-circuited so that parameter-only subtrees
    // cost nothing extra. Also used directly by multi-tangent value types.
    Node record_tangent(Op o, std::span<const Node> prim, std::span<const Node> tang,
                        Node primal) {
        auto z = [this](Node n) { return is_zero_node(n); };
        switch (o) {
            case Op::Add: {
                if (z(tang[0])) return tang[1];
                if (z(tang[1])) return tang[0];
                return add(tang[0], tang[1]);
            }
            case Op::Sub: {
                if (z(tang[1])) return tang[0];
                if (z(tang[0])) return neg(tang[1]);
                return sub(tang[0], tang[1]);
            }
            case Op::Mul: {
                Node left = z(tang[0]) ? zero() : mul(tang[0], prim[1]);
                Node right = z(tang[1]) ? zero() : mul(prim[0], tang[1]);
                if (z(left)) return right;
                if (z(right)) return left;
                return add(left, right);
            }
            case Op::Div: {
                // d(a/b) = (da - (a/b) db) / b
                if (z(tang[0]) && z(tang[1])) return zero();
                Node num = z(tang[1])   ? tang[0]
                           : z(tang[0]) ? neg(mul(primal, tang[1]))
                                        : sub(tang[0], mul(primal, tang[1]));
                return div(num, prim[1]);
            }
            case Op::Neg: return z(tang[0]) ? zero() : neg(tang[0]);
            case Op::Sin: return z(tang[0]) ? zero() : mul(cos(prim[0]), tang[0]);
            case Op::Cos: return z(tang[0]) ? zero() : neg(mul(sin(prim[0]), tang[0]));
            case Op::Exp: return z(tang[0]) ? zero() : mul(primal, tang[0]);
            case Op::Relu:
                return z(tang[0]) ? zero() : mul(apply1(Op::ReluGate, prim[0]), tang[0]);
            case Op::Square:
                return z(tang[0]) ? zero() : mul(constant(2.0), mul(prim[0], tang[0]));
            case Op::Sqrt:
                return z(tang[0]) ? zero() : div(tang[0], mul(constant(2.0), primal));
            case Op::Max: {
                if (z(tang[0]) && z(tang[1])) return zero();
                // tb + gate * (ta - tb), gate = H(a - b)
                Node gate = apply1(Op::ReluGate, sub(prim[0], prim[1]));
                if (z(tang[1])) return mul(gate, tang[0]);
                if (z(tang[0])) return sub(tang[1], mul(gate, tang[1]));
                return add(tang[1], mul(gate, sub(tang[0], tang[1])));
            }
            default: throw std::invalid_argument("tape: tangent of non-operation");
        }
    }

  private:
    Node push(Op o, std::uint32_t a, std::uint32_t b, double v) {
        op_.push_back(static_cast<std::uint8_t>(o));
        a_.push_back(a);
        b_.push_back(b);
        val_.push_back(v);
        return Node{static_cast<std::uint32_t>(op_.size() - 1)};
    }

    Node apply1(Op o, Node a) {
        const Node in[1] = {a};
        return apply(o, in);
    }
    Node apply2(Op o, Node a, Node b) {
        const Node in[2] = {a, b};
        return apply(o, in);
    }
    DualNode dual1(Op o, DualNode a) {
        const DualNode in[1] = {a};
        return dual_apply(o, in);
    }
    DualNode dual2(Op o, DualNode a, DualNode b) {
        const DualNode in[2] = {a, b};
        return dual_apply(o, in);
    }

    static int arity(Op o) {
        switch (o) {
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Max: return 2;
            case Op::Neg:
            case Op::Sin:
            case Op::Cos:
            case Op::Exp:
            case Op::Relu:
            case Op::Square:
            case Op::Sqrt:
            case Op::ReluGate: return 1;
            default: return 0;
        }
    }

    void check_inputs(Op o, std::span<const Node> in) const {
        if (static_cast<int>(in.size()) != arity(o))
            throw std::invalid_argument("tape: arity mismatch");
        for (Node n : in)
            if (n.id >= op_.size()) throw std::invalid_argument("tape: input from another tape");
    }

    std::vector<std::uint8_t> op_;
    std::vector<std::uint32_t> a_, b_;
    std::vector<double> val_;
    std::vector<std::uint32_t> trainable_;
    std::uint32_t zero_id_ = 0xffffffffu;
};

// --- finite-difference oracle ------------------------------------------------

struct FdReport {
    double max_rel_err = 0.0;            // over non-skipped coordinates
    std::vector<double> rel_err;         // per coordinate; NaN if skipped
    std::vector<bool> skipped;           // crossed a relu/max breakpoint
};

/// Central-difference check of a scalar function built on a fresh tape.
/// `build` receives the tape and one trainable leaf per coordinate and must
/// return the scalar output node. Coordinates whose +/-h evaluations land on
/// different linear pieces (relu/max gates flip) are flagged and skipped.
inline FdReport finite_difference_check(
    const std::function<Node(Tape&, std::span<const Node>)>& build,
    std::span<const double> point, double h) {
    Tape tape;
    std::vector<Node> leaves(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) leaves[i] = tape.leaf(point[i], true);
    Node out = build(tape, leaves);
    GradientMap grads = tape.backward(out);

    FdReport rep;
    rep.rel_err.resize(point.size());
    rep.skipped.resize(point.size(), false);
    for (std::size_t i = 0; i < point.size(); ++i) {
        tape.set_value(leaves[i], point[i] + h);
        tape.replay();
        const double fp = tape.value(out);
        const std::uint64_t sig_p = tape.gate_signature();
        tape.set_value(leaves[i], point[i] - h);
        tape.replay();
        const double fm = tape.value(out);
        const std::uint64_t sig_m = tape.gate_signature();
        tape.set_value(leaves[i], point[i]);
        tape.replay();

        if (sig_p != sig_m) {
            rep.skipped[i] = true;
            rep.rel_err[i] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double fd = (fp - fm) / (2.0 * h);
        const double an = grads.at(leaves[i]);
        const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
        rep.rel_err[i] = std::abs(an - fd) / denom;
        rep.max_rel_err = std::max(rep.max_rel_err, rep.rel_err[i]);
    }
    return rep;
}

}  // namespace nestlab::ad
