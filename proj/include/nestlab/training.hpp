#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "models.hpp"
#include "operators.hpp"

namespace nestlab {

// --- optimizer ---------------------------------------------------------------

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n = 0, double lr_ = 1e-3) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

/// Standard bias-corrected Adam update, in place.
inline void adam_step(AdamState& st, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw std::invalid_argument("adam_step: length mismatch");
    ++st.t;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(grads[i]))
            throw std::runtime_error("adam_step: non-finite gradient at parameter " +
                                     std::to_string(i));
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

struct Schedule {
    enum class Kind { Constant, ExponentialToFraction } kind = Kind::ExponentialToFraction;
    double final_fraction = 0.1;

    static Schedule constant() { return {Kind::Constant, 1.0}; }
    static Schedule exponential(double final_fraction = 0.1) {
        return {Kind::ExponentialToFraction, final_fraction};
    }

    /// lr at `epoch` of `total`; the exponential variant decays so that
    /// lr(total-1) = final_fraction * lr0.
    double lr_at(int epoch, int total, double lr0) const {
        if (kind == Kind::Constant || total <= 1) return lr0;
        return lr0 * std::pow(final_fraction, static_cast<double>(epoch) / (total - 1));
    }
};

struct LossSpec {
    enum class Kind { PointwiseL2, PinnConvection } kind = Kind::PointwiseL2;
    double beta = 10.0;
    std::array<double, 3> weights{1.0, 1.0, 1.0};  // w_ic, w_bc, w_pde
};

// --- loss graphs -------------------------------------------------------------

/// Mean of squared differences over all entries (channel-wise pointwise l2).
inline Node l2_loss(Tape& tape, std::span<const Node> preds, std::span<const double> targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("l2_loss: length mismatch");
    if (preds.empty()) throw std::invalid_argument("l2_loss: empty batch");
    Node acc = tape.square(tape.sub(preds[0], tape.constant(targets[0])));
    for (std::size_t i = 1; i < preds.size(); ++i)
        acc = tape.add(acc, tape.square(tape.sub(preds[i], tape.constant(targets[i]))));
    return tape.div(acc, tape.constant(static_cast<double>(preds.size())));
}

namespace detail {

// The convection domain [0, 2 pi] x [0, 1] is mapped to the network's
// [-1, 1]^2 input box; tangent seeds carry the chain-rule factors so the
// recorded tangents are derivatives with respect to physical x and t.
inline constexpr double kXScale = 1.0 / std::numbers::pi;  // d(xm)/dx
inline constexpr double kTScale = 2.0;                     // d(tm)/dt

inline double map_x(double x) { return x / std::numbers::pi - 1.0; }
inline double map_t(double t) { return 2.0 * t - 1.0; }

/// u, u_x, u_t at one physical point, all as tape nodes.
struct ResidualNodes {
    Node u, u_x, u_t, residual;
};

inline ResidualNodes convection_residual(Tape& tape, const Model& m,
                                         std::span<const Node> params, Node xm_leaf, Node tm_leaf,
                                         double beta) {
    Dual2 xin{&tape, xm_leaf, tape.constant(kXScale), tape.zero()};
    Dual2 tin{&tape, tm_leaf, tape.zero(), tape.constant(kTScale)};
    const Dual2 in[2] = {xin, tin};
    std::vector<Dual2> out = forward(m, tape, params, std::span<const Dual2>(in));
    if (out.size() != 1) throw std::invalid_argument("convection residual: scalar output required");
    ResidualNodes r;
    r.u = out[0].p;
    r.u_x = out[0].t1;
    r.u_t = out[0].t2;
    r.residual = tape.add(r.u_t, tape.mul(tape.constant(beta), r.u_x));
    return r;
}

}  // namespace detail

/// Composite PINN objective for the 1D convection problem:
/// w_ic * mean (u(x,0) - sin x)^2 + w_bc * mean (u(0,t) - u(2pi,t))^2
/// + w_pde * mean (u_t + beta u_x)^2, all built on one tape.
inline Node pinn_loss(Tape& tape, const Model& m, std::span<const Node> params,
                      const ConvectionPoints& pts, double beta,
                      std::array<double, 3> weights = {1.0, 1.0, 1.0}) {
    if (m.in_dim != 2) throw std::invalid_argument("pinn_loss: model input dim must be 2");
    const double L = 2.0 * std::numbers::pi;
    auto mean_term = [&](Node sum, std::size_t n) {
        return tape.div(sum, tape.constant(static_cast<double>(n)));
    };

    Node total = tape.zero();
    if (!pts.ic_x.empty()) {
        Node sum = tape.zero();
        for (double x : pts.ic_x) {
            const Val in[2] = {Val::lift(tape, tape.constant(detail::map_x(x))),
                               Val::lift(tape, tape.constant(detail::map_t(0.0)))};
            std::vector<Val> u = forward(m, tape, params, std::span<const Val>(in));
            sum = tape.add(sum, tape.square(tape.sub(u[0].node, tape.constant(std::sin(x)))));
        }
        total = tape.add(total, tape.mul(tape.constant(weights[0]), mean_term(sum, pts.ic_x.size())));
    }
    if (!pts.bc_t.empty()) {
        Node sum = tape.zero();
        for (double t : pts.bc_t) {
            const Val lo[2] = {Val::lift(tape, tape.constant(detail::map_x(0.0))),
                               Val::lift(tape, tape.constant(detail::map_t(t)))};
            const Val hi[2] = {Val::lift(tape, tape.constant(detail::map_x(L))),
                               Val::lift(tape, tape.constant(detail::map_t(t)))};
            std::vector<Val> ulo = forward(m, tape, params, std::span<const Val>(lo));
            std::vector<Val> uhi = forward(m, tape, params, std::span<const Val>(hi));
            sum = tape.add(sum, tape.square(tape.sub(ulo[0].node, uhi[0].node)));
        }
        total = tape.add(total, tape.mul(tape.constant(weights[1]), mean_term(sum, pts.bc_t.size())));
    }
    if (!pts.collocation.empty()) {
        Node sum = tape.zero();
        for (const auto& p : pts.collocation) {
            Node xm = tape.constant(detail::map_x(p[0]));
            Node tm = tape.constant(detail::map_t(p[1]));
            auto r = detail::convection_residual(tape, m, params, xm, tm, beta);
            sum = tape.add(sum, tape.square(r.residual));
        }
        total = tape.add(total,
                         tape.mul(tape.constant(weights[2]), mean_term(sum, pts.collocation.size())));
    }
    return total;
}

// --- batches -----------------------------------------------------------------

struct FitBatch {
    int in_dim = 2, out_dim = 1;
    std::vector<double> coords;   // size n * in_dim
    std::vector<double> targets;  // size n * out_dim

    std::size_t size() const { return in_dim ? coords.size() / in_dim : 0; }

    void push(std::span<const double> x, std::span<const double> y) {
        coords.insert(coords.end(), x.begin(), x.end());
        targets.insert(targets.end(), y.begin(), y.end());
    }
};

// --- replayable per-point programs ------------------------------------------
//
// Full-batch training replays one shared per-point graph over the batch:
// parameter leaves are recorded first, inputs next, then the per-point loss.
// Between points only the interior region of the adjoint buffer is cleared,
// so parameter adjoints accumulate the batch gradient in place.

namespace detail {

class PointProgram {
  public:
    void finish(Tape&& tape, std::vector<Node> params, std::vector<Node> inputs, Node loss) {
        tape_ = std::move(tape);
        params_ = std::move(params);
        inputs_ = std::move(inputs);
        loss_ = loss;
        adj_.assign(tape_.size(), 0.0);
    }

    void set_params(std::span<const double> p) {
        for (std::size_t i = 0; i < params_.size(); ++i) tape_.set_value(params_[i], p[i]);
    }

    void begin_epoch() { std::fill(adj_.begin(), adj_.end(), 0.0); }

    /// Replay with the given input values and accumulate `seed` times the
    /// per-point gradient into the parameter adjoints. Returns the point loss.
    double accumulate(std::span<const double> inputs, double seed) {
        for (std::size_t i = 0; i < inputs_.size(); ++i) tape_.set_value(inputs_[i], inputs[i]);
        tape_.replay();
        std::fill(adj_.begin() + params_.size(), adj_.end(), 0.0);
        tape_.backward_into(loss_, adj_, seed);
        return tape_.value(loss_);
    }

    /// Parameter adjoints accumulated since begin_epoch().
    void add_gradient_to(std::span<double> grad) const {
        for (std::size_t i = 0; i < params_.size(); ++i) grad[i] += adj_[i];
    }

    std::size_t num_inputs() const { return inputs_.size(); }
    Tape& tape() { return tape_; }

  private:
    Tape tape_;
    std::vector<Node> params_, inputs_;
    Node loss_;
    std::vector<double> adj_;
};

inline PointProgram make_supervised_program(const Model& m) {
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    std::vector<Node> inputs;
    std::vector<Val> x;
    for (int i = 0; i < m.in_dim; ++i) {
        inputs.push_back(tape.leaf(0.0));
        x.push_back(Val::lift(tape, inputs.back()));
    }
    std::vector<Node> targets;
    for (int i = 0; i < m.out_dim; ++i) {
        targets.push_back(tape.leaf(0.0));
        inputs.push_back(targets.back());
    }
    std::vector<Val> out = forward(m, tape, params, std::span<const Val>(x));
    Node loss = tape.square(tape.sub(out[0].node, targets[0]));
    for (int i = 1; i < m.out_dim; ++i)
        loss = tape.add(loss, tape.square(tape.sub(out[i].node, targets[i])));
    PointProgram prog;
    prog.finish(std::move(tape), std::move(params), std::move(inputs), loss);
    return prog;
}

inline PointProgram make_pde_program(const Model& m, double beta) {
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    Node xm = tape.leaf(0.0), tm = tape.leaf(0.0);
    auto r = convection_residual(tape, m, params, xm, tm, beta);
    Node loss = tape.square(r.residual);
    PointProgram prog;
    prog.finish(std::move(tape), std::move(params), {xm, tm}, loss);
    return prog;
}

inline PointProgram make_ic_program(const Model& m) {
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    Node xm = tape.leaf(0.0), target = tape.leaf(0.0);
    const Val in[2] = {Val::lift(tape, xm), Val::lift(tape, tape.constant(map_t(0.0)))};
    std::vector<Val> u = forward(m, tape, params, std::span<const Val>(in));
    Node loss = tape.square(tape.sub(u[0].node, target));
    PointProgram prog;
    prog.finish(std::move(tape), std::move(params), {xm, target}, loss);
    return prog;
}

inline PointProgram make_bc_program(const Model& m) {
    Tape tape;
    std::vector<Node> params = make_param_leaves(m, tape);
    Node tm = tape.leaf(0.0);
    const double L = 2.0 * std::numbers::pi;
    const Val lo[2] = {Val::lift(tape, tape.constant(map_x(0.0))), Val::lift(tape, tm)};
    const Val hi[2] = {Val::lift(tape, tape.constant(map_x(L))), Val::lift(tape, tm)};
    std::vector<Val> ulo = forward(m, tape, params, std::span<const Val>(lo));
    std::vector<Val> uhi = forward(m, tape, params, std::span<const Val>(hi));
    Node loss = tape.square(tape.sub(ulo[0].node, uhi[0].node));
    PointProgram prog;
    prog.finish(std::move(tape), std::move(params), {tm}, loss);
    return prog;
}

}  // namespace detail

// --- training loop -----------------------------------------------------------

struct CurvePoint {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<CurvePoint> curve;
};

using EpochCallback = std::function<void(int epoch, double lr, double loss, const Model& model)>;

/// Full-batch supervised fit; one Adam step per epoch, no regularization.
inline TrainResult train_supervised(Model& model, const FitBatch& batch, int epochs, double lr0,
                                    Schedule schedule, const EpochCallback& callback = {}) {
    if (epochs < 1) throw std::invalid_argument("train: epochs >= 1");
    if (batch.size() == 0) throw std::invalid_argument("train: empty batch");
    detail::PointProgram prog = detail::make_supervised_program(model);
    AdamState adam(model.params.size(), lr0);
    std::vector<double> grad(model.params.size());
    std::vector<double> point(model.in_dim + model.out_dim);
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    TrainResult result;
    result.curve.reserve(epochs);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        prog.set_params(model.params);
        prog.begin_epoch();
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int d = 0; d < model.in_dim; ++d) point[d] = batch.coords[i * batch.in_dim + d];
            for (int d = 0; d < model.out_dim; ++d)
                point[model.in_dim + d] = batch.targets[i * batch.out_dim + d];
            loss += prog.accumulate(point, inv_n);
        }
        loss *= inv_n;
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
        std::fill(grad.begin(), grad.end(), 0.0);
        prog.add_gradient_to(grad);
        adam.lr = schedule.lr_at(epoch, epochs, lr0);
        adam_step(adam, model.params, grad);
        result.curve.push_back({epoch, adam.lr, loss});
        if (callback) callback(epoch, adam.lr, loss, model);
    }
    return result;
}

/// Full-batch PINN training on the convection problem.
inline TrainResult train_pinn(Model& model, const ConvectionPoints& pts, double beta,
                              std::array<double, 3> weights, int epochs, double lr0,
                              Schedule schedule, const EpochCallback& callback = {}) {
    if (epochs < 1) throw std::invalid_argument("train: epochs >= 1");
    detail::PointProgram ic = detail::make_ic_program(model);
    detail::PointProgram bc = detail::make_bc_program(model);
    detail::PointProgram pde = detail::make_pde_program(model, beta);
    AdamState adam(model.params.size(), lr0);
    std::vector<double> grad(model.params.size());
    TrainResult result;
    result.curve.reserve(epochs);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double loss = 0.0;
        for (auto* p : {&ic, &bc, &pde}) {
            p->set_params(model.params);
            p->begin_epoch();
        }
        if (!pts.ic_x.empty()) {
            const double wn = weights[0] / static_cast<double>(pts.ic_x.size());
            double sum = 0.0;
            for (double x : pts.ic_x) {
                const double in[2] = {detail::map_x(x), std::sin(x)};
                sum += ic.accumulate(in, wn);
            }
            loss += wn * sum;
        }
        if (!pts.bc_t.empty()) {
            const double wn = weights[1] / static_cast<double>(pts.bc_t.size());
            double sum = 0.0;
            for (double t : pts.bc_t) {
                const double in[1] = {detail::map_t(t)};
                sum += bc.accumulate(in, wn);
            }
            loss += wn * sum;
        }
        if (!pts.collocation.empty()) {
            const double wn = weights[2] / static_cast<double>(pts.collocation.size());
            double sum = 0.0;
            for (const auto& p : pts.collocation) {
                const double in[2] = {detail::map_x(p[0]), detail::map_t(p[1])};
                sum += pde.accumulate(in, wn);
            }
            loss += wn * sum;
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
        std::fill(grad.begin(), grad.end(), 0.0);
        for (auto* p : {&ic, &bc, &pde}) p->add_gradient_to(grad);
        adam.lr = schedule.lr_at(epoch, epochs, lr0);
        adam_step(adam, model.params, grad);
        result.curve.push_back({epoch, adam.lr, loss});
        if (callback) callback(epoch, adam.lr, loss, model);
    }
    return result;
}

// --- evaluation --------------------------------------------------------------

/// Replay-based forward evaluation of a trained model on arbitrary points.
class ModelEvaluator {
  public:
    explicit ModelEvaluator(const Model& m) : model_(&m) {
        params_ = make_param_leaves(m, tape_);
        std::vector<Val> x;
        for (int i = 0; i < m.in_dim; ++i) {
            inputs_.push_back(tape_.leaf(0.0));
            x.push_back(Val::lift(tape_, inputs_.back()));
        }
        std::vector<Val> out = forward(m, tape_, params_, std::span<const Val>(x));
        for (const Val& o : out) outputs_.push_back(o.node);
        refresh();
    }

    /// Re-read parameter values from the model (after training steps).
    void refresh() {
        for (std::size_t i = 0; i < params_.size(); ++i)
            tape_.set_value(params_[i], model_->params[i]);
    }

    std::vector<double> operator()(std::span<const double> x) {
        for (std::size_t i = 0; i < inputs_.size(); ++i) tape_.set_value(inputs_[i], x[i]);
        tape_.replay();
        std::vector<double> out;
        out.reserve(outputs_.size());
        for (Node n : outputs_) out.push_back(tape_.value(n));
        return out;
    }

  private:
    const Model* model_;
    Tape tape_;
    std::vector<Node> params_, inputs_, outputs_;
};

}  // namespace nestlab
