#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "models.hpp"
#include "operators.hpp"
#include "training.hpp"

namespace nestlab {

// Built-in oracle suite: every check here recomputes a quantity along an
// independent route (finite differences, explicit transpose, closed form)
// and reports the worst mismatch. The CLI `verify` subcommand and the test
// suites both run these.

struct CheckResult {
    std::string name;
    double value = 0.0;      // worst observed error
    double threshold = 0.0;  // pass iff value <= threshold
    bool passed() const { return value <= threshold; }
};

namespace detail {

/// Central differences on a prebuilt tape: perturb chosen trainable leaves,
/// replay, compare against one reverse pass. Coordinates whose perturbed
/// evaluations cross a relu/max breakpoint are skipped.
inline double fd_vs_backward(Tape& tape, std::span<const Node> leaves, Node out,
                             std::span<const std::size_t> coords, double h) {
    ad::GradientMap grads = tape.backward(out);
    double max_rel = 0.0;
    for (std::size_t i : coords) {
        const double v0 = tape.value(leaves[i]);
        tape.set_value(leaves[i], v0 + h);
        tape.replay();
        const double fp = tape.value(out);
        const std::uint64_t sig_p = tape.gate_signature();
        tape.set_value(leaves[i], v0 - h);
        tape.replay();
        const double fm = tape.value(out);
        const std::uint64_t sig_m = tape.gate_signature();
        tape.set_value(leaves[i], v0);
        tape.replay();
        if (sig_p != sig_m) continue;  // kink crossed; derivative undefined here
        const double fd = (fp - fm) / (2.0 * h);
        const double an = grads.at(leaves[i]);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < count; ++i) coords.push_back(rng.uniform_index(n));
    return coords;
}

}  // namespace detail

/// Analytic gradient of the pointwise-l2 loss vs central differences.
inline CheckResult check_l2_gradient(const Model& model, int n_points, int n_coords,
                                     std::uint64_t seed, double h = 1e-6) {
    Rng rng(seed);
    Tape tape;
    Model m = model;
    std::vector<Node> params = make_param_leaves(m, tape);
    std::vector<Node> preds;
    std::vector<double> targets;
    for (int p = 0; p < n_points; ++p) {
        std::vector<Val> x;
        for (int d = 0; d < m.in_dim; ++d)
            x.push_back(Val::lift(tape, tape.constant(rng.uniform(-1.0, 1.0))));
        std::vector<Val> out = forward(m, tape, params, std::span<const Val>(x));
        for (const Val& o : out) {
            preds.push_back(o.node);
            targets.push_back(rng.uniform(0.0, 1.0));
        }
    }
    Node loss = l2_loss(tape, preds, targets);
    auto coords = detail::pick_coords(params.size(), n_coords, rng);
    return {"l2 gradient vs finite differences",
            detail::fd_vs_backward(tape, params, loss, coords, h), 1e-5};
}

/// Analytic gradient of the composite PINN loss vs central differences.
inline CheckResult check_pinn_gradient(const Model& model, int n_col, int n_coords,
                                       std::uint64_t seed, double h = 1e-6) {
    Rng rng(seed);
    Tape tape;
    Model m = model;
    std::vector<Node> params = make_param_leaves(m, tape);
    ConvectionProblem prob;
    prob.n_ic = 8;
    prob.n_bc = 4;
    prob.n_col = n_col;
    prob.rng_seed = seed + 1;
    ConvectionPoints pts = sample_convection_points(prob);
    Node loss = pinn_loss(tape, m, params, pts, 10.0);
    auto coords = detail::pick_coords(params.size(), n_coords, rng);
    return {"pinn gradient vs finite differences",
            detail::fd_vs_backward(tape, params, loss, coords, h), 1e-5};
}

/// d/dtheta of the convection residual at single points vs finite differences
/// of the residual itself (exercises reverse mode through forward tangents).
inline CheckResult check_second_order_path(const Model& model, int n_points, int n_coords,
                                           std::uint64_t seed, double h = 1e-6) {
    Rng rng(seed);
    Model m = model;
    double max_rel = 0.0;
    for (int p = 0; p < n_points; ++p) {
        Tape tape;
        std::vector<Node> params = make_param_leaves(m, tape);
        Node xm = tape.constant(rng.uniform(-1.0, 1.0));
        Node tm = tape.constant(rng.uniform(-1.0, 1.0));
        Dual2 xin{&tape, xm, tape.constant(detail::kXScale), tape.zero()};
        Dual2 tin{&tape, tm, tape.zero(), tape.constant(detail::kTScale)};
        const Dual2 in[2] = {xin, tin};
        std::vector<Dual2> out = forward(m, tape, params, std::span<const Dual2>(in));
        Node residual = tape.add(out[0].t2, tape.mul(tape.constant(10.0), out[0].t1));
        auto coords = detail::pick_coords(params.size(), n_coords, rng);
        max_rel = std::max(max_rel, detail::fd_vs_backward(tape, params, residual, coords, h));
    }
    return {"residual parameter gradient vs finite differences", max_rel, 1e-4};
}

/// The exact solution sin(x - beta t), built from tape primitives and seeded
/// with forward tangents, must satisfy u_t + beta u_x = 0.
inline CheckResult check_exact_solution_residual(double beta, int n_points, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    Tape tape;
    Node x = tape.leaf(0.0), t = tape.leaf(0.0);
    DualNode dx = tape.dual_seed(x, 1.0);
    DualNode dt = tape.dual_seed(t, 1.0);
    // u = sin(x - beta t); build both tangent chains on one tape
    Dual2 xin{&tape, x, dx.tangent, tape.zero()};
    Dual2 tin{&tape, t, tape.zero(), dt.tangent};
    Dual2 u = vsin(xin - beta * tin);
    Node residual = tape.add(u.t2, tape.mul(tape.constant(beta), u.t1));
    for (int i = 0; i < n_points; ++i) {
        tape.set_value(x, rng.uniform(0.0, 2.0 * std::numbers::pi));
        tape.set_value(t, rng.uniform(0.0, 1.0));
        tape.replay();
        worst = std::max(worst, std::abs(tape.value(residual)));
    }
    return {"exact-solution convection residual", worst, 1e-10};
}

/// <A x, y> vs <x, A^T y> where A^T y is obtained from the tape's gradient.
inline CheckResult radon_adjoint_check(int img_size, const std::vector<double>& angles,
                                       std::uint64_t seed) {
    Rng rng(seed);
    const int n = img_size;
    Tape tape;
    std::vector<double> x_vals(static_cast<std::size_t>(n) * n);
    std::vector<Node> x_leaves(x_vals.size());
    std::vector<Val> x_img(x_vals.size(), Val{nullptr, {}});
    for (std::size_t i = 0; i < x_vals.size(); ++i) {
        x_vals[i] = rng.uniform(0.0, 1.0);
        x_leaves[i] = tape.leaf(x_vals[i], true);
        x_img[i] = Val::lift(tape, x_leaves[i]);
    }
    const int bins = radon_bins(n, n);
    std::vector<double> y_vals;
    Node inner = tape.constant(0.0);
    double axy = 0.0;
    for (double a : angles) {
        auto profile = radon_project<Val>(
            n, n, x_img, a, [&] { return Val::lift(tape, tape.constant(0.0)); },
            [&](Val& acc, double wgt, const Val& px) { acc = acc + wgt * px; });
        for (int s = 0; s < bins; ++s) {
            double y = rng.uniform(-1.0, 1.0);
            y_vals.push_back(y);
            inner = tape.add(inner, tape.mul(tape.constant(y), profile[s].node));
            axy += y * tape.value(profile[s].node);
        }
    }
    // <x, A^T y> with A^T y taken from reverse mode
    ad::GradientMap g = tape.backward(inner);
    double xaty = 0.0;
    for (std::size_t i = 0; i < x_vals.size(); ++i) xaty += x_vals[i] * g.at(x_leaves[i]);
    const double denom = std::max({std::abs(axy), std::abs(xaty), 1.0});
    return {"radon adjoint inner-product identity", std::abs(axy - xaty) / denom, 1e-9};
}

/// radon(a x + b y) vs a radon(x) + b radon(y) on random images.
inline CheckResult check_radon_linearity(int img_size, int n_angles, std::uint64_t seed) {
    Rng rng(seed);
    ImageGrid x(img_size, img_size, 1), y(img_size, img_size, 1), mix(img_size, img_size, 1);
    const double a = 0.7, b = -1.3;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        x.v[i] = rng.uniform(0.0, 1.0);
        y.v[i] = rng.uniform(0.0, 1.0);
        mix.v[i] = a * x.v[i] + b * y.v[i];
    }
    auto angles = uniform_angles(n_angles);
    Sinogram sx = radon(x, angles), sy = radon(y, angles), sm = radon(mix, angles);
    double worst = 0.0;
    for (std::size_t i = 0; i < sm.v.size(); ++i)
        worst = std::max(worst, std::abs(sm.v[i] - (a * sx.v[i] + b * sy.v[i])));
    return {"radon linearity", worst, 1e-10};
}

/// Sum of every projection equals the image sum, relative to the image sum.
inline CheckResult check_radon_mass(int img_size, int n_angles, std::uint64_t seed) {
    Rng rng(seed);
    ImageGrid x(img_size, img_size, 1);
    double mass = 0.0;
    for (double& v : x.v) {
        v = rng.uniform(0.0, 1.0);
        mass += v;
    }
    Sinogram s = radon(x, uniform_angles(n_angles));
    double worst = 0.0;
    for (std::size_t a = 0; a < s.angles.size(); ++a) {
        double sum = 0.0;
        for (int b = 0; b < s.bins; ++b) sum += s.at(static_cast<int>(a), b);
        worst = std::max(worst, std::abs(sum - mass) / mass);
    }
    return {"radon mass conservation", worst, 1e-6};
}

/// A centered rotationally symmetric phantom projects to the same profile at
/// every angle. The phantom must be smooth relative to the pixel pitch for
/// the discrete projections to agree; a wide Gaussian blob qualifies, a
/// hard-edged disk does not.
inline CheckResult check_radon_symmetry(int img_size, int n_angles) {
    ImageGrid blob(img_size, img_size, 1);
    // sigma = n/12 decays to ~1e-8 at the image border, so the square support
    // does not break the rotational symmetry at the 1e-6 level
    const double c = (img_size - 1) / 2.0, sigma = img_size / 12.0;
    for (int y = 0; y < img_size; ++y)
        for (int x = 0; x < img_size; ++x) {
            const double r2 = (x - c) * (x - c) + (y - c) * (y - c);
            blob.at(y, x) = std::exp(-r2 / (2.0 * sigma * sigma));
        }
    Sinogram s = radon(blob, uniform_angles(n_angles));
    double worst = 0.0;
    for (std::size_t a = 1; a < s.angles.size(); ++a)
        for (int b = 0; b < s.bins; ++b)
            worst = std::max(worst, std::abs(s.at(static_cast<int>(a), b) - s.at(0, b)));
    return {"radon rotational symmetry", worst, 1e-6};
}

/// Run the full oracle suite at desk scale.
inline std::vector<CheckResult> run_verification_suite(std::uint64_t seed = 17) {
    Model nest = build_nestnet(16, 2, EncodingSpec::fourier(4), seed);
    std::vector<CheckResult> results;
    results.push_back(check_l2_gradient(nest, 8, 30, seed));
    results.push_back(check_pinn_gradient(nest, 8, 30, seed + 1));
    results.push_back(check_second_order_path(nest, 3, 10, seed + 2));
    results.push_back(check_exact_solution_residual(10.0, 100, seed + 3));
    results.push_back(radon_adjoint_check(16, uniform_angles(8), seed + 4));
    results.push_back(check_radon_linearity(24, 12, seed + 5));
    results.push_back(check_radon_mass(24, 12, seed + 6));
    results.push_back(check_radon_symmetry(48, 16));
    return results;
}

}  // namespace nestlab
