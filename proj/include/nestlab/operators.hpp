#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace nestlab {

// --- sampled signals ---------------------------------------------------------

/// H x W x C float image in [0, 1] (noisy images may exceed the range; the
/// clipping policy travels with the grid). Pixel centers map affinely to
/// [-1, 1]^2: x = -1 + 2 (j + 0.5) / W, y likewise over rows.
struct ImageGrid {
    int h = 0, w = 0, c = 1;
    std::vector<double> v;  // row-major, channel-interleaved
    bool clipped = true;    // false once noise may push values outside [0,1]

    ImageGrid() = default;
    ImageGrid(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch = 0) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch = 0) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    double coord_x(int j) const { return -1.0 + 2.0 * (j + 0.5) / w; }
    double coord_y(int i) const { return -1.0 + 2.0 * (i + 0.5) / h; }
};

struct VoxelGrid {
    int r = 0;
    std::vector<double> v;  // binary {0,1}, z-major then y then x

    explicit VoxelGrid(int r_ = 0) : r(r_), v(static_cast<std::size_t>(r_) * r_ * r_, 0.0) {}
    double& at(int z, int y, int x) { return v[(static_cast<std::size_t>(z) * r + y) * r + x]; }
    double at(int z, int y, int x) const { return v[(static_cast<std::size_t>(z) * r + y) * r + x]; }
    double center(int i) const { return -1.0 + 2.0 * (i + 0.5) / r; }
};

struct Sinogram {
    std::vector<double> angles;  // radians
    int bins = 0;
    std::vector<double> v;  // angles x bins, row-major

    double& at(int a, int s) { return v[static_cast<std::size_t>(a) * bins + s]; }
    double at(int a, int s) const { return v[static_cast<std::size_t>(a) * bins + s]; }
};

struct MultiviewSet {
    struct View {
        ImageGrid image;   // low resolution
        double dx = 0.0;   // high-res pixels
        double dy = 0.0;
        double rot = 0.0;  // radians
    };
    std::vector<View> views;
    // Union training set in the high-res [-1,1]^2 frame: one coordinate per
    // low-res pixel of every view, paired with that pixel's value.
    std::vector<std::array<double, 2>> coords;
    std::vector<std::vector<double>> targets;
};

struct ConvectionProblem {
    double beta = 10.0;
    // domain [0, 2 pi] x [0, 1]
    int n_ic = 256, n_bc = 100, n_col = 2000;
    std::uint64_t rng_seed = 0;
};

struct ConvectionPoints {
    std::vector<double> ic_x;                      // t = 0
    std::vector<double> bc_t;                      // paired (0, t) and (2 pi, t)
    std::vector<std::array<double, 2>> collocation;  // (x, t) interior
};

// --- procedural signals ------------------------------------------------------

enum class SignalKind { Bandlimited, Checker, DiskScene };

inline SignalKind signal_kind_from(const std::string& s) {
    if (s == "bandlimited") return SignalKind::Bandlimited;
    if (s == "checker") return SignalKind::Checker;
    if (s == "disk_scene") return SignalKind::DiskScene;
    throw std::invalid_argument("unknown signal kind: " + s);
}

/// Deterministic stand-in signals for the vision tasks.
inline ImageGrid procedural_image(SignalKind kind, int h, int w, int c, std::uint64_t seed) {
    if (h < 8 || w < 8) throw std::invalid_argument("procedural_image: minimum size 8x8");
    ImageGrid img(h, w, c);
    Rng rng(seed);
    switch (kind) {
        case SignalKind::Checker:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) = (x + y) % 2 ? 1.0 : 0.0;
            break;
        case SignalKind::Bandlimited: {
            // truncated 2D Fourier series with decaying random coefficients
            const int band = 5;
            for (int ch = 0; ch < c; ++ch) {
                struct Term {
                    double fx, fy, amp, phase;
                };
                std::vector<Term> terms;
                for (int fy = 0; fy <= band; ++fy)
                    for (int fx = 0; fx <= band; ++fx) {
                        if (fx == 0 && fy == 0) continue;
                        double decay = 1.0 / std::pow(1.0 + fx * fx + fy * fy, 0.8);
                        terms.push_back({static_cast<double>(fx), static_cast<double>(fy),
                                         rng.uniform(-1.0, 1.0) * decay,
                                         rng.uniform(0.0, 2.0 * std::numbers::pi)});
                    }
                double lo = 1e300, hi = -1e300;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double u = 2.0 * std::numbers::pi * x / w;
                        double v = 2.0 * std::numbers::pi * y / h;
                        double s = 0.0;
                        for (const auto& t : terms) s += t.amp * std::cos(t.fx * u + t.fy * v + t.phase);
                        img.at(y, x, ch) = s;
                        lo = std::min(lo, s);
                        hi = std::max(hi, s);
                    }
                double scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) img.at(y, x, ch) = (img.at(y, x, ch) - lo) * scale;
            }
            break;
        }
        case SignalKind::DiskScene: {
            for (int ch = 0; ch < c; ++ch) {
                struct Disk {
                    double cx, cy, r, val;
                };
                std::vector<Disk> disks;
                for (int d = 0; d < 6; ++d)
                    disks.push_back({rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7),
                                     rng.uniform(0.1, 0.4), rng.uniform(0.2, 1.0)});
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double px = img.coord_x(x), py = img.coord_y(y);
                        double val = 0.05;
                        for (const auto& d : disks)
                            if ((px - d.cx) * (px - d.cx) + (py - d.cy) * (py - d.cy) < d.r * d.r)
                                val = std::max(val, d.val);
                        img.at(y, x, ch) = val;
                    }
            }
            break;
        }
    }
    return img;
}

// --- downsampling / multiview ------------------------------------------------

inline ImageGrid downsample_box(const ImageGrid& img, int k) {
    if (k < 1 || img.h % k || img.w % k)
        throw std::invalid_argument("downsample_box: dimensions not divisible by factor");
    ImageGrid out(img.h / k, img.w / k, img.c);
    const double inv = 1.0 / (k * k);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double s = 0.0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) s += img.at(y * k + dy, x * k + dx, ch);
                out.at(y, x, ch) = s * inv;
            }
    out.clipped = img.clipped;
    return out;
}

namespace detail {

/// Bilinear sample with zero padding, pixel-index coordinates.
inline double bilinear(const ImageGrid& img, double y, double x, int ch) {
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    double fx = x - x0, fy = y - y0;
    double s = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
            double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            s += wgt * img.at(yy, xx, ch);
        }
    return s;
}

}  // namespace detail

/// Warp by rotation about the image center followed by a (dx, dy) shift in
/// pixels; output pixel (y, x) samples the input at the inverse-mapped
/// position with bilinear interpolation.
inline ImageGrid warp_image(const ImageGrid& img, double dx, double dy, double rot) {
    ImageGrid out(img.h, img.w, img.c);
    const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
    const double cs = std::cos(rot), sn = std::sin(rot);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double ry = y - cy - dy, rx = x - cx - dx;
            double sy = cy + sn * rx + cs * ry;
            double sx = cx + cs * rx - sn * ry;
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = detail::bilinear(img, sy, sx, ch);
        }
    return out;
}

inline MultiviewSet make_multiview(const ImageGrid& img, int n_views, int k, double max_shift,
                                   double max_rot, std::uint64_t seed) {
    if (n_views < 1) throw std::invalid_argument("make_multiview: n_views >= 1");
    MultiviewSet set;
    Rng rng(seed);
    const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
    for (int vi = 0; vi < n_views; ++vi) {
        MultiviewSet::View view;
        if (vi > 0) {
            view.dx = rng.uniform(-max_shift, max_shift);
            view.dy = rng.uniform(-max_shift, max_shift);
            view.rot = rng.uniform(-max_rot, max_rot);
        }
        view.image = (view.dx == 0.0 && view.dy == 0.0 && view.rot == 0.0)
                         ? downsample_box(img, k)
                         : downsample_box(warp_image(img, view.dx, view.dy, view.rot), k);
        // A low-res pixel of the warped view averages the warped high-res
        // block whose center inverse-maps into the original frame; that
        // mapped center is the training coordinate.
        const double cs = std::cos(view.rot), sn = std::sin(view.rot);
        for (int y = 0; y < view.image.h; ++y)
            for (int x = 0; x < view.image.w; ++x) {
                double hy = y * k + (k - 1) / 2.0;
                double hx = x * k + (k - 1) / 2.0;
                double ry = hy - cy - view.dy, rx = hx - cx - view.dx;
                double sy = cy + sn * rx + cs * ry;
                double sx = cx + cs * rx - sn * ry;
                set.coords.push_back({-1.0 + 2.0 * (sx + 0.5) / img.w, -1.0 + 2.0 * (sy + 0.5) / img.h});
                std::vector<double> t(img.c);
                for (int ch = 0; ch < img.c; ++ch) t[ch] = view.image.at(y, x, ch);
                set.targets.push_back(std::move(t));
            }
        set.views.push_back(std::move(view));
    }
    return set;
}

// --- photon noise ------------------------------------------------------------

inline ImageGrid poisson_photon_noise(const ImageGrid& img, double max_count, std::uint64_t seed) {
    ImageGrid out(img.h, img.w, img.c);
    Rng rng(seed);
    for (std::size_t i = 0; i < img.v.size(); ++i)
        out.v[i] = static_cast<double>(rng.poisson(img.v[i] * max_count)) / max_count;
    out.clipped = false;  // values may exceed 1; no clipping before training
    return out;
}

// --- Radon transform ---------------------------------------------------------

inline int radon_bins(int h, int w) {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w)));
}

namespace detail {

// Splat kernel for the detector axis: a Gaussian of one bin standard
// deviation, truncated at +-6 bins and renormalized per pixel. The smooth
// kernel keeps projections of smooth images angle-invariant (a hard hat
// kernel would smooth oblique angles but not axis-aligned ones), and the
// per-pixel normalization makes mass conservation exact.
inline constexpr double kRadonKernelSigma = 1.0;
inline constexpr int kRadonKernelReach = 6;

struct RadonSplat {
    int lo = 0, n = 0;
    std::array<double, 2 * kRadonKernelReach + 1> w{};

    RadonSplat(double sd, int bins) {
        lo = std::max(0, static_cast<int>(std::ceil(sd - kRadonKernelReach)));
        const int hi = std::min(bins - 1, static_cast<int>(std::floor(sd + kRadonKernelReach)));
        n = hi - lo + 1;
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = (lo + j - sd) / kRadonKernelSigma;
            w[j] = std::exp(-0.5 * d * d);
            sum += w[j];
        }
        for (int j = 0; j < n; ++j) w[j] /= sum;
    }
};

}  // namespace detail

/// Discrete Radon transform by pixel splatting: each pixel center is rotated
/// into the detector frame and its value is distributed over nearby bins with
/// normalized Gaussian weights (see detail::RadonSplat). Generic over the
/// pixel value type so the same code path runs on plain doubles and on tape
/// values (giving the exact adjoint via reverse mode). `MakeZero` makes an
/// additive identity, `Axpy` is acc = acc + weight * pixel.
template <class T, class MakeZero, class Axpy>
std::vector<T> radon_project(int h, int w, const std::vector<T>& img, double angle,
                             MakeZero make_zero, Axpy axpy) {
    const int bins = radon_bins(h, w);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double c0 = (bins - 1) / 2.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    std::vector<T> profile;
    profile.reserve(bins);
    for (int s = 0; s < bins; ++s) profile.push_back(make_zero());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double sd = (x - cx) * cs + (y - cy) * sn + c0;
            detail::RadonSplat splat(sd, bins);
            for (int j = 0; j < splat.n; ++j)
                axpy(profile[splat.lo + j], splat.w[j], img[static_cast<std::size_t>(y) * w + x]);
        }
    return profile;
}

inline Sinogram radon(const ImageGrid& img, const std::vector<double>& angles) {
    if (img.c != 1) throw std::invalid_argument("radon: single-channel input required");
    Sinogram s;
    s.angles = angles;
    s.bins = radon_bins(img.h, img.w);
    s.v.reserve(angles.size() * s.bins);
    for (double a : angles) {
        auto profile = radon_project<double>(
            img.h, img.w, img.v, a, [] { return 0.0; },
            [](double& acc, double wgt, double px) { acc += wgt * px; });
        s.v.insert(s.v.end(), profile.begin(), profile.end());
    }
    return s;
}

/// Exact transpose of `radon`: each pixel gathers from the same detector
/// bins with the same normalized weights the forward pass used.
inline ImageGrid radon_adjoint(const Sinogram& s, int h, int w) {
    if (s.bins != radon_bins(h, w)) throw std::invalid_argument("radon_adjoint: bin count mismatch");
    ImageGrid img(h, w, 1);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double c0 = (s.bins - 1) / 2.0;
    for (std::size_t ai = 0; ai < s.angles.size(); ++ai) {
        const double cs = std::cos(s.angles[ai]), sn = std::sin(s.angles[ai]);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double sd = (x - cx) * cs + (y - cy) * sn + c0;
                detail::RadonSplat splat(sd, s.bins);
                double acc = 0.0;
                for (int j = 0; j < splat.n; ++j)
                    acc += splat.w[j] * s.at(static_cast<int>(ai), splat.lo + j);
                img.at(y, x) += acc;
            }
    }
    return img;
}

inline std::vector<double> uniform_angles(int n) {
    std::vector<double> a(n);
    for (int i = 0; i < n; ++i) a[i] = std::numbers::pi * i / n;
    return a;
}

// --- occupancy volumes -------------------------------------------------------

enum class ShapeKind { Sphere, Torus, TwoSpheres };

inline ShapeKind shape_kind_from(const std::string& s) {
    if (s == "sphere") return ShapeKind::Sphere;
    if (s == "torus") return ShapeKind::Torus;
    if (s == "two_spheres") return ShapeKind::TwoSpheres;
    throw std::invalid_argument("unknown shape kind: " + s);
}

inline bool shape_inside(ShapeKind kind, double x, double y, double z) {
    switch (kind) {
        case ShapeKind::Sphere: return x * x + y * y + z * z < 0.25;  // radius 0.5
        case ShapeKind::Torus: {
            const double R = 0.6, r = 0.25;
            double q = std::sqrt(x * x + y * y) - R;
            return q * q + z * z < r * r;
        }
        case ShapeKind::TwoSpheres: {
            auto inside = [](double px, double py, double pz, double cx) {
                double dx = px - cx;
                return dx * dx + py * py + pz * pz < 0.09;  // radius 0.3
            };
            return inside(x, y, z, -0.4) || inside(x, y, z, 0.4);
        }
    }
    return false;
}

inline VoxelGrid occupancy_analytic(ShapeKind kind, int r) {
    if (r < 8) throw std::invalid_argument("occupancy_analytic: resolution >= 8");
    VoxelGrid g(r);
    for (int z = 0; z < r; ++z)
        for (int y = 0; y < r; ++y)
            for (int x = 0; x < r; ++x)
                g.at(z, y, x) = shape_inside(kind, g.center(x), g.center(y), g.center(z)) ? 1.0 : 0.0;
    return g;
}

// --- convection problem ------------------------------------------------------

/// Exact periodic transport of u0(x) = sin(x) under u_t + beta u_x = 0.
inline double convection_exact(double x, double t, double beta) { return std::sin(x - beta * t); }

inline ConvectionPoints sample_convection_points(const ConvectionProblem& p) {
    ConvectionPoints pts;
    Rng rng(p.rng_seed);
    const double L = 2.0 * std::numbers::pi;
    pts.ic_x.reserve(p.n_ic);
    for (int i = 0; i < p.n_ic; ++i) pts.ic_x.push_back(L * i / std::max(1, p.n_ic - 1));
    pts.bc_t.reserve(p.n_bc);
    for (int i = 0; i < p.n_bc; ++i) pts.bc_t.push_back(static_cast<double>(i) / std::max(1, p.n_bc - 1));
    pts.collocation.reserve(p.n_col);
    for (int i = 0; i < p.n_col; ++i)
        pts.collocation.push_back({rng.uniform(0.0, L), rng.uniform(0.0, 1.0)});
    return pts;
}

}  // namespace nestlab
