#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "operators.hpp"

namespace nestlab {

struct MetricReport {
    std::optional<double> psnr_db;
    std::optional<double> ssim;
    std::optional<double> iou;
    std::optional<double> abs_err;
    std::optional<double> rel_err;
    std::optional<double> explained_var;
};

/// 10 log10(peak^2 / MSE); identical images report +infinity.
inline double psnr(const ImageGrid& a, const ImageGrid& b, double peak = 1.0) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = a.v[i] - b.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.v.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> luminance(const ImageGrid& img) {
    if (img.c == 1) return img.v;
    std::vector<double> out(static_cast<std::size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < img.c; ++ch) s += img.at(y, x, ch);
            out[static_cast<std::size_t>(y) * img.w + x] = s / img.c;
        }
    return out;
}

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double d2 = (x - c) * (x - c) + (y - c) * (y - c);
            w[static_cast<std::size_t>(y) * size + x] = std::exp(-d2 / (2.0 * sigma * sigma));
            sum += w[static_cast<std::size_t>(y) * size + x];
        }
    for (double& e : w) e /= sum;
    return w;
}

}  // namespace detail

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), windows fully inside
/// the image; multi-channel inputs are reduced to channel-mean luminance.
inline double ssim(const ImageGrid& a, const ImageGrid& b, double peak = 1.0) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) throw std::invalid_argument("ssim: shape mismatch");
    const int win = 11;
    if (a.h < win || a.w < win) throw std::invalid_argument("ssim: image smaller than 11x11 window");
    const auto xa = detail::luminance(a);
    const auto xb = detail::luminance(b);
    const auto wgt = detail::gaussian_window(win, 1.5);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0.0;
    int count = 0;
    for (int y = 0; y + win <= a.h; ++y)
        for (int x = 0; x + win <= a.w; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    double wv = wgt[static_cast<std::size_t>(dy) * win + dx];
                    double pa = xa[static_cast<std::size_t>(y + dy) * a.w + (x + dx)];
                    double pb = xb[static_cast<std::size_t>(y + dy) * a.w + (x + dx)];
                    mu_a += wv * pa;
                    mu_b += wv * pb;
                    aa += wv * pa * pa;
                    bb += wv * pb * pb;
                    ab += wv * pa * pb;
                }
            double var_a = aa - mu_a * mu_a;
            double var_b = bb - mu_b * mu_b;
            double cov = ab - mu_a * mu_b;
            double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            ++count;
        }
    return total / count;
}

/// Intersection-over-union of thresholded field samples against a binary
/// grid. Empty union (both empty) is defined as 1.
inline double iou(const VoxelGrid& pred, const VoxelGrid& truth, double threshold = 0.5) {
    if (pred.r != truth.r) throw std::invalid_argument("iou: resolution mismatch");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        bool p = pred.v[i] >= threshold;
        bool t = truth.v[i] >= threshold;
        inter += p && t;
        uni += p || t;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct ErrorMetrics {
    double abs_err = 0.0;
    double rel_err = 0.0;
    double explained_var = 0.0;
};

/// abs = mean |p - t|, rel = ||p - t|| / ||t||, explained = 1 - Var(t-p)/Var(t).
inline ErrorMetrics error_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("error_metrics: length mismatch");
    const std::size_t n = pred.size();
    double abs_sum = 0.0, diff2 = 0.0, truth2 = 0.0;
    double mean_t = 0.0, mean_e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = truth[i] - pred[i];
        abs_sum += std::abs(e);
        diff2 += e * e;
        truth2 += truth[i] * truth[i];
        mean_t += truth[i];
        mean_e += e;
    }
    if (truth2 == 0.0) throw std::domain_error("error_metrics: zero-norm truth");
    mean_t /= n;
    mean_e /= n;
    double var_t = 0.0, var_e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = truth[i] - pred[i];
        var_t += (truth[i] - mean_t) * (truth[i] - mean_t);
        var_e += (e - mean_e) * (e - mean_e);
    }
    ErrorMetrics m;
    m.abs_err = abs_sum / n;
    m.rel_err = std::sqrt(diff2 / truth2);
    m.explained_var = var_t == 0.0 ? (var_e == 0.0 ? 1.0 : 0.0) : 1.0 - var_e / var_t;
    return m;
}

}  // namespace nestlab
