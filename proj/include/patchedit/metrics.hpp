#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace patchedit {

// Binary [H, W] selector shared by every channel. Built once, validated once.
struct RegionMask {
    Tensor values; // entries are exactly 0 or 1
    std::size_t active = 0;

    explicit RegionMask(Tensor v) : values(std::move(v)) {
        if (values.rank() != 2) throw metric_error("mask must be rank-2 [H,W]");
        for (std::size_t i = 0; i < values.numel(); ++i) {
            const float m = values[i];
            if (m != 0.0f && m != 1.0f)
                throw metric_error("mask entries must be 0 or 1, got " + std::to_string(m));
            if (m == 1.0f) ++active;
        }
        if (active == 0) throw metric_error("mask selects no pixels");
    }

    double coverage() const {
        return static_cast<double>(active) / static_cast<double>(values.numel());
    }

    bool on(std::size_t y, std::size_t x) const {
        return values[y * values.dim(1) + x] != 0.0f;
    }
};

namespace detail {
inline void check_metric_inputs(const Tensor& a, const Tensor& b, const RegionMask* mask) {
    require_rank3(a, "metric input");
    require_same_shape(b, a, "metric input");
    if (mask && (mask->values.dim(0) != a.dim(1) || mask->values.dim(1) != a.dim(2)))
        throw metric_error("mask " + shape_string(mask->values) + " does not match image " +
                           shape_string(a));
}
} // namespace detail

inline double mse(const Tensor& a, const Tensor& b, const RegionMask* mask = nullptr) {
    detail::check_metric_inputs(a, b, mask);
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (mask && !mask->on(y, x)) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const double d =
                    static_cast<double>(a.at3(c, y, x)) - static_cast<double>(b.at3(c, y, x));
                acc += d * d;
            }
            ++n;
        }
    return acc / (static_cast<double>(n) * static_cast<double>(C));
}

// Peak value 1.0. Identical inputs give +infinity; format_metric prints "inf".
inline double psnr(const Tensor& a, const Tensor& b, const RegionMask* mask = nullptr) {
    const double m = mse(a, b, mask);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

// Windowed SSIM, 11x11 Gaussian weights (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2.
// Only windows fully inside the image count; the masked variant keeps windows
// whose center pixel is active. Per-channel means are averaged. With no mask
// the loop degenerates to the all-active case, so a full mask is bit-exact
// against the unmasked call.
inline double ssim(const Tensor& a, const Tensor& b, const RegionMask* mask = nullptr) {
    detail::check_metric_inputs(a, b, mask);
    constexpr int kWin = 11;
    constexpr int kHalf = kWin / 2;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < kWin || W < kWin)
        throw metric_error("image " + shape_string(a) + " smaller than the 11x11 window");

    double weights[kWin * kWin];
    {
        const double s2 = 2.0 * 1.5 * 1.5;
        double sum = 0.0;
        for (int dy = -kHalf; dy <= kHalf; ++dy)
            for (int dx = -kHalf; dx <= kHalf; ++dx) {
                const double w = std::exp(-(dy * dy + dx * dx) / s2);
                weights[(dy + kHalf) * kWin + (dx + kHalf)] = w;
                sum += w;
            }
        for (double& w : weights) w /= sum;
    }

    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t y = kHalf; y + kHalf < H; ++y)
            for (std::size_t x = kHalf; x + kHalf < W; ++x) {
                if (mask && !mask->on(y, x)) continue;
                double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
                for (int dy = -kHalf; dy <= kHalf; ++dy)
                    for (int dx = -kHalf; dx <= kHalf; ++dx) {
                        const double w = weights[(dy + kHalf) * kWin + (dx + kHalf)];
                        const std::size_t yy = y + static_cast<std::size_t>(kHalf + dy) - kHalf;
                        const std::size_t xx = x + static_cast<std::size_t>(kHalf + dx) - kHalf;
                        const double va = a.at3(c, yy, xx);
                        const double vb = b.at3(c, yy, xx);
                        ma += w * va;
                        mb += w * vb;
                        maa += w * va * va;
                        mbb += w * vb * vb;
                        mab += w * va * vb;
                    }
                const double va = maa - ma * ma;
                const double vb = mbb - mb * mb;
                const double cov = mab - ma * mb;
                acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                       ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
                ++n;
            }
        if (n == 0) throw metric_error("mask selects no valid window centers");
        total += acc / static_cast<double>(n);
    }
    return total / static_cast<double>(C);
}

// Boundary visibility: mean absolute step across patch borders divided by the
// mean absolute step between interior neighbors. Around 1.0 the borders are
// indistinguishable from interior texture. Undefined on a 1x1 grid.
struct SeamScore {
    bool defined = false;
    double value = 0.0;
};

inline std::string format_seam(const SeamScore& s) {
    if (!s.defined) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", s.value);
    return buf;
}

inline SeamScore seam_score(const Tensor& img, std::size_t patch_h, std::size_t patch_w) {
    require_rank3(img, "seam input");
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (patch_h == 0 || patch_w == 0 || H % patch_h != 0 || W % patch_w != 0)
        throw metric_error("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                           " does not tile image " + shape_string(img));
    const std::size_t rows = H / patch_h, cols = W / patch_w;
    if (rows == 1 && cols == 1) return SeamScore{false, 0.0};

    double bsum = 0.0, isum = 0.0;
    std::size_t bn = 0, in = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y + 1 < H; ++y) {
            const bool boundary = (y + 1) % patch_h == 0;
            for (std::size_t x = 0; x < W; ++x) {
                const double d = std::abs(static_cast<double>(img.at3(c, y + 1, x)) -
                                          static_cast<double>(img.at3(c, y, x)));
                if (boundary) {
                    bsum += d;
                    ++bn;
                } else {
                    isum += d;
                    ++in;
                }
            }
        }
        for (std::size_t x = 0; x + 1 < W; ++x) {
            const bool boundary = (x + 1) % patch_w == 0;
            for (std::size_t y = 0; y < H; ++y) {
                const double d = std::abs(static_cast<double>(img.at3(c, y, x + 1)) -
                                          static_cast<double>(img.at3(c, y, x)));
                if (boundary) {
                    bsum += d;
                    ++bn;
                } else {
                    isum += d;
                    ++in;
                }
            }
        }
    }
    const double denom = in > 0 ? isum / static_cast<double>(in) : 0.0;
    const double numer = bn > 0 ? bsum / static_cast<double>(bn) : 0.0;
    return SeamScore{true, numer / std::max(denom, 1e-8)};
}

} // namespace patchedit
