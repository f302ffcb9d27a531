#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace patchedit {

// Row-major exact tiling of a canvas. index = row * cols + col.
struct PatchGrid {
    std::size_t rows = 0, cols = 0;
    std::size_t patch_h = 0, patch_w = 0;
    std::size_t channels = 0;
    std::vector<Tensor> patches;

    std::size_t count() const { return rows * cols; }
    std::size_t index(std::size_t r, std::size_t c) const { return r * cols + c; }

    std::optional<std::size_t> right_of(std::size_t i) const {
        if (i >= count()) return std::nullopt;
        return (i % cols + 1 < cols) ? std::optional<std::size_t>(i + 1) : std::nullopt;
    }
    std::optional<std::size_t> below_of(std::size_t i) const {
        if (i >= count()) return std::nullopt;
        return (i / cols + 1 < rows) ? std::optional<std::size_t>(i + cols) : std::nullopt;
    }
};

inline void validate_grid(const PatchGrid& g) {
    if (g.rows == 0 || g.cols == 0 || g.patch_h == 0 || g.patch_w == 0 || g.channels == 0)
        throw tiling_error("grid has empty dimensions");
    if (g.patches.size() != g.count())
        throw tiling_error("grid holds " + std::to_string(g.patches.size()) +
                           " patches, expected " + std::to_string(g.count()));
    for (std::size_t i = 0; i < g.patches.size(); ++i) {
        const Tensor& p = g.patches[i];
        if (p.rank() != 3 || p.dim(0) != g.channels || p.dim(1) != g.patch_h ||
            p.dim(2) != g.patch_w)
            throw tiling_error("patch " + std::to_string(i) + " has shape " + shape_string(p) +
                               ", expected [" + std::to_string(g.channels) + "," +
                               std::to_string(g.patch_h) + "," + std::to_string(g.patch_w) +
                               "]");
    }
}

inline PatchGrid split(const Tensor& canvas, std::size_t patch_h, std::size_t patch_w) {
    require_rank3(canvas, "split input");
    if (patch_h == 0 || patch_w == 0) throw tiling_error("patch dims must be positive");
    const std::size_t C = canvas.dim(0), H = canvas.dim(1), W = canvas.dim(2);
    if (H % patch_h != 0 || W % patch_w != 0)
        throw tiling_error("canvas " + std::to_string(H) + "x" + std::to_string(W) +
                           " is not divisible by patch " + std::to_string(patch_h) + "x" +
                           std::to_string(patch_w) + "; would need padding of " +
                           std::to_string((patch_h - H % patch_h) % patch_h) + " rows and " +
                           std::to_string((patch_w - W % patch_w) % patch_w) + " cols");

    PatchGrid g;
    g.rows = H / patch_h;
    g.cols = W / patch_w;
    g.patch_h = patch_h;
    g.patch_w = patch_w;
    g.channels = C;
    g.patches.reserve(g.count());
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) {
            Tensor p({C, patch_h, patch_w});
            for (std::size_t ch = 0; ch < C; ++ch)
                for (std::size_t y = 0; y < patch_h; ++y)
                    for (std::size_t x = 0; x < patch_w; ++x)
                        p.at3(ch, y, x) = canvas.at3(ch, r * patch_h + y, c * patch_w + x);
            g.patches.push_back(std::move(p));
        }
    return g;
}

inline Tensor merge(const PatchGrid& g) {
    validate_grid(g);
    Tensor canvas({g.channels, g.rows * g.patch_h, g.cols * g.patch_w});
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) {
            const Tensor& p = g.patches[g.index(r, c)];
            for (std::size_t ch = 0; ch < g.channels; ++ch)
                for (std::size_t y = 0; y < g.patch_h; ++y)
                    for (std::size_t x = 0; x < g.patch_w; ++x)
                        canvas.at3(ch, r * g.patch_h + y, c * g.patch_w + x) = p.at3(ch, y, x);
        }
    return canvas;
}

// Corner-aligned bilinear upscale by one integer factor on both axes. Source
// coordinate of output pixel j is j * (S - 1) / (D - 1), so the four corners
// map exactly and scale 1 is the identity copy.
inline Tensor upsample_to_canvas(const Tensor& img, std::size_t target_h,
                                 std::size_t target_w) {
    require_rank3(img, "upsample input");
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (target_h < H || target_w < W || target_h % H != 0 || target_w % W != 0)
        throw resize_error("upsample target " + std::to_string(target_h) + "x" +
                           std::to_string(target_w) + " is not an integer multiple of " +
                           std::to_string(H) + "x" + std::to_string(W));
    if (target_h / H != target_w / W)
        throw resize_error("upsample needs one scale factor for both axes, got " +
                           std::to_string(target_h / H) + " and " + std::to_string(target_w / W));
    if (target_h == H && target_w == W) return img;

    Tensor out({C, target_h, target_w});
    const double ry = target_h > 1 ? static_cast<double>(H - 1) / (target_h - 1) : 0.0;
    const double rx = target_w > 1 ? static_cast<double>(W - 1) / (target_w - 1) : 0.0;
    for (std::size_t y = 0; y < target_h; ++y) {
        const double sy = y * ry;
        std::size_t y0 = static_cast<std::size_t>(sy);
        if (y0 + 1 >= H) y0 = H - (H > 1 ? 2 : 1);
        const std::size_t y1 = H > 1 ? y0 + 1 : y0;
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            const double sx = x * rx;
            std::size_t x0 = static_cast<std::size_t>(sx);
            if (x0 + 1 >= W) x0 = W - (W > 1 ? 2 : 1);
            const std::size_t x1 = W > 1 ? x0 + 1 : x0;
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < C; ++ch) {
                const double v00 = img.at3(ch, y0, x0), v01 = img.at3(ch, y0, x1);
                const double v10 = img.at3(ch, y1, x0), v11 = img.at3(ch, y1, x1);
                const double v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                 fy * ((1.0 - fx) * v10 + fx * v11);
                out.at3(ch, y, x) = static_cast<float>(v);
            }
        }
    }
    return out;
}

// factor x factor box-mean reduction.
inline Tensor downsample(const Tensor& img, std::size_t factor) {
    require_rank3(img, "downsample input");
    if (factor == 0) throw resize_error("downsample factor must be >= 1");
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H % factor != 0 || W % factor != 0)
        throw resize_error("dims " + std::to_string(H) + "x" + std::to_string(W) +
                           " not divisible by factor " + std::to_string(factor));
    if (factor == 1) return img;

    Tensor out({C, H / factor, W / factor});
    const double inv = 1.0 / (static_cast<double>(factor) * static_cast<double>(factor));
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t y = 0; y + factor <= H; y += factor)
            for (std::size_t x = 0; x + factor <= W; x += factor) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < factor; ++dy)
                    for (std::size_t dx = 0; dx < factor; ++dx)
                        acc += static_cast<double>(img.at3(ch, y + dy, x + dx));
                out.at3(ch, y / factor, x / factor) = static_cast<float>(acc * inv);
            }
    return out;
}

} // namespace patchedit
