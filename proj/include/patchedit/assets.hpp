#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "patchgrid.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace patchedit {

// Procedural conditioning images. Everything downstream of the seed is
// deterministic, so regenerating with the same spec is bit-identical.
struct AssetSpec {
    std::string family = "checker"; // striped | checker | gradient-noise
    std::size_t height = 64, width = 64, channels = 3;
    std::uint64_t seed = 1;
    std::size_t factor = 2; // high dims = low dims * factor

    std::string transform = "identity"; // identity | hue-rotate | pattern-substitute
    double angle_deg = 60.0;            // hue-rotate
    std::string sub_family = "";        // pattern-substitute; empty picks a different family

    // Rectangle mask in fractional canvas coordinates.
    double mask_x0 = 0.25, mask_y0 = 0.25, mask_x1 = 0.75, mask_y1 = 0.75;

    std::string out_dir = ".";
};

namespace detail {

// Colors stay close to gray so hue rotation cannot leave [0,1].
inline void safe_color(SplitMix64& rng, std::size_t C, double* out) {
    const double mean = rng.uniform(0.4, 0.6);
    for (std::size_t c = 0; c < C; ++c) out[c] = mean + rng.uniform(-0.12, 0.12);
}

inline Tensor make_pattern(const std::string& family, std::size_t C, std::size_t H,
                           std::size_t W, std::uint64_t seed) {
    if (C == 0 || H == 0 || W == 0) throw config_error("asset dims must be positive");
    SplitMix64 rng(seed);
    Tensor img({C, H, W});

    if (family == "checker") {
        const std::size_t cell = rng.next_u64() % 2 == 0 ? 4 : 8;
        std::vector<double> c0(C), c1(C);
        safe_color(rng, C, c0.data());
        safe_color(rng, C, c1.data());
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const bool odd = ((y / cell) + (x / cell)) % 2 == 1;
                    img.at3(c, y, x) = static_cast<float>(odd ? c1[c] : c0[c]);
                }
        return img;
    }
    if (family == "striped") {
        const double period = rng.uniform(6.0, 12.0);
        const double angle = rng.uniform(0.3, 1.2);
        const double phase = rng.uniform(0.0, 6.283185307179586);
        std::vector<double> c0(C), c1(C);
        safe_color(rng, C, c0.data());
        safe_color(rng, C, c1.data());
        const double kx = std::cos(angle), ky = std::sin(angle);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double s = std::sin(
                    6.283185307179586 * (kx * static_cast<double>(x) + ky * static_cast<double>(y)) /
                        period +
                    phase);
                const double b = 0.5 * (1.0 + s);
                for (std::size_t c = 0; c < C; ++c)
                    img.at3(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * b);
            }
        return img;
    }
    if (family == "gradient-noise") {
        std::size_t cell = 8;
        while (cell > 1 && (H % cell != 0 || W % cell != 0)) cell /= 2;
        const std::size_t ch = H / cell, cw = W / cell;
        if (ch < 2 || cw < 2)
            throw config_error("gradient-noise needs dims >= 2 coarse cells, got " +
                               std::to_string(H) + "x" + std::to_string(W));
        Tensor coarse({C, ch, cw});
        for (std::size_t i = 0; i < coarse.numel(); ++i)
            coarse[i] = static_cast<float>(rng.uniform(0.2, 0.8));
        return upsample_to_canvas(coarse, H, W);
    }
    throw config_error("unknown asset family '" + family + "'");
}

// Rotation about the gray axis (1,1,1)/sqrt(3); the channel mean is invariant.
inline Tensor hue_rotate(const Tensor& img, double angle_deg) {
    if (img.dim(0) != 3) throw config_error("hue rotation needs 3 channels");
    const double th = angle_deg * 3.141592653589793 / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double k = 1.0 / std::sqrt(3.0);
    double R[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double cross[3][3] = {{0, -k, k}, {k, 0, -k}, {-k, k, 0}};
            R[i][j] = ct * (i == j ? 1.0 : 0.0) + st * cross[i][j] + (1.0 - ct) * (1.0 / 3.0);
        }
    const std::size_t H = img.dim(1), W = img.dim(2);
    Tensor out = Tensor::zeros_like(img);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double v[3] = {img.at3(0, y, x), img.at3(1, y, x), img.at3(2, y, x)};
            for (int i = 0; i < 3; ++i)
                out.at3(static_cast<std::size_t>(i), y, x) = static_cast<float>(
                    R[i][0] * v[0] + R[i][1] * v[1] + R[i][2] * v[2]);
        }
    return out;
}

struct MaskRect {
    std::size_t x0, y0, x1, y1; // half-open
};

inline MaskRect mask_rect(const AssetSpec& s, std::size_t H, std::size_t W) {
    if (!(s.mask_x0 >= 0.0 && s.mask_x0 < s.mask_x1 && s.mask_x1 <= 1.0) ||
        !(s.mask_y0 >= 0.0 && s.mask_y0 < s.mask_y1 && s.mask_y1 <= 1.0))
        throw config_error("mask fractions must satisfy 0 <= lo < hi <= 1");
    MaskRect r;
    r.x0 = static_cast<std::size_t>(s.mask_x0 * static_cast<double>(W));
    r.x1 = static_cast<std::size_t>(s.mask_x1 * static_cast<double>(W));
    r.y0 = static_cast<std::size_t>(s.mask_y0 * static_cast<double>(H));
    r.y1 = static_cast<std::size_t>(s.mask_y1 * static_cast<double>(H));
    if (r.x1 <= r.x0 || r.y1 <= r.y0) throw config_error("mask rectangle is empty");
    return r;
}

} // namespace detail

struct AssetPaths {
    std::string source_high;
    std::string source_low;
    std::string reference_low;
    std::string mask;
};

inline AssetPaths generate_assets(const AssetSpec& spec) {
    if (spec.factor == 0) throw config_error("asset factor must be >= 1");
    if (spec.height % spec.factor != 0 || spec.width % spec.factor != 0)
        throw config_error("asset dims must be divisible by the factor");
    if (spec.channels != 1 && spec.channels != 3)
        throw config_error("assets support 1 or 3 channels");

    const Tensor high =
        detail::make_pattern(spec.family, spec.channels, spec.height, spec.width, spec.seed);
    const Tensor low = downsample(high, spec.factor);

    Tensor reference = low;
    if (spec.transform == "identity") {
        // reference == derived low-resolution source
    } else if (spec.transform == "hue-rotate") {
        reference = detail::hue_rotate(low, spec.angle_deg);
    } else if (spec.transform == "pattern-substitute") {
        std::string sub = spec.sub_family;
        if (sub.empty()) sub = spec.family == "checker" ? "striped" : "checker";
        const Tensor alt = detail::make_pattern(sub, spec.channels, low.dim(1), low.dim(2),
                                                spec.seed ^ 0x517CC1B727220A95ULL);
        const detail::MaskRect r = detail::mask_rect(spec, low.dim(1), low.dim(2));
        for (std::size_t c = 0; c < spec.channels; ++c)
            for (std::size_t y = r.y0; y < r.y1; ++y)
                for (std::size_t x = r.x0; x < r.x1; ++x)
                    reference.at3(c, y, x) = alt.at3(c, y, x);
    } else {
        throw config_error("unknown edit transform '" + spec.transform + "'");
    }

    Tensor mask({1, spec.height, spec.width});
    const detail::MaskRect r = detail::mask_rect(spec, spec.height, spec.width);
    for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x) mask.at3(0, y, x) = 1.0f;

    const std::string ext = spec.channels == 1 ? ".pgm" : ".ppm";
    AssetPaths p;
    p.source_high = spec.out_dir + "/source_high" + ext;
    p.source_low = spec.out_dir + "/source_low" + ext;
    p.reference_low = spec.out_dir + "/reference_low" + ext;
    p.mask = spec.out_dir + "/mask.pgm";
    write_netpbm(p.source_high, high, 65535);
    write_netpbm(p.source_low, low, 65535);
    write_netpbm(p.reference_low, reference, 65535);
    write_netpbm(p.mask, mask, 255);
    write_manifest(spec.out_dir, {std::string("source_high") + ext,
                                  std::string("source_low") + ext,
                                  std::string("reference_low") + ext, "mask.pgm"});
    return p;
}

} // namespace patchedit
