#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace patchedit {

enum class Orientation { vertical, horizontal };
enum class PairSide { first, second }; // first = top / left member of the pair

// Linear ramp over the half-patch band next to the shared boundary. The
// first-side mask rises toward the boundary on the lower (or right) half, the
// second-side mask mirrors it on the upper (or left) half. Aligned coordinates
// of the two sides sum to exactly 1; the second side's boundary row carries
// weight 1, kept below 1 in the blend because lambda < 1.
struct RampMask {
    Orientation orient = Orientation::vertical;
    PairSide side = PairSide::first;
    Tensor values; // [H_p, W_p]
};

inline RampMask make_ramp_mask(Orientation orient, PairSide side, std::size_t h,
                               std::size_t w) {
    const std::size_t span = orient == Orientation::vertical ? h : w;
    if (span == 0 || span % 2 != 0)
        throw geometry_error("ramp mask needs an even extent, got " + std::to_string(span));
    const std::size_t half = span / 2;
    RampMask m{orient, side, Tensor({h, w})};
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t v = orient == Orientation::vertical ? y : x;
            double val = 0.0;
            if (side == PairSide::first && v >= half)
                val = static_cast<double>(v - half) / static_cast<double>(half);
            if (side == PairSide::second && v <= half)
                val = static_cast<double>(half - v) / static_cast<double>(half);
            m.values[y * w + x] = static_cast<float>(val);
        }
    return m;
}

namespace detail {
inline void require_even_span(const Tensor& t, Orientation orient, const char* what) {
    require_rank3(t, what);
    const std::size_t span = orient == Orientation::vertical ? t.dim(1) : t.dim(2);
    if (span == 0 || span % 2 != 0)
        throw geometry_error(std::string(what) + " needs an even extent, got " +
                             std::to_string(span));
}
} // namespace detail

// Boundary latent of an adjacent pair: the half of each patch that touches the
// shared edge, concatenated so the seam sits at the center.
inline Tensor make_aux_latent(const Tensor& y_first, const Tensor& y_second,
                              Orientation orient) {
    detail::require_even_span(y_first, orient, "aux latent input");
    require_same_shape(y_second, y_first, "aux latent pair");
    const std::size_t C = y_first.dim(0), H = y_first.dim(1), W = y_first.dim(2);
    Tensor out = Tensor::zeros_like(y_first);
    if (orient == Orientation::vertical) {
        const std::size_t half = H / 2;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    out.at3(c, y, x) = y < half ? y_first.at3(c, y + half, x)
                                                : y_second.at3(c, y - half, x);
    } else {
        const std::size_t half = W / 2;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    out.at3(c, y, x) = x < half ? y_first.at3(c, y, x + half)
                                                : y_second.at3(c, y, x - half);
    }
    return out;
}

enum class TranslateOp { T1, T2 };

// Half-span shift with zero fill. T1 shifts toward larger indices (aux frame
// into the first patch's frame), T2 toward smaller (into the second's).
inline Tensor translate(const Tensor& f, TranslateOp op, Orientation orient) {
    detail::require_even_span(f, orient, "translate input");
    const std::size_t C = f.dim(0), H = f.dim(1), W = f.dim(2);
    Tensor out = Tensor::zeros_like(f);
    if (orient == Orientation::vertical) {
        const std::size_t half = H / 2;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    if (op == TranslateOp::T1 && y >= half)
                        out.at3(c, y, x) = f.at3(c, y - half, x);
                    if (op == TranslateOp::T2 && y < half)
                        out.at3(c, y, x) = f.at3(c, y + half, x);
                }
    } else {
        const std::size_t half = W / 2;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    if (op == TranslateOp::T1 && x >= half)
                        out.at3(c, y, x) = f.at3(c, y, x - half);
                    if (op == TranslateOp::T2 && x < half)
                        out.at3(c, y, x) = f.at3(c, y, x + half);
                }
    }
    return out;
}

// (1 - lambda*M) * x0_self + lambda*M * T(x0_aux), with T chosen by the mask's
// side. Entries where the effective weight is zero are copied bit-for-bit.
inline Tensor blend_tweedie(const Tensor& x0_self, const Tensor& x0_aux, const RampMask& mask,
                            double lambda_t) {
    require_rank3(x0_self, "blend self estimate");
    require_same_shape(x0_aux, x0_self, "blend aux estimate");
    if (mask.values.rank() != 2 || mask.values.dim(0) != x0_self.dim(1) ||
        mask.values.dim(1) != x0_self.dim(2))
        throw dimension_error("mask shape " + shape_string(mask.values) +
                              " does not match patch " + shape_string(x0_self));
    if (!(lambda_t >= 0.0 && lambda_t <= 1.0))
        throw config_error("blend weight must lie in [0,1], got " + std::to_string(lambda_t));

    const Tensor shifted = translate(
        x0_aux, mask.side == PairSide::first ? TranslateOp::T1 : TranslateOp::T2, mask.orient);
    const std::size_t C = x0_self.dim(0), H = x0_self.dim(1), W = x0_self.dim(2);
    Tensor out = Tensor::zeros_like(x0_self);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double w = lambda_t * static_cast<double>(mask.values[y * W + x]);
                if (w == 0.0) {
                    out.at3(c, y, x) = x0_self.at3(c, y, x);
                } else {
                    out.at3(c, y, x) = static_cast<float>(
                        (1.0 - w) * static_cast<double>(x0_self.at3(c, y, x)) +
                        w * static_cast<double>(shifted.at3(c, y, x)));
                }
            }
    return out;
}

// One plain forward step that lifts a freshly stepped latent from level t - 1
// back to level t. No injection here: the detail already present in y_prev is
// what the resample is meant to carry upward.
inline Tensor resample_forward(const Denoiser& d, const Tensor& y_prev, int t) {
    const NoiseSchedule& s = d.schedule();
    if (t < 1 || t > s.T)
        throw config_error("resample needs 1 <= t <= T, got " + std::to_string(t));
    const Tensor eps = predict_eps(d, y_prev, t - 1).eps;
    return ddim_forward_step(y_prev, t - 1, eps, s);
}

struct SyncEdge {
    std::size_t first = 0;  // top (vertical) or left (horizontal) member
    std::size_t second = 0;
    Orientation orient = Orientation::vertical;
};

struct SyncPlan {
    std::size_t rows = 1, cols = 1;
    int tau = 0;
    std::vector<SyncEdge> edges;

    // max(0, 1 - t/tau); zero cutoff disables sync at every step.
    double lambda(int t) const {
        if (tau <= 0) return 0.0;
        return std::max(0.0, 1.0 - static_cast<double>(t) / static_cast<double>(tau));
    }
};

// Every interior edge of the grid exactly once, row-major patch indexing.
inline SyncPlan make_sync_plan(std::size_t rows, std::size_t cols, int tau) {
    if (rows == 0 || cols == 0) throw config_error("sync plan needs a non-empty grid");
    if (tau < 0) throw config_error("sync cutoff must be >= 0");
    SyncPlan plan{rows, cols, tau, {}};
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (c + 1 < cols) plan.edges.push_back({i, i + 1, Orientation::horizontal});
            if (r + 1 < rows) plan.edges.push_back({i, i + cols, Orientation::vertical});
        }
    return plan;
}

// Synchronized reverse update at timestep t. y_prev holds the per-patch
// outputs of the (possibly injected) reverse step from t, i.e. latents at
// level t - 1; timesteps[i] is the level patch i stepped from and every entry
// must equal t. Patches that participate in no active blend pass through
// bit-identically, including the whole grid whenever lambda(t) is zero.
//
// The update is Jacobi-style: every Tweedie estimate is taken from the
// pre-update resampled latents, then all patches move at once. A patch with
// several neighbors folds them into its estimate in the fixed order top,
// bottom, left, right.
inline std::vector<Tensor> sync_reverse_step(const Denoiser& d,
                                             const std::vector<Tensor>& y_prev,
                                             const std::vector<int>& timesteps,
                                             const SyncPlan& plan) {
    const NoiseSchedule& s = d.schedule();
    if (y_prev.empty() || y_prev.size() != plan.rows * plan.cols)
        throw config_error("sync expects " + std::to_string(plan.rows * plan.cols) +
                           " patch states, got " + std::to_string(y_prev.size()));
    if (timesteps.size() != y_prev.size())
        throw sync_barrier_error("one timestep per patch required");
    const int t = timesteps[0];
    for (std::size_t i = 1; i < timesteps.size(); ++i)
        if (timesteps[i] != t)
            throw sync_barrier_error("patch " + std::to_string(i) + " is at timestep " +
                                     std::to_string(timesteps[i]) + ", expected " +
                                     std::to_string(t));
    if (t < 1 || t > s.T)
        throw config_error("sync timestep out of range: " + std::to_string(t));
    for (std::size_t i = 1; i < y_prev.size(); ++i)
        require_same_shape(y_prev[i], y_prev[0], "sync patch state");

    const double lam = plan.lambda(t);
    if (lam <= 0.0 || plan.edges.empty()) return y_prev;

    for (const SyncEdge& e : plan.edges)
        if (e.first >= y_prev.size() || e.second >= y_prev.size())
            throw config_error("sync edge references patch outside the grid");

    const std::size_t n = y_prev.size();
    std::vector<char> active(n, 0);
    for (const SyncEdge& e : plan.edges) active[e.first] = active[e.second] = 1;

    // Stage 1: resample and estimate, all from pre-update states.
    std::vector<Tensor> rsp(n), eps_rsp(n), est(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        rsp[i] = resample_forward(d, y_prev[i], t);
        eps_rsp[i] = predict_eps(d, rsp[i], t).eps;
        est[i] = tweedie(rsp[i], t, eps_rsp[i], s);
    }
    std::vector<Tensor> est_aux(plan.edges.size());
    for (std::size_t k = 0; k < plan.edges.size(); ++k) {
        const SyncEdge& e = plan.edges[k];
        const Tensor aux = make_aux_latent(rsp[e.first], rsp[e.second], e.orient);
        est_aux[k] = tweedie(aux, t, predict_eps(d, aux, t).eps, s);
    }

    // Stage 2: per-patch blended estimate, then the synchronized update.
    const std::size_t H = y_prev[0].dim(1), W = y_prev[0].dim(2);
    const double sa_prev = std::sqrt(s.alpha(t - 1));
    const double sb_prev = std::sqrt(1.0 - s.alpha(t - 1));

    struct Incident {
        std::size_t edge;
        PairSide side;
        int order; // 0 top, 1 bottom, 2 left, 3 right
    };
    std::vector<Tensor> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) {
            out[i] = y_prev[i];
            continue;
        }
        std::vector<Incident> inc;
        for (std::size_t k = 0; k < plan.edges.size(); ++k) {
            const SyncEdge& e = plan.edges[k];
            if (e.orient == Orientation::vertical) {
                if (e.second == i) inc.push_back({k, PairSide::second, 0});
                if (e.first == i) inc.push_back({k, PairSide::first, 1});
            } else {
                if (e.second == i) inc.push_back({k, PairSide::second, 2});
                if (e.first == i) inc.push_back({k, PairSide::first, 3});
            }
        }
        std::sort(inc.begin(), inc.end(),
                  [](const Incident& a, const Incident& b) { return a.order < b.order; });

        Tensor blended = est[i];
        for (const Incident& v : inc) {
            const RampMask mask =
                make_ramp_mask(plan.edges[v.edge].orient, v.side, H, W);
            blended = blend_tweedie(blended, est_aux[v.edge], mask, lam);
        }

        Tensor next = Tensor::zeros_like(blended);
        for (std::size_t p = 0; p < next.numel(); ++p)
            next[p] = static_cast<float>(sa_prev * static_cast<double>(blended[p]) +
                                         sb_prev * static_cast<double>(eps_rsp[i][p]));
        out[i] = std::move(next);
    }
    return out;
}

} // namespace patchedit
