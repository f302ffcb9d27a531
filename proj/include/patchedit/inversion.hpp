#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace patchedit {

// Deterministic forward trace: states[t] is the latent at noise level t,
// states[0] the clean input, states[T] the fully noised endpoint.
struct Trajectory {
    std::vector<Tensor> states;

    int T() const { return static_cast<int>(states.size()) - 1; }

    const Tensor& at(int t) const {
        if (t < 0 || t >= static_cast<int>(states.size()))
            throw config_error("trajectory index out of range: " + std::to_string(t));
        return states[static_cast<std::size_t>(t)];
    }
};

// Runs the forward mirror of the deterministic reverse update: at each t the
// model's own eps(x_t, t) is reused to move up one noise level. alpha(0) = 1
// makes the t = 0 step well defined without a special case.
inline Trajectory invert(const Denoiser& d, const Tensor& x0) {
    const NoiseSchedule& s = d.schedule();
    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(s.T) + 1);
    traj.states.push_back(x0);
    for (int t = 0; t < s.T; ++t) {
        const Tensor eps = predict_eps(d, traj.states.back(), t).eps;
        traj.states.push_back(ddim_forward_step(traj.states.back(), t, eps, s));
        if (!traj.states.back().all_finite())
            throw divergence_error("inversion produced a non-finite value at timestep " +
                                   std::to_string(t + 1));
    }
    return traj;
}

// Additive per-step corrections to the predicted eps. offset[t] applies when
// stepping from level t down to t - 1; index 0 is never used.
struct EpsOffsets {
    std::vector<Tensor> offset;

    bool has(int t) const {
        return t >= 0 && t < static_cast<int>(offset.size()) &&
               offset[static_cast<std::size_t>(t)].numel() > 0;
    }
};

inline Tensor apply_offset(const Tensor& eps, const EpsOffsets* offsets, int t) {
    if (!offsets || !offsets->has(t)) return eps;
    const Tensor& o = offsets->offset[static_cast<std::size_t>(t)];
    require_same_shape(o, eps, "eps offset");
    Tensor out = Tensor::zeros_like(eps);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(static_cast<double>(eps[i]) + static_cast<double>(o[i]));
    return out;
}

// One corrected reverse step x_t -> x_{t-1}.
inline Tensor reverse_step_corrected(const Denoiser& d, const Tensor& x_t, int t,
                                     const EpsOffsets* offsets) {
    const Tensor eps = apply_offset(predict_eps(d, x_t, t).eps, offsets, t);
    return ddim_reverse_step(x_t, t, eps, d.schedule());
}

enum class CorrectionMode { closed_form, gradient };

struct CorrectionOptions {
    CorrectionMode mode = CorrectionMode::closed_form;
    int iterations = 50;      // gradient mode only
    double step_scale = 0.4;  // gradient mode: lr = step_scale / c_t^2
    // |c_t| below this would make the offset ill conditioned; the step is
    // then left uncorrected. Cosine schedules at practical T stay far above.
    double skip_threshold = 1e-8;
};

// Fits offsets so that corrected reverse steps retrace the recorded forward
// trajectory: from state[t] the corrected step lands on state[t-1]. The
// reverse update is affine in eps with slope c_t, so closed form divides the
// miss by c_t; gradient mode runs plain descent on the same quadratic and
// agrees with closed form to well under 1e-3 at the default iteration count.
inline EpsOffsets fit_corrections(const Denoiser& d, const Trajectory& traj,
                                  const CorrectionOptions& opts = {}) {
    const NoiseSchedule& s = d.schedule();
    if (traj.T() != s.T)
        throw config_error("trajectory length " + std::to_string(traj.T()) +
                           " != schedule T " + std::to_string(s.T));
    if (opts.mode == CorrectionMode::gradient && opts.iterations < 1)
        throw config_error("gradient correction needs >= 1 iteration");

    EpsOffsets off;
    off.offset.resize(static_cast<std::size_t>(s.T) + 1);
    for (int t = s.T; t >= 1; --t) {
        const Tensor& x_t = traj.at(t);
        const Tensor& target = traj.at(t - 1);
        const double c = eps_step_coefficient(s, t);
        if (std::abs(c) < opts.skip_threshold) continue;

        const Tensor eps = predict_eps(d, x_t, t).eps;
        const Tensor base = ddim_reverse_step(x_t, t, eps, s);
        Tensor delta = Tensor::zeros_like(eps);

        if (opts.mode == CorrectionMode::closed_form) {
            for (std::size_t i = 0; i < delta.numel(); ++i)
                delta[i] = static_cast<float>(
                    (static_cast<double>(target[i]) - static_cast<double>(base[i])) / c);
        } else {
            // residual(delta) = base + c * delta - target, L = ||residual||^2,
            // grad = 2 c residual, exact for this objective.
            const double lr = opts.step_scale / (c * c);
            for (int it = 0; it < opts.iterations; ++it) {
                for (std::size_t i = 0; i < delta.numel(); ++i) {
                    const double res = static_cast<double>(base[i]) +
                                       c * static_cast<double>(delta[i]) -
                                       static_cast<double>(target[i]);
                    delta[i] = static_cast<float>(static_cast<double>(delta[i]) -
                                                  lr * 2.0 * c * res);
                }
            }
        }
        off.offset[static_cast<std::size_t>(t)] = std::move(delta);
    }
    return off;
}

// Full reverse rollout from the trajectory's noisy endpoint, optionally with
// corrections. Returns the reconstructed clean latent.
inline Tensor reconstruct(const Denoiser& d, const Trajectory& traj,
                          const EpsOffsets* offsets = nullptr) {
    const NoiseSchedule& s = d.schedule();
    if (traj.T() != s.T)
        throw config_error("trajectory length " + std::to_string(traj.T()) +
                           " != schedule T " + std::to_string(s.T));
    Tensor x = traj.states.back();
    for (int t = s.T; t >= 1; --t) x = reverse_step_corrected(d, x, t, offsets);
    return x;
}

} // namespace patchedit
