#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace patchedit {

// Cumulative signal-retention coefficients alpha_0..alpha_T for the cosine
// schedule. alpha_0 == 1 exactly; alpha_T always hits the lower clamp because
// the raw cosine vanishes at t == T.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alphas; // T+1 values, strictly decreasing, in (1e-5, 1]

    double alpha(int t) const {
        if (t < 0 || t > T) throw config_error("timestep out of range: " + std::to_string(t));
        return alphas[static_cast<std::size_t>(t)];
    }
};

inline constexpr double kAlphaFloor = 1e-5;

// alpha_t = cos^2(((t/T + s)/(1 + s)) * pi/2) / cos^2((s/(1+s)) * pi/2),
// clamped into (kAlphaFloor, 1].
inline NoiseSchedule make_cosine_schedule(int T, double s = 0.008) {
    if (T < 2) throw config_error("schedule needs T >= 2");
    if (!(s > 0.0) || !(s < 0.1)) throw config_error("cosine offset s must lie in (0, 0.1)");

    const double half_pi = std::acos(-1.0) / 2.0;
    auto raw = [&](double t) {
        const double c = std::cos((t / T + s) / (1.0 + s) * half_pi);
        return c * c;
    };
    const double norm = raw(0.0);

    NoiseSchedule sched;
    sched.T = T;
    sched.alphas.resize(static_cast<std::size_t>(T) + 1);
    sched.alphas[0] = 1.0; // exact by normalization
    for (int t = 1; t <= T; ++t) {
        double a = raw(static_cast<double>(t)) / norm;
        if (a < kAlphaFloor) a = kAlphaFloor;
        if (a > 1.0) a = 1.0;
        sched.alphas[static_cast<std::size_t>(t)] = a;
    }
    return sched;
}

namespace detail {

inline void require_step_range(const NoiseSchedule& s, int t, int lo, int hi, const char* what) {
    if (t < lo || t > hi)
        throw config_error(std::string(what) + ": timestep " + std::to_string(t) +
                           " outside [" + std::to_string(lo) + "," + std::to_string(hi) +
                           "] for T=" + std::to_string(s.T));
}

} // namespace detail

// One-shot clean-image estimate: x0_hat = (x_t - sqrt(1-a_t) * eps) / sqrt(a_t).
// Rejects t == 0 where the latent already is the clean image.
inline Tensor tweedie(const Tensor& x_t, int t, const Tensor& eps, const NoiseSchedule& s) {
    detail::require_step_range(s, t, 1, s.T, "tweedie");
    require_same_shape(x_t, eps, "tweedie");
    const double a = s.alpha(t);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor out = Tensor::zeros_like(x_t);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = (static_cast<double>(x_t[i]) - sn * static_cast<double>(eps[i])) / sa;
        out[i] = static_cast<float>(v);
    }
    return out;
}

// Deterministic reverse step t -> t-1:
//   x_{t-1} = sqrt(a_{t-1}) * x0_hat(x_t) + sqrt(1 - a_{t-1}) * eps.
// The whole per-element expression runs in double with one rounding on store.
inline Tensor ddim_reverse_step(const Tensor& x_t, int t, const Tensor& eps,
                                const NoiseSchedule& s) {
    detail::require_step_range(s, t, 1, s.T, "ddim_reverse_step");
    require_same_shape(x_t, eps, "ddim_reverse_step");
    const double a = s.alpha(t), ap = s.alpha(t - 1);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    const double sap = std::sqrt(ap), snp = std::sqrt(1.0 - ap);
    Tensor out = Tensor::zeros_like(x_t);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double xv = x_t[i], ev = eps[i];
        const double est = (xv - sn * ev) / sa;
        out[i] = static_cast<float>(sap * est + snp * ev);
    }
    return out;
}

// Deterministic forward (inversion) step t -> t+1; the mirror of the reverse
// rule. At t == 0 the clean-image estimate degenerates to x_t itself because
// alpha_0 == 1 exactly, so no special case is needed.
inline Tensor ddim_forward_step(const Tensor& x_t, int t, const Tensor& eps,
                                const NoiseSchedule& s) {
    detail::require_step_range(s, t, 0, s.T - 1, "ddim_forward_step");
    require_same_shape(x_t, eps, "ddim_forward_step");
    const double a = s.alpha(t), an = s.alpha(t + 1);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    const double san = std::sqrt(an), snn = std::sqrt(1.0 - an);
    Tensor out = Tensor::zeros_like(x_t);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double xv = x_t[i], ev = eps[i];
        const double est = (xv - sn * ev) / sa;
        out[i] = static_cast<float>(san * est + snn * ev);
    }
    return out;
}

// Coefficient of an eps perturbation in the reverse step output:
//   x_{t-1} = A_t * x_t + c_t * eps,  c_t = sqrt(1-a_{t-1}) - sqrt(a_{t-1}) * sqrt(1-a_t)/sqrt(a_t).
// Shared by the correction fitting and the transfer-objective gradient.
inline double eps_step_coefficient(const NoiseSchedule& s, int t) {
    detail::require_step_range(s, t, 1, s.T, "eps_step_coefficient");
    const double a = s.alpha(t), ap = s.alpha(t - 1);
    return std::sqrt(1.0 - ap) - std::sqrt(ap) * std::sqrt(1.0 - a) / std::sqrt(a);
}

} // namespace patchedit
