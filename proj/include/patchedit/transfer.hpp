#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "inversion.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace patchedit {

// Per-timestep channel-mixing map applied at the injection site:
// delta_h[o,y,x] = sum_c W_t[o,c] * h[c,y,x] + b_t[o]. Parameters exist only
// for 1 <= t < tau and start at exactly zero; every t >= tau maps to zero, so
// injected stepping there is bit-identical to plain stepping.
class TransferFunction {
public:
    TransferFunction(int tau, std::size_t channels, int patch_id = 0)
        : tau_(tau), channels_(channels), patch_id_(patch_id) {
        if (tau_ < 0) throw config_error("transfer cutoff must be >= 0");
        if (channels_ == 0) throw config_error("transfer needs >= 1 channel");
        const int n = tau_ > 1 ? tau_ : 1;
        W_.assign(static_cast<std::size_t>(n), {});
        b_.assign(static_cast<std::size_t>(n), {});
        for (int t = 1; t < tau_; ++t) {
            W_[static_cast<std::size_t>(t)].assign(channels_ * channels_, 0.0);
            b_[static_cast<std::size_t>(t)].assign(channels_, 0.0);
        }
    }

    int tau() const { return tau_; }
    std::size_t channels() const { return channels_; }
    int patch_id() const { return patch_id_; }

    bool has_params(int t) const { return t >= 1 && t < tau_; }

    std::vector<double>& weight(int t) { check_param(t); return W_[static_cast<std::size_t>(t)]; }
    std::vector<double>& bias(int t) { check_param(t); return b_[static_cast<std::size_t>(t)]; }
    const std::vector<double>& weight(int t) const { check_param(t); return W_[static_cast<std::size_t>(t)]; }
    const std::vector<double>& bias(int t) const { check_param(t); return b_[static_cast<std::size_t>(t)]; }

    // h is the captured site feature [C, H, W].
    Tensor apply(const Tensor& h, int t) const {
        require_rank3(h, "transfer input");
        if (h.dim(0) != channels_)
            throw dimension_error("transfer expects " + std::to_string(channels_) +
                                  " channels, got " + std::to_string(h.dim(0)));
        Tensor out = Tensor::zeros_like(h);
        if (!has_params(t)) return out;
        const std::vector<double>& W = weight(t);
        const std::vector<double>& b = bias(t);
        const std::size_t pix = h.dim(1) * h.dim(2);
        for (std::size_t o = 0; o < channels_; ++o) {
            for (std::size_t p = 0; p < pix; ++p) {
                double acc = b[o];
                for (std::size_t c = 0; c < channels_; ++c)
                    acc += W[o * channels_ + c] * static_cast<double>(h[c * pix + p]);
                out[o * pix + p] = static_cast<float>(acc);
            }
        }
        return out;
    }

private:
    void check_param(int t) const {
        if (!has_params(t))
            throw config_error("no transfer parameters at t=" + std::to_string(t));
    }

    int tau_;
    std::size_t channels_;
    int patch_id_;
    std::vector<std::vector<double>> W_; // W_[t]: channels x channels, row-major
    std::vector<std::vector<double>> b_;
};

struct TransferOptConfig {
    int iters = 100;
    double step = 1.0;    // initial step size; backtracking shrinks it as needed
    bool backtrack = true;
    double backtrack_factor = 0.5;
    double min_step = 1e-15;
    double divergence_factor = 10.0;
    bool bias_only = false; // constant-vector ablation: W stays pinned at zero
};

struct StepOptReport {
    int t = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int iterations = 0;
    double step_used = 0.0;
};

// One reverse step with the frozen transfer map evaluated on the current
// feature. Steps without parameters take the plain path.
inline Tensor inject_reverse_step(const TransferFunction& tf, const Denoiser& d,
                                  const Tensor& y_t, int t,
                                  const EpsOffsets* offsets = nullptr) {
    if (!tf.has_params(t)) return reverse_step_corrected(d, y_t, t, offsets);
    const Tensor h = predict_eps(d, y_t, t).h;
    const Tensor dh = tf.apply(h, t);
    const Tensor eps = apply_offset(predict_eps_injected(d, y_t, t, dh), offsets, t);
    return ddim_reverse_step(y_t, t, eps, d.schedule());
}

namespace detail {

struct StepEval {
    double loss = 0.0;
    std::vector<double> gW;
    std::vector<double> gb;
};

// Loss and parameter gradients at one timestep. h is feature of x_tilde_t and
// does not depend on the parameters, so the caller computes it once. The
// reverse update is affine in eps with slope c_t, giving the eps cotangent
// 2 * c_t * (pred - target); the site gradient is pulled back through the
// denoiser, then contracted against h for W and summed over pixels for b.
inline StepEval transfer_step_eval(const Denoiser& d, const Tensor& x_t,
                                   const Tensor& target, int t, const Tensor& h,
                                   const std::vector<double>& W, const std::vector<double>& b,
                                   const EpsOffsets* offsets) {
    const NoiseSchedule& s = d.schedule();
    const std::size_t C = h.dim(0), pix = h.dim(1) * h.dim(2);

    Tensor dh = Tensor::zeros_like(h);
    for (std::size_t o = 0; o < C; ++o)
        for (std::size_t p = 0; p < pix; ++p) {
            double acc = b[o];
            for (std::size_t c = 0; c < C; ++c)
                acc += W[o * C + c] * static_cast<double>(h[c * pix + p]);
            dh[o * pix + p] = static_cast<float>(acc);
        }

    const Tensor eps = apply_offset(predict_eps_injected(d, x_t, t, dh), offsets, t);
    const Tensor pred = ddim_reverse_step(x_t, t, eps, s);
    const double c = eps_step_coefficient(s, t);

    StepEval ev;
    Tensor cot = Tensor::zeros_like(pred);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double r = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        ev.loss += r * r;
        cot[i] = static_cast<float>(2.0 * c * r);
    }

    const Tensor gdh = d.vjp_injection(x_t, t, dh, cot);
    ev.gW.assign(C * C, 0.0);
    ev.gb.assign(C, 0.0);
    for (std::size_t o = 0; o < C; ++o)
        for (std::size_t p = 0; p < pix; ++p) {
            const double g = static_cast<double>(gdh[o * pix + p]);
            ev.gb[o] += g;
            for (std::size_t c = 0; c < C; ++c)
                ev.gW[o * C + c] += g * static_cast<double>(h[c * pix + p]);
        }
    return ev;
}

} // namespace detail

// Gradient descent on || f_rev(x_tilde_t, t; W, b) - target_prev ||^2 over the
// parameters at one timestep. The step size persists across iterations and
// only shrinks, so with backtracking the loss never increases.
inline StepOptReport optimize_step(TransferFunction& tf, const Denoiser& d,
                                   const Tensor& x_tilde_t, const Tensor& target_prev,
                                   int t, const TransferOptConfig& cfg,
                                   const EpsOffsets* offsets = nullptr) {
    if (!tf.has_params(t))
        throw config_error("optimize_step needs 1 <= t < tau, got t=" + std::to_string(t));
    if (cfg.iters < 0) throw config_error("transfer iteration count must be >= 0");
    require_same_shape(target_prev, x_tilde_t, "transfer target");

    const Tensor h = predict_eps(d, x_tilde_t, t).h;
    std::vector<double>& W = tf.weight(t);
    std::vector<double>& b = tf.bias(t);

    detail::StepEval cur = detail::transfer_step_eval(d, x_tilde_t, target_prev, t, h, W, b,
                                                      offsets);
    StepOptReport rep;
    rep.t = t;
    rep.initial_loss = cur.loss;
    rep.final_loss = cur.loss;
    rep.step_used = cfg.step;

    double lr = cfg.step;
    std::vector<double> W2(W.size()), b2(b.size());
    for (int it = 0; it < cfg.iters; ++it) {
        if (cur.loss == 0.0) break;
        bool accepted = false;
        detail::StepEval trial;
        while (true) {
            for (std::size_t i = 0; i < W.size(); ++i)
                W2[i] = cfg.bias_only ? W[i] : W[i] - lr * cur.gW[i];
            for (std::size_t i = 0; i < b.size(); ++i) b2[i] = b[i] - lr * cur.gb[i];
            trial = detail::transfer_step_eval(d, x_tilde_t, target_prev, t, h, W2, b2,
                                               offsets);
            if (!cfg.backtrack || trial.loss <= cur.loss) {
                accepted = true;
                break;
            }
            if (lr < cfg.min_step) break;
            lr *= cfg.backtrack_factor;
        }
        if (!accepted) break; // step floor reached; parameters are at a stall
        W.swap(W2);
        b.swap(b2);
        cur = std::move(trial);
        rep.iterations = it + 1;
        rep.step_used = lr;
        if (rep.initial_loss > 0.0 && cur.loss > cfg.divergence_factor * rep.initial_loss)
            throw divergence_error(
                "transfer optimization diverged at t=" + std::to_string(t) + ": loss " +
                std::to_string(cur.loss) + " exceeds " +
                std::to_string(cfg.divergence_factor) + "x initial " +
                std::to_string(rep.initial_loss) + "; reduce the step size");
    }
    rep.final_loss = cur.loss;
    return rep;
}

struct FitResult {
    TransferFunction tf;
    Trajectory x_tilde;               // states[t] of the steered rollout, t = 0..T
    std::vector<StepOptReport> ledger; // one entry per optimized timestep, fit order
};

// Fits the per-timestep maps by walking the reverse rollout once: plain steps
// from T down to tau, then at each t < tau optimize against the target
// trajectory's next state and advance with the optimized parameters.
inline FitResult fit_transfer(const Denoiser& d, const Trajectory& target_traj,
                              const Trajectory& source_traj, int tau,
                              const TransferOptConfig& cfg,
                              const EpsOffsets* offsets = nullptr, int patch_id = 0) {
    const NoiseSchedule& s = d.schedule();
    if (target_traj.T() != s.T || source_traj.T() != s.T)
        throw config_error("transfer fit trajectories must have length T+1");
    if (tau < 0 || tau > s.T)
        throw config_error("transfer cutoff must satisfy 0 <= tau <= T");
    require_same_shape(target_traj.at(0), source_traj.at(0), "transfer fit trajectories");

    FitResult res{TransferFunction(tau, d.site().channels, patch_id), Trajectory{}, {}};
    res.x_tilde.states.assign(static_cast<std::size_t>(s.T) + 1, Tensor{});
    res.x_tilde.states[static_cast<std::size_t>(s.T)] = source_traj.at(s.T);

    for (int t = s.T; t >= 1; --t) {
        const Tensor& x = res.x_tilde.states[static_cast<std::size_t>(t)];
        if (res.tf.has_params(t)) {
            try {
                res.ledger.push_back(
                    optimize_step(res.tf, d, x, target_traj.at(t - 1), t, cfg, offsets));
            } catch (const divergence_error& e) {
                throw divergence_error("patch " + std::to_string(patch_id) + ": " + e.what());
            }
        }
        res.x_tilde.states[static_cast<std::size_t>(t - 1)] =
            inject_reverse_step(res.tf, d, x, t, offsets);
    }
    return res;
}

} // namespace patchedit
