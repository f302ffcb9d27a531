#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace patchedit {

// Named feature tensor inside a denoiser where an additive delta_h can be
// applied before the downstream layers. Spatial dims always follow the input
// latent; only the channel count is fixed per denoiser.
struct InjectionSite {
    std::string site_id;
    std::size_t channels = 0;
};

struct EpsResult {
    Tensor eps; // noise prediction, input shape
    Tensor h;   // captured feature at the injection site, [site.channels, H, W]
};

// Noise-prediction interface. Implementations are immutable after
// construction; forward and vjp are pure, so one instance may serve any
// number of threads.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual std::size_t input_channels() const = 0;
    virtual const InjectionSite& site() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;

    // delta_h == nullptr means no injection. A zero tensor takes the same
    // path and yields values identical to the nullptr call.
    virtual EpsResult forward(const Tensor& x_t, int t, const Tensor* delta_h) const = 0;

    // d<cotangent, eps>/d(delta_h) at (x_t, t, delta_h).
    virtual Tensor vjp_injection(const Tensor& x_t, int t, const Tensor& delta_h,
                                 const Tensor& cotangent) const = 0;

protected:
    void check_input(const Tensor& x_t, int t) const {
        require_rank3(x_t, "denoiser input");
        if (x_t.dim(0) != input_channels())
            throw dimension_error("denoiser input channels " + std::to_string(x_t.dim(0)) +
                                  " != expected " + std::to_string(input_channels()));
        if (t < 0 || t > schedule().T)
            throw config_error("denoiser timestep out of range: " + std::to_string(t));
    }

    void check_delta(const Tensor& x_t, const Tensor& delta_h) const {
        require_rank3(delta_h, "delta_h");
        if (delta_h.dim(0) != site().channels || delta_h.dim(1) != x_t.dim(1) ||
            delta_h.dim(2) != x_t.dim(2))
            throw dimension_error("delta_h shape " + shape_string(delta_h) +
                                  " does not match site [" + std::to_string(site().channels) +
                                  "," + std::to_string(x_t.dim(1)) + "," +
                                  std::to_string(x_t.dim(2)) + "]");
    }
};

inline EpsResult predict_eps(const Denoiser& d, const Tensor& x_t, int t) {
    return d.forward(x_t, t, nullptr);
}

inline Tensor predict_eps_injected(const Denoiser& d, const Tensor& x_t, int t,
                                   const Tensor& delta_h) {
    return d.forward(x_t, t, &delta_h).eps;
}

// Exact noise predictor for x0 ~ N(mu, sigma2 * I):
//   eps*(x, t) = sqrt(1-a_t) * (x - sqrt(a_t) * mu) / (a_t * sigma2 + 1 - a_t).
// Affine in x and in delta_h, which makes transfer optimization over its
// single linear tap a least-squares problem with a known minimizer. Its
// Tweedie estimate equals the Gaussian posterior mean, the module's oracle.
class AnalyticLinearDenoiser final : public Denoiser {
public:
    AnalyticLinearDenoiser(NoiseSchedule sched, Tensor mu, double sigma2)
        : sched_(std::move(sched)), mu_(std::move(mu)), sigma2_(sigma2) {
        require_rank3(mu_, "analytic mu");
        if (!(sigma2_ > 0.0)) throw config_error("analytic denoiser needs sigma2 > 0");
        if (!mu_.all_finite()) throw config_error("analytic mu must be finite");
        site_ = InjectionSite{"linear_tap", mu_.dim(0)};
    }

    // Constant-mean convenience.
    AnalyticLinearDenoiser(NoiseSchedule sched, std::vector<std::size_t> dims, double mu_value,
                           double sigma2)
        : AnalyticLinearDenoiser(std::move(sched),
                                 Tensor::full(std::move(dims), static_cast<float>(mu_value)),
                                 sigma2) {}

    std::size_t input_channels() const override { return mu_.dim(0); }
    const InjectionSite& site() const override { return site_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    const Tensor& mu() const { return mu_; }
    double sigma2() const { return sigma2_; }

    double gain(int t) const {
        const double a = sched_.alpha(t);
        return std::sqrt(1.0 - a) / (a * sigma2_ + 1.0 - a);
    }

    EpsResult forward(const Tensor& x_t, int t, const Tensor* delta_h) const override {
        check_input(x_t, t);
        if (!x_t.same_shape(mu_))
            throw dimension_error("analytic denoiser is bound to input shape " +
                                  shape_string(mu_) + ", got " + shape_string(x_t));
        if (delta_h) check_delta(x_t, *delta_h);

        const double sa = std::sqrt(sched_.alpha(t));
        const double k = gain(t);
        EpsResult r{Tensor::zeros_like(x_t), Tensor::zeros_like(x_t)};
        for (std::size_t i = 0; i < x_t.numel(); ++i) {
            const double h = static_cast<double>(x_t[i]) - sa * static_cast<double>(mu_[i]);
            r.h[i] = static_cast<float>(h);
            const double hd = delta_h ? h + static_cast<double>((*delta_h)[i]) : h;
            r.eps[i] = static_cast<float>(k * hd);
        }
        return r;
    }

    Tensor vjp_injection(const Tensor& x_t, int t, const Tensor& delta_h,
                         const Tensor& cotangent) const override {
        check_input(x_t, t);
        check_delta(x_t, delta_h);
        require_same_shape(cotangent, x_t, "vjp cotangent");
        const double k = gain(t); // constant Jacobian: model is linear in delta_h
        Tensor g = Tensor::zeros_like(delta_h);
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = static_cast<float>(k * static_cast<double>(cotangent[i]));
        return g;
    }

private:
    NoiseSchedule sched_;
    Tensor mu_;
    double sigma2_;
    InjectionSite site_;
};

// Three 3x3 convolutions (zero padding 1, stride 1), widths [C, 8, 8, C],
// tanh after layers 1 and 2, additive per-channel timestep embedding u * (t/T)
// at every layer. Injection site "post_layer2" is the pre-activation output of
// layer 2, so delta_h passes through exactly one tanh and one convolution.
//
// Weights come from SplitMix64(seed), uniform [-0.2, 0.2], drawn in this
// order: for each layer 1..3, weight[out][in][ky][kx] row-major, then
// bias[out], then timestep embedding[out]. This order plus the generator
// constants in rng.hpp fully pin the network: record the seed and any
// implementation in any language reproduces it bit-for-bit.
class TinyConvDenoiser final : public Denoiser {
public:
    static constexpr std::size_t kHidden = 8;

    TinyConvDenoiser(NoiseSchedule sched, std::uint64_t seed, std::size_t channels)
        : sched_(std::move(sched)), channels_(channels), seed_(seed) {
        if (channels_ == 0) throw config_error("tinyconv needs >= 1 channel");
        site_ = InjectionSite{"post_layer2", kHidden};

        SplitMix64 rng(seed);
        const std::size_t widths[4] = {channels_, kHidden, kHidden, channels_};
        for (int l = 0; l < 3; ++l) {
            Layer& L = layers_[l];
            L.in = widths[l];
            L.out = widths[l + 1];
            L.w.resize(L.out * L.in * 9);
            for (double& v : L.w) v = rng.uniform(-0.2, 0.2);
            L.b.resize(L.out);
            for (double& v : L.b) v = rng.uniform(-0.2, 0.2);
            L.u.resize(L.out);
            for (double& v : L.u) v = rng.uniform(-0.2, 0.2);
        }
    }

    std::size_t input_channels() const override { return channels_; }
    const InjectionSite& site() const override { return site_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    std::uint64_t seed() const { return seed_; }

    EpsResult forward(const Tensor& x_t, int t, const Tensor* delta_h) const override {
        check_input(x_t, t);
        if (delta_h) check_delta(x_t, *delta_h);
        const std::size_t H = x_t.dim(1), W = x_t.dim(2);
        const double r = static_cast<double>(t) / sched_.T;

        std::vector<double> z1, a2, z2, out;
        to_double(x_t, z1); // reuse as input buffer
        std::vector<double> a1;
        conv_affine(layers_[0], z1, H, W, r, a1);
        tanh_inplace(a1);
        conv_affine(layers_[1], a1, H, W, r, a2);

        EpsResult res;
        res.h = Tensor({kHidden, H, W});
        for (std::size_t i = 0; i < a2.size(); ++i) res.h[i] = static_cast<float>(a2[i]);

        z2 = a2;
        if (delta_h)
            for (std::size_t i = 0; i < z2.size(); ++i)
                z2[i] += static_cast<double>((*delta_h)[i]);
        tanh_inplace(z2);
        conv_affine(layers_[2], z2, H, W, r, out);

        res.eps = Tensor({channels_, H, W});
        for (std::size_t i = 0; i < out.size(); ++i) res.eps[i] = static_cast<float>(out[i]);
        return res;
    }

    Tensor vjp_injection(const Tensor& x_t, int t, const Tensor& delta_h,
                         const Tensor& cotangent) const override {
        check_input(x_t, t);
        check_delta(x_t, delta_h);
        require_same_shape(cotangent, x_t, "vjp cotangent");
        const std::size_t H = x_t.dim(1), W = x_t.dim(2);
        const double r = static_cast<double>(t) / sched_.T;

        // Recompute the pre-activation at the site, then pull the cotangent
        // back through conv3 and the tanh pointwise derivative.
        std::vector<double> buf, a1, a2;
        to_double(x_t, buf);
        conv_affine(layers_[0], buf, H, W, r, a1);
        tanh_inplace(a1);
        conv_affine(layers_[1], a1, H, W, r, a2);
        for (std::size_t i = 0; i < a2.size(); ++i)
            a2[i] += static_cast<double>(delta_h[i]);

        std::vector<double> cot, g;
        to_double(cotangent, cot);
        conv_transpose(layers_[2], cot, H, W, g);

        Tensor grad({kHidden, H, W});
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double th = std::tanh(a2[i]);
            grad[i] = static_cast<float>(g[i] * (1.0 - th * th));
        }
        return grad;
    }

private:
    struct Layer {
        std::size_t in = 0, out = 0;
        std::vector<double> w; // [out][in][ky][kx] row-major
        std::vector<double> b;
        std::vector<double> u;
    };

    static void to_double(const Tensor& t, std::vector<double>& out) {
        out.resize(t.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(t[i]);
    }

    static void tanh_inplace(std::vector<double>& v) {
        for (double& x : v) x = std::tanh(x);
    }

    // out[o,y,x] = sum_{i,ky,kx} w[o,i,ky,kx] * in[i, y+ky-1, x+kx-1] + b[o] + u[o]*r,
    // zero padding outside the image.
    static void conv_affine(const Layer& L, const std::vector<double>& in, std::size_t H,
                            std::size_t W, double r, std::vector<double>& out) {
        out.assign(L.out * H * W, 0.0);
        for (std::size_t o = 0; o < L.out; ++o) {
            const double base = L.b[o] + L.u[o] * r;
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) {
                    double acc = base;
                    for (std::size_t i = 0; i < L.in; ++i) {
                        const double* wp = &L.w[(o * L.in + i) * 9];
                        for (int ky = 0; ky < 3; ++ky) {
                            const std::ptrdiff_t yy =
                                static_cast<std::ptrdiff_t>(y) + ky - 1;
                            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const std::ptrdiff_t xx =
                                    static_cast<std::ptrdiff_t>(x) + kx - 1;
                                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += wp[ky * 3 + kx] *
                                       in[(i * H + static_cast<std::size_t>(yy)) * W +
                                          static_cast<std::size_t>(xx)];
                            }
                        }
                    }
                    out[(o * H + y) * W + x] = acc;
                }
            }
        }
    }

    // Adjoint of conv_affine's linear part with respect to its input:
    // out[i,y,x] = sum_{o,ky,kx} w[o,i,ky,kx] * g[o, y-ky+1, x-kx+1].
    static void conv_transpose(const Layer& L, const std::vector<double>& g, std::size_t H,
                               std::size_t W, std::vector<double>& out) {
        out.assign(L.in * H * W, 0.0);
        for (std::size_t o = 0; o < L.out; ++o) {
            for (std::size_t i = 0; i < L.in; ++i) {
                const double* wp = &L.w[(o * L.in + i) * 9];
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        double acc = 0.0;
                        for (int ky = 0; ky < 3; ++ky) {
                            const std::ptrdiff_t yy =
                                static_cast<std::ptrdiff_t>(y) - ky + 1;
                            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const std::ptrdiff_t xx =
                                    static_cast<std::ptrdiff_t>(x) - kx + 1;
                                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += wp[ky * 3 + kx] *
                                       g[(o * H + static_cast<std::size_t>(yy)) * W +
                                         static_cast<std::size_t>(xx)];
                            }
                        }
                        out[(i * H + y) * W + x] += acc;
                    }
                }
            }
        }
    }

    NoiseSchedule sched_;
    std::size_t channels_;
    std::uint64_t seed_;
    InjectionSite site_;
    Layer layers_[3];
};

} // namespace patchedit
