#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "patchedit/denoiser.hpp"
#include "patchedit/sync.hpp"
#include "patchedit/schedule.hpp"
#include "support/test_util.hpp"

using namespace patchedit;
using testutil::ConstEpsDenoiser;
using testutil::expect_throws;
using testutil::roundtrip_ulps;
using testutil::uniform_tensor;

TEST(RampMask, FormulasAndComplementarity) {
    for (std::size_t hp : {8ul, 16ul, 64ul}) {
        const RampMask m1 = make_ramp_mask(Orientation::vertical, PairSide::first, hp, 4);
        const RampMask m2 = make_ramp_mask(Orientation::vertical, PairSide::second, hp, 4);
        const std::size_t half = hp / 2;
        for (std::size_t v = 0; v < hp; ++v) {
            const double w1 = v >= half ? static_cast<double>(v - half) / half : 0.0;
            const double w2 = v <= half ? static_cast<double>(half - v) / half : 0.0;
            EXPECT_NEAR(m1.values[v * 4 + 2], w1, 1e-7) << "hp=" << hp << " v=" << v;
            EXPECT_NEAR(m2.values[v * 4 + 1], w2, 1e-7) << "hp=" << hp << " v=" << v;
        }
        // a first-side row and the second-side row holding the same aux
        // content carry weights that sum to one
        for (std::size_t v = half; v < hp; ++v) {
            const double sum = static_cast<double>(m1.values[v * 4]) +
                               static_cast<double>(m2.values[(v - half) * 4]);
            EXPECT_NEAR(sum, 1.0, 1e-6) << "hp=" << hp << " v=" << v;
        }
    }

    const RampMask h1 = make_ramp_mask(Orientation::horizontal, PairSide::first, 4, 8);
    EXPECT_EQ(h1.values[0 * 8 + 3], 0.0f);
    EXPECT_NEAR(h1.values[2 * 8 + 6], 0.5, 1e-7);

    expect_throws<geometry_error>(
        [] { (void)make_ramp_mask(Orientation::vertical, PairSide::first, 7, 4); });
    expect_throws<geometry_error>(
        [] { (void)make_ramp_mask(Orientation::horizontal, PairSide::second, 4, 0); });
}

TEST(AuxLatent, ConcatenatesFacingHalves) {
    const Tensor a = uniform_tensor({2, 8, 6}, 401, 0.0, 1.0);
    const Tensor b = uniform_tensor({2, 8, 6}, 402, 0.0, 1.0);

    const Tensor v = make_aux_latent(a, b, Orientation::vertical);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 6; ++x)
                EXPECT_EQ(v.at3(c, y, x),
                          y < 4 ? a.at3(c, y + 4, x) : b.at3(c, y - 4, x));

    const Tensor hcat = make_aux_latent(a, b, Orientation::horizontal);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 6; ++x)
                EXPECT_EQ(hcat.at3(c, y, x),
                          x < 3 ? a.at3(c, y, x + 3) : b.at3(c, y, x - 3));

    const Tensor odd = uniform_tensor({2, 7, 6}, 403, 0.0, 1.0);
    expect_throws<geometry_error>([&] { (void)make_aux_latent(odd, odd, Orientation::vertical); });
    const Tensor small = uniform_tensor({2, 8, 4}, 404, 0.0, 1.0);
    expect_throws<dimension_error>(
        [&] { (void)make_aux_latent(a, small, Orientation::vertical); });
}

TEST(Translate, HalfSpanShiftsWithZeroFill) {
    const Tensor f = uniform_tensor({1, 8, 4}, 405, 0.5, 1.5);

    const Tensor t1 = translate(f, TranslateOp::T1, Orientation::vertical);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            EXPECT_EQ(t1.at3(0, y, x), y < 4 ? 0.0f : f.at3(0, y - 4, x));

    const Tensor t2 = translate(f, TranslateOp::T2, Orientation::vertical);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            EXPECT_EQ(t2.at3(0, y, x), y < 4 ? f.at3(0, y + 4, x) : 0.0f);

    // shifting down then up preserves the top half and zeroes the rest
    const Tensor back = translate(t1, TranslateOp::T2, Orientation::vertical);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            EXPECT_EQ(back.at3(0, y, x), y < 4 ? f.at3(0, y, x) : 0.0f);

    const Tensor h = translate(f, TranslateOp::T1, Orientation::horizontal);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            EXPECT_EQ(h.at3(0, y, x), x < 2 ? 0.0f : f.at3(0, y, x - 2));
}

TEST(BlendTweedie, ZeroLambdaCopiesBitExact) {
    const Tensor self = uniform_tensor({2, 8, 8}, 406, -1.0, 1.0);
    const Tensor aux = uniform_tensor({2, 8, 8}, 407, -1.0, 1.0);
    const RampMask m = make_ramp_mask(Orientation::vertical, PairSide::first, 8, 8);
    EXPECT_TRUE(identical(blend_tweedie(self, aux, m, 0.0), self));
}

TEST(BlendTweedie, HandValueAndDegenerateEqualInputs) {
    const RampMask m = make_ramp_mask(Orientation::vertical, PairSide::first, 8, 4);
    const Tensor self = Tensor::full({1, 8, 4}, 0.8f);
    const Tensor aux = Tensor::full({1, 8, 4}, 0.4f);

    const Tensor out = blend_tweedie(self, aux, m, 0.5);
    // row 6 carries mask (6-4)/4 = 0.5, so weight 0.25
    EXPECT_NEAR(out.at3(0, 6, 1), 0.75 * 0.8 + 0.25 * 0.4, 1e-7);
    for (std::size_t y = 0; y < 4; ++y) EXPECT_EQ(out.at3(0, y, 2), 0.8f);

    // aux whose shifted rows equal the self estimate collapses the blend
    const Tensor noisy = uniform_tensor({1, 8, 4}, 408, -0.5, 0.5);
    Tensor matched = Tensor::zeros_like(noisy);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            matched.at3(0, y, x) = noisy.at3(0, y + 4, x);
    const Tensor kept = blend_tweedie(noisy, matched, m, 0.7);
    EXPECT_TRUE(identical(kept, noisy));
}

TEST(BlendTweedie, ValidationErrors) {
    const Tensor self = uniform_tensor({1, 8, 4}, 409, 0.0, 1.0);
    const RampMask m = make_ramp_mask(Orientation::vertical, PairSide::first, 8, 4);
    expect_throws<config_error>([&] { (void)blend_tweedie(self, self, m, -0.1); });
    expect_throws<config_error>([&] { (void)blend_tweedie(self, self, m, 1.2); });

    const RampMask wrong = make_ramp_mask(Orientation::vertical, PairSide::first, 8, 6);
    expect_throws<dimension_error>([&] { (void)blend_tweedie(self, self, wrong, 0.5); });
}

TEST(Resample, UndoesPlainStepOnConstEps) {
    // With eps independent of the state the reverse and forward steps are
    // algebraic inverses; the measured error is the stored-intermediate
    // rounding, identical in kind to the schedule round-trip bound.
    const NoiseSchedule s = make_cosine_schedule(50);
    const Tensor eps = uniform_tensor({1, 8, 8}, 410, -0.2, 0.2);
    const ConstEpsDenoiser d(s, eps);
    const Tensor y = uniform_tensor({1, 8, 8}, 411, -0.5, 1.5);

    for (int t : {1, 5, 25, 49, 50}) {
        const Tensor stepped = ddim_reverse_step(y, t, predict_eps(d, y, t).eps, s);
        const Tensor back = resample_forward(d, stepped, t);
        EXPECT_LE(roundtrip_ulps(back, y, stepped), 6.0) << "t=" << t;
    }
}

TEST(Resample, NearInverseOnAnalyticDenoiser) {
    // The real model evaluates eps at two different points, so the pair is
    // only consistent up to the one-step discretization error.
    const NoiseSchedule s = make_cosine_schedule(50);
    const AnalyticLinearDenoiser d(s, {1, 8, 8}, 0.5, 1.0);
    const Tensor y = uniform_tensor({1, 8, 8}, 412, 0.2, 0.8);

    for (int t : {1, 10, 25, 40, 50}) {
        const Tensor stepped = ddim_reverse_step(y, t, predict_eps(d, y, t).eps, s);
        const Tensor back = resample_forward(d, stepped, t);
        EXPECT_LE(rms_diff(back, y), 1e-3) << "t=" << t;
    }

    expect_throws<config_error>([&] { (void)resample_forward(d, y, 0); });
    expect_throws<config_error>([&] { (void)resample_forward(d, y, 51); });
}

TEST(SyncPlan, EdgesAndLambdaSchedule) {
    const SyncPlan plan = make_sync_plan(2, 2, 35);
    ASSERT_EQ(plan.edges.size(), 4u);
    EXPECT_EQ(plan.edges[0].first, 0u);
    EXPECT_EQ(plan.edges[0].second, 1u);
    EXPECT_EQ(plan.edges[0].orient, Orientation::horizontal);
    EXPECT_EQ(plan.edges[1].first, 0u);
    EXPECT_EQ(plan.edges[1].second, 2u);
    EXPECT_EQ(plan.edges[1].orient, Orientation::vertical);
    EXPECT_EQ(plan.edges[2].first, 1u);
    EXPECT_EQ(plan.edges[2].second, 3u);
    EXPECT_EQ(plan.edges[2].orient, Orientation::vertical);
    EXPECT_EQ(plan.edges[3].first, 2u);
    EXPECT_EQ(plan.edges[3].second, 3u);
    EXPECT_EQ(plan.edges[3].orient, Orientation::horizontal);

    EXPECT_DOUBLE_EQ(plan.lambda(1), 1.0 - 1.0 / 35.0);
    EXPECT_DOUBLE_EQ(plan.lambda(34), 1.0 / 35.0);
    EXPECT_EQ(plan.lambda(35), 0.0);
    EXPECT_EQ(plan.lambda(40), 0.0);

    const SyncPlan off = make_sync_plan(2, 2, 0);
    EXPECT_EQ(off.lambda(1), 0.0);

    expect_throws<config_error>([] { (void)make_sync_plan(0, 2, 10); });
    expect_throws<config_error>([] { (void)make_sync_plan(2, 2, -1); });

    const SyncPlan single = make_sync_plan(1, 1, 10);
    EXPECT_TRUE(single.edges.empty());
}

TEST(SyncStep, PassThroughWhenInactive) {
    const NoiseSchedule s = make_cosine_schedule(50);
    const TinyConvDenoiser d(s, 67, 1);
    const std::vector<Tensor> y = {uniform_tensor({1, 8, 8}, 413, 0.0, 1.0),
                                   uniform_tensor({1, 8, 8}, 414, 0.0, 1.0)};

    // cutoff reached: lambda(t) == 0
    const SyncPlan plan = make_sync_plan(1, 2, 35);
    const std::vector<Tensor> at_tau = sync_reverse_step(d, y, {35, 35}, plan);
    EXPECT_TRUE(identical(at_tau[0], y[0]));
    EXPECT_TRUE(identical(at_tau[1], y[1]));

    // single patch: no edges to blend across
    const SyncPlan lone = make_sync_plan(1, 1, 35);
    const std::vector<Tensor> single = sync_reverse_step(d, {y[0]}, {10}, lone);
    EXPECT_TRUE(identical(single[0], y[0]));
}

TEST(SyncStep, BarrierAndValidationErrors) {
    const NoiseSchedule s = make_cosine_schedule(50);
    const TinyConvDenoiser d(s, 67, 1);
    const std::vector<Tensor> y = {uniform_tensor({1, 8, 8}, 415, 0.0, 1.0),
                                   uniform_tensor({1, 8, 8}, 416, 0.0, 1.0)};
    const SyncPlan plan = make_sync_plan(1, 2, 35);

    const std::string msg = expect_throws<sync_barrier_error>(
        [&] { (void)sync_reverse_step(d, y, {10, 11}, plan); });
    EXPECT_NE(msg.find("patch 1"), std::string::npos) << msg;
    expect_throws<sync_barrier_error>([&] { (void)sync_reverse_step(d, y, {10}, plan); });
    expect_throws<config_error>(
        [&] { (void)sync_reverse_step(d, {y[0]}, {10}, plan); });
    expect_throws<config_error>([&] { (void)sync_reverse_step(d, y, {0, 0}, plan); });

    SyncPlan bad = plan;
    bad.edges[0].second = 7;
    expect_throws<config_error>([&] { (void)sync_reverse_step(d, y, {10, 10}, bad); });

    const std::vector<Tensor> ragged = {y[0], uniform_tensor({1, 8, 6}, 417, 0.0, 1.0)};
    expect_throws<dimension_error>(
        [&] { (void)sync_reverse_step(d, ragged, {10, 10}, plan); });
}

TEST(SyncStep, IdenticalPatchesMatchPlainStepClosely) {
    // Equal neighbors make every aligned aux estimate bit-equal to the self
    // estimate (the denoiser is elementwise), so blending degenerates and the
    // only difference from a plain reverse step of the resampled latent is
    // the f32 store of the clean estimate.
    const NoiseSchedule s = make_cosine_schedule(50);
    const AnalyticLinearDenoiser d(s, {1, 8, 8}, 0.45, 1.0);
    const Tensor y_t = uniform_tensor({1, 8, 8}, 418, 0.1, 0.9);

    const int t = 20;
    const Tensor y_prev = ddim_reverse_step(y_t, t, predict_eps(d, y_t, t).eps, s);
    const SyncPlan plan = make_sync_plan(1, 2, 35);
    ASSERT_GT(plan.lambda(t), 0.0);

    const std::vector<Tensor> out = sync_reverse_step(d, {y_prev, y_prev}, {t, t}, plan);

    const Tensor rsp = resample_forward(d, y_prev, t);
    const Tensor plain = ddim_reverse_step(rsp, t, predict_eps(d, rsp, t).eps, s);
    EXPECT_LE(roundtrip_ulps(out[0], plain, plain), 4.0);
    EXPECT_LE(roundtrip_ulps(out[1], plain, plain), 4.0);
    EXPECT_TRUE(identical(out[0], out[1]));
}

TEST(SyncStep, ReplicatesDocumentedCompositionOnFullGrid) {
    // Reference construction from public pieces: resample, estimate, blend
    // neighbours in the fixed order top, bottom, left, right, then update.
    // The library step must match it bit for bit.
    const NoiseSchedule s = make_cosine_schedule(50);
    const TinyConvDenoiser d(s, 71, 1);
    const int t = 12;
    const SyncPlan plan = make_sync_plan(2, 2, 35);
    const double lam = plan.lambda(t);
    ASSERT_GT(lam, 0.0);

    std::vector<Tensor> y_prev;
    for (std::uint64_t seed : {420ull, 421ull, 422ull, 423ull}) {
        const Tensor y_t = uniform_tensor({1, 8, 8}, seed, 0.0, 1.0);
        y_prev.push_back(ddim_reverse_step(y_t, t, predict_eps(d, y_t, t).eps, s));
    }

    const std::vector<Tensor> got = sync_reverse_step(d, y_prev, {t, t, t, t}, plan);

    std::vector<Tensor> rsp(4), eps_rsp(4), est(4);
    for (std::size_t i = 0; i < 4; ++i) {
        rsp[i] = resample_forward(d, y_prev[i], t);
        eps_rsp[i] = predict_eps(d, rsp[i], t).eps;
        est[i] = tweedie(rsp[i], t, eps_rsp[i], s);
    }
    std::vector<Tensor> est_aux(plan.edges.size());
    for (std::size_t k = 0; k < plan.edges.size(); ++k) {
        const Tensor aux =
            make_aux_latent(rsp[plan.edges[k].first], rsp[plan.edges[k].second],
                            plan.edges[k].orient);
        est_aux[k] = tweedie(aux, t, predict_eps(d, aux, t).eps, s);
    }

    const double sa = std::sqrt(s.alpha(t - 1));
    const double sb = std::sqrt(1.0 - s.alpha(t - 1));
    for (std::size_t i = 0; i < 4; ++i) {
        struct Inc {
            std::size_t edge;
            PairSide side;
            int order;
        };
        std::vector<Inc> inc;
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
        std::sort(inc.begin(), inc.end(), [](const Inc& a, const Inc& b) {
            return a.order < b.order;
        });
        ASSERT_EQ(inc.size(), 2u) << "patch " << i;

        Tensor blended = est[i];
        for (const Inc& v : inc) {
            const RampMask mask = make_ramp_mask(plan.edges[v.edge].orient, v.side, 8, 8);
            blended = blend_tweedie(blended, est_aux[v.edge], mask, lam);
        }
        for (std::size_t p = 0; p < blended.numel(); ++p) {
            const float want = static_cast<float>(sa * static_cast<double>(blended[p]) +
                                                  sb * static_cast<double>(eps_rsp[i][p]));
            EXPECT_EQ(got[i][p], want) << "patch " << i << " p=" << p;
        }
    }
}
