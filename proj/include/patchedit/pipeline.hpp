#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "assets.hpp"
#include "denoiser.hpp"
#include "errors.hpp"
#include "inversion.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "patchgrid.hpp"
#include "sync.hpp"
#include "transfer.hpp"

namespace patchedit {

// Work items are claimed from a shared counter, each index is processed by
// exactly one worker, and the first exception wins. Outputs written to
// per-index slots make the result independent of the thread count.
template <class F>
inline void parallel_for(std::size_t n, int threads, F&& fn) {
    if (threads < 1) throw config_error("thread count must be >= 1");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    if (k <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_err;
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t w = 0; w < k; ++w)
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_err) first_err = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& th : pool) th.join();
    if (first_err) std::rethrow_exception(first_err);
}

// Codec slot between stored images and latents. Diffusion runs in pixel space
// here; a learned codec would implement this interface instead.
class Codec {
public:
    virtual ~Codec() = default;
    virtual Tensor encode(const Tensor& image) const = 0;
    virtual Tensor decode(const Tensor& latent) const = 0;
};

class IdentityCodec final : public Codec {
public:
    Tensor encode(const Tensor& image) const override { return image; }
    Tensor decode(const Tensor& latent) const override { return latent; }
};

struct EditJob {
    std::string source_high_path;
    std::string reference_low_path;
    std::string mask_path; // optional, empty = none
    std::string output_dir;
    bool save_trajectories = false;

    std::string denoiser_kind = "tinyconv"; // tinyconv | analytic
    std::uint64_t denoiser_seed = 1;
    double analytic_mu = 0.5;
    double analytic_sigma2 = 1.0;

    int T = 50;
    int tau = 15;
    TransferOptConfig opt;

    bool sync_enabled = true;
    double kick = 0.0;  // trajectory-divergence injection for ablation fixtures
    int kick_step = -1; // timestep at which the kick is added; -1 = never

    bool nulltext_enabled = true;
    CorrectionOptions nulltext;

    std::size_t patch_h = 32, patch_w = 32;

    std::uint64_t run_seed = 0; // recorded in the report; the pipeline itself is
                                // deterministic and draws nothing from it
    int threads = 1;
};

inline EditJob parse_edit_job(const KeyValues& kv) {
    static const char* allowed[] = {
        "io.source_high", "io.reference_low", "io.mask",       "io.output_dir",
        "io.save_trajectories",               "denoiser.kind", "denoiser.seed",
        "denoiser.mu",    "denoiser.sigma2",  "schedule.T",    "transfer.tau",
        "transfer.lr",    "transfer.iters",   "transfer.bias_only",
        "sync.enabled",   "sync.kick",        "sync.kick_step",
        "nulltext.enabled", "nulltext.mode",  "nulltext.iters",
        "patch.h",        "patch.w",          "run.seed",      "run.threads"};
    for (const auto& [key, val] : kv.entries()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw config_error(kv.source() + ": unknown job key '" + key + "'");
    }

    EditJob j;
    j.source_high_path = kv.get("io.source_high");
    j.reference_low_path = kv.get("io.reference_low");
    j.mask_path = kv.get_or("io.mask", "");
    j.output_dir = kv.get("io.output_dir");
    j.save_trajectories = kv.get_bool_or("io.save_trajectories", false);

    j.denoiser_kind = kv.get_or("denoiser.kind", "tinyconv");
    if (j.denoiser_kind != "tinyconv" && j.denoiser_kind != "analytic")
        throw config_error("denoiser.kind must be tinyconv or analytic");
    j.denoiser_seed = static_cast<std::uint64_t>(kv.get_int_or("denoiser.seed", 1));
    j.analytic_mu = kv.get_real_or("denoiser.mu", 0.5);
    j.analytic_sigma2 = kv.get_real_or("denoiser.sigma2", 1.0);

    j.T = static_cast<int>(kv.get_int_or("schedule.T", 50));
    j.tau = static_cast<int>(kv.get_int_or("transfer.tau", 15));
    if (j.tau < 0 || j.tau > j.T) throw config_error("transfer.tau must satisfy 0 <= tau <= T");
    j.opt.step = kv.get_real_or("transfer.lr", 1.0);
    j.opt.iters = static_cast<int>(kv.get_int_or("transfer.iters", 100));
    j.opt.bias_only = kv.get_bool_or("transfer.bias_only", false);

    j.sync_enabled = kv.get_bool_or("sync.enabled", true);
    j.kick = kv.get_real_or("sync.kick", 0.0);
    j.kick_step = static_cast<int>(kv.get_int_or("sync.kick_step", -1));
    if (j.kick_step > j.T) throw config_error("sync.kick_step must be <= schedule.T");

    j.nulltext_enabled = kv.get_bool_or("nulltext.enabled", true);
    const std::string mode = kv.get_or("nulltext.mode", "closed_form");
    if (mode == "closed_form") {
        j.nulltext.mode = CorrectionMode::closed_form;
    } else if (mode == "gradient") {
        j.nulltext.mode = CorrectionMode::gradient;
    } else {
        throw config_error("nulltext.mode must be closed_form or gradient");
    }
    j.nulltext.iterations = static_cast<int>(kv.get_int_or("nulltext.iters", 50));

    j.patch_h = static_cast<std::size_t>(kv.get_int("patch.h"));
    j.patch_w = static_cast<std::size_t>(kv.get_int("patch.w"));
    j.run_seed = static_cast<std::uint64_t>(kv.get_int_or("run.seed", 0));
    j.threads = static_cast<int>(kv.get_int_or("run.threads", 1));
    if (j.threads < 1) throw config_error("run.threads must be >= 1");
    return j;
}

inline std::unique_ptr<Denoiser> make_denoiser(const EditJob& job,
                                               const std::vector<std::size_t>& patch_dims) {
    NoiseSchedule s = make_cosine_schedule(job.T);
    if (job.denoiser_kind == "analytic")
        return std::make_unique<AnalyticLinearDenoiser>(std::move(s), patch_dims,
                                                        job.analytic_mu, job.analytic_sigma2);
    return std::make_unique<TinyConvDenoiser>(std::move(s), job.denoiser_seed, patch_dims[0]);
}

struct PatchLossRow {
    int patch = 0;
    int t = 0;
    double before = 0.0;
    double after = 0.0;
};

struct RunReport {
    std::string output_dir;
    std::size_t grid_rows = 0, grid_cols = 0;
    SeamScore seam;
    double mse_all = 0.0, psnr_all = 0.0, ssim_all = 0.0;
    bool has_masked = false;
    double mse_masked = 0.0, psnr_masked = 0.0, ssim_masked = 0.0;
    std::vector<PatchLossRow> losses;
    Tensor output; // merged canvas, also written to output.ppm / output.png
};

namespace detail {

template <class F>
auto run_stage(const char* stage, F&& fn) {
    try {
        return fn();
    } catch (const divergence_error& e) {
        throw divergence_error(std::string("stage ") + stage + ": " + e.what());
    } catch (const error& e) {
        throw error(std::string("stage ") + stage + ": " + e.what());
    }
}

inline std::string fmt_real(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline Tensor pack_trajectory(const Trajectory& traj) {
    const Tensor& s0 = traj.at(0);
    Tensor out({traj.states.size(), s0.dim(0), s0.dim(1), s0.dim(2)});
    std::size_t at = 0;
    for (const Tensor& s : traj.states)
        for (std::size_t i = 0; i < s.numel(); ++i) out[at++] = s[i];
    return out;
}

inline void check_finite(const Tensor& t, int step, std::size_t patch) {
    if (!t.all_finite())
        throw divergence_error("non-finite latent in patch " + std::to_string(patch) +
                               " at t=" + std::to_string(step));
}

} // namespace detail

// Full edit: load conditioning images, extract per-patch trajectories, fit
// the transfer maps, sample the reference with injection plus synchronization,
// merge, score, and write the run directory.
inline RunReport run_edit(const EditJob& job) {
    namespace fs = std::filesystem;
    using detail::run_stage;

    // ---- load ----
    struct Loaded {
        Tensor source_high, reference_low;
        std::optional<RegionMask> mask;
        std::size_t factor = 1;
    };
    Loaded in = run_stage("load", [&] {
        Loaded l;
        l.source_high = read_image(job.source_high_path);
        l.reference_low = read_image(job.reference_low_path);
        if (l.source_high.dim(0) != l.reference_low.dim(0))
            throw config_error("source and reference channel counts differ");
        const std::size_t hh = l.source_high.dim(1), hw = l.source_high.dim(2);
        const std::size_t lh = l.reference_low.dim(1), lw = l.reference_low.dim(2);
        if (lh == 0 || lw == 0 || hh % lh != 0 || hw % lw != 0 || hh / lh != hw / lw)
            throw config_error("reference dims must divide source dims by one integer factor");
        l.factor = hh / lh;
        if (!job.mask_path.empty()) {
            const Tensor m = read_image(job.mask_path);
            if (m.dim(0) != 1)
                throw config_error("mask image must be single-channel");
            if (m.dim(1) != hh || m.dim(2) != hw)
                throw config_error("mask dims must match the source canvas");
            Tensor flat({hh, hw});
            for (std::size_t i = 0; i < flat.numel(); ++i) flat[i] = m[i];
            l.mask.emplace(std::move(flat));
        }
        return l;
    });

    // ---- grid ----
    const IdentityCodec codec;
    struct Grids {
        PatchGrid x_low, x_high, y_low;
    };
    Grids g = run_stage("grid", [&] {
        const Tensor source_low = downsample(in.source_high, in.factor);
        const Tensor x_low_canvas = codec.encode(
            upsample_to_canvas(source_low, in.source_high.dim(1), in.source_high.dim(2)));
        const Tensor y_low_canvas = codec.encode(
            upsample_to_canvas(in.reference_low, in.source_high.dim(1), in.source_high.dim(2)));
        Grids grids;
        grids.x_low = split(x_low_canvas, job.patch_h, job.patch_w);
        grids.x_high = split(codec.encode(in.source_high), job.patch_h, job.patch_w);
        grids.y_low = split(y_low_canvas, job.patch_h, job.patch_w);
        return grids;
    });
    const std::size_t n = g.x_low.count();

    const std::unique_ptr<Denoiser> den =
        make_denoiser(job, {g.x_low.channels, job.patch_h, job.patch_w});
    const Denoiser& d = *den;

    // ---- extract: trajectories and source corrections, per patch ----
    std::vector<Trajectory> x_low_traj(n), x_high_traj(n), y_low_traj(n);
    std::vector<EpsOffsets> corrections(n);
    run_stage("extract", [&] {
        parallel_for(n, job.threads, [&](std::size_t i) {
            try {
                x_low_traj[i] = invert(d, g.x_low.patches[i]);
                x_high_traj[i] = invert(d, g.x_high.patches[i]);
                y_low_traj[i] = invert(d, g.y_low.patches[i]);
                if (job.nulltext_enabled)
                    corrections[i] = fit_corrections(d, x_low_traj[i], job.nulltext);
            } catch (const error& e) {
                throw error("patch " + std::to_string(i) + ": " + e.what());
            }
        });
    });

    // ---- transfer ----
    std::vector<FitResult> fits;
    fits.reserve(n);
    run_stage("transfer", [&] {
        std::vector<std::optional<FitResult>> slots(n);
        parallel_for(n, job.threads, [&](std::size_t i) {
            const EpsOffsets* off = job.nulltext_enabled ? &corrections[i] : nullptr;
            slots[i] = fit_transfer(d, x_high_traj[i], x_low_traj[i], job.tau, job.opt, off,
                                    static_cast<int>(i));
        });
        for (std::size_t i = 0; i < n; ++i) fits.push_back(std::move(*slots[i]));
    });

    // ---- sample ----
    const SyncPlan plan = make_sync_plan(g.x_low.rows, g.x_low.cols, job.tau);
    std::vector<Tensor> y(n);
    run_stage("sample", [&] {
        for (std::size_t i = 0; i < n; ++i) y[i] = y_low_traj[i].at(d.schedule().T);
        for (int t = d.schedule().T; t >= 1; --t) {
            if (t == job.kick_step && job.kick != 0.0) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double sign = i % 2 == 0 ? 1.0 : -1.0;
                    for (std::size_t p = 0; p < y[i].numel(); ++p)
                        y[i][p] = static_cast<float>(static_cast<double>(y[i][p]) +
                                                     sign * job.kick);
                }
            }
            std::vector<Tensor> next(n);
            parallel_for(n, job.threads, [&](std::size_t i) {
                const EpsOffsets* off = job.nulltext_enabled ? &corrections[i] : nullptr;
                next[i] = inject_reverse_step(fits[i].tf, d, y[i], t, off);
            });
            if (job.sync_enabled)
                next = sync_reverse_step(d, next, std::vector<int>(n, t), plan);
            for (std::size_t i = 0; i < n; ++i) detail::check_finite(next[i], t - 1, i);
            y = std::move(next);
        }
    });

    // ---- emit ----
    return run_stage("emit", [&] {
        RunReport rep;
        rep.output_dir = job.output_dir;
        rep.grid_rows = g.x_low.rows;
        rep.grid_cols = g.x_low.cols;

        PatchGrid out_grid = g.y_low;
        out_grid.patches = y;
        rep.output = codec.decode(merge(out_grid));

        rep.seam = seam_score(rep.output, job.patch_h, job.patch_w);
        const RegionMask* mask = in.mask ? &*in.mask : nullptr;
        rep.mse_all = mse(rep.output, in.source_high);
        rep.psnr_all = psnr(rep.output, in.source_high);
        rep.ssim_all = ssim(rep.output, in.source_high);
        if (mask) {
            rep.has_masked = true;
            rep.mse_masked = mse(rep.output, in.source_high, mask);
            rep.psnr_masked = psnr(rep.output, in.source_high, mask);
            rep.ssim_masked = ssim(rep.output, in.source_high, mask);
        }
        for (std::size_t i = 0; i < n; ++i)
            for (const StepOptReport& r : fits[i].ledger)
                rep.losses.push_back(
                    {static_cast<int>(i), r.t, r.initial_loss, r.final_loss});

        fs::create_directories(job.output_dir);
        std::vector<std::string> names;
        write_netpbm(job.output_dir + "/output.ppm", rep.output, 65535);
        names.push_back("output.ppm");
        write_png(job.output_dir + "/output.png", rep.output);
        names.push_back("output.png");

        {
            std::string tsv = "metric\tregion\tvalue\n";
            tsv += "mse\tall\t" + detail::fmt_real(rep.mse_all) + "\n";
            tsv += "psnr\tall\t" + detail::fmt_real(rep.psnr_all) + "\n";
            tsv += "ssim\tall\t" + detail::fmt_real(rep.ssim_all) + "\n";
            if (rep.has_masked) {
                tsv += "mse\tmasked\t" + detail::fmt_real(rep.mse_masked) + "\n";
                tsv += "psnr\tmasked\t" + detail::fmt_real(rep.psnr_masked) + "\n";
                tsv += "ssim\tmasked\t" + detail::fmt_real(rep.ssim_masked) + "\n";
            }
            tsv += "seam_score\tall\t" + format_seam(rep.seam) + "\n";
            write_bytes(job.output_dir + "/metrics.tsv",
                        std::vector<std::uint8_t>(tsv.begin(), tsv.end()));
            names.push_back("metrics.tsv");
        }
        {
            std::string tsv = "patch\tt\tloss_before\tloss_after\n";
            for (const PatchLossRow& r : rep.losses)
                tsv += std::to_string(r.patch) + "\t" + std::to_string(r.t) + "\t" +
                       detail::fmt_real(r.before) + "\t" + detail::fmt_real(r.after) + "\n";
            write_bytes(job.output_dir + "/losses.tsv",
                        std::vector<std::uint8_t>(tsv.begin(), tsv.end()));
            names.push_back("losses.tsv");
        }
        {
            std::string txt;
            txt += "patchedit run\n";
            txt += "denoiser: " + job.denoiser_kind +
                   " seed=" + std::to_string(job.denoiser_seed) +
                   " T=" + std::to_string(job.T) + "\n";
            txt += "grid: " + std::to_string(rep.grid_rows) + "x" +
                   std::to_string(rep.grid_cols) + " patches " + std::to_string(job.patch_h) +
                   "x" + std::to_string(job.patch_w) + "\n";
            txt += "transfer: tau=" + std::to_string(job.tau) +
                   " iters=" + std::to_string(job.opt.iters) +
                   " lr=" + detail::fmt_real(job.opt.step) +
                   (job.opt.bias_only ? " bias_only" : "") + "\n";
            txt += std::string("nulltext: ") + (job.nulltext_enabled ? "on" : "off") + "\n";
            txt += std::string("sync: ") + (job.sync_enabled ? "on" : "off") + "\n";
            txt += "run.seed: " + std::to_string(job.run_seed) + "\n";
            txt += "seam_score: " + format_seam(rep.seam) + "\n";
            txt += "mse: " + detail::fmt_real(rep.mse_all) +
                   "  psnr: " + detail::fmt_real(rep.psnr_all) +
                   "  ssim: " + detail::fmt_real(rep.ssim_all) + "\n";
            if (rep.has_masked)
                txt += "masked mse: " + detail::fmt_real(rep.mse_masked) +
                       "  psnr: " + detail::fmt_real(rep.psnr_masked) +
                       "  ssim: " + detail::fmt_real(rep.ssim_masked) + "\n";
            write_bytes(job.output_dir + "/report.txt",
                        std::vector<std::uint8_t>(txt.begin(), txt.end()));
            names.push_back("report.txt");
        }

        if (job.tau > 1 && n > 0) {
            fs::create_directories(job.output_dir + "/transfer");
            for (std::size_t i = 0; i < n; ++i) {
                const TransferFunction& tf = fits[i].tf;
                const std::size_t C = tf.channels();
                for (int t = 1; t < tf.tau(); ++t) {
                    Tensor packed({C, C + 1}); // per row: W row, then bias
                    for (std::size_t o = 0; o < C; ++o) {
                        for (std::size_t c = 0; c < C; ++c)
                            packed[o * (C + 1) + c] =
                                static_cast<float>(tf.weight(t)[o * C + c]);
                        packed[o * (C + 1) + C] = static_cast<float>(tf.bias(t)[o]);
                    }
                    const std::string name = "transfer/tf_p" + std::to_string(i) + "_t" +
                                             std::to_string(t) + ".tgd";
                    write_tensor(job.output_dir + "/" + name, packed);
                    names.push_back(name);
                }
            }
        }

        if (job.save_trajectories) {
            fs::create_directories(job.output_dir + "/traj");
            for (std::size_t i = 0; i < n; ++i) {
                const std::string a = "traj/x_low_p" + std::to_string(i) + ".tgd";
                const std::string b = "traj/x_high_p" + std::to_string(i) + ".tgd";
                const std::string c = "traj/y_low_p" + std::to_string(i) + ".tgd";
                write_tensor(job.output_dir + "/" + a, detail::pack_trajectory(x_low_traj[i]));
                write_tensor(job.output_dir + "/" + b, detail::pack_trajectory(x_high_traj[i]));
                write_tensor(job.output_dir + "/" + c, detail::pack_trajectory(y_low_traj[i]));
                names.push_back(a);
                names.push_back(b);
                names.push_back(c);
            }
        }

        write_manifest(job.output_dir, names);
        return rep;
    });
}

// ---- ablation drivers ----

struct SyncAblation {
    RunReport with_sync;
    RunReport without_sync;
};

// Same job twice, sync on and off, everything else identical. Results land in
// <output_dir>/sync_on and <output_dir>/sync_off plus a comparison table.
inline SyncAblation ablate_sync(const EditJob& base) {
    EditJob on = base, off = base;
    on.sync_enabled = true;
    on.output_dir = base.output_dir + "/sync_on";
    off.sync_enabled = false;
    off.output_dir = base.output_dir + "/sync_off";

    SyncAblation ab{run_edit(on), run_edit(off)};
    std::filesystem::create_directories(base.output_dir);
    std::string tsv = "variant\tseam_score\tmse\tpsnr\tssim\n";
    const auto row = [&](const char* name, const RunReport& r) {
        tsv += std::string(name) + "\t" + format_seam(r.seam) + "\t" +
               detail::fmt_real(r.mse_all) + "\t" + detail::fmt_real(r.psnr_all) + "\t" +
               detail::fmt_real(r.ssim_all) + "\n";
    };
    row("sync_on", ab.with_sync);
    row("sync_off", ab.without_sync);
    write_bytes(base.output_dir + "/ablate_sync.tsv",
                std::vector<std::uint8_t>(tsv.begin(), tsv.end()));
    return ab;
}

struct TauSweepRow {
    int tau = 0;
    RunReport report;
};

inline std::vector<TauSweepRow> ablate_tau(const EditJob& base, const std::vector<int>& taus) {
    if (taus.empty()) throw config_error("tau sweep needs at least one value");
    std::vector<TauSweepRow> rows;
    for (int tau : taus) {
        EditJob j = base;
        j.tau = tau;
        j.output_dir = base.output_dir + "/tau_" + std::to_string(tau);
        rows.push_back({tau, run_edit(j)});
    }
    std::filesystem::create_directories(base.output_dir);
    std::string tsv = "tau\tseam_score\tmse\tpsnr\tssim\n";
    for (const TauSweepRow& r : rows)
        tsv += std::to_string(r.tau) + "\t" + format_seam(r.report.seam) + "\t" +
               detail::fmt_real(r.report.mse_all) + "\t" + detail::fmt_real(r.report.psnr_all) +
               "\t" + detail::fmt_real(r.report.ssim_all) + "\n";
    write_bytes(base.output_dir + "/ablate_tau.tsv",
                std::vector<std::uint8_t>(tsv.begin(), tsv.end()));
    return rows;
}

} // namespace patchedit
