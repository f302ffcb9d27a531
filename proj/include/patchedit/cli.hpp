#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "assets.hpp"
#include "errors.hpp"
#include "inversion.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"

namespace patchedit {

namespace detail {

inline std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::size_t at = 0;
    while (at < csv.size()) {
        std::size_t comma = csv.find(',', at);
        if (comma == std::string::npos) comma = csv.size();
        const std::string tok = csv.substr(at, comma - at);
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw config_error("expected a comma-separated integer list, got '" + csv + "'");
        }
        at = comma + 1;
    }
    if (out.empty()) throw config_error("empty integer list");
    return out;
}

inline KeyValues load_job_file(const std::string& path,
                               const std::vector<std::string>& overrides) {
    KeyValues kv = KeyValues::parse_file(path);
    for (const std::string& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw config_error("--set expects key=value, got '" + ov + "'");
        kv.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    return kv;
}

inline void print_report(const RunReport& rep) {
    std::printf("output: %s\n", (rep.output_dir + "/output.ppm").c_str());
    std::printf("grid: %zux%zu\n", rep.grid_rows, rep.grid_cols);
    std::printf("seam_score: %s\n", format_seam(rep.seam).c_str());
    std::printf("mse: %s  psnr: %s  ssim: %s\n", fmt_real(rep.mse_all).c_str(),
                fmt_real(rep.psnr_all).c_str(), fmt_real(rep.ssim_all).c_str());
    if (rep.has_masked)
        std::printf("masked mse: %s  psnr: %s  ssim: %s\n", fmt_real(rep.mse_masked).c_str(),
                    fmt_real(rep.psnr_masked).c_str(), fmt_real(rep.ssim_masked).c_str());
}

} // namespace detail

// Process-style entry point, callable in-process by tests. Returns the exit
// code: 0 success, 1 configuration or usage problems, 2 numeric divergence.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"patch-wise trajectory-transfer image editing"};
    app.require_subcommand(1);

    // generate-assets
    AssetSpec aspec;
    CLI::App* gen = app.add_subcommand("generate-assets", "write procedural conditioning images");
    gen->add_option("--out", aspec.out_dir, "output directory")->required();
    gen->add_option("--family", aspec.family, "striped | checker | gradient-noise");
    gen->add_option("--height", aspec.height, "high-resolution height");
    gen->add_option("--width", aspec.width, "high-resolution width");
    gen->add_option("--channels", aspec.channels, "1 or 3");
    gen->add_option("--seed", aspec.seed, "generator seed");
    gen->add_option("--factor", aspec.factor, "high/low resolution ratio");
    gen->add_option("--transform", aspec.transform,
                    "identity | hue-rotate | pattern-substitute");
    gen->add_option("--angle", aspec.angle_deg, "hue rotation angle, degrees");
    gen->add_option("--sub-family", aspec.sub_family, "pattern used inside the masked region");
    gen->add_option("--mask-x0", aspec.mask_x0, "mask rectangle, fractional");
    gen->add_option("--mask-y0", aspec.mask_y0, "mask rectangle, fractional");
    gen->add_option("--mask-x1", aspec.mask_x1, "mask rectangle, fractional");
    gen->add_option("--mask-y1", aspec.mask_y1, "mask rectangle, fractional");

    // invert
    std::string inv_image, inv_out, inv_kind = "tinyconv";
    std::uint64_t inv_seed = 1;
    int inv_T = 50;
    double inv_mu = 0.5, inv_sigma2 = 1.0;
    bool inv_nulltext = false, inv_save_traj = false;
    CLI::App* inv = app.add_subcommand("invert", "roundtrip an image through the trajectory");
    inv->add_option("--image", inv_image, "input image")->required();
    inv->add_option("--out", inv_out, "output directory")->required();
    inv->add_option("--denoiser", inv_kind, "tinyconv | analytic");
    inv->add_option("--seed", inv_seed, "denoiser seed (tinyconv)");
    inv->add_option("--T", inv_T, "schedule length");
    inv->add_option("--mu", inv_mu, "analytic prior mean");
    inv->add_option("--sigma2", inv_sigma2, "analytic prior variance");
    inv->add_flag("--nulltext", inv_nulltext, "also fit per-step corrections");
    inv->add_flag("--save-trajectory", inv_save_traj, "persist the trajectory tensor");

    // edit / ablate-sync / ablate-tau
    std::string job_path, tau_list = "15,25,35";
    std::vector<std::string> overrides;
    CLI::App* edit = app.add_subcommand("edit", "run an edit job");
    edit->add_option("--job", job_path, "job file")->required();
    edit->add_option("--set", overrides, "override job keys: key=value");
    CLI::App* absync = app.add_subcommand("ablate-sync", "run a job with sync on and off");
    absync->add_option("--job", job_path, "job file")->required();
    absync->add_option("--set", overrides, "override job keys: key=value");
    CLI::App* abtau = app.add_subcommand("ablate-tau", "sweep the cutoff timestep");
    abtau->add_option("--job", job_path, "job file")->required();
    abtau->add_option("--taus", tau_list, "comma-separated cutoff values");
    abtau->add_option("--set", overrides, "override job keys: key=value");

    // metrics
    std::string m_a, m_b, m_mask;
    CLI::App* met = app.add_subcommand("metrics", "compare two images");
    met->add_option("--a", m_a, "first image")->required();
    met->add_option("--b", m_b, "second image")->required();
    met->add_option("--mask", m_mask, "binary region mask image");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            std::filesystem::create_directories(aspec.out_dir);
            const AssetPaths p = generate_assets(aspec);
            std::printf("%s\n%s\n%s\n%s\n", p.source_high.c_str(), p.source_low.c_str(),
                        p.reference_low.c_str(), p.mask.c_str());
        } else if (inv->parsed()) {
            const Tensor img = read_image(inv_image);
            EditJob cfg;
            cfg.denoiser_kind = inv_kind;
            cfg.denoiser_seed = inv_seed;
            cfg.analytic_mu = inv_mu;
            cfg.analytic_sigma2 = inv_sigma2;
            cfg.T = inv_T;
            const std::unique_ptr<Denoiser> den =
                make_denoiser(cfg, {img.dim(0), img.dim(1), img.dim(2)});
            const Trajectory traj = invert(*den, img);
            const Tensor plain = reconstruct(*den, traj);
            std::filesystem::create_directories(inv_out);
            write_netpbm(inv_out + (img.dim(0) == 1 ? "/recon_plain.pgm" : "/recon_plain.ppm"),
                         plain, 65535);
            std::printf("plain_rms: %s\n", detail::fmt_real(rms_diff(plain, img)).c_str());
            if (inv_nulltext) {
                const EpsOffsets off = fit_corrections(*den, traj);
                const Tensor fixed = reconstruct(*den, traj, &off);
                std::printf("corrected_rms: %s\n", detail::fmt_real(rms_diff(fixed, img)).c_str());
            }
            if (inv_save_traj)
                write_tensor(inv_out + "/trajectory.tgd", detail::pack_trajectory(traj));
        } else if (edit->parsed()) {
            const EditJob job = parse_edit_job(detail::load_job_file(job_path, overrides));
            detail::print_report(run_edit(job));
        } else if (absync->parsed()) {
            const EditJob job = parse_edit_job(detail::load_job_file(job_path, overrides));
            const SyncAblation ab = ablate_sync(job);
            std::printf("variant\tseam_score\n");
            std::printf("sync_on\t%s\n", format_seam(ab.with_sync.seam).c_str());
            std::printf("sync_off\t%s\n", format_seam(ab.without_sync.seam).c_str());
        } else if (abtau->parsed()) {
            const EditJob job = parse_edit_job(detail::load_job_file(job_path, overrides));
            const std::vector<TauSweepRow> rows =
                ablate_tau(job, detail::parse_int_list(tau_list));
            std::printf("tau\tseam_score\tmse\tpsnr\tssim\n");
            for (const TauSweepRow& r : rows)
                std::printf("%d\t%s\t%s\t%s\t%s\n", r.tau, format_seam(r.report.seam).c_str(),
                            detail::fmt_real(r.report.mse_all).c_str(),
                            detail::fmt_real(r.report.psnr_all).c_str(),
                            detail::fmt_real(r.report.ssim_all).c_str());
        } else if (met->parsed()) {
            const Tensor a = read_image(m_a);
            const Tensor b = read_image(m_b);
            std::optional<RegionMask> mask;
            if (!m_mask.empty()) {
                const Tensor m = read_image(m_mask);
                if (m.dim(0) != 1) throw config_error("mask image must be single-channel");
                Tensor flat({m.dim(1), m.dim(2)});
                for (std::size_t i = 0; i < flat.numel(); ++i) flat[i] = m[i];
                mask.emplace(std::move(flat));
            }
            const RegionMask* mp = mask ? &*mask : nullptr;
            const char* region = mp ? "masked" : "all";
            std::printf("metric\tregion\tvalue\n");
            std::printf("mse\t%s\t%s\n", region, detail::fmt_real(mse(a, b, mp)).c_str());
            std::printf("psnr\t%s\t%s\n", region, detail::fmt_real(psnr(a, b, mp)).c_str());
            std::printf("ssim\t%s\t%s\n", region, detail::fmt_real(ssim(a, b, mp)).c_str());
        }
    } catch (const divergence_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

} // namespace patchedit
