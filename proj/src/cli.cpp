#include "velsplat/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "velsplat/checkpoint.hpp"
#include "velsplat/config.hpp"
#include "velsplat/errors.hpp"
#include "velsplat/metrics.hpp"
#include "velsplat/parallel.hpp"
#include "velsplat/renderer.hpp"
#include "velsplat/synth.hpp"
#include "velsplat/trainer.hpp"

namespace velsplat {
namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("cannot write " + path);
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::vector<double> parse_times(const std::string& list) {
    std::vector<double> times;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        std::size_t comma = list.find(',', pos);
        if (comma == std::string::npos) comma = list.size();
        times.push_back(to_double(list.substr(pos, comma - pos)));
        pos = comma + 1;
        if (comma == list.size()) break;
    }
    if (times.empty()) throw ConfigError("empty time list");
    return times;
}

std::string num(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

/// Rounds a rendered frame to the dataset's 8-bit precision so comparisons
/// against stored frames are like for like.
Frame quantized(Frame f) {
    for (double& v : f.rgb) {
        const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        v = static_cast<double>(std::lround(c * 255.0)) / 255.0;
    }
    return f;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
    const SceneSpec spec = parse_scene_spec(read_text(spec_path));
    const SynthResult result = synth_scene(spec);
    save_dataset(out_dir, result);
    out << "synthesized " << result.data.cameras.size() << " cameras x "
        << result.data.timestamps.size() << " times (" << result.oracle.size() << " movers"
        << (result.holdout_camera >= 0
                ? ", camera " + std::to_string(result.holdout_camera) + " held out"
                : std::string())
        << ") -> " << out_dir << "\n";
    return 0;
}

int cmd_fit(const std::string& data_dir, const std::string& config_path,
            const std::string& out_dir, const std::string& resume_path, int threads,
            std::ostream& out) {
    const SynthResult ds = load_dataset(data_dir);
    RunConfig cfg = parse_run_config(read_text(config_path));
    if (threads > 0) cfg.train.threads = threads;
    cfg.train.threads = resolve_thread_count(cfg.train.threads);
    make_dir(out_dir);
    cfg.train.diagnostic_path = out_dir + "/diverged.ckpt";

    SceneModel model;
    TrainState state;
    if (!resume_path.empty()) {
        Checkpoint ckpt = read_checkpoint(resume_path);
        if (!ckpt.has_train_state)
            throw ConfigError("resume checkpoint carries no training state");
        model = std::move(ckpt.model);
        state = std::move(ckpt.state);
        out << "resuming at iteration " << state.iteration << "\n";
    } else {
        model = init_model(cfg, ds.scene_min, ds.scene_max, ds.data.timestamps.front(),
                           ds.data.timestamps.back());
        state = TrainState::init(model, cfg.train);
    }

    const MetricsLog log = fit(model, ds.data, cfg.train, &state);
    write_text(out_dir + "/metrics.tsv", log.to_tsv());
    write_checkpoint(out_dir + "/model.ckpt", model, &state, print_run_config(cfg));
    out << "fit complete: " << state.iteration << " iterations, " << model.gaussians.size()
        << " gaussians -> " << out_dir << "\n";
    if (!log.rows.empty()) {
        const MetricsRow& last = log.rows.back();
        out << "final: train_loss = " << num(last.train_loss, "%.9g")
            << ", holdout_psnr = " << num(last.holdout_psnr)
            << ", holdout_ssim = " << num(last.holdout_ssim) << "\n";
    }
    return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& data_dir, int camera,
               const std::string& times_str, const std::string& out_dir, int threads,
               std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    const SynthResult ds = load_dataset(data_dir);
    if (camera < 0 || camera >= static_cast<int>(ds.data.cameras.size()))
        throw ConfigError("camera index out of range");
    const std::vector<double> times = parse_times(times_str);
    make_dir(out_dir);
    const int th = resolve_thread_count(threads);
    for (std::size_t i = 0; i < times.size(); ++i) {
        const Frame frame = render(ckpt.model, ds.data.cameras[camera], times[i],
                                   ds.data.background, nullptr, th);
        char name[32];
        std::snprintf(name, sizeof name, "render_%03zu.ppm", i);
        write_ppm(frame, out_dir + "/" + name);
    }
    out << "wrote " << times.size() << " frames -> " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, int threads,
             std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    const SynthResult ds = load_dataset(data_dir);
    const bool have_holdout = !ds.data.holdout.empty();
    const auto& items = have_holdout ? ds.data.holdout : ds.data.items;
    const int th = resolve_thread_count(threads);

    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    for (const Dataset::Item& item : items) {
        const Frame rendered =
            quantized(render(ckpt.model, ds.data.cameras[item.camera],
                             ds.data.timestamps[item.time], ds.data.background, nullptr, th));
        mean_psnr += psnr(rendered, item.image);
        mean_ssim += ssim(rendered, item.image);
    }
    mean_psnr /= static_cast<double>(items.size());
    mean_ssim /= static_cast<double>(items.size());

    out << "split = " << (have_holdout ? "holdout" : "train") << "\n";
    out << "frames = " << items.size() << "\n";
    out << "psnr = " << num(mean_psnr) << "\n";
    out << "ssim = " << num(mean_ssim) << "\n";
    if (!ds.oracle.empty()) {
        const double rmse = trajectory_rmse(ckpt.model, ds.data.timestamps, ds.oracle);
        const double extent = scene_extent(ds.scene_min, ds.scene_max);
        out << "traj_rmse = " << num(rmse, "%.9g") << "\n";
        out << "traj_rmse_frac = " << num(rmse / extent, "%.9g") << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path, int gaussian, const std::string& times_str,
                std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    const SceneModel& model = ckpt.model;
    if (gaussian < 0 || gaussian >= static_cast<int>(model.gaussians.size()))
        throw ConfigError("gaussian index out of range");
    const std::vector<double> times = parse_times(times_str);
    const DeformNetParams* net = model.net_enabled ? &model.net : nullptr;

    out << "t\tlive\tmean_x\tmean_y\tmean_z\tcov_xx\tcov_xy\tcov_xz\tcov_yy\tcov_yz\tcov_zz"
           "\teff_opacity\n";
    for (const double t : times) {
        const auto sliced =
            slice_gaussian(model.gaussians[gaussian], model.track_for(gaussian), net, t,
                           model.velocity_enabled, model.modulated_opacity);
        out << num(t, "%.9g") << "\t" << (sliced ? 1 : 0);
        if (sliced) {
            const Vec3 m = sliced->mean3;
            const Mat3& c = sliced->cov3;
            for (const double v : {m.x, m.y, m.z, c(0, 0), c(0, 1), c(0, 2), c(1, 1), c(1, 2),
                                   c(2, 2), sliced->eff_opacity})
                out << "\t" << num(v, "%.9g");
        } else {
            for (int k = 0; k < 10; ++k) out << "\t0";
        }
        out << "\n";
    }
    return 0;
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"velocity-decoupled 4D Gaussian splatting"};
    app.name("velsplat");
    app.require_subcommand(1);

    std::string spec_path;
    std::string data_dir;
    std::string config_path;
    std::string out_dir;
    std::string ckpt_path;
    std::string resume_path;
    std::string times_str;
    int camera = 0;
    int gaussian = 0;
    int threads = 0; // 0 keeps the config / single-thread default

    CLI::App* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    c_synth->add_option("--spec", spec_path, "scene spec file")->required();
    c_synth->add_option("--out", out_dir, "output dataset directory")->required();

    CLI::App* c_fit = app.add_subcommand("fit", "Fit a model to a dataset");
    c_fit->add_option("--data", data_dir, "dataset directory")->required();
    c_fit->add_option("--config", config_path, "run config file")->required();
    c_fit->add_option("--out", out_dir, "output directory")->required();
    c_fit->add_option("--resume", resume_path, "checkpoint to resume from");
    c_fit->add_option("--threads", threads, "worker threads (overrides the config)");

    CLI::App* c_render = app.add_subcommand("render", "Render checkpoint frames");
    c_render->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    c_render->add_option("--data", data_dir, "dataset directory (camera rig)")->required();
    c_render->add_option("--camera", camera, "camera index")->required();
    c_render->add_option("--times", times_str, "comma-separated times")->required();
    c_render->add_option("--out", out_dir, "output directory")->required();
    c_render->add_option("--threads", threads, "worker threads");

    CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint against a dataset");
    c_eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    c_eval->add_option("--data", data_dir, "dataset directory")->required();
    c_eval->add_option("--threads", threads, "worker threads");

    CLI::App* c_inspect = app.add_subcommand("inspect", "Dump a Gaussian's sliced moments");
    c_inspect->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    c_inspect->add_option("--gaussian", gaussian, "gaussian index")->required();
    c_inspect->add_option("--times", times_str, "comma-separated times")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*c_synth) return cmd_synth(spec_path, out_dir, out);
        if (*c_fit) return cmd_fit(data_dir, config_path, out_dir, resume_path, threads, out);
        if (*c_render)
            return cmd_render(ckpt_path, data_dir, camera, times_str, out_dir, threads, out);
        if (*c_eval) return cmd_eval(ckpt_path, data_dir, threads, out);
        if (*c_inspect) return cmd_inspect(ckpt_path, gaussian, times_str, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace velsplat
