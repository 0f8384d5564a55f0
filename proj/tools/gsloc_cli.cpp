// gsloc: scene building, localization, evaluation, synthetic data, gradient
// checks and debug rendering behind one subcommand-style binary.
//
// Exit codes: 0 success, 2 input error, 3 assertion failure, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "gsloc/config.hpp"
#include "gsloc/dataio.hpp"
#include "gsloc/eval.hpp"
#include "gsloc/gradcheck.hpp"
#include "gsloc/pose_opt.hpp"
#include "gsloc/scene_init.hpp"
#include "gsloc/scene_io.hpp"
#include "gsloc/synth.hpp"

namespace fs = std::filesystem;
using namespace gsloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitAssert = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Numeric:
    case ErrorKind::DegenerateQuaternion:
    case ErrorKind::StaleContext:
    case ErrorKind::Internal: return kExitNumeric;
    default: return kExitInput;
    }
}

struct AssertionFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_file;
    std::vector<std::string> overrides;
    int threads = -1;
    std::int64_t seed = -1;
    std::string precision;
};

RunConfig resolve_config(const Globals& g) {
    RunConfig cfg;
    if (!g.config_file.empty()) cfg.load_file(g.config_file);
    for (const auto& kv : g.overrides) cfg.set_from_string(kv);
    if (g.threads >= 0) cfg.threads = g.threads;
    if (g.seed >= 0) cfg.set("seed", g.seed);
    if (!g.precision.empty()) cfg.set("precision", g.precision);
    cfg.validate();
    std::cerr << "# gsloc config " << cfg.to_json().dump() << '\n';
    return cfg;
}

std::string config_key_help() {
    std::ostringstream os;
    os << "\nConfig keys (config file is a flat JSON object; override with --set key=value):\n";
    const RunConfig defaults;
    const nlohmann::json values = defaults.to_json();
    for (const auto& f : RunConfig::fields()) {
        os << "  " << std::left << std::setw(28) << f.key << ' ' << f.help << " [" << values[f.key].dump() << "]\n";
    }
    os << "\nEnvironment: GSLOC_DATA_ROOT resolves relative --dataset paths.\n"
       << "Exit codes: 0 ok, 2 input error, 3 assertion failure, 4 numeric failure.\n";
    return os.str();
}

struct LoadedDataset {
    Sequence seq;
    CameraIntrinsics<double> intrinsics;
};

LoadedDataset load_dataset(const std::string& dir_in, const std::string& format, const RunConfig& cfg) {
    const std::string dir = resolve_dataset(dir_in);
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "dataset directory not found: " + dir);
    LoadedDataset d;
    if (format == "tum") {
        d.seq = load_tum_sequence(dir, cfg.assoc_max_dt, cfg.tum_depth_factor);
        d.intrinsics = load_camera(dir, cfg.camera);
    } else if (format == "synth") {
        d.seq = load_tum_sequence(dir, cfg.assoc_max_dt, cfg.png_depth_scale);
        d.intrinsics = load_camera(dir, cfg.camera);
    } else if (format == "replica") {
        d.seq = load_replica_sequence(dir, cfg.replica_depth_factor);
        CameraIntrinsics<double> replica{600.0, 600.0, 599.5, 339.5, 1200, 680, 0.1, 20.0};
        d.intrinsics = load_camera(dir, replica);
    } else {
        throw Error(ErrorKind::InvalidArgument, "unknown dataset format '" + format + "'");
    }
    if (d.seq.frames.empty()) throw Error(ErrorKind::Io, "dataset has no frames with ground truth: " + dir);
    for (const auto& f : d.seq.frames) {
        if (!f.depth.depth.same_shape(d.intrinsics.width, d.intrinsics.height)) {
            throw Error(ErrorKind::InvalidArgument, "depth image size does not match camera intrinsics");
        }
    }
    return d;
}

// ---- build-scene ----------------------------------------------------------

struct BuildSceneArgs {
    std::string dataset, format = "tum", out;
    int frame_stride = 0;
};

int cmd_build_scene(const Globals& g, const BuildSceneArgs& a) {
    RunConfig cfg = resolve_config(g);
    if (a.frame_stride > 0) cfg.scene.frame_stride = a.frame_stride;
    const LoadedDataset d = load_dataset(a.dataset, a.format, cfg);
    std::vector<std::pair<DepthImage<double>, Pose<double>>> frames;
    for (const auto& f : d.seq.frames) frames.emplace_back(f.depth, *f.gt);
    SceneBuildReport<double> rep;
    const GaussianScene<double> scene = build_scene(frames, d.intrinsics, cfg.scene, &rep);
    write_scene(a.out, scene);
    nlohmann::json summary = scene_summary(scene);
    summary["frames_available"] = frames.size();
    summary["frames_used"] = rep.frames_used;
    summary["raw_points"] = rep.raw_points;
    summary["filtered_points"] = rep.filtered_points;
    summary["clamped_scales"] = rep.clamped_scales;
    summary["filter_skipped"] = rep.filter_skipped;
    summary["intrinsics"] = intrinsics_json(d.intrinsics);
    std::ofstream(a.out + ".json") << summary.dump(2) << '\n';
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

// ---- localize -------------------------------------------------------------

struct LocalizeArgs {
    std::string scene, dataset, format = "tum", init = "gt", out, log;
    int max_frames = 0;
    double perturb_rot_deg = 0, perturb_trans_cm = 0;
};

Pose<double> perturb(const Pose<double>& p, double rot_deg, double trans_cm, std::mt19937_64& rng) {
    if (rot_deg <= 0 && trans_cm <= 0) return p;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3<double> axis(n(rng), n(rng), n(rng));
    Vec3<double> dir(n(rng), n(rng), n(rng));
    const double angle = std::abs(u(rng)) * rot_deg * std::numbers::pi / 180.0;
    const double dist = std::abs(u(rng)) * trans_cm / 100.0;
    Pose<double> out = p;
    out.rotation = quat_normalize(quat_from_axis_angle<double>(axis.normalized(), angle) * p.rotation);
    const Vec3<double> center = p.center() + dir.normalized() * dist;
    out.translation = -(quat_to_rotmat(out.rotation) * center);
    return out;
}

template <typename S>
int run_localize(const RunConfig& cfg, const LocalizeArgs& a, const GaussianScene<double>& scene_d,
                 const LoadedDataset& d) {
    const GaussianScene<S> scene = scene_d.template cast<S>();
    const CameraIntrinsics<S> k = d.intrinsics.template cast<S>();
    std::size_t n = d.seq.frames.size();
    if (a.max_frames > 0) n = std::min<std::size_t>(n, std::size_t(a.max_frames));

    std::vector<DepthImage<S>> frames;
    std::vector<Pose<S>> gt;
    for (std::size_t i = 0; i < n; ++i) {
        const DepthImage<double>& src = d.seq.frames[i].depth;
        DepthImage<S> img;
        img.width = src.width;
        img.height = src.height;
        img.valid = src.valid;
        img.depth = Image<S>(src.width, src.height);
        for (std::size_t p = 0; p < src.depth.size(); ++p) img.depth[p] = S(src.depth[p]);
        frames.push_back(std::move(img));
        gt.push_back(to_scene_frame(scene_d, *d.seq.frames[i].gt).template cast<S>());
    }
    std::mt19937_64 rng(cfg.seed);
    const Pose<S> first =
        perturb(gt.front().template cast<double>(), a.perturb_rot_deg, a.perturb_trans_cm, rng).template cast<S>();
    const InitMode mode = a.init == "gt" ? InitMode::GroundTruthPerFrame : InitMode::PreviousEstimate;

    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log);
        if (!log) throw Error(ErrorKind::Io, "cannot write " + a.log);
        log << "frame,iteration,total,depth,contour,reg,valid_pixels\n" << std::setprecision(12);
    }
    auto observer = [&](std::size_t frame, int it, const LossBreakdown<S>& l) {
        if (log.is_open()) {
            log << frame << ',' << it << ',' << double(l.total) << ',' << double(l.depth_term) << ','
                << double(l.contour_term) << ',' << double(l.reg_term) << ',' << l.valid_pixel_count << '\n';
        }
    };
    const auto results = localize_sequence<S>(scene, k, frames, mode, gt, first, cfg.optim, cfg.loss,
                                              cfg.render_config(), observer);

    std::vector<TrajectoryEntry> traj;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        nlohmann::json line = {{"frame", i}, {"timestamp", d.seq.frames[i].timestamp}};
        if (r.failed) {
            ++failures;
            line["failed"] = true;
            line["error"] = r.failure;
        } else {
            const Pose<double> world = to_world_frame(scene_d, r.pose.template cast<double>());
            traj.push_back({d.seq.frames[i].timestamp, world});
            line["iterations"] = r.iterations_run;
            line["converged"] = r.converged;
            line["loss"] = double(r.final_loss.total);
            line["depth_term"] = double(r.final_loss.depth_term);
            line["contour_term"] = double(r.final_loss.contour_term);
            line["pose"] = format_tum_line({d.seq.frames[i].timestamp, world});
            line["trans_err_cm"] = (world.center() - d.seq.frames[i].gt->center()).norm() * 100.0;
            line["rot_err_deg"] =
                rotation_angle_between(world.rotation, d.seq.frames[i].gt->rotation) * 180.0 / std::numbers::pi;
        }
        std::cout << line.dump() << '\n';
    }
    write_trajectory_tum(a.out, traj);
    if (failures == results.size()) {
        std::cerr << "error: every frame failed to localize\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_localize(const Globals& g, const LocalizeArgs& a) {
    const RunConfig cfg = resolve_config(g);
    if (!fs::exists(a.scene)) throw Error(ErrorKind::Io, "scene file not found: " + a.scene);
    const GaussianScene<double> scene = read_scene(a.scene);
    const LoadedDataset d = load_dataset(a.dataset, a.format, cfg);
    if (cfg.precision == Precision::F32) return run_localize<float>(cfg, a, scene, d);
    return run_localize<double>(cfg, a, scene, d);
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
    std::string est, gt, report, name;
    double assert_max_ate = -1;
    bool align = false;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
    const RunConfig cfg = resolve_config(g);
    const auto est = read_trajectory_tum(a.est);
    const auto gt = read_trajectory_tum(a.gt);
    auto [me, mg] = match_by_timestamp(est, gt, cfg.assoc_max_dt);
    if (me.empty()) throw Error(ErrorKind::InvalidArgument, "no estimated pose matches a ground-truth timestamp");
    if (a.align) {
        std::vector<Pose<double>> pe, pg;
        for (const auto& e : me) pe.push_back(e.pose);
        for (const auto& e : mg) pg.push_back(e.pose);
        const auto aligned = align_rigid(pe, pg);
        for (std::size_t i = 0; i < me.size(); ++i) me[i].pose = aligned[i];
    }
    const std::string name = a.name.empty() ? fs::path(a.est).stem().string() : a.name;
    const std::string base = a.report.empty() ? (fs::path(a.est).replace_extension("").string() + "_eval") : a.report;
    const MetricReport r = report_sequence(name, me, mg, base);
    std::cout << format_table({r});
    std::cout << report_json(r).dump() << '\n';
    if (a.assert_max_ate >= 0 && !(r.ate_rmse_cm <= a.assert_max_ate)) {
        std::ostringstream os;
        os << "ATE RMSE " << r.ate_rmse_cm << " cm exceeds " << a.assert_max_ate << " cm";
        throw AssertionFailure(os.str());
    }
    return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const Globals& g, std::uint64_t seed, int trials) {
    const RunConfig cfg = resolve_config(g);
    (void)cfg;
    if (trials < 1) throw Error(ErrorKind::InvalidArgument, "--trials must be positive");
    const auto results = run_gradcheck(seed, trials);
    int failed = 0;
    std::printf("%-8s %-10s %-9s %-12s %-12s %s\n", "seed", "gaussians", "resample", "max_rel", "max_abs", "result");
    for (const auto& t : results) {
        std::printf("%-8llu %-10zu %-9d %-12.3e %-12.3e %s\n", static_cast<unsigned long long>(t.seed), t.n_gaussians,
                    t.resamples, t.max_rel_err, t.max_abs_err, t.pass ? "PASS" : "FAIL");
        failed += t.pass ? 0 : 1;
    }
    std::printf("%d/%d trials passed\n", trials - failed, trials);
    if (failed) throw AssertionFailure("gradient check failed");
    return kExitOk;
}

// ---- render ---------------------------------------------------------------

struct RenderArgs {
    std::string scene, pose, pose_file, camera, out, csv, alpha_out;
    int index = 0;
};

int cmd_render(const Globals& g, const RenderArgs& a) {
    const RunConfig cfg = resolve_config(g);
    const GaussianScene<double> scene = read_scene(a.scene);
    Pose<double> world;
    if (!a.pose.empty()) {
        std::istringstream ss(a.pose);
        double f[7];
        for (double& v : f) {
            if (!(ss >> v)) throw Error(ErrorKind::Parse, "--pose expects 'tx ty tz qx qy qz qw'");
        }
        world = pose_from_tum_fields(f);
    } else if (!a.pose_file.empty()) {
        const auto traj = read_trajectory_tum(a.pose_file);
        if (a.index < 0 || std::size_t(a.index) >= traj.size()) throw Error(ErrorKind::InvalidArgument, "--index out of range");
        world = traj[std::size_t(a.index)].pose;
    } else {
        throw Error(ErrorKind::InvalidArgument, "give --pose or --pose-file");
    }
    const CameraIntrinsics<double> k = a.camera.empty() ? cfg.camera : load_camera(a.camera, cfg.camera);
    const RenderOutput<double> out = render(scene, k, to_scene_frame(scene, world), cfg.render_config());
    write_png16(a.out, depth_to_counts(out.norm_depth, cfg.png_depth_scale));
    if (!a.alpha_out.empty()) {
        Image<std::uint16_t> alpha(k.width, k.height);
        for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] = std::uint16_t(std::lround(out.alpha[i] * 65535.0));
        write_png16(a.alpha_out, alpha);
    }
    if (!a.csv.empty()) {
        std::ofstream csv(a.csv);
        if (!csv) throw Error(ErrorKind::Io, "cannot write " + a.csv);
        csv << "u,v,depth,alpha,norm_depth\n" << std::setprecision(17);
        for (int v = 0; v < k.height; ++v)
            for (int u = 0; u < k.width; ++u)
                csv << u << ',' << v << ',' << out.depth(u, v) << ',' << out.alpha(u, v) << ',' << out.norm_depth(u, v) << '\n';
    }
    std::size_t covered = 0;
    for (auto m : out.mask.data) covered += m;
    std::cout << nlohmann::json{{"out", a.out}, {"covered_pixels", covered}}.dump() << '\n';
    return kExitOk;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& spec, const std::string& out_dir) {
    RunConfig cfg;
    if (spec != "default") {
        // The spec file holds synth.* keys (or any other config key).
        cfg.load_file(spec);
    }
    if (!g.config_file.empty()) cfg.load_file(g.config_file);
    for (const auto& kv : g.overrides) cfg.set_from_string(kv);
    if (g.seed >= 0) cfg.set("seed", g.seed);
    if (g.threads >= 0) cfg.threads = g.threads;
    cfg.validate();
    std::cerr << "# gsloc config " << cfg.to_json().dump() << '\n';

    const SynthData data = synth_scene(cfg.synth, cfg.render_config());
    fs::create_directories(fs::path(out_dir) / "depth");
    std::ofstream depth_txt(fs::path(out_dir) / "depth.txt");
    depth_txt << "# timestamp filename\n";
    std::vector<TrajectoryEntry> gt;
    for (std::size_t i = 0; i < data.frames.size(); ++i) {
        const double ts = 1.0 + 0.1 * double(i);
        std::ostringstream name;
        name << "depth/" << std::setw(6) << std::setfill('0') << i << ".png";
        write_png16((fs::path(out_dir) / name.str()).string(), depth_to_counts(data.frames[i].depth.depth, cfg.png_depth_scale));
        depth_txt << std::fixed << std::setprecision(6) << ts << ' ' << name.str() << '\n';
        gt.push_back({ts, data.frames[i].gt});
    }
    write_trajectory_tum((fs::path(out_dir) / "groundtruth.txt").string(), gt);
    nlohmann::json cam = intrinsics_json(data.intrinsics);
    cam["depth_scale"] = cfg.png_depth_scale;
    std::ofstream(fs::path(out_dir) / "camera.json") << cam.dump(2) << '\n';
    write_scene((fs::path(out_dir) / "scene_gt.bin").string(), data.scene);
    std::cout << nlohmann::json{{"out", out_dir}, {"frames", data.frames.size()}, {"gaussians", data.scene.size()}}.dump()
              << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gsloc: camera localization against a 3D Gaussian scene"};
    app.require_subcommand(1);
    app.footer(config_key_help());
    Globals g;
    app.add_option("--config", g.config_file, "Flat JSON config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "Override one config key (key=value), repeatable");
    app.add_option("--threads", g.threads, "Worker threads (0 = auto)");
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--precision", g.precision, "f64 | f32")->check(CLI::IsMember({"f64", "f32"}));

    std::function<int()> action;

    BuildSceneArgs bs;
    auto* c_bs = app.add_subcommand("build-scene", "Initialize Gaussians from posed depth frames");
    c_bs->add_option("--dataset", bs.dataset, "Dataset directory")->required();
    c_bs->add_option("--format", bs.format, "tum | replica | synth")->check(CLI::IsMember({"tum", "replica", "synth"}));
    c_bs->add_option("--out", bs.out, "Output scene file")->required();
    c_bs->add_option("--frame-stride", bs.frame_stride, "Use every N-th frame");
    c_bs->callback([&] { action = [&] { return cmd_build_scene(g, bs); }; });

    LocalizeArgs lo;
    auto* c_lo = app.add_subcommand("localize", "Estimate the pose of every frame of a sequence");
    c_lo->add_option("--scene", lo.scene, "Scene file")->required();
    c_lo->add_option("--dataset", lo.dataset, "Dataset directory")->required();
    c_lo->add_option("--format", lo.format, "tum | replica | synth")->check(CLI::IsMember({"tum", "replica", "synth"}));
    c_lo->add_option("--init", lo.init, "gt (previous ground-truth pose) | prev (previous estimate)")
        ->check(CLI::IsMember({"gt", "prev"}));
    c_lo->add_option("--out", lo.out, "Output trajectory (TUM format)")->required();
    c_lo->add_option("--log", lo.log, "Per-iteration loss CSV");
    c_lo->add_option("--max-frames", lo.max_frames, "Only the first N frames");
    c_lo->add_option("--perturb-rot-deg", lo.perturb_rot_deg, "Random rotation added to the first initial pose");
    c_lo->add_option("--perturb-trans-cm", lo.perturb_trans_cm, "Random offset added to the first initial pose");
    c_lo->callback([&] { action = [&] { return cmd_localize(g, lo); }; });

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "ATE / AAE RMSE of a trajectory against ground truth");
    c_ev->add_option("--est", ev.est, "Estimated trajectory (TUM format)")->required();
    c_ev->add_option("--gt", ev.gt, "Ground-truth trajectory (TUM format)")->required();
    c_ev->add_option("--assert-max-ate", ev.assert_max_ate, "Exit 3 when ATE RMSE [cm] exceeds this");
    c_ev->add_option("--report", ev.report, "Report path prefix (writes .csv and .json)");
    c_ev->add_option("--name", ev.name, "Sequence name in the table");
    c_ev->add_flag("--align", ev.align, "Rigidly align camera centers before scoring");
    c_ev->callback([&] { action = [&] { return cmd_evaluate(g, ev); }; });

    std::uint64_t gc_seed = 1;
    int gc_trials = 50;
    auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic pose gradients with finite differences");
    c_gc->add_option("--seed", gc_seed, "First trial seed");
    c_gc->add_option("--trials", gc_trials, "Number of random configurations");
    c_gc->callback([&] { action = [&] { return cmd_gradcheck(g, gc_seed, gc_trials); }; });

    RenderArgs re;
    auto* c_re = app.add_subcommand("render", "Render a depth map of a scene");
    c_re->add_option("--scene", re.scene, "Scene file")->required();
    c_re->add_option("--pose", re.pose, "Camera-to-world pose 'tx ty tz qx qy qz qw'");
    c_re->add_option("--pose-file", re.pose_file, "TUM trajectory to take the pose from");
    c_re->add_option("--index", re.index, "Entry of --pose-file");
    c_re->add_option("--camera", re.camera, "Directory holding camera.json");
    c_re->add_option("--out", re.out, "Normalized depth PNG (16-bit)")->required();
    c_re->add_option("--alpha-out", re.alpha_out, "Alpha PNG (16-bit, 65535 = 1)");
    c_re->add_option("--csv", re.csv, "Raw depth/alpha/normalized depth CSV");
    c_re->callback([&] { action = [&] { return cmd_render(g, re); }; });

    std::string sy_spec = "default", sy_out;
    auto* c_sy = app.add_subcommand("synth", "Generate a synthetic box-room sequence");
    c_sy->add_option("--spec", sy_spec, "'default' or a JSON file of synth.* keys");
    c_sy->add_option("--out", sy_out, "Output directory")->required();
    c_sy->callback([&] { action = [&] { return cmd_synth(g, sy_spec, sy_out); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        return action();
    } catch (const AssertionFailure& e) {
        std::cerr << "assertion failed: " << e.what() << '\n';
        return kExitAssert;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
}
