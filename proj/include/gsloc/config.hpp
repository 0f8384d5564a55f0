#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsloc/dataio.hpp"
#include "gsloc/loss.hpp"
#include "gsloc/pose_opt.hpp"
#include "gsloc/renderer.hpp"
#include "gsloc/scene_init.hpp"
#include "gsloc/synth.hpp"

namespace gsloc {

enum class Precision { F64, F32 };

/// Every tunable constant of the pipeline. Loaded from a flat JSON object
/// whose keys are listed by `RunConfig::fields()`; unknown keys are rejected.
struct RunConfig {
    RenderConfig render;
    LossWeights loss;
    OptimConfig optim;
    SceneInitConfig scene;
    SynthSpec synth;
    double tum_depth_factor = kTumDepthFactor;
    double replica_depth_factor = kReplicaDepthFactor;
    double assoc_max_dt = 0.02;
    double png_depth_scale = 5000.0;  // counts per meter for debug/synthetic PNG output
    // Pinhole used for datasets without a camera.json; TUM fr1 defaults.
    CameraIntrinsics<double> camera{517.3, 516.5, 318.6, 255.3, 640, 480, 0.1, 20.0};
    std::uint64_t seed = 7;  // also the synthetic generator seed
    int threads = 0;
    bool deterministic = true;
    Precision precision = Precision::F64;

    struct Field {
        std::string key;
        std::string help;
        std::function<nlohmann::json(const RunConfig&)> get;
        std::function<void(RunConfig&, const nlohmann::json&)> set;
    };

    static const std::vector<Field>& fields();

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& f : fields()) j[f.key] = f.get(*this);
        return j;
    }

    void apply(const nlohmann::json& j) {
        if (!j.is_object()) throw Error(ErrorKind::Parse, "config must be a JSON object");
        for (const auto& [key, value] : j.items()) set(key, value);
    }

    void set(const std::string& key, const nlohmann::json& value) {
        for (const auto& f : fields()) {
            if (f.key != key) continue;
            try {
                f.set(*this, value);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::Parse, "bad value for '" + key + "': " + e.what());
            }
            return;
        }
        throw Error(ErrorKind::Parse, "unknown config key '" + key + "'");
    }

    /// "key=value"; the value is parsed as JSON, falling back to a plain string.
    void set_from_string(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::Parse, "expected key=value, got '" + assignment + "'");
        const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
        nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
        if (v.is_discarded()) v = raw;
        set(key, v);
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw Error(ErrorKind::Parse, "config " + path + " is not valid JSON");
        apply(j);
    }

    void validate() const {
        loss.validate();
        optim.validate();
        camera.validate();
        if (render.tile_size < 1 || render.alpha_clamp_max <= 0 || render.alpha_clamp_max >= 1 ||
            render.transmittance_epsilon <= 0 || render.sigma_cutoff <= 0 || render.alpha_floor < 0 ||
            render.dilation < 0 || !(render.guard_band >= 1)) {
            throw Error(ErrorKind::InvalidArgument, "renderer settings out of range");
        }
        if (tum_depth_factor <= 0 || replica_depth_factor <= 0 || png_depth_scale <= 0 || assoc_max_dt < 0) {
            throw Error(ErrorKind::InvalidArgument, "dataset factors out of range");
        }
    }

    /// Renderer settings with the worker count applied.
    RenderConfig render_config() const {
        RenderConfig r = render;
        r.threads = threads;
        return r;
    }
};

namespace detail {

template <typename T, typename Member>
RunConfig::Field field(std::string key, std::string help, Member member) {
    return {std::move(key), std::move(help),
            [member](const RunConfig& c) { return nlohmann::json(member(const_cast<RunConfig&>(c))); },
            [member](RunConfig& c, const nlohmann::json& v) { member(c) = v.get<T>(); }};
}

} // namespace detail

inline const std::vector<RunConfig::Field>& RunConfig::fields() {
    using detail::field;
    using C = RunConfig;
    static const std::vector<Field> all = [] {
        std::vector<Field> f;
        f.push_back(field<double>("render.dilation", "screen covariance dilation, px^2", [](C& c) -> double& { return c.render.dilation; }));
        f.push_back(field<double>("render.alpha_clamp_max", "upper clamp on per-splat alpha", [](C& c) -> double& { return c.render.alpha_clamp_max; }));
        f.push_back(field<double>("render.transmittance_epsilon", "early-stop transmittance", [](C& c) -> double& { return c.render.transmittance_epsilon; }));
        f.push_back(field<double>("render.sigma_cutoff", "max Gaussian exponent that still contributes", [](C& c) -> double& { return c.render.sigma_cutoff; }));
        f.push_back(field<double>("render.guard_band", "cull splats whose mean projects beyond this multiple of the image half-extent", [](C& c) -> double& { return c.render.guard_band; }));
        f.push_back(field<double>("render.alpha_floor", "accumulated alpha below which a pixel is masked", [](C& c) -> double& { return c.render.alpha_floor; }));
        f.push_back(field<int>("render.tile_size", "rasterizer tile edge, px", [](C& c) -> int& { return c.render.tile_size; }));
        f.push_back(field<bool>("render.save_contributors", "keep per-pixel contributor lists for backward", [](C& c) -> bool& { return c.render.save_contributors; }));
        f.push_back(field<double>("loss.lambda1", "depth term weight", [](C& c) -> double& { return c.loss.lambda1; }));
        f.push_back(field<double>("loss.lambda2", "contour term weight", [](C& c) -> double& { return c.loss.lambda2; }));
        f.push_back(field<double>("loss.lambda_q", "explicit |q|^2 penalty", [](C& c) -> double& { return c.loss.lambda_q; }));
        f.push_back(field<double>("loss.lambda_t", "explicit |t|^2 penalty", [](C& c) -> double& { return c.loss.lambda_t; }));
        f.push_back({"loss.depth_source", "normalized | raw",
                     [](const C& c) { return nlohmann::json(c.loss.depth_source == DepthSource::Normalized ? "normalized" : "raw"); },
                     [](C& c, const nlohmann::json& v) {
                         const auto s = v.get<std::string>();
                         if (s == "normalized") c.loss.depth_source = DepthSource::Normalized;
                         else if (s == "raw") c.loss.depth_source = DepthSource::Raw;
                         else throw Error(ErrorKind::Parse, "loss.depth_source must be normalized|raw");
                     }});
        f.push_back({"loss.reduction", "mean | sum",
                     [](const C& c) { return nlohmann::json(c.loss.reduction == Reduction::Mean ? "mean" : "sum"); },
                     [](C& c, const nlohmann::json& v) {
                         const auto s = v.get<std::string>();
                         if (s == "mean") c.loss.reduction = Reduction::Mean;
                         else if (s == "sum") c.loss.reduction = Reduction::Sum;
                         else throw Error(ErrorKind::Parse, "loss.reduction must be mean|sum");
                     }});
        f.push_back(field<double>("optim.lr_q", "quaternion learning rate", [](C& c) -> double& { return c.optim.lr_q; }));
        f.push_back(field<double>("optim.lr_t", "translation learning rate", [](C& c) -> double& { return c.optim.lr_t; }));
        f.push_back(field<double>("optim.weight_decay", "L2 decay added to both gradients", [](C& c) -> double& { return c.optim.weight_decay; }));
        f.push_back(field<double>("optim.beta1", "Adam beta1", [](C& c) -> double& { return c.optim.adam_beta1; }));
        f.push_back(field<double>("optim.beta2", "Adam beta2", [](C& c) -> double& { return c.optim.adam_beta2; }));
        f.push_back(field<double>("optim.eps", "Adam epsilon", [](C& c) -> double& { return c.optim.adam_eps; }));
        f.push_back(field<int>("optim.min_iters", "iterations before early stopping may fire", [](C& c) -> int& { return c.optim.min_iters; }));
        f.push_back(field<int>("optim.patience", "non-improving iterations that stop the loop", [](C& c) -> int& { return c.optim.patience; }));
        f.push_back(field<int>("optim.max_iters", "iteration cap per frame", [](C& c) -> int& { return c.optim.max_iters; }));
        f.push_back(field<std::size_t>("scene.outlier_k", "neighbours for outlier statistics", [](C& c) -> std::size_t& { return c.scene.outlier_k; }));
        f.push_back(field<double>("scene.outlier_std_ratio", "outlier threshold in std devs", [](C& c) -> double& { return c.scene.outlier_std_ratio; }));
        f.push_back(field<std::size_t>("scene.knn_k", "kNN query size for scales (includes self)", [](C& c) -> std::size_t& { return c.scene.knn_k; }));
        f.push_back(field<double>("scene.min_scale", "scale clamp, m", [](C& c) -> double& { return c.scene.min_scale; }));
        f.push_back(field<double>("scene.voxel_size", "downsampling voxel, m (0 = off)", [](C& c) -> double& { return c.scene.voxel_size; }));
        f.push_back(field<bool>("scene.pca", "PCA-normalize the scene frame", [](C& c) -> bool& { return c.scene.pca; }));
        f.push_back(field<int>("scene.frame_stride", "use every N-th reference frame", [](C& c) -> int& { return c.scene.frame_stride; }));
        f.push_back(field<double>("synth.room_x", "room size x, m", [](C& c) -> double& { return c.synth.room_x; }));
        f.push_back(field<double>("synth.room_y", "room size y, m", [](C& c) -> double& { return c.synth.room_y; }));
        f.push_back(field<double>("synth.room_z", "room height, m", [](C& c) -> double& { return c.synth.room_z; }));
        f.push_back(field<double>("synth.spacing", "surface sample spacing, m", [](C& c) -> double& { return c.synth.spacing; }));
        f.push_back(field<double>("synth.jitter", "sample jitter, fraction of spacing", [](C& c) -> double& { return c.synth.jitter; }));
        f.push_back({"synth.trajectory", "orbit | linear",
                     [](const C& c) { return nlohmann::json(c.synth.trajectory == TrajectoryShape::Orbit ? "orbit" : "linear"); },
                     [](C& c, const nlohmann::json& v) {
                         const auto s = v.get<std::string>();
                         if (s == "orbit") c.synth.trajectory = TrajectoryShape::Orbit;
                         else if (s == "linear") c.synth.trajectory = TrajectoryShape::Linear;
                         else throw Error(ErrorKind::Parse, "synth.trajectory must be orbit|linear");
                     }});
        f.push_back(field<int>("synth.frames", "number of frames", [](C& c) -> int& { return c.synth.frames; }));
        f.push_back(field<double>("synth.orbit_radius", "camera path radius, m", [](C& c) -> double& { return c.synth.orbit_radius; }));
        f.push_back(field<double>("synth.orbit_sweep", "yaw covered by the path, rad", [](C& c) -> double& { return c.synth.orbit_sweep; }));
        f.push_back(field<double>("synth.camera_height", "camera height, m", [](C& c) -> double& { return c.synth.camera_height; }));
        f.push_back(field<double>("synth.pitch_deg", "camera pitch, deg", [](C& c) -> double& { return c.synth.pitch_deg; }));
        f.push_back(field<int>("synth.width", "image width, px", [](C& c) -> int& { return c.synth.width; }));
        f.push_back(field<int>("synth.height", "image height, px", [](C& c) -> int& { return c.synth.height; }));
        f.push_back(field<double>("synth.fx", "focal length x, px", [](C& c) -> double& { return c.synth.fx; }));
        f.push_back(field<double>("synth.fy", "focal length y, px", [](C& c) -> double& { return c.synth.fy; }));
        f.push_back(field<double>("synth.noise_sigma", "additive depth noise, m", [](C& c) -> double& { return c.synth.noise_sigma; }));
        f.push_back(field<double>("data.tum_depth_factor", "TUM counts per meter", [](C& c) -> double& { return c.tum_depth_factor; }));
        f.push_back(field<double>("data.replica_depth_factor", "Replica counts per meter", [](C& c) -> double& { return c.replica_depth_factor; }));
        f.push_back(field<double>("data.assoc_max_dt", "timestamp association tolerance, s", [](C& c) -> double& { return c.assoc_max_dt; }));
        f.push_back(field<double>("data.png_depth_scale", "counts per meter for written PNGs", [](C& c) -> double& { return c.png_depth_scale; }));
        f.push_back(field<double>("camera.fx", "fallback focal x", [](C& c) -> double& { return c.camera.fx; }));
        f.push_back(field<double>("camera.fy", "fallback focal y", [](C& c) -> double& { return c.camera.fy; }));
        f.push_back(field<double>("camera.cx", "fallback principal x", [](C& c) -> double& { return c.camera.cx; }));
        f.push_back(field<double>("camera.cy", "fallback principal y", [](C& c) -> double& { return c.camera.cy; }));
        f.push_back(field<int>("camera.width", "fallback width", [](C& c) -> int& { return c.camera.width; }));
        f.push_back(field<int>("camera.height", "fallback height", [](C& c) -> int& { return c.camera.height; }));
        f.push_back(field<double>("camera.near", "near clip, m", [](C& c) -> double& { return c.camera.near; }));
        f.push_back(field<double>("camera.far", "far clip, m", [](C& c) -> double& { return c.camera.far; }));
        f.push_back({"seed", "random seed",
                     [](const C& c) { return nlohmann::json(c.seed); },
                     [](C& c, const nlohmann::json& v) { c.seed = v.get<std::uint64_t>(); c.synth.seed = c.seed; }});
        f.push_back(field<int>("threads", "worker threads (0 = auto)", [](C& c) -> int& { return c.threads; }));
        f.push_back(field<bool>("deterministic", "fixed-order reductions", [](C& c) -> bool& { return c.deterministic; }));
        f.push_back({"precision", "f64 | f32",
                     [](const C& c) { return nlohmann::json(c.precision == Precision::F64 ? "f64" : "f32"); },
                     [](C& c, const nlohmann::json& v) {
                         const auto s = v.get<std::string>();
                         if (s == "f64") c.precision = Precision::F64;
                         else if (s == "f32") c.precision = Precision::F32;
                         else throw Error(ErrorKind::Parse, "precision must be f64|f32");
                     }});
        return f;
    }();
    return all;
}

inline nlohmann::json intrinsics_json(const CameraIntrinsics<double>& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
            {"height", k.height}, {"near", k.near}, {"far", k.far}};
}

/// Reads <dir>/camera.json if present, otherwise returns `fallback`.
inline CameraIntrinsics<double> load_camera(const std::string& dir, const CameraIntrinsics<double>& fallback) {
    const std::filesystem::path p = std::filesystem::path(dir) / "camera.json";
    if (!std::filesystem::exists(p)) return fallback;
    std::ifstream in(p);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::Parse, p.string() + " is not valid JSON");
    CameraIntrinsics<double> k = fallback;
    try {
        k.fx = j.value("fx", k.fx);
        k.fy = j.value("fy", k.fy);
        k.cx = j.value("cx", k.cx);
        k.cy = j.value("cy", k.cy);
        k.width = j.value("width", k.width);
        k.height = j.value("height", k.height);
        k.near = j.value("near", k.near);
        k.far = j.value("far", k.far);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, p.string() + ": " + e.what());
    }
    k.validate();
    return k;
}

/// Dataset root override: relative dataset paths resolve against $GSLOC_DATA_ROOT.
inline std::string resolve_dataset(const std::string& dir) {
    const char* root = std::getenv("GSLOC_DATA_ROOT");
    const std::filesystem::path p(dir);
    if (root && *root && p.is_relative() && !std::filesystem::exists(p)) return (std::filesystem::path(root) / p).string();
    return dir;
}

} // namespace gsloc
