#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gsloc/grad.hpp"

namespace gsloc {

struct GradCheckConfig {
    int width = 32, height = 32;
    int min_gaussians = 2, max_gaussians = 40;
    double eps = 1e-5;
    double rel_tol = 1e-4;
    double abs_tol = 1e-8;
    int max_resamples = 200;
};

struct GradCheckTrial {
    std::uint64_t seed = 0;
    std::size_t n_gaussians = 0;
    int resamples = 0;          // configurations rejected for a non-smooth stencil
    double max_rel_err = 0;     // over components that are not within abs_tol
    double max_abs_err = 0;
    PoseGradient<double> analytic, numeric;
    bool pass = false;
};

/// A random smooth test problem: scene, camera, pose and cotangent maps.
struct GradCheckProblem {
    GaussianScene<double> scene;
    CameraIntrinsics<double> intrinsics;
    Pose<double> pose;
    RenderCotangents<double> cotangents;
};

inline Quaternion<double> random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (;;) {
        Quaternion<double> q{n(rng), n(rng), n(rng), n(rng)};
        if (q.norm() > 1e-3) return quat_normalize(q);
    }
}

/// Gaussians scattered inside the view frustum of a random pose, with
/// anisotropic scales, random orientations and opacities below the clamp.
inline GradCheckProblem random_gradcheck_problem(std::mt19937_64& rng, const GradCheckConfig& cfg) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GradCheckProblem p;
    auto& k = p.intrinsics;
    k.width = cfg.width;
    k.height = cfg.height;
    k.fx = k.fy = 0.9 * cfg.width;
    k.cx = (cfg.width - 1) / 2.0 + (unit(rng) - 0.5);
    k.cy = (cfg.height - 1) / 2.0 + (unit(rng) - 0.5);
    k.near = 0.05;
    k.far = 50.0;

    p.pose.rotation = random_unit_quaternion(rng);
    p.pose.translation = Vec3<double>(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5) * 2.0;
    const Pose<double> cam_to_world = pose_inverse(p.pose);

    const int n = cfg.min_gaussians + int(unit(rng) * (cfg.max_gaussians - cfg.min_gaussians + 1));
    for (int i = 0; i < std::min(n, cfg.max_gaussians); ++i) {
        const double z = 1.0 + 3.0 * unit(rng);
        const double u = (unit(rng) * 1.2 - 0.1) * cfg.width, v = (unit(rng) * 1.2 - 0.1) * cfg.height;
        const Vec3<double> xc((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
        Gaussian<double> g;
        g.mean = cam_to_world.apply(xc);
        g.scale = Vec3<double>(0.05 + 0.12 * unit(rng), 0.05 + 0.12 * unit(rng), 0.05 + 0.12 * unit(rng)) * z;
        g.orientation = random_unit_quaternion(rng);
        g.opacity = 0.3 + 0.65 * unit(rng);
        p.scene.gaussians.push_back(g);
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_map = [&] {
        Image<double> m(cfg.width, cfg.height);
        for (auto& x : m.data) x = gauss(rng);
        return m;
    };
    p.cotangents.d_norm_depth = random_map();
    p.cotangents.d_alpha = random_map();
    p.cotangents.d_depth = random_map();
    return p;
}

/// Scalar loss whose render-space gradient is exactly `cot`.
inline double cotangent_loss(const RenderOutput<double>& out, const RenderCotangents<double>& cot) {
    double s = 0;
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        s += cot.d_norm_depth[i] * out.norm_depth[i] + cot.d_alpha[i] * out.alpha[i] + cot.d_depth[i] * out.depth[i];
    }
    return s;
}

/// Compares backward_pose with central differences on one random problem,
/// resampling while the stencil crosses a compositing discontinuity.
inline GradCheckTrial run_gradcheck_trial(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
    std::mt19937_64 rng(seed);
    GradCheckTrial t;
    t.seed = seed;
    GradCheckProblem p;
    for (;;) {
        p = random_gradcheck_problem(rng, cfg);
        const RenderOutput<double> out = render(p.scene, p.intrinsics, p.pose);
        bool any = false;
        for (auto m : out.mask.data) any = any || m;
        if (any && stencil_is_smooth(p.scene, p.intrinsics, p.pose, cfg.eps)) break;
        if (++t.resamples > cfg.max_resamples) throw Error(ErrorKind::Internal, "no smooth gradcheck configuration found");
    }
    t.n_gaussians = p.scene.size();
    const RenderOutput<double> out = render(p.scene, p.intrinsics, p.pose);
    t.analytic = backward_pose(out, p.scene, p.intrinsics, p.pose, p.cotangents);
    const RenderCotangents<double> cot = p.cotangents;
    t.numeric = finite_diff_pose_grad<double>(
        p.scene, p.intrinsics, p.pose, [&cot](const RenderOutput<double>& o) { return cotangent_loss(o, cot); },
        cfg.eps);
    const auto a = t.analytic.stacked(), b = t.numeric.stacked();
    t.pass = true;
    for (int i = 0; i < 7; ++i) {
        const double abs_err = std::abs(a[i] - b[i]);
        t.max_abs_err = std::max(t.max_abs_err, abs_err);
        if (abs_err <= cfg.abs_tol) continue;
        const double rel = abs_err / std::max(std::abs(a[i]), std::abs(b[i]));
        t.max_rel_err = std::max(t.max_rel_err, rel);
        if (rel > cfg.rel_tol) t.pass = false;
    }
    return t;
}

/// Trial i uses seed `seed + i`.
inline std::vector<GradCheckTrial> run_gradcheck(std::uint64_t seed, int trials, const GradCheckConfig& cfg = {}) {
    std::vector<GradCheckTrial> out;
    for (int i = 0; i < trials; ++i) out.push_back(run_gradcheck_trial(seed + std::uint64_t(i), cfg));
    return out;
}

} // namespace gsloc
