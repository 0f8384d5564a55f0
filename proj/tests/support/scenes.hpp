#pragma once

#include <random>

#include "gsloc/gradcheck.hpp"
#include "gsloc/renderer.hpp"
#include "gsloc/synth.hpp"

namespace testutil {

using namespace gsloc;

inline CameraIntrinsics<double> square_camera(int size, double f) {
    CameraIntrinsics<double> k;
    k.fx = k.fy = f;
    k.cx = k.cy = (size - 1) / 2.0;
    k.width = k.height = size;
    k.near = 0.05;
    k.far = 50;
    return k;
}

struct RandomScene {
    GaussianScene<double> scene;
    CameraIntrinsics<double> k;
    Pose<double> pose;
};

/// Up to `max_n` Gaussians in front of a random camera, 64x64 by default.
/// Some land off-screen and some overlap heavily so both culling and the
/// transmittance cutoff get exercised.
inline RandomScene random_scene(std::uint64_t seed, int max_n = 50, int size = 64) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0, 1);
    RandomScene r;
    r.k = square_camera(size, 0.9 * size);
    r.pose.rotation = random_unit_quaternion(rng);
    r.pose.translation = Vec3<double>(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    const Pose<double> c2w = pose_inverse(r.pose);
    const int n = 1 + int(unit(rng) * max_n);
    for (int i = 0; i < std::min(n, max_n); ++i) {
        const double z = 0.5 + 4.0 * unit(rng);
        const double u = (unit(rng) * 1.6 - 0.3) * size, v = (unit(rng) * 1.6 - 0.3) * size;
        Gaussian<double> g;
        g.mean = c2w.apply(Vec3<double>((u - r.k.cx) * z / r.k.fx, (v - r.k.cy) * z / r.k.fy, z));
        g.scale = Vec3<double>(0.01 + 0.2 * unit(rng), 0.01 + 0.2 * unit(rng), 0.01 + 0.2 * unit(rng)) * z;
        g.orientation = random_unit_quaternion(rng);
        g.opacity = unit(rng) < 0.2 ? 1.0 : 0.05 + 0.9 * unit(rng);
        r.scene.gaussians.push_back(g);
    }
    return r;
}

/// Small box room for optimizer tests: 160x120 at a coarse sample spacing.
inline SynthSpec small_room_spec() {
    SynthSpec s;
    s.width = 160;
    s.height = 120;
    s.fx = s.fy = 125;
    s.spacing = 0.08;
    s.frames = 4;
    return s;
}

} // namespace testutil
