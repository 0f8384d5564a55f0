#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gsloc/loss.hpp"
#include "gsloc/renderer.hpp"
#include "gsloc/scene_init.hpp"

namespace gsloc {

enum class TrajectoryShape { Orbit, Linear };

/// Axis-aligned box resting on the floor (z up), given by center x/y and size.
struct SynthBox {
    double cx, cy, sx, sy, sz;
};

/// Box-room generator settings. World frame is z-up with the floor at z = 0.
struct SynthSpec {
    double room_x = 4.0, room_y = 3.0, room_z = 2.5;  // meters
    double spacing = 0.057;                           // surface sample spacing, m
    double jitter = 0.2;                              // fraction of spacing
    std::vector<SynthBox> boxes = {{0.35, 0.25, 0.6, 0.5, 0.7}, {-0.45, -0.2, 0.4, 0.5, 1.0}, {0.2, -0.6, 0.5, 0.4, 0.4}};
    TrajectoryShape trajectory = TrajectoryShape::Orbit;
    int frames = 20;
    double orbit_radius = 1.2;   // m, distance of the camera path from the room center
    double orbit_sweep = 1.2;    // radians covered by the orbit
    double camera_height = 1.2;  // m
    double pitch_deg = -20.0;    // negative looks down
    int width = 320, height = 240;
    double fx = 250.0, fy = 250.0;
    double near = 0.1, far = 20.0;
    double noise_sigma = 0.0;  // additive depth noise, m
    std::uint64_t seed = 7;

    CameraIntrinsics<double> intrinsics() const {
        CameraIntrinsics<double> k;
        k.fx = fx;
        k.fy = fy;
        k.cx = (width - 1) / 2.0;
        k.cy = (height - 1) / 2.0;
        k.width = width;
        k.height = height;
        k.near = near;
        k.far = far;
        return k;
    }

    void validate() const {
        if (!(room_x > 0 && room_y > 0 && room_z > 0 && spacing > 0 && frames >= 1 && width >= 3 && height >= 3 &&
              fx > 0 && fy > 0 && near > 0 && near < far && noise_sigma >= 0 && jitter >= 0 && jitter < 0.5)) {
            throw Error(ErrorKind::InvalidSpec, "synthetic scene spec out of range");
        }
        if (std::abs(camera_height) >= room_z || orbit_radius >= std::min(room_x, room_y) / 2 - 0.1) {
            throw Error(ErrorKind::InvalidSpec, "camera path leaves the room");
        }
    }
};

struct SynthFrame {
    DepthImage<double> depth;
    Pose<double> gt;
};

struct SynthData {
    GaussianScene<double> scene;
    CameraIntrinsics<double> intrinsics;
    std::vector<SynthFrame> frames;
};

/// World-to-camera pose for a camera at `eye` looking along `forward`
/// (x right, y down, z forward in camera coordinates; world z is up).
inline Pose<double> look_along(const Vec3<double>& eye, const Vec3<double>& forward) {
    const Vec3<double> f = forward.normalized();
    const Vec3<double> right = f.cross(Vec3<double>::UnitZ()).normalized();
    const Vec3<double> down = f.cross(right);
    Mat3<double> cam_to_world;
    cam_to_world.col(0) = right;
    cam_to_world.col(1) = down;
    cam_to_world.col(2) = f;
    Pose<double> p;
    p.rotation = rotmat_to_quat<double>(cam_to_world.transpose());
    p.translation = -(quat_to_rotmat(p.rotation) * eye);
    return p;
}

namespace detail {

inline void sample_rect(std::vector<Vec3<double>>& pts, const Vec3<double>& origin, const Vec3<double>& e1,
                        const Vec3<double>& e2, double spacing, double jitter, std::mt19937_64& rng) {
    const double l1 = e1.norm(), l2 = e2.norm();
    const int n1 = std::max(1, int(std::round(l1 / spacing)));
    const int n2 = std::max(1, int(std::round(l2 / spacing)));
    std::uniform_real_distribution<double> j(-jitter, jitter);
    for (int a = 0; a < n1; ++a) {
        for (int b = 0; b < n2; ++b) {
            const double s = (a + 0.5 + j(rng)) / n1;
            const double t = (b + 0.5 + j(rng)) / n2;
            pts.push_back(origin + s * e1 + t * e2);
        }
    }
}

} // namespace detail

/// Deterministic box-room scene with furniture, plus a camera path and depth
/// frames rendered by this library's renderer.
inline SynthData synth_scene(const SynthSpec& spec, const RenderConfig& render_cfg = {}) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<Vec3<double>> pts;
    const double hx = spec.room_x / 2, hy = spec.room_y / 2, hz = spec.room_z;
    using V = Vec3<double>;
    // floor, ceiling, four walls
    detail::sample_rect(pts, V(-hx, -hy, 0), V(spec.room_x, 0, 0), V(0, spec.room_y, 0), spec.spacing, spec.jitter, rng);
    detail::sample_rect(pts, V(-hx, -hy, hz), V(spec.room_x, 0, 0), V(0, spec.room_y, 0), spec.spacing, spec.jitter, rng);
    detail::sample_rect(pts, V(-hx, -hy, 0), V(spec.room_x, 0, 0), V(0, 0, hz), spec.spacing, spec.jitter, rng);
    detail::sample_rect(pts, V(-hx, hy, 0), V(spec.room_x, 0, 0), V(0, 0, hz), spec.spacing, spec.jitter, rng);
    detail::sample_rect(pts, V(-hx, -hy, 0), V(0, spec.room_y, 0), V(0, 0, hz), spec.spacing, spec.jitter, rng);
    detail::sample_rect(pts, V(hx, -hy, 0), V(0, spec.room_y, 0), V(0, 0, hz), spec.spacing, spec.jitter, rng);
    for (const SynthBox& b : spec.boxes) {
        const V lo(b.cx - b.sx / 2, b.cy - b.sy / 2, 0);
        detail::sample_rect(pts, lo + V(0, 0, b.sz), V(b.sx, 0, 0), V(0, b.sy, 0), spec.spacing, spec.jitter, rng);
        detail::sample_rect(pts, lo, V(b.sx, 0, 0), V(0, 0, b.sz), spec.spacing, spec.jitter, rng);
        detail::sample_rect(pts, lo + V(0, b.sy, 0), V(b.sx, 0, 0), V(0, 0, b.sz), spec.spacing, spec.jitter, rng);
        detail::sample_rect(pts, lo, V(0, b.sy, 0), V(0, 0, b.sz), spec.spacing, spec.jitter, rng);
        detail::sample_rect(pts, lo + V(b.sx, 0, 0), V(0, b.sy, 0), V(0, 0, b.sz), spec.spacing, spec.jitter, rng);
    }

    SynthData data;
    data.intrinsics = spec.intrinsics();
    PointCloud<double> cloud{pts};
    const ScaleResult<double> scales = knn_scales(cloud);
    data.scene.gaussians.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Gaussian<double> g;
        g.mean = pts[i];
        g.scale = V::Constant(scales.sigma[i]);
        data.scene.gaussians.push_back(g);
    }

    const double pitch = spec.pitch_deg * std::numbers::pi / 180.0;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < spec.frames; ++i) {
        const double s = spec.frames == 1 ? 0.0 : double(i) / double(spec.frames - 1);
        V eye;
        double yaw;
        // Both paths keep the furniture in view: the orbit faces the room
        // center, the linear path slides along -y facing +y.
        if (spec.trajectory == TrajectoryShape::Orbit) {
            const double phi = -std::numbers::pi / 2 + (s - 0.5) * spec.orbit_sweep;
            eye = V(spec.orbit_radius * std::cos(phi), spec.orbit_radius * std::sin(phi), spec.camera_height);
            yaw = phi + std::numbers::pi;
        } else {
            const double half = spec.orbit_radius / 2;
            eye = V(-half + 2 * half * s, -spec.orbit_radius, spec.camera_height);
            yaw = std::numbers::pi / 2 - 0.25 * spec.orbit_sweep * (s - 0.5);
        }
        const V forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
        SynthFrame f;
        f.gt = look_along(eye, forward);
        const RenderOutput<double> r = render(data.scene, data.intrinsics, f.gt, render_cfg);
        Image<double> d = r.norm_depth;
        std::size_t covered = 0;
        for (std::size_t p = 0; p < d.size(); ++p) {
            if (!r.mask[p]) continue;
            ++covered;
            if (spec.noise_sigma > 0) d[p] = std::max(1e-6, d[p] + spec.noise_sigma * noise(rng));
        }
        if (covered == 0) throw Error(ErrorKind::InvalidSpec, "a synthetic frame sees no Gaussian");
        f.depth = DepthImage<double>::from_depth(std::move(d));
        data.frames.push_back(std::move(f));
    }
    return data;
}

} // namespace gsloc
