#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>

#include "gsloc/renderer.hpp"

namespace gsloc {

/// Gradient of a scalar loss with respect to the 7 ambient pose parameters.
template <typename S>
struct PoseGradient {
    Vec4<S> d_q = Vec4<S>::Zero();  // (w, x, y, z)
    Vec3<S> d_t = Vec3<S>::Zero();

    Eigen::Matrix<S, 7, 1> stacked() const {
        Eigen::Matrix<S, 7, 1> v;
        v << d_q, d_t;
        return v;
    }

    bool all_finite() const { return d_q.allFinite() && d_t.allFinite(); }
};

/// Upstream cotangents of the loss with respect to the render outputs.
/// `d_depth` is optional and only used when the loss reads the raw composite.
template <typename S>
struct RenderCotangents {
    Image<S> d_norm_depth;
    Image<S> d_alpha;
    Image<S> d_depth;
};

/// ∂R(q)/∂q_k for the unit-quaternion rotation formula, k = w, x, y, z.
template <typename S>
std::array<Mat3<S>, 4> rotmat_quat_derivatives(const Quaternion<S>& q) {
    const S w = q.w, x = q.x, y = q.y, z = q.z;
    std::array<Mat3<S>, 4> d;
    d[0] << 0, -2 * z, 2 * y,
            2 * z, 0, -2 * x,
            -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z,
            2 * y, -4 * x, -2 * w,
            2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w,
            2 * x, 0, 2 * z,
            -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x,
            2 * w, -4 * z, 2 * y,
            2 * x, 2 * y, 0;
    return d;
}

/// Maps dL/dR to dL/dq for the ambient quaternion q, where the renderer
/// evaluates R(q / |q|). The result is tangent to the unit sphere at q.
template <typename S>
Vec4<S> rotation_grad_to_quat(const Mat3<S>& d_r, const Quaternion<S>& q) {
    const S n = q.norm();
    const Quaternion<S> qn{q.w / n, q.x / n, q.y / n, q.z / n};
    const auto dr = rotmat_quat_derivatives(qn);
    Vec4<S> g;
    for (int k = 0; k < 4; ++k) g[k] = d_r.cwiseProduct(dr[std::size_t(k)]).sum();
    const Vec4<S> qv = qn.coeffs();
    return (g - g.dot(qv) * qv) / n;
}

namespace detail {

// Per-Gaussian screen-space adjoints: mean2d (2), conic (symmetric, full-matrix
// convention: 00, 01 == 10, 11), depth.
template <typename S>
struct ScreenAdjoint {
    S mx = 0, my = 0, c00 = 0, c01 = 0, c11 = 0, d = 0;

    ScreenAdjoint& operator+=(const ScreenAdjoint& o) {
        mx += o.mx; my += o.my; c00 += o.c00; c01 += o.c01; c11 += o.c11; d += o.d;
        return *this;
    }
};

[[noreturn]] inline void throw_non_finite(std::size_t pixel, int width) {
    std::ostringstream os;
    os << "non-finite gradient at pixel (" << pixel % std::size_t(width) << ", " << pixel / std::size_t(width) << ")";
    throw Error(ErrorKind::Numeric, os.str());
}

} // namespace detail

/// Exact pose gradient by reverse traversal of the compositing context and the
/// projection chain. Culling, clamping and early termination are constants of
/// the forward pass. Accumulation is tile-major then contributor order, so the
/// result does not depend on the worker count.
template <typename S>
PoseGradient<S> backward_pose(const RenderOutput<S>& out, const GaussianScene<S>& scene,
                              const CameraIntrinsics<S>& k, const Pose<S>& pose, const RenderCotangents<S>& cot) {
    const BackwardContext<S>& ctx = out.ctx;
    if (ctx.checksum != render_checksum(scene.size(), k, pose) || ctx.projected.size() != scene.size()) {
        throw Error(ErrorKind::StaleContext, "render context does not match the (scene, intrinsics, pose)");
    }
    const int w = k.width, h = k.height, ts = ctx.config.tile_size;
    const bool use_norm = cot.d_norm_depth.size() != 0;
    const bool use_alpha = cot.d_alpha.size() != 0;
    const bool use_depth = cot.d_depth.size() != 0;
    if ((use_norm && !cot.d_norm_depth.same_shape(w, h)) || (use_alpha && !cot.d_alpha.same_shape(w, h)) ||
        (use_depth && !cot.d_depth.same_shape(w, h))) {
        throw Error(ErrorKind::InvalidArgument, "cotangent map shape does not match the render");
    }

    const std::size_t n_tiles = std::size_t(ctx.tiles_x) * std::size_t(ctx.tiles_y);
    std::vector<std::vector<detail::ScreenAdjoint<S>>> tile_adj(n_tiles);
    const S floor = S(ctx.config.alpha_floor);

    parallel_for(n_tiles, ctx.config.threads, [&](std::size_t tile) {
        const SplatRecord<S>* splats = ctx.tile_splats.data() + ctx.tile_offsets[tile];
        const std::uint32_t count = ctx.tile_offsets[tile + 1] - ctx.tile_offsets[tile];
        auto& adj = tile_adj[tile];
        adj.assign(count, {});
        if (count == 0) return;
        const int tx = int(tile % std::size_t(ctx.tiles_x)), ty = int(tile / std::size_t(ctx.tiles_x));
        std::vector<Contributor<S>> replay;
        for (int v = ty * ts; v < std::min(h, (ty + 1) * ts); ++v) {
            for (int u = tx * ts; u < std::min(w, (tx + 1) * ts); ++u) {
                const std::size_t pix = std::size_t(v) * w + u;
                const S a_pix = out.alpha[pix];
                S g_depth = use_depth ? cot.d_depth[pix] : S(0);
                S g_alpha = use_alpha ? cot.d_alpha[pix] : S(0);
                if (use_norm && a_pix > floor) {
                    const S gn = cot.d_norm_depth[pix];
                    g_depth += gn / a_pix;
                    g_alpha -= gn * out.depth[pix] / (a_pix * a_pix);
                }
                if (g_depth == S(0) && g_alpha == S(0)) continue;
                if (!std::isfinite(double(g_depth)) || !std::isfinite(double(g_alpha))) {
                    detail::throw_non_finite(pix, w);
                }

                const Contributor<S>* cs;
                std::size_t n;
                if (ctx.has_contributors) {
                    cs = ctx.tile_contributors[tile].data() + ctx.pixel_offsets[pix];
                    n = ctx.pixel_counts[pix];
                } else {
                    replay.clear();
                    S d, a;
                    detail::composite_pixel(splats, count, S(u), S(v), ctx.config, d, a,
                                            [&](std::uint32_t slot, S al, S t, S, bool cl) {
                                                replay.push_back({slot, cl, al, t});
                                            });
                    cs = replay.data();
                    n = replay.size();
                }

                // Suffix sums of d_m * w_m and w_m over contributors behind n.
                S suffix_d = 0, suffix_a = 0;
                for (std::size_t i = n; i-- > 0;) {
                    const Contributor<S>& c = cs[i];
                    const SplatRecord<S>& g = splats[c.slot];
                    const S wgt = c.alpha * c.transmittance;
                    const S one_minus = S(1) - c.alpha;
                    detail::ScreenAdjoint<S>& acc = adj[c.slot];
                    acc.d += g_depth * wgt;
                    if (!c.clamped) {
                        const S dd_da = g.depth * c.transmittance - suffix_d / one_minus;
                        const S da_da = c.transmittance - suffix_a / one_minus;
                        const S g_a = g_depth * dd_da + g_alpha * da_da;
                        const S g_sigma = -c.alpha * g_a;
                        const S dx = S(u) - g.mx;
                        const S dy = S(v) - g.my;
                        // sigma = 0.5 * Δᵀ C Δ with Δ = p - mean2d
                        acc.mx -= g_sigma * (g.c00 * dx + g.c01 * dy);
                        acc.my -= g_sigma * (g.c01 * dx + g.c11 * dy);
                        acc.c00 += g_sigma * S(0.5) * dx * dx;
                        acc.c01 += g_sigma * S(0.5) * dx * dy;
                        acc.c11 += g_sigma * S(0.5) * dy * dy;
                        if (!std::isfinite(double(g_sigma))) detail::throw_non_finite(pix, w);
                    }
                    suffix_d += g.depth * wgt;
                    suffix_a += wgt;
                }
            }
        }
    });

    std::vector<detail::ScreenAdjoint<S>> per_gaussian(scene.size());
    for (std::size_t tile = 0; tile < n_tiles; ++tile) {
        const std::uint32_t* list = ctx.tile_gaussians.data() + ctx.tile_offsets[tile];
        for (std::size_t s = 0; s < tile_adj[tile].size(); ++s) per_gaussian[list[s]] += tile_adj[tile][s];
    }

    const Mat3<S> r = pose.rotation_matrix();
    Mat3<S> g_rot = Mat3<S>::Zero();
    Vec3<S> g_t = Vec3<S>::Zero();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const ProjectedGaussian<S>& p = ctx.projected[i];
        if (!p.visible) continue;
        const detail::ScreenAdjoint<S>& a = per_gaussian[i];
        if (a.mx == S(0) && a.my == S(0) && a.c00 == S(0) && a.c01 == S(0) && a.c11 == S(0) && a.d == S(0)) continue;

        const Gaussian<S>& g = scene.gaussians[i];
        const Vec3<S>& xc = p.mean_cam;
        const S x = xc.x(), y = xc.y(), z = xc.z();
        const S iz = S(1) / z, iz2 = iz * iz, iz3 = iz2 * iz;

        Mat2<S> g_conic;
        g_conic << a.c00, a.c01, a.c01, a.c11;
        // C = Σ_I⁻¹  =>  dL/dΣ_I = -C (dL/dC) C
        const Mat2<S> g_cov2d = -p.conic * g_conic * p.conic;

        Eigen::Matrix<S, 2, 3> j;
        perspective_jacobian(xc, k, j);
        const Mat3<S> cov_world = g.covariance();
        const Mat3<S> cov_cam = r * cov_world * r.transpose();
        const Mat3<S> g_cov_cam = j.transpose() * g_cov2d * j;
        const Eigen::Matrix<S, 2, 3> g_j = S(2) * g_cov2d * j * cov_cam;

        Vec3<S> g_xc;
        g_xc.x() = a.mx * k.fx * iz - g_j(0, 2) * k.fx * iz2;
        g_xc.y() = a.my * k.fy * iz - g_j(1, 2) * k.fy * iz2;
        g_xc.z() = -a.mx * k.fx * x * iz2 - a.my * k.fy * y * iz2 + a.d
                   - g_j(0, 0) * k.fx * iz2 + g_j(0, 2) * S(2) * k.fx * x * iz3
                   - g_j(1, 1) * k.fy * iz2 + g_j(1, 2) * S(2) * k.fy * y * iz3;

        g_rot += g_xc * g.mean.transpose() + S(2) * g_cov_cam * r * cov_world;
        g_t += g_xc;
    }

    PoseGradient<S> grad;
    grad.d_q = rotation_grad_to_quat(g_rot, pose.rotation);
    grad.d_t = g_t;
    if (!grad.all_finite()) throw Error(ErrorKind::Numeric, "non-finite pose gradient");
    return grad;
}

/// Loss as a function of the render, used by the finite-difference oracle.
template <typename S>
using RenderLoss = std::function<S(const RenderOutput<S>&)>;

/// Pose after a perturbation of `delta` along ambient parameter k (0..3 for
/// the quaternion, 4..6 for translation). The quaternion is renormalized,
/// matching the R(q / |q|) convention of backward_pose.
template <typename S>
Pose<S> perturb_pose(const Pose<S>& pose, int k, S delta) {
    Pose<S> p = pose;
    if (k < 4) {
        Vec4<S> c = p.rotation.coeffs();
        c[k] += delta;
        p.rotation = quat_normalize(Quaternion<S>::from_coeffs(c));
    } else {
        p.translation[k - 4] += delta;
    }
    return p;
}

/// Central differences over the 7 ambient pose parameters.
template <typename S>
PoseGradient<S> finite_diff_pose_grad(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k,
                                      const Pose<S>& pose, const RenderLoss<S>& loss_fn, S eps,
                                      const RenderConfig& cfg = {}) {
    if (!(double(eps) >= 1e-8 && double(eps) <= 1e-3)) {
        throw Error(ErrorKind::InvalidArgument, "finite-difference step must lie in [1e-8, 1e-3]");
    }
    Eigen::Matrix<S, 7, 1> g;
    for (int i = 0; i < 7; ++i) {
        const S plus = loss_fn(render(scene, k, perturb_pose(pose, i, eps), cfg));
        const S minus = loss_fn(render(scene, k, perturb_pose(pose, i, -eps), cfg));
        g[i] = (plus - minus) / (S(2) * eps);
    }
    PoseGradient<S> out;
    out.d_q = g.template head<4>();
    out.d_t = g.template tail<3>();
    return out;
}

/// True when every render in the finite-difference stencil shares the
/// discrete structure (contributors, clamps, mask) of the center render.
template <typename S>
bool stencil_is_smooth(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k, const Pose<S>& pose, S eps,
                       const RenderConfig& cfg = {}) {
    const std::uint64_t center = structure_signature(render(scene, k, pose, cfg));
    for (int i = 0; i < 7; ++i) {
        for (S sgn : {S(1), S(-1)}) {
            if (structure_signature(render(scene, k, perturb_pose(pose, i, sgn * eps), cfg)) != center) return false;
        }
    }
    return true;
}

} // namespace gsloc
