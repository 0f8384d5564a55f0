#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "gsloc/common.hpp"
#include "gsloc/geom.hpp"

namespace gsloc {

template <typename S>
struct Gaussian {
    Vec3<S> mean = Vec3<S>::Zero();
    Vec3<S> scale = Vec3<S>::Constant(S(0.01));  // per-axis standard deviation
    Quaternion<S> orientation;
    S opacity = S(1);

    Mat3<S> covariance() const {
        const Mat3<S> r = quat_to_rotmat(orientation);
        const Vec3<S> s2 = scale.cwiseProduct(scale);
        return r * s2.asDiagonal() * r.transpose();
    }

    template <typename T>
    Gaussian<T> cast() const {
        return {mean.template cast<T>(), scale.template cast<T>(), orientation.template cast<T>(), T(opacity)};
    }
};

template <typename S>
struct GaussianScene {
    std::vector<Gaussian<S>> gaussians;
    /// Maps the original world frame into the scene frame (identity when no
    /// normalization was applied).
    Pose<S> world_transform;

    std::size_t size() const { return gaussians.size(); }

    void validate() const {
        if (gaussians.empty()) throw Error(ErrorKind::InvalidArgument, "scene has no Gaussians");
        require_unit(world_transform.rotation, "scene world_transform");
    }

    template <typename T>
    GaussianScene<T> cast() const {
        GaussianScene<T> out;
        out.gaussians.reserve(gaussians.size());
        for (const auto& g : gaussians) out.gaussians.push_back(g.template cast<T>());
        out.world_transform = world_transform.template cast<T>();
        return out;
    }
};

/// Renderer constants. Defaults follow common splatting practice.
struct RenderConfig {
    double dilation = 0.3;               // px^2 added to the screen covariance diagonal
    double alpha_clamp_max = 0.999;
    double transmittance_epsilon = 1e-4;
    double sigma_cutoff = 4.5;
    double guard_band = 1.3;             // cull means projecting beyond this multiple of the image half-extent
    double alpha_floor = 1e-3;
    int tile_size = 16;
    int threads = 1;
    bool save_contributors = true;       // false: backward replays compositing
};

template <typename S>
struct ProjectedGaussian {
    Vec2<S> mean2d = Vec2<S>::Zero();
    Mat2<S> cov2d = Mat2<S>::Zero();
    Mat2<S> conic = Mat2<S>::Zero();
    Vec3<S> mean_cam = Vec3<S>::Zero();
    S depth = 0;
    S opacity = 0;
    int radius = 0;
    bool visible = false;
};

/// One composited splat at one pixel, in front-to-back order.
template <typename S>
struct Contributor {
    std::uint32_t slot = 0;  // position within the owning tile's Gaussian list
    bool clamped = false;    // alpha hit alpha_clamp_max (no gradient through sigma)
    S alpha = 0;
    S transmittance = 0;     // T before this contributor
};

/// Compact copy of the per-pixel inputs of one splat, stored per tile entry.
template <typename S>
struct SplatRecord {
    S mx, my;          // mean2d
    S c00, c01, c11;   // conic
    S opacity, depth;
};

/// Everything backward_pose needs to replay compositing in reverse.
template <typename S>
struct BackwardContext {
    std::vector<ProjectedGaussian<S>> projected;   // indexed like the scene
    std::vector<std::uint32_t> tile_offsets;       // CSR over tiles into tile_gaussians
    std::vector<std::uint32_t> tile_gaussians;     // scene indices, depth-sorted per tile
    std::vector<SplatRecord<S>> tile_splats;       // parallel to tile_gaussians
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<Contributor<S>>> tile_contributors;  // per tile, pixel-major
    std::vector<std::uint32_t> pixel_offsets;      // start within the tile's contributor list
    std::vector<std::uint16_t> pixel_counts;
    RenderConfig config;
    CameraIntrinsics<S> intrinsics;
    std::uint64_t checksum = 0;
    bool has_contributors = false;
};

template <typename S>
struct RenderOutput {
    Image<S> depth;       // D(p)
    Image<S> alpha;       // accumulated opacity
    Image<S> norm_depth;  // D / alpha where alpha > alpha_floor, else 0
    Mask mask;            // alpha > alpha_floor
    BackwardContext<S> ctx;
};

template <typename S>
std::uint64_t render_checksum(std::size_t n_gaussians, const CameraIntrinsics<S>& k, const Pose<S>& pose) {
    std::uint64_t h = fnv1a(&n_gaussians, sizeof(n_gaussians));
    const S vals[] = {pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z,
                      pose.translation.x(), pose.translation.y(), pose.translation.z(),
                      k.fx, k.fy, k.cx, k.cy, k.near, k.far};
    h = fnv1a(vals, sizeof(vals), h);
    const int dims[] = {k.width, k.height};
    return fnv1a(dims, sizeof(dims), h);
}

template <typename S>
void perspective_jacobian(const Vec3<S>& xc, const CameraIntrinsics<S>& k, Eigen::Matrix<S, 2, 3>& j) {
    const S z = xc.z();
    const S iz = S(1) / z;
    const S iz2 = iz * iz;
    j << k.fx * iz, S(0), -k.fx * xc.x() * iz2,
         S(0), k.fy * iz, -k.fy * xc.y() * iz2;
}

/// True when `uv` lies inside the image rectangle scaled by `band` about the
/// principal point. Splats near the camera plane but far off-axis get
/// footprints that the affine approximation blows up; they are dropped.
template <typename S>
bool in_guard_band(const Vec2<S>& uv, const CameraIntrinsics<S>& k, double band) {
    const double lo_u = double(k.cx) - band * (double(k.cx) + 0.5);
    const double hi_u = double(k.cx) + band * (k.width - 0.5 - double(k.cx));
    const double lo_v = double(k.cy) - band * (double(k.cy) + 0.5);
    const double hi_v = double(k.cy) + band * (k.height - 0.5 - double(k.cy));
    const double u = double(uv.x()), v = double(uv.y());
    return u >= lo_u && u <= hi_u && v >= lo_v && v <= hi_v;
}

/// Projects every Gaussian to the image plane (EWA, local affine approximation).
template <typename S>
std::vector<ProjectedGaussian<S>> project_gaussians(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k,
                                                    const Pose<S>& pose, const RenderConfig& cfg = {}) {
    const Mat3<S> r = pose.rotation_matrix();
    std::vector<ProjectedGaussian<S>> out(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian<S>& g = scene.gaussians[i];
        ProjectedGaussian<S>& p = out[i];
        p.mean_cam = r * g.mean + pose.translation;
        p.depth = p.mean_cam.z();
        p.opacity = g.opacity;
        if (p.depth <= k.near || p.depth >= k.far) continue;
        p.mean2d = {k.fx * p.mean_cam.x() / p.depth + k.cx, k.fy * p.mean_cam.y() / p.depth + k.cy};
        if (!in_guard_band(p.mean2d, k, cfg.guard_band)) continue;

        Eigen::Matrix<S, 2, 3> j;
        perspective_jacobian(p.mean_cam, k, j);
        const Mat3<S> cov_cam = r * g.covariance() * r.transpose();
        p.cov2d = j * cov_cam * j.transpose();
        p.cov2d(0, 0) += S(cfg.dilation);
        p.cov2d(1, 1) += S(cfg.dilation);
        p.cov2d(0, 1) = p.cov2d(1, 0) = S(0.5) * (p.cov2d(0, 1) + p.cov2d(1, 0));
        const S det = p.cov2d.determinant();
        if (!(det > S(1e-12))) continue;
        p.conic << p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det, -p.cov2d(1, 0) / det, p.cov2d(0, 0) / det;

        const S mid = S(0.5) * (p.cov2d(0, 0) + p.cov2d(1, 1));
        const S lambda_max = mid + std::sqrt(std::max(S(0), mid * mid - det));
        const double radius = std::ceil(3.0 * std::sqrt(double(lambda_max)));
        if (!(radius < 1e6)) continue;
        p.radius = int(radius);
        const double u = double(p.mean2d.x()), v = double(p.mean2d.y());
        if (u + radius < 0 || v + radius < 0 || u - radius > k.width - 1 || v - radius > k.height - 1) continue;
        p.visible = true;
    }
    return out;
}

namespace detail {

/// Running state of front-to-back compositing at one pixel.
template <typename S>
struct CompositeState {
    S t = S(1);
    S depth = S(0);
    S alpha = S(0);
};

/// Blends one candidate into `st`; returns true once transmittance falls
/// below the termination threshold.
template <typename S, typename Emit>
inline bool composite_step(const SplatRecord<S>& g, std::uint32_t slot, S px, S py, S cutoff, S clamp_max, S t_eps,
                           CompositeState<S>& st, Emit& emit) {
    const S dx = px - g.mx;
    const S dy = py - g.my;
    const S sigma = S(0.5) * (g.c00 * dx * dx + S(2) * g.c01 * dx * dy + g.c11 * dy * dy);
    if (sigma > cutoff) return false;
    if (sigma < S(0)) throw Error(ErrorKind::Internal, "screen covariance is not positive definite");
    S a = g.opacity * std::exp(-sigma);
    bool clamped = false;
    if (a > clamp_max) {
        a = clamp_max;
        clamped = true;
    }
    const S w = a * st.t;
    st.depth += g.depth * w;
    st.alpha += w;
    emit(slot, a, st.t, sigma, clamped);
    st.t *= (S(1) - a);
    return st.t < t_eps;
}

/// Front-to-back compositing of one pixel over a depth-sorted candidate list.
/// `emit(slot, alpha, T, sigma, clamped)` is called for each contributor.
template <typename S, typename Emit>
void composite_pixel(const SplatRecord<S>* splats, std::uint32_t count, S px, S py, const RenderConfig& cfg, S& depth,
                     S& alpha, Emit&& emit) {
    const S cutoff = S(cfg.sigma_cutoff), clamp_max = S(cfg.alpha_clamp_max), t_eps = S(cfg.transmittance_epsilon);
    CompositeState<S> st;
    for (std::uint32_t slot = 0; slot < count; ++slot) {
        if (composite_step(splats[slot], slot, px, py, cutoff, clamp_max, t_eps, st, emit)) break;
    }
    depth = st.depth;
    alpha = st.alpha;
}

/// Candidate slot together with the pixel columns of one row it can reach.
struct RowSpan {
    std::uint32_t slot;
    int u0, u1;
};

inline int clamped_ceil(double x, int lo, int hi) {
    if (!(x > lo)) return lo;
    if (x > hi) return hi + 1;
    const int i = int(x);
    return i + (double(i) < x ? 1 : 0);
}

inline int clamped_floor(double x, int lo, int hi) {
    if (!(x < hi)) return hi;
    if (x < lo) return lo - 1;
    return int(x);  // x >= lo >= 0, truncation is floor
}

/// Per-row candidate spans of one tile (rows v_lo..v_hi, columns u_lo..u_hi).
/// A span covers every column whose pixel center can pass the sigma cutoff;
/// intervals are widened by a few ulps of S so that rounding never drops a
/// pixel the exact per-pixel test would accept. Rows keep depth order.
template <typename S>
void tile_row_spans(const SplatRecord<S>* splats, std::uint32_t count, int v_lo, int v_hi, int u_lo, int u_hi,
                    double cutoff, std::vector<std::vector<RowSpan>>& rows) {
    rows.resize(std::size_t(v_hi - v_lo + 1));
    for (auto& r : rows) r.clear();
    const double rel = 64.0 * double(std::numeric_limits<S>::epsilon());
    for (std::uint32_t slot = 0; slot < count; ++slot) {
        const SplatRecord<S>& g = splats[slot];
        const double a = double(g.c00), b = double(g.c01), c = double(g.c11);
        const double det = a * c - b * b;
        const double mx = double(g.mx), my = double(g.my);
        if (!(a > 0 && det > 0)) {
            for (auto& r : rows) r.push_back({slot, u_lo, u_hi});
            continue;
        }
        // sigma <= cutoff  <=>  (dx + b/a dy)^2 <= 2 cutoff / a - det / a^2 dy^2
        const double p = 2 * cutoff / a, q = det / (a * a), beta = b / a;
        const double y_ext = std::sqrt(2 * cutoff * a / det * (1 + rel)) + 1e-3;
        const int r0 = clamped_ceil(my - y_ext, v_lo, v_hi), r1 = clamped_floor(my + y_ext, v_lo, v_hi);
        for (int v = r0; v <= r1; ++v) {
            const double dy = double(v) - my;
            const double hw2 = p - q * dy * dy + rel * p;
            if (hw2 < 0) continue;
            const double hw = std::sqrt(hw2);
            const double center = mx - beta * dy;
            const double margin = 1e-3 + rel * (std::abs(center) + hw);
            const int u0 = clamped_ceil(center - hw - margin, u_lo, u_hi);
            const int u1 = clamped_floor(center + hw + margin, u_lo, u_hi);
            if (u0 <= u1) rows[std::size_t(v - v_lo)].push_back({slot, u0, u1});
        }
    }
}

/// composite_pixel restricted to the spans that cover column `u`.
template <typename S, typename Emit>
void composite_pixel_spans(const SplatRecord<S>* splats, const std::vector<RowSpan>& spans, int u, S py,
                           const RenderConfig& cfg, S& depth, S& alpha, Emit&& emit) {
    const S cutoff = S(cfg.sigma_cutoff), clamp_max = S(cfg.alpha_clamp_max), t_eps = S(cfg.transmittance_epsilon);
    const S px = S(u);
    CompositeState<S> st;
    for (const RowSpan& sp : spans) {
        if (u < sp.u0 || u > sp.u1) continue;
        if (composite_step(splats[sp.slot], sp.slot, px, py, cutoff, clamp_max, t_eps, st, emit)) break;
    }
    depth = st.depth;
    alpha = st.alpha;
}

} // namespace detail

/// Tile rasterizer. Sorts visible Gaussians by depth (stable on scene index),
/// bins them into tiles, and composites every pixel front to back.
template <typename S>
RenderOutput<S> rasterize_depth(std::vector<ProjectedGaussian<S>> projected, const CameraIntrinsics<S>& k,
                                const RenderConfig& cfg = {}) {
    k.validate();
    if (cfg.tile_size < 1) throw Error(ErrorKind::InvalidArgument, "tile_size must be >= 1");
    const int w = k.width, h = k.height, ts = cfg.tile_size;

    std::vector<std::uint32_t> order;
    for (std::uint32_t i = 0; i < projected.size(); ++i) {
        if (projected[i].visible) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return projected[a].depth < projected[b].depth; });

    RenderOutput<S> out;
    BackwardContext<S>& ctx = out.ctx;
    ctx.tiles_x = (w + ts - 1) / ts;
    ctx.tiles_y = (h + ts - 1) / ts;
    const std::size_t n_tiles = std::size_t(ctx.tiles_x) * std::size_t(ctx.tiles_y);

    auto tile_range = [&](const ProjectedGaussian<S>& g, int& x0, int& x1, int& y0, int& y1) {
        const double u = double(g.mean2d.x()), v = double(g.mean2d.y()), r = g.radius;
        x0 = std::clamp(int(std::floor((u - r) / ts)), 0, ctx.tiles_x - 1);
        x1 = std::clamp(int(std::floor((u + r) / ts)), 0, ctx.tiles_x - 1);
        y0 = std::clamp(int(std::floor((v - r) / ts)), 0, ctx.tiles_y - 1);
        y1 = std::clamp(int(std::floor((v + r) / ts)), 0, ctx.tiles_y - 1);
    };

    ctx.tile_offsets.assign(n_tiles + 1, 0);
    for (std::uint32_t gi : order) {
        int x0, x1, y0, y1;
        tile_range(projected[gi], x0, x1, y0, y1);
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) ++ctx.tile_offsets[std::size_t(ty) * ctx.tiles_x + tx + 1];
    }
    std::partial_sum(ctx.tile_offsets.begin(), ctx.tile_offsets.end(), ctx.tile_offsets.begin());
    ctx.tile_gaussians.resize(ctx.tile_offsets.back());
    {
        std::vector<std::uint32_t> cursor(ctx.tile_offsets.begin(), ctx.tile_offsets.end() - 1);
        for (std::uint32_t gi : order) {
            int x0, x1, y0, y1;
            tile_range(projected[gi], x0, x1, y0, y1);
            for (int ty = y0; ty <= y1; ++ty)
                for (int tx = x0; tx <= x1; ++tx) ctx.tile_gaussians[cursor[std::size_t(ty) * ctx.tiles_x + tx]++] = gi;
        }
    }
    ctx.tile_splats.resize(ctx.tile_gaussians.size());
    for (std::size_t e = 0; e < ctx.tile_gaussians.size(); ++e) {
        const ProjectedGaussian<S>& g = projected[ctx.tile_gaussians[e]];
        ctx.tile_splats[e] = {g.mean2d.x(), g.mean2d.y(), g.conic(0, 0), g.conic(0, 1), g.conic(1, 1), g.opacity, g.depth};
    }

    out.depth = Image<S>(w, h);
    out.alpha = Image<S>(w, h);
    out.norm_depth = Image<S>(w, h);
    out.mask = Mask(w, h);
    ctx.has_contributors = cfg.save_contributors;
    if (cfg.save_contributors) {
        ctx.tile_contributors.resize(n_tiles);
        ctx.pixel_offsets.assign(std::size_t(w) * h, 0);
        ctx.pixel_counts.assign(std::size_t(w) * h, 0);
    }

    const S floor = S(cfg.alpha_floor);
    parallel_for(n_tiles, cfg.threads, [&](std::size_t tile) {
        const int tx = int(tile % std::size_t(ctx.tiles_x)), ty = int(tile / std::size_t(ctx.tiles_x));
        const SplatRecord<S>* splats = ctx.tile_splats.data() + ctx.tile_offsets[tile];
        const std::uint32_t count = ctx.tile_offsets[tile + 1] - ctx.tile_offsets[tile];
        std::vector<Contributor<S>>* contribs = cfg.save_contributors ? &ctx.tile_contributors[tile] : nullptr;
        if (contribs) contribs->reserve(std::size_t(ts) * ts * std::min<std::size_t>(count, 48));
        std::vector<std::vector<detail::RowSpan>> rows;
        const int u_end = std::min(w, (tx + 1) * ts), v_end = std::min(h, (ty + 1) * ts);
        detail::tile_row_spans(splats, count, ty * ts, v_end - 1, tx * ts, u_end - 1, cfg.sigma_cutoff, rows);
        for (int v = ty * ts; v < v_end; ++v) {
            const std::vector<detail::RowSpan>& spans = rows[std::size_t(v - ty * ts)];
            for (int u = tx * ts; u < u_end; ++u) {
                const std::size_t pix = std::size_t(v) * w + u;
                const std::size_t start = contribs ? contribs->size() : 0;
                S d, a;
                detail::composite_pixel_spans(splats, spans, u, S(v), cfg, d, a,
                                        [&](std::uint32_t slot, S al, S t, S, bool cl) {
                                            if (contribs) contribs->push_back({slot, cl, al, t});
                                        });
                out.depth[pix] = d;
                out.alpha[pix] = a;
                if (a > floor) {
                    out.norm_depth[pix] = d / a;
                    out.mask[pix] = 1;
                }
                if (contribs) {
                    ctx.pixel_offsets[pix] = std::uint32_t(start);
                    ctx.pixel_counts[pix] = std::uint16_t(contribs->size() - start);
                }
            }
        }
    });

    ctx.projected = std::move(projected);
    ctx.config = cfg;
    ctx.intrinsics = k;
    return out;
}

template <typename S>
RenderOutput<S> render(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k, const Pose<S>& pose,
                       const RenderConfig& cfg = {}) {
    require_unit(pose.rotation, "render");
    RenderOutput<S> out = rasterize_depth(project_gaussians(scene, k, pose, cfg), k, cfg);
    out.ctx.checksum = render_checksum(scene.size(), k, pose);
    return out;
}

/// Hash of the discrete structure of a render: which splats contribute where,
/// which are clamped, and the validity mask. Two renders with equal signatures
/// lie on the same smooth branch of the compositing function.
template <typename S>
std::uint64_t structure_signature(const RenderOutput<S>& out) {
    const BackwardContext<S>& ctx = out.ctx;
    std::uint64_t h = fnv1a(out.mask.data.data(), out.mask.data.size());
    const int w = out.depth.width, hgt = out.depth.height, ts = ctx.config.tile_size;
    for (int v = 0; v < hgt; ++v) {
        for (int u = 0; u < w; ++u) {
            const std::size_t tile = std::size_t(v / ts) * ctx.tiles_x + std::size_t(u / ts);
            const std::uint32_t* list = ctx.tile_gaussians.data() + ctx.tile_offsets[tile];
            const SplatRecord<S>* splats = ctx.tile_splats.data() + ctx.tile_offsets[tile];
            const std::uint32_t count = ctx.tile_offsets[tile + 1] - ctx.tile_offsets[tile];
            std::uint64_t pix = 0;
            S d, a;
            detail::composite_pixel(splats, count, S(u), S(v), ctx.config, d, a,
                                    [&](std::uint32_t slot, S, S, S, bool cl) {
                                        const std::uint64_t rec[2] = {list[slot], cl ? 1u : 0u};
                                        pix = fnv1a(rec, sizeof(rec), pix ^ 0x9e3779b97f4a7c15ull);
                                    });
            h = fnv1a(&pix, sizeof(pix), h);
        }
    }
    return h;
}

} // namespace gsloc
