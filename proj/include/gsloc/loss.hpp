#pragma once

#include <cmath>
#include <cstdint>

#include "gsloc/common.hpp"
#include "gsloc/geom.hpp"
#include "gsloc/grad.hpp"
#include "gsloc/renderer.hpp"

namespace gsloc {

template <typename S>
struct DepthImage {
    int width = 0, height = 0;
    Image<S> depth;  // meters
    Mask valid;      // depth > 0 and finite

    DepthImage() = default;
    DepthImage(int w, int h) : width(w), height(h), depth(w, h), valid(w, h) {}

    /// Builds validity from the depth values; non-finite entries are zeroed.
    static DepthImage from_depth(Image<S> d) {
        DepthImage img(d.width, d.height);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const bool ok = std::isfinite(double(d[i])) && d[i] > S(0);
            img.depth[i] = ok ? d[i] : S(0);
            img.valid[i] = ok ? 1 : 0;
        }
        return img;
    }

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto b : valid.data) n += b;
        return n;
    }
};

enum class DepthSource { Normalized, Raw };
enum class Reduction { Mean, Sum };

struct LossWeights {
    double lambda1 = 0.8;      // depth term
    double lambda2 = 0.2;      // contour term
    double lambda_q = 0.0;     // explicit |q|^2 penalty
    double lambda_t = 0.0;     // explicit |t|^2 penalty
    DepthSource depth_source = DepthSource::Normalized;
    Reduction reduction = Reduction::Mean;

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda_q < 0 || lambda_t < 0) {
            throw Error(ErrorKind::InvalidArgument, "loss weights must be non-negative");
        }
    }
};

template <typename S>
struct LossBreakdown {
    S total = 0;
    S depth_term = 0;
    S contour_term = 0;
    S reg_term = 0;
    std::size_t valid_pixel_count = 0;
    bool contour_empty = false;  // no pixel had a fully valid 3x3 neighborhood
    RenderCotangents<S> cotangents;
};

template <typename S>
struct SobelResult {
    Image<S> gx, gy;
    Mask valid;
};

/// Raw 3x3 Sobel response, evaluated only where the whole neighborhood is in `mask`.
template <typename S>
SobelResult<S> sobel_gradients(const Image<S>& img, const Mask& mask) {
    if (img.width < 3 || img.height < 3) throw Error(ErrorKind::InvalidArgument, "image smaller than 3x3 Sobel kernel");
    if (!mask.same_shape(img)) throw Error(ErrorKind::InvalidArgument, "mask shape mismatch");
    const int w = img.width, h = img.height;
    SobelResult<S> r{Image<S>(w, h), Image<S>(w, h), Mask(w, h)};
    for (int v = 1; v < h - 1; ++v) {
        for (int u = 1; u < w - 1; ++u) {
            bool ok = true;
            for (int dv = -1; dv <= 1 && ok; ++dv)
                for (int du = -1; du <= 1 && ok; ++du) ok = mask(u + du, v + dv) != 0;
            if (!ok) continue;
            r.gx(u, v) = (img(u + 1, v - 1) + S(2) * img(u + 1, v) + img(u + 1, v + 1)) -
                         (img(u - 1, v - 1) + S(2) * img(u - 1, v) + img(u - 1, v + 1));
            r.gy(u, v) = (img(u - 1, v + 1) + S(2) * img(u, v + 1) + img(u + 1, v + 1)) -
                         (img(u - 1, v - 1) + S(2) * img(u, v - 1) + img(u + 1, v - 1));
            r.valid(u, v) = 1;
        }
    }
    return r;
}

template <typename S>
struct TermResult {
    S value = 0;
    Image<S> grad;
    std::size_t count = 0;
};

inline int sign_of(double x) { return (x > 0) - (x < 0); }

/// L1 depth residual over `mask`; subgradient 0 at exact ties.
template <typename S>
TermResult<S> depth_loss(const Image<S>& rendered, const DepthImage<S>& observed, const Mask& mask,
                         Reduction reduction = Reduction::Mean) {
    if (!rendered.same_shape(observed.depth) || !mask.same_shape(rendered)) {
        throw Error(ErrorKind::InvalidArgument, "depth_loss shape mismatch");
    }
    TermResult<S> r{S(0), Image<S>(rendered.width, rendered.height), 0};
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (mask[i] && observed.valid[i]) ++r.count;
    }
    if (r.count == 0) throw Error(ErrorKind::EmptyOverlap, "no pixel is both rendered and observed");
    const S scale = reduction == Reduction::Mean ? S(1) / S(r.count) : S(1);
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!(mask[i] && observed.valid[i])) continue;
        const S diff = rendered[i] - observed.depth[i];
        r.value += std::abs(diff);
        r.grad[i] = S(sign_of(double(diff))) * scale;
    }
    r.value *= scale;
    return r;
}

/// L1 difference of Sobel responses. The gradient is the transposed Sobel
/// correlation applied to the residual sign maps.
template <typename S>
TermResult<S> contour_loss(const Image<S>& rendered, const DepthImage<S>& observed, const Mask& mask,
                           Reduction reduction = Reduction::Mean) {
    if (!rendered.same_shape(observed.depth) || !mask.same_shape(rendered)) {
        throw Error(ErrorKind::InvalidArgument, "contour_loss shape mismatch");
    }
    const int w = rendered.width, h = rendered.height;
    Mask joint(w, h);
    for (std::size_t i = 0; i < joint.size(); ++i) joint[i] = (mask[i] && observed.valid[i]) ? 1 : 0;
    const SobelResult<S> sr = sobel_gradients(rendered, joint);
    const SobelResult<S> so = sobel_gradients(observed.depth, joint);

    TermResult<S> r{S(0), Image<S>(w, h), 0};
    for (auto b : sr.valid.data) r.count += b;
    if (r.count == 0) return r;
    const S scale = reduction == Reduction::Mean ? S(1) / S(r.count) : S(1);

    static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    for (int v = 1; v < h - 1; ++v) {
        for (int u = 1; u < w - 1; ++u) {
            if (!sr.valid(u, v)) continue;
            const S ex = sr.gx(u, v) - so.gx(u, v);
            const S ey = sr.gy(u, v) - so.gy(u, v);
            r.value += std::abs(ex) + std::abs(ey);
            const S sx = S(sign_of(double(ex))) * scale;
            const S sy = S(sign_of(double(ey))) * scale;
            if (sx == S(0) && sy == S(0)) continue;
            for (int dv = -1; dv <= 1; ++dv)
                for (int du = -1; du <= 1; ++du)
                    r.grad(u + du, v + dv) += sx * S(kx[dv + 1][du + 1]) + sy * S(ky[dv + 1][du + 1]);
        }
    }
    r.value *= scale;
    return r;
}

/// Full objective λ1·L_d + λ2·L_c + λq|q|² + λt|t|² with cotangents for backward_pose.
/// The alpha mask is a hard gate, so d_alpha stays zero.
template <typename S>
LossBreakdown<S> total_loss(const RenderOutput<S>& render_out, const DepthImage<S>& observed, const Pose<S>& pose,
                            const LossWeights& weights) {
    weights.validate();
    const Image<S>& source = weights.depth_source == DepthSource::Normalized ? render_out.norm_depth : render_out.depth;
    const TermResult<S> d = depth_loss(source, observed, render_out.mask, weights.reduction);
    const TermResult<S> c = contour_loss(source, observed, render_out.mask, weights.reduction);

    LossBreakdown<S> out;
    out.depth_term = d.value;
    out.contour_term = c.value;
    out.contour_empty = c.count == 0;
    out.valid_pixel_count = d.count;
    out.reg_term = S(weights.lambda_q) * pose.rotation.squared_norm() +
                   S(weights.lambda_t) * pose.translation.squaredNorm();
    out.total = S(weights.lambda1) * out.depth_term + S(weights.lambda2) * out.contour_term + out.reg_term;

    Image<S> g(source.width, source.height);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = S(weights.lambda1) * d.grad[i] + S(weights.lambda2) * c.grad[i];
    if (weights.depth_source == DepthSource::Normalized) {
        out.cotangents.d_norm_depth = std::move(g);
    } else {
        out.cotangents.d_depth = std::move(g);
    }
    out.cotangents.d_alpha = Image<S>(source.width, source.height);
    return out;
}

/// Ambient gradient of the explicit regularizer.
template <typename S>
PoseGradient<S> regularizer_gradient(const Pose<S>& pose, const LossWeights& weights) {
    PoseGradient<S> g;
    g.d_q = S(2 * weights.lambda_q) * pose.rotation.coeffs();
    g.d_t = S(2 * weights.lambda_t) * pose.translation;
    return g;
}

} // namespace gsloc
