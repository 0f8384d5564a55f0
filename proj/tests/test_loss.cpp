#include <random>

#include <gtest/gtest.h>

#include "gsloc/loss.hpp"
#include "support/scenes.hpp"

using namespace gsloc;

namespace {

Image<double> random_image(int w, int h, std::uint64_t seed, double lo = 1.0, double hi = 3.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image<double> img(w, h);
    for (auto& x : img.data) x = u(rng);
    return img;
}

Mask full_mask(int w, int h) { return Mask(w, h, 1); }

/// Central differences of a scalar image functional, per pixel.
template <typename F>
Image<double> numeric_grad(const Image<double>& img, F f, double eps = 1e-6) {
    Image<double> g(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) {
        Image<double> p = img, m = img;
        p[i] += eps;
        m[i] -= eps;
        g[i] = (f(p) - f(m)) / (2 * eps);
    }
    return g;
}

} // namespace

TEST(Sobel, ConstantImage) {
    const Image<double> img(8, 6, 2.5);
    const auto r = sobel_gradients(img, full_mask(8, 6));
    for (int v = 1; v < 5; ++v)
        for (int u = 1; u < 7; ++u) {
            EXPECT_EQ(r.valid(u, v), 1);
            EXPECT_EQ(r.gx(u, v), 0.0);
            EXPECT_EQ(r.gy(u, v), 0.0);
        }
}

TEST(Sobel, HorizontalRamp) {
    Image<double> img(7, 5);
    for (int v = 0; v < 5; ++v)
        for (int u = 0; u < 7; ++u) img(u, v) = u;
    const auto r = sobel_gradients(img, full_mask(7, 5));
    for (int v = 1; v < 4; ++v)
        for (int u = 1; u < 6; ++u) {
            EXPECT_DOUBLE_EQ(r.gx(u, v), 8.0);
            EXPECT_DOUBLE_EQ(r.gy(u, v), 0.0);
        }
}

TEST(Sobel, BorderAndHolePropagation) {
    Mask m = full_mask(9, 9);
    m(4, 4) = 0;
    const auto r = sobel_gradients(Image<double>(9, 9, 1.0), m);
    for (int v = 0; v < 9; ++v)
        for (int u = 0; u < 9; ++u) {
            const bool border = u == 0 || v == 0 || u == 8 || v == 8;
            const bool near_hole = std::abs(u - 4) <= 1 && std::abs(v - 4) <= 1;
            EXPECT_EQ(r.valid(u, v), (border || near_hole) ? 0 : 1) << u << "," << v;
        }
}

TEST(DepthLoss, IdenticalImages) {
    const auto img = random_image(6, 5, 1);
    const auto obs = DepthImage<double>::from_depth(img);
    const auto r = depth_loss(img, obs, full_mask(6, 5));
    EXPECT_EQ(r.value, 0.0);
    for (double g : r.grad.data) EXPECT_EQ(g, 0.0);
}

TEST(DepthLoss, ConstantOffset) {
    const auto img = random_image(6, 5, 2);
    Image<double> shifted = img;
    for (auto& x : shifted.data) x += 0.5;
    const auto r = depth_loss(shifted, DepthImage<double>::from_depth(img), full_mask(6, 5));
    EXPECT_NEAR(r.value, 0.5, 1e-15);
    for (double g : r.grad.data) EXPECT_DOUBLE_EQ(g, 1.0 / 30.0);
    EXPECT_EQ(r.count, 30u);
}

TEST(DepthLoss, SumReduction) {
    const auto img = random_image(4, 4, 3);
    Image<double> shifted = img;
    for (auto& x : shifted.data) x -= 0.25;
    const auto r = depth_loss(shifted, DepthImage<double>::from_depth(img), full_mask(4, 4), Reduction::Sum);
    EXPECT_NEAR(r.value, 4.0, 1e-12);
    for (double g : r.grad.data) EXPECT_EQ(g, -1.0);
}

TEST(DepthLoss, AllInvalidObserved) {
    const auto obs = DepthImage<double>::from_depth(Image<double>(5, 5, 0.0));
    try {
        depth_loss(Image<double>(5, 5, 1.0), obs, full_mask(5, 5));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyOverlap);
    }
}

TEST(DepthLoss, ObservedNonFiniteIsInvalid) {
    Image<double> d(3, 3, 1.0);
    d(1, 1) = std::numeric_limits<double>::quiet_NaN();
    const auto obs = DepthImage<double>::from_depth(d);
    EXPECT_EQ(obs.valid(1, 1), 0);
    EXPECT_EQ(obs.valid_count(), 8u);
}

TEST(ContourLoss, InvariantToConstantOffset) {
    // depths on a 2^-16 grid keep every sum exact, so the loss is exactly zero
    auto img = random_image(12, 10, 4);
    for (auto& x : img.data) x = std::round(x * 65536) / 65536;
    Image<double> shifted = img;
    for (auto& x : shifted.data) x += 0.731 - std::fmod(0.731, 1.0 / 65536);
    const auto r = contour_loss(shifted, DepthImage<double>::from_depth(img), full_mask(12, 10));
    EXPECT_EQ(r.value, 0.0);
    for (double g : r.grad.data) EXPECT_EQ(g, 0.0);
}

TEST(ContourLoss, ArbitraryOffsetOnlyLeavesRounding) {
    const auto img = random_image(12, 10, 4);
    Image<double> shifted = img;
    for (auto& x : shifted.data) x += 0.731;
    const auto r = contour_loss(shifted, DepthImage<double>::from_depth(img), full_mask(12, 10));
    EXPECT_LT(r.value, 1e-13);
}

TEST(ContourLoss, UnitStepEdge) {
    // observed steps from 1 to 2 between columns 2 and 3; rendered is flat 1
    Image<double> obs(6, 5, 1.0);
    for (int v = 0; v < 5; ++v)
        for (int u = 3; u < 6; ++u) obs(u, v) = 2.0;
    const auto r = contour_loss(Image<double>(6, 5, 1.0), DepthImage<double>::from_depth(obs), full_mask(6, 5));
    // interior valid pixels: u in 1..4, v in 1..3 (12). Columns 2 and 3 see gx = 4.
    EXPECT_EQ(r.count, 12u);
    EXPECT_NEAR(r.value, 4.0 * 6 / 12.0, 1e-15);
}

TEST(ContourLoss, BackwardMatchesFiniteDifferences) {
    const auto obs = DepthImage<double>::from_depth(random_image(5, 5, 5));
    const auto img = random_image(5, 5, 6);
    const auto m = full_mask(5, 5);
    const auto r = contour_loss(img, obs, m);
    const auto fd = numeric_grad(img, [&](const Image<double>& x) { return contour_loss(x, obs, m).value; });
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(r.grad[i], fd[i], 1e-8);
}

TEST(TotalLoss, WeightedSum) {
    const auto rs = testutil::random_scene(8, 50, 16);
    const auto out = render(rs.scene, rs.k, rs.pose);
    Image<double> obs_img = out.norm_depth;
    for (std::size_t i = 0; i < obs_img.size(); ++i) obs_img[i] = out.mask[i] ? obs_img[i] + 0.1 * (i % 3) : 1.0;
    const auto obs = DepthImage<double>::from_depth(obs_img);
    LossWeights w;
    w.lambda_q = 0.3;
    w.lambda_t = 0.2;
    const auto l = total_loss(out, obs, rs.pose, w);
    EXPECT_NEAR(l.total, 0.8 * l.depth_term + 0.2 * l.contour_term + l.reg_term, 1e-9);
    EXPECT_NEAR(l.reg_term, 0.3 + 0.2 * rs.pose.translation.squaredNorm(), 1e-12);
}

TEST(TotalLoss, ArithmeticExample) {
    // 0.8 * 1.0 + 0.2 * 0.5
    LossWeights w;
    EXPECT_DOUBLE_EQ(w.lambda1 * 1.0 + w.lambda2 * 0.5, 0.9);
}

TEST(TotalLoss, PerfectPoseLeavesOnlyRegularizer) {
    const auto rs = testutil::random_scene(9, 50, 32);
    const auto out = render(rs.scene, rs.k, rs.pose);
    Image<double> obs_img = out.norm_depth;
    const auto l = total_loss(out, DepthImage<double>::from_depth(obs_img), rs.pose, LossWeights{});
    EXPECT_EQ(l.total, l.reg_term);
    EXPECT_EQ(l.reg_term, 0.0);
}

TEST(TotalLoss, BackwardMatchesFiniteDifferences) {
    // The loss is a function of the normalized-depth map; its cotangent must
    // be the derivative with respect to that map on 16x16 images.
    const int n = 16;
    const auto obs = DepthImage<double>::from_depth(random_image(n, n, 10));
    RenderOutput<double> out;
    out.norm_depth = random_image(n, n, 11);
    out.depth = out.norm_depth;
    out.alpha = Image<double>(n, n, 1.0);
    out.mask = full_mask(n, n);
    const LossWeights w;
    const auto l = total_loss(out, obs, Pose<double>::identity(), w);
    const auto fd = numeric_grad(out.norm_depth, [&](const Image<double>& x) {
        RenderOutput<double> o;
        o.norm_depth = x;
        o.depth = x;
        o.alpha = out.alpha;
        o.mask = out.mask;
        return total_loss(o, obs, Pose<double>::identity(), w).total;
    });
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_NEAR(l.cotangents.d_norm_depth[i], fd[i], 1e-8);
}

TEST(TotalLoss, RawDepthSourceUsesDepthCotangent) {
    const auto rs = testutil::random_scene(12, 50, 16);
    const auto out = render(rs.scene, rs.k, rs.pose);
    LossWeights w;
    w.depth_source = DepthSource::Raw;
    const auto obs = DepthImage<double>::from_depth(Image<double>(16, 16, 1.0));
    bool any = false;
    for (auto m : out.mask.data) any = any || m;
    if (!any) GTEST_SKIP();
    const auto l = total_loss(out, obs, rs.pose, w);
    EXPECT_EQ(l.cotangents.d_norm_depth.size(), 0u);
    EXPECT_EQ(l.cotangents.d_depth.size(), 256u);
}

TEST(Regularizer, Gradient) {
    Pose<double> p;
    p.translation = {1, 2, 3};
    LossWeights w;
    w.lambda_q = 0.5;
    w.lambda_t = 0.25;
    const auto g = regularizer_gradient(p, w);
    EXPECT_EQ(g.d_q, Vec4<double>(1, 0, 0, 0));
    EXPECT_EQ(g.d_t, Vec3<double>(0.5, 1.0, 1.5));
    EXPECT_EQ(regularizer_gradient(p, LossWeights{}).stacked(), (Eigen::Matrix<double, 7, 1>::Zero()));
}

TEST(LossWeights, NegativeRejected) {
    LossWeights w;
    w.lambda2 = -1;
    EXPECT_THROW(w.validate(), Error);
}
