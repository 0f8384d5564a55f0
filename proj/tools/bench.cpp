// Times one render + loss + backward pass on the default synthetic room.
#include <chrono>
#include <cstdio>

#include "gsloc/grad.hpp"
#include "gsloc/synth.hpp"

int main(int argc, char** argv) {
    using clock = std::chrono::steady_clock;
    const int reps = argc > 1 ? std::atoi(argv[1]) : 20;
    gsloc::SynthSpec spec;
    spec.frames = 1;
    auto t0 = clock::now();
    const auto data = gsloc::synth_scene(spec);
    auto t1 = clock::now();
    std::printf("synth: %zu gaussians, %.1f ms\n", data.scene.size(),
                std::chrono::duration<double, std::milli>(t1 - t0).count());
    gsloc::LossWeights w;
    gsloc::RenderConfig rc;
    if (argc > 2) rc.tile_size = std::atoi(argv[2]);
    gsloc::Pose<double> pose = data.frames[0].gt;
    pose.translation += gsloc::Vec3<double>(0.03, -0.02, 0.01);
    pose.rotation = gsloc::quat_normalize(pose.rotation * gsloc::quat_from_axis_angle<double>({0.3, 1.0, 0.2}, 0.02));
    double fwd = 0, bwd = 0, proj = 0, rast = 0;
    auto ms = [](auto x, auto y) { return std::chrono::duration<double, std::milli>(y - x).count(); };
    for (int i = 0; i < reps; ++i) {
        auto a = clock::now();
        auto projected = gsloc::project_gaussians(data.scene, data.intrinsics, pose, rc);
        auto p1 = clock::now();
        auto out = gsloc::rasterize_depth(std::move(projected), data.intrinsics, rc);
        out.ctx.checksum = gsloc::render_checksum(data.scene.size(), data.intrinsics, pose);
        auto p2 = clock::now();
        proj += ms(a, p1);
        rast += ms(p1, p2);
        const auto loss = gsloc::total_loss(out, data.frames[0].depth, pose, w);
        auto b = clock::now();
        const auto g = gsloc::backward_pose(out, data.scene, data.intrinsics, pose, loss.cotangents);
        auto c = clock::now();
        fwd += std::chrono::duration<double, std::milli>(b - a).count();
        bwd += std::chrono::duration<double, std::milli>(c - b).count();
        if (!g.all_finite()) return 1;
    }
    std::printf("project %.2f ms, rasterize %.2f ms\n", proj / reps, rast / reps);
    std::printf("forward+loss %.2f ms, backward %.2f ms per iteration\n", fwd / reps, bwd / reps);
}
