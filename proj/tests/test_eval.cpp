#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <unistd.h>

#include <gtest/gtest.h>

#include "gsloc/eval.hpp"
#include "gsloc/gradcheck.hpp"

using namespace gsloc;
namespace fs = std::filesystem;

namespace {

std::vector<Pose<double>> random_trajectory(std::uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<Pose<double>> t;
    for (int i = 0; i < n; ++i) t.push_back({random_unit_quaternion(rng), {u(rng), u(rng), u(rng)}});
    return t;
}

/// Moves the camera center by `dc` (world frame), keeping the rotation.
Pose<double> shift_center(const Pose<double>& p, const Vec3<double>& dc) {
    Pose<double> q = p;
    q.translation = -(p.rotation_matrix() * (p.center() + dc));
    return q;
}

Vec3<double> random_axis(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Vec3<double>(n(rng), n(rng), n(rng)).normalized();
}

double deg(double rad) { return rad * 180 / std::numbers::pi; }
double rad(double d) { return d * std::numbers::pi / 180; }

} // namespace

TEST(Ate, ZeroForIdenticalTrajectories) {
    const auto gt = random_trajectory(1, 10);
    EXPECT_EQ(ate_rmse(gt, gt), 0.0);
    // relative-quaternion rounding only
    EXPECT_LT(aae_rmse(gt, gt), 1e-12);
}

TEST(Ate, ConstantOneCentimetreOffset) {
    const auto gt = random_trajectory(2, 12);
    std::vector<Pose<double>> est;
    for (const auto& p : gt) est.push_back(shift_center(p, {0.01, 0, 0}));
    EXPECT_NEAR(ate_rmse(est, gt), 1.0, 1e-9);
}

TEST(Ate, HalfTheFramesOffset) {
    const auto gt = random_trajectory(3, 10);
    std::vector<Pose<double>> est = gt;
    for (std::size_t i = 0; i < est.size(); i += 2) est[i] = shift_center(gt[i], {0, 0.01, 0});
    EXPECT_NEAR(ate_rmse(est, gt), std::sqrt(0.5), 1e-9);
}

TEST(Ate, LengthMismatchRejected) {
    const auto gt = random_trajectory(4, 3);
    EXPECT_THROW(ate_rmse({gt[0]}, gt), Error);
    EXPECT_THROW(aae_rmse({gt[0]}, gt), Error);
}

TEST(Aae, ConstantOneDegreeOffset) {
    const auto gt = random_trajectory(5, 8);
    std::mt19937_64 rng(55);
    std::vector<Pose<double>> est;
    for (const auto& p : gt) {
        Pose<double> q = p;
        q.rotation = quat_normalize(quat_from_axis_angle(random_axis(rng), rad(1.0)) * p.rotation);
        est.push_back(q);
    }
    EXPECT_NEAR(aae_rmse(est, gt), 1.0, 1e-9);
}

TEST(Aae, QuaternionSignDoesNotMatter) {
    const auto gt = random_trajectory(6, 5);
    std::vector<Pose<double>> est = gt;
    for (auto& p : est) p.rotation = Quaternion<double>{-p.rotation.w, -p.rotation.x, -p.rotation.y, -p.rotation.z};
    EXPECT_LT(aae_rmse(est, gt), 1e-12);
    EXPECT_EQ(ate_rmse(est, gt), 0.0);
}

TEST(Aae, SmallAnglesStayAccurate) {
    Pose<double> a, b;
    b.rotation = quat_from_axis_angle<double>({0, 0, 1}, 1e-9);
    EXPECT_NEAR(deg(rotation_angle_between(a.rotation, b.rotation)), deg(1e-9), 1e-20);
}

TEST(Metrics, InvariantToCommonRigidTransform) {
    const auto gt = random_trajectory(7, 15);
    const auto est = random_trajectory(8, 15);
    std::mt19937_64 rng(9);
    const Pose<double> g{random_unit_quaternion(rng), {0.4, -1.2, 2.0}};
    std::vector<Pose<double>> gt2, est2;
    // a world change x' = g x turns world-to-camera poses T into T g^-1
    for (const auto& p : gt) gt2.push_back(pose_compose(p, pose_inverse(g)));
    for (const auto& p : est) est2.push_back(pose_compose(p, pose_inverse(g)));
    EXPECT_NEAR(ate_rmse(est2, gt2), ate_rmse(est, gt), 1e-9);
    EXPECT_NEAR(aae_rmse(est2, gt2), aae_rmse(est, gt), 1e-9);
}

TEST(Metrics, RmseBoundsMeanAbsoluteError) {
    const auto gt = random_trajectory(10, 20);
    const auto est = random_trajectory(11, 20);
    for (const auto& e : {translation_errors_cm(est, gt), rotation_errors_deg(est, gt)}) {
        double mean = 0, sq = 0;
        for (double x : e) {
            mean += std::abs(x);
            sq += x * x;
        }
        EXPECT_GE(std::sqrt(sq / double(e.size())), mean / double(e.size()));
    }
}

TEST(AlignRigid, RecoversCommonTransform) {
    const auto gt = random_trajectory(12, 10);
    std::mt19937_64 rng(13);
    const Pose<double> g{random_unit_quaternion(rng), {1, 2, 3}};
    std::vector<Pose<double>> est;
    for (const auto& p : gt) est.push_back(pose_compose(p, pose_inverse(g)));
    EXPECT_GT(ate_rmse(est, gt), 1.0);
    const auto aligned = align_rigid(est, gt);
    EXPECT_LT(ate_rmse(aligned, gt), 1e-9);
    EXPECT_LT(aae_rmse(aligned, gt), 1e-6);
}

TEST(Report, SingleFrameEqualsFrameError) {
    const auto gt = random_trajectory(14, 1);
    const Pose<double> est = shift_center(gt[0], {0.003, 0.004, 0});
    const auto r = evaluate_trajectory("one", {{1.5, est}}, {{1.5, gt[0]}});
    ASSERT_EQ(r.per_frame.size(), 1u);
    EXPECT_NEAR(r.ate_rmse_cm, 0.5, 1e-9);
    EXPECT_EQ(r.ate_rmse_cm, r.per_frame[0].trans_err_cm);
    EXPECT_EQ(r.aae_rmse_deg, r.per_frame[0].rot_err_deg);
    EXPECT_EQ(r.n_frames, 1u);
}

TEST(Report, RmseRecomputableFromPerFrame) {
    const auto gt = random_trajectory(15, 9);
    const auto est = random_trajectory(16, 9);
    std::vector<TrajectoryEntry> e, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        e.push_back({double(i), est[i]});
        g.push_back({double(i), gt[i]});
    }
    const auto r = evaluate_trajectory("x", e, g);
    double st = 0, sr = 0;
    for (const auto& f : r.per_frame) {
        st += f.trans_err_cm * f.trans_err_cm;
        sr += f.rot_err_deg * f.rot_err_deg;
    }
    EXPECT_NEAR(r.ate_rmse_cm, std::sqrt(st / 9), 1e-9);
    EXPECT_NEAR(r.aae_rmse_deg, std::sqrt(sr / 9), 1e-9);
}

TEST(Report, WritesCsvAndJson) {
    const fs::path dir = fs::temp_directory_path() / ("gsloc_eval_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto gt = random_trajectory(17, 3);
    std::vector<TrajectoryEntry> g;
    for (std::size_t i = 0; i < gt.size(); ++i) g.push_back({double(i), gt[i]});
    report_sequence("seq", g, g, (dir / "r").string());
    std::ifstream csv(dir / "r.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "timestamp,trans_err_cm,rot_err_deg");
    std::ifstream js(dir / "r.json");
    const auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j.at("name"), "seq");
    EXPECT_EQ(j.at("n_frames"), 3);
    EXPECT_EQ(j.at("ate_rmse_cm"), 0.0);
    fs::remove_all(dir);
}

TEST(Report, MatchByTimestamp) {
    const auto gt = random_trajectory(18, 3);
    const auto [e, g] = match_by_timestamp({{1.001, gt[0]}, {3.0, gt[2]}}, {{1.0, gt[0]}, {2.0, gt[1]}, {3.01, gt[2]}});
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(g[0].timestamp, 1.0);
    EXPECT_EQ(g[1].timestamp, 3.01);
}

TEST(Report, AverageIsUnweightedOverSequences) {
    MetricReport a, b;
    a.name = "a";
    a.ate_rmse_cm = 1.0;
    a.aae_rmse_deg = 0.2;
    a.n_frames = 100;
    b.name = "b";
    b.ate_rmse_cm = 3.0;
    b.aae_rmse_deg = 0.4;
    b.n_frames = 1;
    const auto avg = average_reports({a, b});
    EXPECT_DOUBLE_EQ(avg.ate_rmse_cm, 2.0);
    EXPECT_DOUBLE_EQ(avg.aae_rmse_deg, 0.3);
}

TEST(Report, TableLayout) {
    MetricReport a;
    a.name = "room0";
    a.ate_rmse_cm = 0.015;
    a.aae_rmse_deg = 0.007;
    const std::string t = format_table({a});
    EXPECT_EQ(t,
              "Metric                Avg.       room0\n"
              "ATE RMSE [cm]        0.015       0.015\n"
              "AAE RMSE [deg]       0.007       0.007\n");
}

TEST(ReferenceNumbers, PublishedAverages) {
    EXPECT_EQ(ReferenceNumbers::replica_ate_cm, 0.016);
    EXPECT_EQ(ReferenceNumbers::replica_aae_deg, 0.009);
    EXPECT_EQ(ReferenceNumbers::tum_ate_cm, 0.810);
    EXPECT_EQ(ReferenceNumbers::tum_aae_deg, 0.979);
    EXPECT_EQ(ReferenceNumbers::replica_room0_ate_cm, 0.015);
    EXPECT_EQ(ReferenceNumbers::replica_room0_aae_deg, 0.007);
}
