#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsloc/dataio.hpp"

namespace gsloc {

struct FrameError {
    double timestamp = 0;
    double trans_err_cm = 0;
    double rot_err_deg = 0;
};

struct MetricReport {
    std::string name;
    double ate_rmse_cm = 0;
    double aae_rmse_deg = 0;
    std::vector<FrameError> per_frame;
    std::size_t n_frames = 0;
};

/// Reference averages reported for the method on the public benchmarks.
struct ReferenceNumbers {
    static constexpr double replica_ate_cm = 0.016;
    static constexpr double replica_aae_deg = 0.009;
    static constexpr double tum_ate_cm = 0.810;
    static constexpr double tum_aae_deg = 0.979;
    static constexpr double replica_room0_ate_cm = 0.015;
    static constexpr double replica_room0_aae_deg = 0.007;
};

namespace detail {

inline void require_matched(std::size_t a, std::size_t b) {
    if (a != b) throw Error(ErrorKind::InvalidArgument, "trajectories differ in length");
}

inline double rmse(const std::vector<double>& e) {
    if (e.empty()) return 0.0;
    double s = 0;
    for (double x : e) s += x * x;
    return std::sqrt(s / double(e.size()));
}

} // namespace detail

/// Camera-center distance per frame, in cm. No alignment is applied.
inline std::vector<double> translation_errors_cm(const std::vector<Pose<double>>& est,
                                                 const std::vector<Pose<double>>& gt) {
    detail::require_matched(est.size(), gt.size());
    std::vector<double> e(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) e[i] = (est[i].center() - gt[i].center()).norm() * 100.0;
    return e;
}

inline std::vector<double> rotation_errors_deg(const std::vector<Pose<double>>& est,
                                               const std::vector<Pose<double>>& gt) {
    detail::require_matched(est.size(), gt.size());
    std::vector<double> e(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
        e[i] = rotation_angle_between(est[i].rotation, gt[i].rotation) * 180.0 / std::numbers::pi;
    }
    return e;
}

inline double ate_rmse(const std::vector<Pose<double>>& est, const std::vector<Pose<double>>& gt) {
    return detail::rmse(translation_errors_cm(est, gt));
}

inline double aae_rmse(const std::vector<Pose<double>>& est, const std::vector<Pose<double>>& gt) {
    return detail::rmse(rotation_errors_deg(est, gt));
}

/// Least-squares rigid alignment (Horn/Umeyama without scale) of estimated
/// camera centers onto ground truth. Only for externally produced
/// trajectories; the default evaluation does not align.
inline std::vector<Pose<double>> align_rigid(const std::vector<Pose<double>>& est,
                                             const std::vector<Pose<double>>& gt) {
    detail::require_matched(est.size(), gt.size());
    if (est.size() < 3) return est;
    Vec3<double> me = Vec3<double>::Zero(), mg = Vec3<double>::Zero();
    for (std::size_t i = 0; i < est.size(); ++i) {
        me += est[i].center();
        mg += gt[i].center();
    }
    me /= double(est.size());
    mg /= double(est.size());
    Mat3<double> cov = Mat3<double>::Zero();
    for (std::size_t i = 0; i < est.size(); ++i) cov += (gt[i].center() - mg) * (est[i].center() - me).transpose();
    Eigen::JacobiSVD<Mat3<double>> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3<double> d = Mat3<double>::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
    const Mat3<double> r = svd.matrixU() * d * svd.matrixV().transpose();
    Pose<double> align;  // est world -> gt world
    align.rotation = rotmat_to_quat<double>(r);
    align.translation = mg - quat_to_rotmat(align.rotation) * me;
    std::vector<Pose<double>> out;
    out.reserve(est.size());
    for (const auto& p : est) out.push_back(pose_compose(p, pose_inverse(align)));
    return out;
}

inline MetricReport evaluate_trajectory(const std::string& name, const std::vector<TrajectoryEntry>& est,
                                        const std::vector<TrajectoryEntry>& gt) {
    detail::require_matched(est.size(), gt.size());
    std::vector<Pose<double>> pe, pg;
    for (const auto& e : est) pe.push_back(e.pose);
    for (const auto& g : gt) pg.push_back(g.pose);
    const auto te = translation_errors_cm(pe, pg);
    const auto re = rotation_errors_deg(pe, pg);
    MetricReport r;
    r.name = name;
    r.n_frames = est.size();
    for (std::size_t i = 0; i < est.size(); ++i) r.per_frame.push_back({est[i].timestamp, te[i], re[i]});
    r.ate_rmse_cm = detail::rmse(te);
    r.aae_rmse_deg = detail::rmse(re);
    return r;
}

/// Pairs estimated and ground-truth entries by timestamp.
inline std::pair<std::vector<TrajectoryEntry>, std::vector<TrajectoryEntry>> match_by_timestamp(
    const std::vector<TrajectoryEntry>& est, const std::vector<TrajectoryEntry>& gt, double max_dt = 0.02) {
    std::vector<double> ta, tb;
    for (const auto& e : est) ta.push_back(e.timestamp);
    for (const auto& g : gt) tb.push_back(g.timestamp);
    std::pair<std::vector<TrajectoryEntry>, std::vector<TrajectoryEntry>> out;
    for (const auto& [i, j] : associate(ta, tb, max_dt)) {
        out.first.push_back(est[i]);
        out.second.push_back(gt[j]);
    }
    return out;
}

inline nlohmann::json report_json(const MetricReport& r) {
    return {{"name", r.name}, {"n_frames", r.n_frames}, {"ate_rmse_cm", r.ate_rmse_cm}, {"aae_rmse_deg", r.aae_rmse_deg}};
}

/// Writes <out_base>.csv (per frame) and <out_base>.json (summary).
inline MetricReport report_sequence(const std::string& name, const std::vector<TrajectoryEntry>& est,
                                    const std::vector<TrajectoryEntry>& gt, const std::string& out_base) {
    MetricReport r = evaluate_trajectory(name, est, gt);
    std::ofstream csv(out_base + ".csv");
    if (!csv) throw Error(ErrorKind::Io, "cannot write " + out_base + ".csv");
    csv << "timestamp,trans_err_cm,rot_err_deg\n" << std::setprecision(10);
    for (const auto& f : r.per_frame) csv << f.timestamp << ',' << f.trans_err_cm << ',' << f.rot_err_deg << '\n';
    std::ofstream js(out_base + ".json");
    if (!js) throw Error(ErrorKind::Io, "cannot write " + out_base + ".json");
    js << report_json(r).dump(2) << '\n';
    return r;
}

/// Unweighted mean over sequences (the "Avg." column).
inline MetricReport average_reports(const std::vector<MetricReport>& reports) {
    MetricReport avg;
    avg.name = "Avg.";
    for (const auto& r : reports) {
        avg.ate_rmse_cm += r.ate_rmse_cm;
        avg.aae_rmse_deg += r.aae_rmse_deg;
        avg.n_frames += r.n_frames;
    }
    if (!reports.empty()) {
        avg.ate_rmse_cm /= double(reports.size());
        avg.aae_rmse_deg /= double(reports.size());
    }
    return avg;
}

/// Table in the per-sequence column layout: one header row, then the ATE and
/// AAE rows with an average column first.
inline std::string format_table(const std::vector<MetricReport>& reports) {
    const MetricReport avg = average_reports(reports);
    std::ostringstream os;
    os << std::left << std::setw(16) << "Metric" << std::right << std::setw(10) << "Avg.";
    for (const auto& r : reports) os << std::setw(12) << r.name;
    os << '\n' << std::fixed << std::setprecision(3);
    os << std::left << std::setw(16) << "ATE RMSE [cm]" << std::right << std::setw(10) << avg.ate_rmse_cm;
    for (const auto& r : reports) os << std::setw(12) << r.ate_rmse_cm;
    os << '\n' << std::left << std::setw(16) << "AAE RMSE [deg]" << std::right << std::setw(10) << avg.aae_rmse_deg;
    for (const auto& r : reports) os << std::setw(12) << r.aae_rmse_deg;
    os << '\n';
    return os.str();
}

} // namespace gsloc
