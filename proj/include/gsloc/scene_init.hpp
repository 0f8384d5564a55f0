#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "gsloc/loss.hpp"
#include "gsloc/renderer.hpp"

namespace gsloc {

template <typename S>
struct PointCloud {
    std::vector<Vec3<S>> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Exact k-nearest-neighbour queries over a fixed cloud (boost R-tree).
/// Results are ordered by distance, ties by point index.
template <typename S>
class KnnIndex {
public:
    explicit KnnIndex(const std::vector<Vec3<S>>& pts) : pts_(pts) {
        std::vector<Value> values;
        values.reserve(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) values.emplace_back(to_point(pts[i]), i);
        tree_ = Tree(values.begin(), values.end());
    }

    /// The k nearest stored points to `query` (including the query itself
    /// when it is one of the stored points), as (squared distance, index).
    std::vector<std::pair<double, std::size_t>> query(const Vec3<S>& q, std::size_t k) const {
        // Ask for a few extra so that ties at the k-th distance resolve by index.
        std::vector<Value> hits;
        const std::size_t want = std::min(pts_.size(), k + 8);
        tree_.query(boost::geometry::index::nearest(to_point(q), unsigned(want)), std::back_inserter(hits));
        std::vector<std::pair<double, std::size_t>> out;
        out.reserve(hits.size());
        for (const auto& h : hits) out.emplace_back((pts_[h.second] - q).template cast<double>().squaredNorm(), h.second);
        std::sort(out.begin(), out.end());
        if (out.size() > k) out.resize(k);
        return out;
    }

private:
    using BPoint = boost::geometry::model::point<double, 3, boost::geometry::cs::cartesian>;
    using Value = std::pair<BPoint, std::size_t>;
    using Tree = boost::geometry::index::rtree<Value, boost::geometry::index::quadratic<16>>;

    static BPoint to_point(const Vec3<S>& p) { return BPoint(double(p.x()), double(p.y()), double(p.z())); }

    const std::vector<Vec3<S>>& pts_;
    Tree tree_;
};

/// Lifts every valid pixel with depth in (near, far) into the world frame.
template <typename S>
PointCloud<S> backproject(const DepthImage<S>& depth, const CameraIntrinsics<S>& k, const Pose<S>& pose) {
    require_unit(pose.rotation, "backproject");
    const Pose<S> cam_to_world = pose_inverse(pose);
    const Mat3<S> r = cam_to_world.rotation_matrix();
    PointCloud<S> cloud;
    for (int v = 0; v < depth.height; ++v) {
        for (int u = 0; u < depth.width; ++u) {
            if (!depth.valid(u, v)) continue;
            const S z = depth.depth(u, v);
            if (!(z > k.near && z < k.far)) continue;
            const Vec3<S> xc((S(u) - k.cx) * z / k.fx, (S(v) - k.cy) * z / k.fy, z);
            cloud.points.push_back(r * xc + cam_to_world.translation);
        }
    }
    return cloud;
}

template <typename S>
struct FilterResult {
    PointCloud<S> cloud;
    bool too_small = false;  // pass-through, nothing filtered
};

/// Statistical outlier removal on mean k-NN distance.
template <typename S>
FilterResult<S> filter_outliers(const PointCloud<S>& cloud, std::size_t k = 20, double std_ratio = 2.0) {
    if (cloud.size() <= k) return {cloud, true};
    const KnnIndex<S> index(cloud.points);
    std::vector<double> mean_dist(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto nn = index.query(cloud.points[i], k + 1);
        double sum = 0;
        std::size_t n = 0;
        for (const auto& [d2, j] : nn) {
            if (j == i) continue;
            sum += std::sqrt(d2);
            if (++n == k) break;
        }
        mean_dist[i] = sum / double(n);
    }
    double mean = 0;
    for (double d : mean_dist) mean += d;
    mean /= double(mean_dist.size());
    double var = 0;
    for (double d : mean_dist) var += (d - mean) * (d - mean);
    const double sd = std::sqrt(var / double(mean_dist.size()));
    const double threshold = mean + std_ratio * sd;

    FilterResult<S> out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (mean_dist[i] <= threshold) out.cloud.points.push_back(cloud.points[i]);
    }
    return out;
}

template <typename S>
struct ScaleResult {
    std::vector<S> sigma;
    std::size_t clamped = 0;  // points whose neighbours coincided with them
};

/// Isotropic scale per point: RMS distance to its 3 nearest other points
/// (a 4-NN query that includes the point itself).
template <typename S>
ScaleResult<S> knn_scales(const PointCloud<S>& cloud, std::size_t k = 4, double min_scale = 1e-4) {
    if (cloud.size() <= k - 1 || k < 2) throw Error(ErrorKind::InvalidArgument, "cloud too small for kNN scales");
    const KnnIndex<S> index(cloud.points);
    ScaleResult<S> out;
    out.sigma.resize(cloud.size());
    const std::size_t neighbours = k - 1;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto nn = index.query(cloud.points[i], k + 1);
        double sum = 0;
        std::size_t n = 0;
        bool self_skipped = false;
        for (const auto& [d2, j] : nn) {
            if (j == i && !self_skipped) {
                self_skipped = true;
                continue;
            }
            sum += d2;
            if (++n == neighbours) break;
        }
        double s = std::sqrt(sum / double(neighbours));
        if (!(s >= min_scale)) {
            s = min_scale;
            ++out.clamped;
        }
        out.sigma[i] = S(s);
    }
    return out;
}

/// Snaps points to a voxel grid, keeping the centroid of each occupied voxel.
/// Output order follows the first point that fell in each voxel.
template <typename S>
PointCloud<S> voxel_downsample(const PointCloud<S>& cloud, double voxel) {
    if (!(voxel > 0)) return cloud;
    std::map<std::tuple<long long, long long, long long>, std::size_t> slot;
    std::vector<Vec3<double>> sum;
    std::vector<std::size_t> count;
    for (const auto& p : cloud.points) {
        const auto key = std::make_tuple((long long)std::floor(double(p.x()) / voxel),
                                         (long long)std::floor(double(p.y()) / voxel),
                                         (long long)std::floor(double(p.z()) / voxel));
        auto [it, inserted] = slot.try_emplace(key, sum.size());
        if (inserted) {
            sum.push_back(Vec3<double>::Zero());
            count.push_back(0);
        }
        sum[it->second] += p.template cast<double>();
        ++count[it->second];
    }
    PointCloud<S> out;
    out.points.reserve(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) out.points.push_back((sum[i] / double(count[i])).template cast<S>());
    return out;
}

template <typename S>
struct PcaResult {
    PointCloud<S> cloud;
    Pose<S> world_transform;  // original world -> normalized frame
};

/// Centers the cloud and rotates its principal axes onto x, y, z (descending
/// variance). Each axis is signed so its largest-magnitude entry is positive;
/// the last axis is flipped if needed to keep a proper rotation. No scaling.
template <typename S>
PcaResult<S> pca_normalize(const PointCloud<S>& cloud) {
    if (cloud.size() < 3) throw Error(ErrorKind::DegenerateCloud, "PCA needs at least 3 points");
    Vec3<double> mean = Vec3<double>::Zero();
    for (const auto& p : cloud.points) mean += p.template cast<double>();
    mean /= double(cloud.size());
    Mat3<double> cov = Mat3<double>::Zero();
    for (const auto& p : cloud.points) {
        const Vec3<double> d = p.template cast<double>() - mean;
        cov += d * d.transpose();
    }
    cov /= double(cloud.size());

    Eigen::SelfAdjointEigenSolver<Mat3<double>> es(cov);
    const Vec3<double> ev = es.eigenvalues();  // ascending
    if (!(ev[2] > 0) || ev[0] / ev[2] < 1e-12) {
        throw Error(ErrorKind::DegenerateCloud, "point cloud covariance is rank deficient");
    }
    Mat3<double> rot;
    for (int row = 0; row < 3; ++row) {
        Vec3<double> axis = es.eigenvectors().col(2 - row);
        Eigen::Index arg;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis[arg] < 0) axis = -axis;
        rot.row(row) = axis.transpose();
    }
    if (rot.determinant() < 0) rot.row(2) = -rot.row(2);

    PcaResult<S> out;
    out.world_transform.rotation = rotmat_to_quat<double>(rot).template cast<S>();
    // Use the quaternion's own matrix so points and poses agree exactly.
    const Mat3<double> r = quat_to_rotmat(out.world_transform.rotation.template cast<double>());
    out.world_transform.translation = (-(r * mean)).template cast<S>();
    out.cloud.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.cloud.points.push_back((r * (p.template cast<double>() - mean)).template cast<S>());
    return out;
}

struct SceneInitConfig {
    std::size_t outlier_k = 20;
    double outlier_std_ratio = 2.0;
    std::size_t knn_k = 4;
    double min_scale = 1e-4;
    double voxel_size = 0.0;  // meters; 0 disables downsampling
    bool pca = true;
    int frame_stride = 1;
};

template <typename S>
struct SceneBuildReport {
    std::size_t frames_used = 0;
    std::size_t raw_points = 0;
    std::size_t filtered_points = 0;
    std::size_t clamped_scales = 0;
    bool filter_skipped = false;
};

/// Gaussians from posed reference depth frames: one isotropic, opaque,
/// unrotated Gaussian per surviving point.
template <typename S>
GaussianScene<S> build_scene(const std::vector<std::pair<DepthImage<S>, Pose<S>>>& frames,
                             const CameraIntrinsics<S>& k, const SceneInitConfig& cfg,
                             SceneBuildReport<S>* report = nullptr) {
    if (frames.empty()) throw Error(ErrorKind::InvalidArgument, "build_scene needs at least one frame");
    const int stride = std::max(1, cfg.frame_stride);
    SceneBuildReport<S> rep;
    PointCloud<S> merged;
    for (std::size_t i = 0; i < frames.size(); i += std::size_t(stride)) {
        const PointCloud<S> c = backproject(frames[i].first, k, frames[i].second);
        merged.points.insert(merged.points.end(), c.points.begin(), c.points.end());
        ++rep.frames_used;
    }
    rep.raw_points = merged.size();
    if (cfg.voxel_size > 0) merged = voxel_downsample(merged, cfg.voxel_size);
    FilterResult<S> filtered = filter_outliers(merged, cfg.outlier_k, cfg.outlier_std_ratio);
    rep.filter_skipped = filtered.too_small;
    PointCloud<S> cloud = std::move(filtered.cloud);
    rep.filtered_points = cloud.size();
    if (cloud.size() < cfg.knn_k) throw Error(ErrorKind::DegenerateCloud, "too few points survive filtering");

    GaussianScene<S> scene;
    if (cfg.pca) {
        PcaResult<S> pca = pca_normalize(cloud);
        cloud = std::move(pca.cloud);
        scene.world_transform = pca.world_transform;
    }
    const ScaleResult<S> scales = knn_scales(cloud, cfg.knn_k, cfg.min_scale);
    rep.clamped_scales = scales.clamped;
    scene.gaussians.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Gaussian<S> g;
        g.mean = cloud.points[i];
        g.scale = Vec3<S>::Constant(scales.sigma[i]);
        g.orientation = Quaternion<S>::identity();
        g.opacity = S(1);
        scene.gaussians.push_back(g);
    }
    if (report) *report = rep;
    return scene;
}

/// World-to-camera pose in the original frame -> pose in the scene frame.
template <typename S>
Pose<S> to_scene_frame(const GaussianScene<S>& scene, const Pose<S>& world_pose) {
    return pose_compose(world_pose, pose_inverse(scene.world_transform));
}

/// Inverse of to_scene_frame.
template <typename S>
Pose<S> to_world_frame(const GaussianScene<S>& scene, const Pose<S>& scene_pose) {
    return pose_compose(scene_pose, scene.world_transform);
}

} // namespace gsloc
