#pragma once

#include <cmath>
#include <sstream>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gsloc/common.hpp"

namespace gsloc {

template <typename S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S> using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S> using Mat2 = Eigen::Matrix<S, 2, 2>;
template <typename S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S> using Mat4 = Eigen::Matrix<S, 4, 4>;

inline constexpr double kUnitTolerance = 1e-6;

/// Hamilton quaternion, scalar-first.
template <typename S>
struct Quaternion {
    S w = S(1), x = S(0), y = S(0), z = S(0);

    static Quaternion identity() { return {}; }

    S squared_norm() const { return w * w + x * x + y * y + z * z; }
    S norm() const { return std::sqrt(squared_norm()); }
    bool is_unit(double tol = kUnitTolerance) const { return std::abs(double(norm()) - 1.0) <= tol; }

    Vec4<S> coeffs() const { return {w, x, y, z}; }
    static Quaternion from_coeffs(const Vec4<S>& c) { return {c[0], c[1], c[2], c[3]}; }

    Quaternion operator-() const { return {-w, -x, -y, -z}; }

    Quaternion operator*(const Quaternion& b) const {
        return {w * b.w - x * b.x - y * b.y - z * b.z,
                w * b.x + x * b.w + y * b.z - z * b.y,
                w * b.y - x * b.z + y * b.w + z * b.x,
                w * b.z + x * b.y - y * b.x + z * b.w};
    }

    Quaternion conjugate() const { return {w, -x, -y, -z}; }

    template <typename T>
    Quaternion<T> cast() const { return {T(w), T(x), T(y), T(z)}; }

    bool operator==(const Quaternion&) const = default;
};

template <typename S>
Quaternion<S> quat_normalize(const Quaternion<S>& q) {
    const S n = q.norm();
    if (!(double(n) > 1e-12)) {
        throw Error(ErrorKind::DegenerateQuaternion, "quaternion norm is (near) zero");
    }
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

template <typename S>
void require_unit(const Quaternion<S>& q, const char* where) {
    if (!q.is_unit()) {
        std::ostringstream os;
        os << where << ": quaternion norm " << double(q.norm()) << " is not unit";
        throw Error(ErrorKind::InvalidArgument, os.str());
    }
}

/// Rotation matrix of a unit quaternion. Uses the homogeneous-free form, so the
/// result is exactly orthonormal only for unit input.
template <typename S>
Mat3<S> quat_to_rotmat(const Quaternion<S>& q) {
    require_unit(q, "quat_to_rotmat");
    const S w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3<S> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Shepperd's method; returns the representative with w >= 0.
template <typename S>
Quaternion<S> rotmat_to_quat(const Mat3<S>& r) {
    Eigen::Quaternion<S> e(r);
    Quaternion<S> q{e.w(), e.x(), e.y(), e.z()};
    if (q.w < 0) q = -q;
    return quat_normalize(q);
}

template <typename S>
Quaternion<S> quat_from_axis_angle(const Vec3<S>& axis, S angle) {
    const Vec3<S> a = axis.normalized();
    const S h = angle / 2;
    const S s = std::sin(h);
    return {std::cos(h), a.x() * s, a.y() * s, a.z() * s};
}

/// Rigid transform x_cam = R(rotation) * x_world + translation (world-to-camera).
template <typename S>
struct Pose {
    Quaternion<S> rotation;
    Vec3<S> translation = Vec3<S>::Zero();

    static Pose identity() { return {}; }

    Mat3<S> rotation_matrix() const { return quat_to_rotmat(rotation); }

    Vec3<S> apply(const Vec3<S>& p) const { return rotation_matrix() * p + translation; }

    Mat4<S> matrix() const {
        Mat4<S> m = Mat4<S>::Identity();
        m.template topLeftCorner<3, 3>() = rotation_matrix();
        m.template topRightCorner<3, 1>() = translation;
        return m;
    }

    static Pose from_matrix(const Mat4<S>& m) {
        return {rotmat_to_quat<S>(m.template topLeftCorner<3, 3>()), m.template topRightCorner<3, 1>()};
    }

    /// Camera center in the world frame, -R^T t.
    Vec3<S> center() const { return -(rotation_matrix().transpose() * translation); }

    template <typename T>
    Pose<T> cast() const { return {rotation.template cast<T>(), translation.template cast<T>()}; }

    bool operator==(const Pose& o) const { return rotation == o.rotation && translation == o.translation; }
};

/// Returns a∘b, i.e. the transform applying b first and then a.
template <typename S>
Pose<S> pose_compose(const Pose<S>& a, const Pose<S>& b) {
    require_unit(a.rotation, "pose_compose");
    require_unit(b.rotation, "pose_compose");
    Pose<S> out;
    out.rotation = quat_normalize(a.rotation * b.rotation);
    out.translation = a.rotation_matrix() * b.translation + a.translation;
    return out;
}

template <typename S>
Pose<S> pose_inverse(const Pose<S>& p) {
    require_unit(p.rotation, "pose_inverse");
    Pose<S> out;
    out.rotation = p.rotation.conjugate();
    out.translation = -(p.rotation_matrix().transpose() * p.translation);
    return out;
}

/// Angle of the rotation taking a to b, in radians; insensitive to quaternion sign.
template <typename S>
S rotation_angle_between(const Quaternion<S>& a, const Quaternion<S>& b) {
    const Quaternion<S> rel = a.conjugate() * b;
    const S vec = std::sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z);
    return 2 * std::atan2(vec, std::abs(rel.w));
}

template <typename S>
struct CameraIntrinsics {
    S fx = S(1), fy = S(1), cx = S(0), cy = S(0);
    int width = 1, height = 1;
    S near = S(0.01), far = S(100);

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw Error(ErrorKind::InvalidArgument, "focal lengths must be positive");
        if (!(near > 0 && near < far)) throw Error(ErrorKind::InvalidArgument, "need 0 < near < far");
        if (width < 1 || height < 1) throw Error(ErrorKind::InvalidArgument, "image size must be >= 1");
    }

    template <typename T>
    CameraIntrinsics<T> cast() const { return {T(fx), T(fy), T(cx), T(cy), width, height, T(near), T(far)}; }

    bool operator==(const CameraIntrinsics&) const = default;
};

template <typename S>
struct Projection {
    S u = 0, v = 0, z = 0;
    bool visible = false;
};

/// Pinhole projection; pixel centers sit at integer coordinates.
template <typename S>
Projection<S> project_point(const Vec3<S>& x_world, const Pose<S>& pose, const CameraIntrinsics<S>& k) {
    const Vec3<S> xc = pose.apply(x_world);
    Projection<S> out;
    out.z = xc.z();
    if (xc.z() <= k.near) return out;
    out.u = k.fx * xc.x() / xc.z() + k.cx;
    out.v = k.fy * xc.y() / xc.z() + k.cy;
    out.visible = true;
    return out;
}

} // namespace gsloc
