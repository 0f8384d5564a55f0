#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "gsloc/geom.hpp"
#include "gsloc/loss.hpp"
#include "gsloc/png16.hpp"

namespace gsloc {

inline constexpr double kTumDepthFactor = 5000.0;
inline constexpr double kReplicaDepthFactor = 6553.5;

/// Timestamped pose; `pose` is world-to-camera in memory.
struct TrajectoryEntry {
    double timestamp = 0;
    Pose<double> pose;
};

struct SequenceFrame {
    double timestamp = 0;
    DepthImage<double> depth;
    std::optional<Pose<double>> gt;
};

struct Sequence {
    std::vector<SequenceFrame> frames;
    std::size_t dropped = 0;  // depth frames without a ground-truth match
};

namespace detail {

[[noreturn]] inline void parse_error(const std::string& path, std::size_t line, const std::string& msg) {
    std::ostringstream os;
    os << path << ":" << line << ": " << msg;
    throw Error(ErrorKind::Parse, os.str());
}

inline bool skip_line(const std::string& line) {
    const auto pos = line.find_first_not_of(" \t\r");
    return pos == std::string::npos || line[pos] == '#';
}

inline std::ifstream open_input(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
    return in;
}

} // namespace detail

/// Counts to meters; a count of 0 marks an invalid pixel.
inline DepthImage<double> depth_from_counts(const Image<std::uint16_t>& counts, double factor) {
    Image<double> d(counts.width, counts.height);
    for (std::size_t i = 0; i < counts.size(); ++i) d[i] = double(counts[i]) / factor;
    return DepthImage<double>::from_depth(std::move(d));
}

inline Image<std::uint16_t> depth_to_counts(const Image<double>& depth, double factor) {
    Image<std::uint16_t> c(depth.width, depth.height);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double v = depth[i] * factor;
        c[i] = std::isfinite(v) && v > 0 ? std::uint16_t(std::min(65535.0, std::round(v))) : std::uint16_t(0);
    }
    return c;
}

inline DepthImage<double> load_depth_png(const std::string& path, double factor) {
    return depth_from_counts(read_png16(path), factor);
}

/// Pose from a camera-to-world line "tx ty tz qx qy qz qw".
inline Pose<double> pose_from_tum_fields(const double f[7]) {
    Pose<double> cam_to_world;
    cam_to_world.rotation = quat_normalize(Quaternion<double>{f[6], f[3], f[4], f[5]});
    cam_to_world.translation = {f[0], f[1], f[2]};
    return pose_inverse(cam_to_world);
}

inline std::vector<TrajectoryEntry> read_trajectory_tum(const std::string& path) {
    std::ifstream in = detail::open_input(path);
    std::vector<TrajectoryEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::skip_line(line)) continue;
        std::istringstream ss(line);
        double ts, f[7];
        if (!(ss >> ts >> f[0] >> f[1] >> f[2] >> f[3] >> f[4] >> f[5] >> f[6])) {
            detail::parse_error(path, lineno, "expected 'timestamp tx ty tz qx qy qz qw'");
        }
        for (double v : f) {
            if (!std::isfinite(v)) detail::parse_error(path, lineno, "non-finite value");
        }
        if (!out.empty() && !(ts > out.back().timestamp)) {
            detail::parse_error(path, lineno, "timestamps must be strictly increasing");
        }
        try {
            out.push_back({ts, pose_from_tum_fields(f)});
        } catch (const Error& e) {
            detail::parse_error(path, lineno, e.what());
        }
    }
    return out;
}

inline std::string format_tum_line(const TrajectoryEntry& e) {
    const Pose<double> c2w = pose_inverse(e.pose);
    // values that round to zero are written without a sign
    auto f = [](double x) { return std::abs(x) < 5e-7 ? 0.0 : x; };
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << e.timestamp << ' ' << f(c2w.translation.x()) << ' '
       << f(c2w.translation.y()) << ' ' << f(c2w.translation.z()) << ' ' << f(c2w.rotation.x) << ' '
       << f(c2w.rotation.y) << ' ' << f(c2w.rotation.z) << ' ' << f(c2w.rotation.w);
    return os.str();
}

inline void write_trajectory_tum(const std::string& path, const std::vector<TrajectoryEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    for (const auto& e : entries) out << format_tum_line(e) << '\n';
}

/// Greedy one-to-one timestamp matching, closest pairs first (the usual TUM
/// association). Returns (index in a, index in b) ordered by index in a.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<double>& a,
                                                                  const std::vector<double>& b, double max_dt) {
    struct Candidate {
        double dt;
        std::size_t i, j;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto lo = std::lower_bound(b.begin(), b.end(), a[i] - max_dt);
        for (auto it = lo; it != b.end() && *it <= a[i] + max_dt; ++it) {
            cands.push_back({std::abs(a[i] - *it), i, std::size_t(it - b.begin())});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
        return std::tie(x.dt, x.i, x.j) < std::tie(y.dt, y.i, y.j);
    });
    std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& c : cands) {
        if (used_a[c.i] || used_b[c.j]) continue;
        used_a[c.i] = used_b[c.j] = 1;
        out.emplace_back(c.i, c.j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct TumFileEntry {
    double timestamp;
    std::string file;
};

/// Reads a TUM list file ("timestamp filename" per line).
inline std::vector<TumFileEntry> read_tum_list(const std::string& path) {
    std::ifstream in = detail::open_input(path);
    std::vector<TumFileEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::skip_line(line)) continue;
        std::istringstream ss(line);
        TumFileEntry e;
        if (!(ss >> e.timestamp >> e.file)) detail::parse_error(path, lineno, "expected 'timestamp filename'");
        out.push_back(e);
    }
    return out;
}

/// TUM RGB-D layout: depth.txt, groundtruth.txt, depth/*.png (counts / factor = meters).
inline Sequence load_tum_sequence(const std::string& dir, double assoc_max_dt = 0.02,
                                  double depth_factor = kTumDepthFactor) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw Error(ErrorKind::Io, "not a directory: " + dir);
    for (const char* f : {"depth.txt", "groundtruth.txt"}) {
        if (!fs::exists(root / f)) throw Error(ErrorKind::Io, std::string("missing ") + f + " in " + dir);
    }
    const auto depth_list = read_tum_list((root / "depth.txt").string());
    const auto gt = read_trajectory_tum((root / "groundtruth.txt").string());

    std::vector<double> ta, tb;
    for (const auto& d : depth_list) ta.push_back(d.timestamp);
    for (const auto& g : gt) tb.push_back(g.timestamp);
    if (!std::is_sorted(ta.begin(), ta.end())) throw Error(ErrorKind::Parse, "depth.txt timestamps not sorted");
    const auto pairs = associate(ta, tb, assoc_max_dt);

    Sequence seq;
    seq.dropped = depth_list.size() - pairs.size();
    for (const auto& [i, j] : pairs) {
        SequenceFrame f;
        f.timestamp = depth_list[i].timestamp;
        f.depth = load_depth_png((root / depth_list[i].file).string(), depth_factor);
        f.gt = gt[j].pose;
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

/// Parses one "4x4 row-major camera-to-world" line into a world-to-camera pose.
inline Pose<double> pose_from_matrix_line(const std::string& line, const std::string& path, std::size_t lineno) {
    std::istringstream ss(line);
    Mat4<double> m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(ss >> m(r, c))) detail::parse_error(path, lineno, "expected 16 matrix entries");
    if (!m.allFinite()) detail::parse_error(path, lineno, "non-finite matrix entry");
    const Mat3<double> r = m.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Mat3<double>::Identity()).norm() > 1e-3 || r.determinant() < 0) {
        detail::parse_error(path, lineno, "rotation block is not orthonormal");
    }
    Pose<double> c2w;
    c2w.rotation = rotmat_to_quat<double>(r);
    c2w.translation = m.topRightCorner<3, 1>();
    return pose_inverse(c2w);
}

inline std::vector<Pose<double>> read_matrix_trajectory(const std::string& path) {
    std::ifstream in = detail::open_input(path);
    std::vector<Pose<double>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::skip_line(line)) continue;
        out.push_back(pose_from_matrix_line(line, path, lineno));
    }
    return out;
}

inline void write_matrix_trajectory(const std::string& path, const std::vector<Pose<double>>& poses) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << std::setprecision(17);
    for (const auto& p : poses) {
        const Mat4<double> m = pose_inverse(p).matrix();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) out << m(r, c) << ((r == 3 && c == 3) ? '\n' : ' ');
    }
}

/// Replica (iMAP distribution): traj.txt with one camera-to-world matrix per
/// frame, depth images results/depth*.png (or depth*.png at the top level).
/// Timestamps are frame indices.
inline Sequence load_replica_sequence(const std::string& dir, double depth_factor = kReplicaDepthFactor) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw Error(ErrorKind::Io, "not a directory: " + dir);
    if (!fs::exists(root / "traj.txt")) throw Error(ErrorKind::Io, "missing traj.txt in " + dir);
    const fs::path img_dir = fs::is_directory(root / "results") ? root / "results" : root;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(img_dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("depth", 0) == 0 && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorKind::Io, "no depth*.png files in " + img_dir.string());
    const auto poses = read_matrix_trajectory((root / "traj.txt").string());

    Sequence seq;
    for (std::size_t i = 0; i < files.size(); ++i) {
        SequenceFrame f;
        f.timestamp = double(i);
        f.depth = load_depth_png(files[i].string(), depth_factor);
        if (i < poses.size()) {
            f.gt = poses[i];
        } else {
            ++seq.dropped;
            continue;
        }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

} // namespace gsloc
