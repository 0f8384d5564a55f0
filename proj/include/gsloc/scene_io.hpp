#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsloc/renderer.hpp"

namespace gsloc {

// Scene file, little-endian:
//   char[8]  magic "GSLSCENE"
//   u32      version (1)
//   u64      count
//   count × { f64 mean[3], f64 scale[3], f64 quat[4] (w x y z), f64 opacity }
//   f64 world_transform quat[4] (w x y z), f64 world_transform translation[3]
inline constexpr char kSceneMagic[8] = {'G', 'S', 'L', 'S', 'C', 'E', 'N', 'E'};
inline constexpr std::uint32_t kSceneVersion = 1;

namespace detail {

template <typename T>
void put(std::vector<char>& buf, T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<char>& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw Error(ErrorKind::Parse, "scene file truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace detail

inline std::vector<char> encode_scene(const GaussianScene<double>& scene) {
    std::vector<char> buf(kSceneMagic, kSceneMagic + 8);
    detail::put(buf, kSceneVersion);
    detail::put(buf, std::uint64_t(scene.size()));
    for (const auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) detail::put(buf, g.mean[i]);
        for (int i = 0; i < 3; ++i) detail::put(buf, g.scale[i]);
        for (double q : {g.orientation.w, g.orientation.x, g.orientation.y, g.orientation.z}) detail::put(buf, q);
        detail::put(buf, g.opacity);
    }
    const auto& wt = scene.world_transform;
    for (double q : {wt.rotation.w, wt.rotation.x, wt.rotation.y, wt.rotation.z}) detail::put(buf, q);
    for (int i = 0; i < 3; ++i) detail::put(buf, wt.translation[i]);
    return buf;
}

inline GaussianScene<double> decode_scene(const std::vector<char>& buf) {
    if (buf.size() < 8 || !std::equal(kSceneMagic, kSceneMagic + 8, buf.begin())) {
        throw Error(ErrorKind::Parse, "not a scene file (bad magic)");
    }
    std::size_t pos = 8;
    const auto version = detail::take<std::uint32_t>(buf, pos);
    if (version != kSceneVersion) throw Error(ErrorKind::Parse, "unsupported scene version " + std::to_string(version));
    const auto count = detail::take<std::uint64_t>(buf, pos);
    const std::size_t record = 11 * sizeof(double);
    if (count > (buf.size() - pos) / record) throw Error(ErrorKind::Parse, "scene file truncated");
    GaussianScene<double> scene;
    scene.gaussians.resize(count);
    for (auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) g.mean[i] = detail::take<double>(buf, pos);
        for (int i = 0; i < 3; ++i) g.scale[i] = detail::take<double>(buf, pos);
        g.orientation.w = detail::take<double>(buf, pos);
        g.orientation.x = detail::take<double>(buf, pos);
        g.orientation.y = detail::take<double>(buf, pos);
        g.orientation.z = detail::take<double>(buf, pos);
        g.opacity = detail::take<double>(buf, pos);
    }
    auto& wt = scene.world_transform;
    wt.rotation.w = detail::take<double>(buf, pos);
    wt.rotation.x = detail::take<double>(buf, pos);
    wt.rotation.y = detail::take<double>(buf, pos);
    wt.rotation.z = detail::take<double>(buf, pos);
    for (int i = 0; i < 3; ++i) wt.translation[i] = detail::take<double>(buf, pos);
    if (pos != buf.size()) throw Error(ErrorKind::Parse, "trailing bytes after scene data");
    scene.validate();
    return scene;
}

inline void write_scene(const std::string& path, const GaussianScene<double>& scene) {
    const std::vector<char> buf = encode_scene(scene);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
}

inline GaussianScene<double> read_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open scene " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_scene(buf);
}

/// Count, bounds, and scale statistics of a scene.
inline nlohmann::json scene_summary(const GaussianScene<double>& scene) {
    nlohmann::json j;
    j["count"] = scene.size();
    if (scene.gaussians.empty()) return j;
    Vec3<double> lo = scene.gaussians.front().mean, hi = lo;
    std::vector<double> sig;
    sig.reserve(scene.size());
    for (const auto& g : scene.gaussians) {
        lo = lo.cwiseMin(g.mean);
        hi = hi.cwiseMax(g.mean);
        sig.push_back(g.scale.maxCoeff());
    }
    std::sort(sig.begin(), sig.end());
    double mean = 0;
    for (double s : sig) mean += s;
    mean /= double(sig.size());
    j["bounds_min"] = {lo.x(), lo.y(), lo.z()};
    j["bounds_max"] = {hi.x(), hi.y(), hi.z()};
    j["sigma"] = {{"min", sig.front()}, {"median", sig[sig.size() / 2]}, {"mean", mean}, {"max", sig.back()}};
    const auto& wt = scene.world_transform;
    j["world_transform"] = {{"q_wxyz", {wt.rotation.w, wt.rotation.x, wt.rotation.y, wt.rotation.z}},
                            {"t", {wt.translation.x(), wt.translation.y(), wt.translation.z()}}};
    return j;
}

} // namespace gsloc
