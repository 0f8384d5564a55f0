#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gsloc {

enum class ErrorKind {
    InvalidArgument,
    DegenerateQuaternion,
    Io,
    Parse,
    EmptyOverlap,
    InitOutOfMap,
    StaleContext,
    Numeric,
    DegenerateCloud,
    InvalidSpec,
    Internal,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::DegenerateQuaternion: return "degenerate-quaternion";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::EmptyOverlap: return "empty-overlap";
    case ErrorKind::InitOutOfMap: return "initialization-out-of-map";
    case ErrorKind::StaleContext: return "stale-context";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::DegenerateCloud: return "degenerate-cloud";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::Internal: return "internal-consistency";
    }
    return "unknown";
}

/// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Row-major H×W buffer. Pixel (u, v) is column u, row v.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {}

    T& operator()(int u, int v) { return data[std::size_t(v) * std::size_t(width) + std::size_t(u)]; }
    const T& operator()(int u, int v) const { return data[std::size_t(v) * std::size_t(width) + std::size_t(u)]; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }
    template <typename U>
    bool same_shape(const Image<U>& o) const { return width == o.width && height == o.height; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(width, height);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

    bool operator==(const Image&) const = default;
};

using Mask = Image<std::uint8_t>;

/// Worker count used by tile-parallel loops; 0 picks hardware concurrency.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int(hw);
}

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
/// callers writing disjoint outputs per index get results independent of `threads`.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<int>(resolve_threads(threads), int(std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = std::size_t(w); i < n; i += std::size_t(workers)) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// FNV-1a over raw bytes; used for context checksums and determinism digests.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace gsloc
