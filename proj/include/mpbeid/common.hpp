#pragma once

// Shared utilities: errors, deterministic RNG streams, hashing, formatting,
// and a small index-parallel loop helper.

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mpbeid {

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// 17 significant digits: enough for exact double round-trips in text artifacts.
inline std::string fmt_g17(double x) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for config/grid fingerprints embedded in artifacts.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex64(std::uint64_t h) {
    char buf[20];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Deterministic RNG.  SplitMix64 core with Box-Muller normals; identical
// sequences on every platform, unlike std::normal_distribution.
// ---------------------------------------------------------------------------

struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double next_unit() {
        return (next() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }
};

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : core_(seed) {}

    double uniform() { return core_.next_unit(); }

    std::uint64_t uniform_index(std::uint64_t n) {
        check(n > 0, "uniform_index: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(core_.next()) * n) >> 64);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = core_.next_unit();
        double u2 = core_.next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    SplitMix64 core_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Independent child stream: replicate r of a master seed.  Mixing both words
// through SplitMix64 keeps streams decorrelated regardless of index spacing.
inline std::uint64_t derive_stream(std::uint64_t master, std::uint64_t index) {
    SplitMix64 mix(master ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    mix.next();
    return mix.next();
}

// ---------------------------------------------------------------------------
// parallel_for: chunked index loop.  Falls back to serial on one hardware
// thread.  The body must only write state owned by its own index.
// ---------------------------------------------------------------------------

template <typename F>
void parallel_for(std::size_t n, F&& body, std::size_t max_threads = 0) {
    std::size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (max_threads != 0 && max_threads < hw) hw = max_threads;
    if (hw <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::size_t nthreads = hw < n ? hw : n;
    std::vector<std::thread> workers;
    workers.reserve(nthreads);
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    for (std::size_t t = 0; t < nthreads; ++t) {
        workers.emplace_back([&, t]() {
            try {
                for (std::size_t i = t; i < n; i += nthreads) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mpbeid
