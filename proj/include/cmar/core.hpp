#pragma once

// Shared infrastructure: error types, deterministic RNG, logging, thread control.

#include <array>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cmar {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSpeedOfLight = 299792458.0; // m/s

// ---------------------------------------------------------------------------
// Errors. Each maps to a distinct CLI exit code (see cli::exit_code_for).

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};
// Malformed or truncated on-disk data (bad magic, version, short reads).
struct FormatError : IoError {
    explicit FormatError(const std::string& m) : IoError(m) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidDataError : std::runtime_error {
    explicit InvalidDataError(const std::string& m) : std::runtime_error(m) {}
};
// Violation of a numeric-domain precondition (e.g. negative density).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};
struct TrainingFault : std::runtime_error {
    explicit TrainingFault(const std::string& m) : std::runtime_error(m) {}
};
struct EmptySceneError : std::runtime_error {
    explicit EmptySceneError(const std::string& m) : std::runtime_error(m) {}
};
struct OutOfBandError : std::runtime_error {
    explicit OutOfBandError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// One global seed fans out to per-component streams via splitmix64 on
// (seed, tag). All draws go through hand-rolled mappings so results are
// bit-identical across platforms and standard libraries.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t tag) {
    return splitmix64(splitmix64(root) ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
}

// xoshiro256** by Blackman & Vigna, seeded through splitmix64.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t s = seed;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
    uint64_t uniform_int(uint64_t bound) {
        const uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller; caches the spare draw.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Logging. Level from CMAR_LOG (error|info|debug), default error.

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel& log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("CMAR_LOG");
        if (env == nullptr) return LogLevel::Error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        return LogLevel::Error;
    }();
    return level;
}

inline void log_msg(LogLevel lvl, const char* fmt, ...) {
    if (lvl > log_level()) return;
    const char* tag = lvl == LogLevel::Error ? "error" : (lvl == LogLevel::Info ? "info" : "debug");
    std::fprintf(stderr, "[cmar:%s] ", tag);
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

#define CMAR_LOG_INFO(...) ::cmar::log_msg(::cmar::LogLevel::Info, __VA_ARGS__)
#define CMAR_LOG_DEBUG(...) ::cmar::log_msg(::cmar::LogLevel::Debug, __VA_ARGS__)
#define CMAR_LOG_ERROR(...) ::cmar::log_msg(::cmar::LogLevel::Error, __VA_ARGS__)

// ---------------------------------------------------------------------------
// Thread control. Parallel loops are written so every output element is
// owned by exactly one iteration; results are bit-identical for any count.

inline void set_thread_count(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace cmar
