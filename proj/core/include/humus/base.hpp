#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace humus {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto distinct exit codes.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Bad tensor/grid shapes, divisibility violations.
struct ShapeError : Error {
    using Error::Error;
};
// Invalid experiment configuration.
struct ConfigError : Error {
    using Error::Error;
};
// Dataset / checkpoint file problems (missing, truncated, corrupt, wrong version).
struct DataError : Error {
    using Error::Error;
};
// NaN loss and friends.
struct NumericError : Error {
    using Error::Error;
};

namespace detail {
inline void sstr_cat(std::ostringstream&) {}
template <class A, class... Rest>
void sstr_cat(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    sstr_cat(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string sstr(const Args&... args) {
    std::ostringstream os;
    detail::sstr_cat(os, args...);
    return os.str();
}

// ---------------------------------------------------------------------------
// Shapes

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the project flows through Rng seeded
// from mix64 of (base seed, purpose tags) so that runs are reproducible and
// resumable without serialized generator state.

inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b) ^ mix64(c)); }

// splitmix64 stream; distributions are hand-rolled so results do not depend
// on the standard library implementation.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next_u64() % uint64_t(hi - lo + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal(double mean = 0.0, double sd = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sd * spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + sd * r * std::cos(a);
    }

    // normal truncated to +-2 sd, the usual transformer weight init
    double trunc_normal(double sd) {
        for (;;) {
            double z = normal(0.0, 1.0);
            if (std::fabs(z) <= 2.0) return z * sd;
        }
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// CRC32 (IEEE, reflected, poly 0xEDB88320) for dataset / checkpoint payloads.

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// Keep large graph buffers inside the malloc arena instead of mmap, so the
// per-example tapes reuse pages rather than fault fresh zeroed ones. Safe to
// call more than once; no-op on non-glibc platforms.
void tune_allocator_for_graphs();

}  // namespace humus
