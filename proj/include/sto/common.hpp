// Shared error taxonomy, deterministic RNG, and small utilities.
#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace sto {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorCategory { Config = 2, Io = 3, Data = 4, Numerical = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), category_(cat), kind_(std::move(kind)) {}
    ErrorCategory category() const { return category_; }
    const std::string& kind() const { return kind_; }

private:
    ErrorCategory category_;
    std::string kind_;
};

#define STO_DEFINE_ERROR(NAME, CATEGORY)                                    \
    class NAME : public Error {                                             \
    public:                                                                 \
        explicit NAME(const std::string& msg)                               \
            : Error(ErrorCategory::CATEGORY, #NAME, msg) {}                 \
    }

STO_DEFINE_ERROR(ConfigError, Config);
STO_DEFINE_ERROR(InvalidConfig, Config);
STO_DEFINE_ERROR(IoError, Io);
STO_DEFINE_ERROR(MalformedHeader, Data);
STO_DEFINE_ERROR(UnsupportedDatatype, Data);
STO_DEFINE_ERROR(TruncatedData, Data);
STO_DEFINE_ERROR(IndexOutOfBounds, Data);
STO_DEFINE_ERROR(ExtentMismatch, Data);
STO_DEFINE_ERROR(ShapeMismatch, Data);
STO_DEFINE_ERROR(SequenceTooShort, Data);
STO_DEFINE_ERROR(InvalidTarget, Data);
STO_DEFINE_ERROR(DegenerateSeries, Data);
STO_DEFINE_ERROR(EmptyRoi, Data);
STO_DEFINE_ERROR(LengthMismatch, Data);
STO_DEFINE_ERROR(EmptyOutput, Data);
STO_DEFINE_ERROR(ClassTooSmall, Data);
STO_DEFINE_ERROR(SingleClass, Data);
STO_DEFINE_ERROR(DivergedLoss, Numerical);
STO_DEFINE_ERROR(NonDeterministicFragment, Numerical);

#undef STO_DEFINE_ERROR

// splitmix64; used both as a standalone mixer and to expand seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a stage- or subject-specific seed from a master seed. Stable across
// platforms and documented in the README; all randomness in the project flows
// through this.
inline uint64_t derive_seed(uint64_t master, uint64_t stage_tag, uint64_t index = 0) {
    return mix64(mix64(master ^ mix64(stage_tag)) ^ index);
}

// Stage tags for derive_seed. Values are arbitrary but frozen.
namespace seed_tag {
inline constexpr uint64_t synth_subject = 0x53594e54;   // per-subject generation
inline constexpr uint64_t kfold = 0x4b464f4c;           // fold shuffling
inline constexpr uint64_t subsample = 0x53554253;       // proportion subsampling
inline constexpr uint64_t val_split = 0x56414c53;       // validation carve-out
inline constexpr uint64_t model_init = 0x4d494e49;      // parameter init
inline constexpr uint64_t train_loop = 0x54524e4c;      // batch order + dropout
inline constexpr uint64_t augment = 0x4155474d;         // augmentation draws
}  // namespace seed_tag

// xoshiro-free counter RNG: splitmix64 stream. Fully portable, no libstdc++
// distribution dependence.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // modulo bias is irrelevant at our scales but cheap to avoid
        uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller (deterministic, portable)
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over raw bytes; used by the leakage audit to fingerprint features.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ULL) {
    return v.empty() ? h : fnv1a(v.data(), v.size() * sizeof(double), h);
}

}  // namespace sto
