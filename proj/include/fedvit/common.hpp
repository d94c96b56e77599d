#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedvit {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// validation-type failures exit 2, I/O and runtime failures exit 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};

struct SingularMatrixError : Error {
    double cond_estimate;
    SingularMatrixError(const std::string& msg, double cond)
        : Error(msg), cond_estimate(cond) {}
};

struct ParseError : Error {
    using Error::Error;
};

struct KeyValidationError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// FNV-1a 64-bit, used for key fingerprints and the run manifest.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t v);

// splitmix64 step; the basis for deriving per-client per-round seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic seed derivation from (base, a, b). Used to give every
// client an independent stream per round without any shared RNG state.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = splitmix64(base ^ 0x5851F42D4C957F2DULL);
    x = splitmix64(x + 0x9E3779B97F4A7C15ULL * (a + 1));
    x = splitmix64(x + 0x9E3779B97F4A7C15ULL * (b + 1));
    return x;
}

}  // namespace fedvit
