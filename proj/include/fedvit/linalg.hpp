#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fedvit/common.hpp"

namespace fedvit {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. All heavier routines live as free
// functions below; the struct itself is a plain value type.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    static Matrix identity(std::size_t n);
};

// Deterministic, seedable generator: std::mt19937_64 engine (bit-exact per
// the C++ standard) with hand-rolled distributions so the stream does not
// depend on the standard library's unspecified distribution algorithms.
// The algorithm name is recorded in key files.
class Rng {
public:
    static constexpr const char* kAlgorithm = "mt19937_64+polar/v1";

    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    // 53-bit uniform in [0,1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // unbiased uniform integer in [0,n), n >= 1
    std::uint64_t below(std::uint64_t n);

    // standard normal via Marsaglia's polar method (cache-free)
    double gaussian();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

// Sum with a canonical (sorted) addend order. The result depends only on
// the multiset of addends, not their order, which is what makes
// token-permutation equivariance hold bit-exactly in the transformer.
double sum_sorted(std::span<const double> xs);

// Dot product with canonical summation; y is strided (column access).
double dot_sorted_strided(const double* x, const double* y, std::size_t n, std::size_t y_stride);

Matrix mat_mul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// row vector (1xL) times matrix (LxC); plain left-to-right accumulation
Vector row_times_mat(std::span<const double> v, const Matrix& m);

// Inverse via LU with partial pivoting. Throws SingularMatrixError when a
// pivot vanishes or the infinity-norm condition estimate reaches 1e8.
Matrix mat_inverse(const Matrix& a);

double determinant(const Matrix& a);

// norm_inf(a) * norm_inf(a^-1); +inf when singular. Never throws.
double condition_estimate(const Matrix& a);

constexpr double kMaxConditionEstimate = 1e8;

double norm_inf(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> xs);

Matrix random_gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);

// Orthogonal matrix from Householder QR of a Gaussian draw, with column
// signs corrected by the sign of R's diagonal.
Matrix random_orthogonal(std::size_t n, Rng& rng);

// Permutation of {1,...,n}, 1-based values.
std::vector<std::uint32_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace fedvit
