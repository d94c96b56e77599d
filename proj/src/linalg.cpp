#include "fedvit/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace fedvit {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw Error("Rng::below: n must be >= 1");
    const std::uint64_t t = (0 - n) % n;  // 2^64 mod n
    std::uint64_t r = next_u64();
    while (r < t) r = next_u64();
    return (r - t) % n;
}

double Rng::gaussian() {
    while (true) {
        const double u = 2.0 * uniform01() - 1.0;
        const double v = 2.0 * uniform01() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

namespace {

double sorted_fold(double* first, double* last) {
    std::sort(first, last);
    double acc = *first;
    for (double* p = first + 1; p != last; ++p) acc += *p;
    return acc;
}

}  // namespace

double sum_sorted(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n == 0) return 0.0;
    if (n <= 2) {
        // addition of two doubles is commutative, no canonicalization needed
        return n == 1 ? xs[0] : xs[0] + xs[1];
    }
    std::array<double, 1024> buf;
    if (n <= buf.size()) {
        std::copy(xs.begin(), xs.end(), buf.begin());
        return sorted_fold(buf.data(), buf.data() + n);
    }
    std::vector<double> heap(xs.begin(), xs.end());
    return sorted_fold(heap.data(), heap.data() + n);
}

double dot_sorted_strided(const double* x, const double* y, std::size_t n, std::size_t y_stride) {
    if (n == 0) return 0.0;
    std::array<double, 1024> buf;
    std::vector<double> heap;
    double* prods = buf.data();
    if (n > buf.size()) {
        heap.resize(n);
        prods = heap.data();
    }
    for (std::size_t k = 0; k < n; ++k) prods[k] = x[k] * y[k * y_stride];
    if (n <= 2) return n == 1 ? prods[0] : prods[0] + prods[1];
    return sorted_fold(prods, prods + n);
}

Matrix mat_mul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("mat_mul: shape mismatch (" + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + ") * (" + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols) + ")");
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

Vector row_times_mat(std::span<const double> v, const Matrix& m) {
    if (v.size() != m.rows) {
        throw ShapeError("row_times_mat: vector length " + std::to_string(v.size()) +
                         " does not match matrix rows " + std::to_string(m.rows));
    }
    Vector out(m.cols, 0.0);
    for (std::size_t k = 0; k < m.rows; ++k) {
        const double vk = v[k];
        const double* mrow = m.data.data() + k * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) out[j] += vk * mrow[j];
    }
    return out;
}

namespace {

struct Lu {
    Matrix lu;
    std::vector<std::size_t> perm;
    double parity = 1.0;
    bool singular = false;
};

Lu lu_decompose(const Matrix& a) {
    const std::size_t n = a.rows;
    Lu r;
    r.lu = a;
    r.perm.resize(n);
    std::iota(r.perm.begin(), r.perm.end(), std::size_t{0});
    Matrix& m = r.lu;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::abs(m(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(m(i, k));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best == 0.0) {
            r.singular = true;
            return r;
        }
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
            std::swap(r.perm[k], r.perm[piv]);
            r.parity = -r.parity;
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            m(i, k) /= m(k, k);
            const double lik = m(i, k);
            if (lik != 0.0) {
                for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= lik * m(k, j);
            }
        }
    }
    return r;
}

// Solve A x = e_col given the decomposition, writing into column `col` of out.
void lu_solve_unit(const Lu& f, std::size_t col, Matrix& out) {
    const std::size_t n = f.lu.rows;
    std::vector<double> y(n, 0.0);
    // forward: L y = P e_col
    for (std::size_t i = 0; i < n; ++i) {
        double s = (f.perm[i] == col) ? 1.0 : 0.0;
        for (std::size_t j = 0; j < i; ++j) s -= f.lu(i, j) * y[j];
        y[i] = s;
    }
    // backward: U x = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= f.lu(ii, j) * y[j];
        y[ii] = s / f.lu(ii, ii);
    }
    for (std::size_t i = 0; i < n; ++i) out(i, col) = y[i];
}

Matrix inverse_from_lu(const Lu& f) {
    const std::size_t n = f.lu.rows;
    Matrix inv(n, n);
    for (std::size_t col = 0; col < n; ++col) lu_solve_unit(f, col, inv);
    return inv;
}

}  // namespace

double norm_inf(const Matrix& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

Matrix mat_inverse(const Matrix& a) {
    if (a.rows != a.cols) {
        throw ShapeError("mat_inverse: matrix is " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + ", expected square");
    }
    const Lu f = lu_decompose(a);
    if (f.singular) {
        throw SingularMatrixError("mat_inverse: matrix is singular (zero pivot)",
                                  std::numeric_limits<double>::infinity());
    }
    Matrix inv = inverse_from_lu(f);
    const double cond = norm_inf(a) * norm_inf(inv);
    if (!std::isfinite(cond) || cond >= kMaxConditionEstimate) {
        throw SingularMatrixError(
            "mat_inverse: matrix is ill-conditioned (condition estimate " +
                std::to_string(cond) + ")",
            cond);
    }
    return inv;
}

double determinant(const Matrix& a) {
    if (a.rows != a.cols) {
        throw ShapeError("determinant: matrix must be square");
    }
    const Lu f = lu_decompose(a);
    if (f.singular) return 0.0;
    double det = f.parity;
    for (std::size_t k = 0; k < a.rows; ++k) det *= f.lu(k, k);
    return det;
}

double condition_estimate(const Matrix& a) {
    if (a.rows != a.cols) return std::numeric_limits<double>::infinity();
    const Lu f = lu_decompose(a);
    if (f.singular) return std::numeric_limits<double>::infinity();
    const Matrix inv = inverse_from_lu(f);
    const double cond = norm_inf(a) * norm_inf(inv);
    return std::isfinite(cond) ? cond : std::numeric_limits<double>::infinity();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("max_abs_diff: shape mismatch");
    }
    return max_abs_diff(std::span<const double>(a.data), std::span<const double>(b.data));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
    double best = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
    return best;
}

bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix random_gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (double& x : m.data) x = scale * rng.gaussian();
    return m;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
    if (n == 0) throw ShapeError("random_orthogonal: n must be >= 1");
    Matrix a = random_gaussian(n, n, rng);

    // Householder QR; reflectors kept to rebuild Q explicitly.
    std::vector<std::vector<double>> vs(n);
    std::vector<double> betas(n, 0.0);
    std::vector<double> rdiag(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < n; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        std::vector<double>& v = vs[k];
        v.assign(n - k, 0.0);
        if (norm == 0.0) {
            v[0] = 1.0;
            betas[k] = 0.0;
            rdiag[k] = 0.0;
            continue;
        }
        const double alpha = (a(k, k) >= 0.0) ? -norm : norm;
        for (std::size_t i = k; i < n; ++i) v[i - k] = a(i, k);
        v[0] -= alpha;
        double vtv = 0.0;
        for (double x : v) vtv += x * x;
        betas[k] = (vtv == 0.0) ? 0.0 : 2.0 / vtv;
        rdiag[k] = alpha;
        // apply reflector to the trailing columns
        for (std::size_t j = k; j < n; ++j) {
            double w = 0.0;
            for (std::size_t i = k; i < n; ++i) w += v[i - k] * a(i, j);
            w *= betas[k];
            for (std::size_t i = k; i < n; ++i) a(i, j) -= w * v[i - k];
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to I
    Matrix q = Matrix::identity(n);
    for (std::size_t kk = n; kk-- > 0;) {
        const std::vector<double>& v = vs[kk];
        const double beta = betas[kk];
        if (beta == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            double w = 0.0;
            for (std::size_t i = kk; i < n; ++i) w += v[i - kk] * q(i, j);
            w *= beta;
            for (std::size_t i = kk; i < n; ++i) q(i, j) -= w * v[i - kk];
        }
    }

    // column sign correction from R's diagonal
    for (std::size_t j = 0; j < n; ++j) {
        if (rdiag[j] < 0.0) {
            for (std::size_t i = 0; i < n; ++i) q(i, j) = -q(i, j);
        }
    }
    return q;
}

std::vector<std::uint32_t> random_permutation(std::size_t n, Rng& rng) {
    if (n == 0) throw ShapeError("random_permutation: n must be >= 1");
    std::vector<std::uint32_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i + 1);
    rng.shuffle(p);
    return p;
}

}  // namespace fedvit
