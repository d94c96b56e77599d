#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedvit/linalg.hpp"

using namespace fedvit;

namespace {

// Plain triple-loop reference, written independently of mat_mul.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.gaussian();
    return m;
}

}  // namespace

TEST_CASE("matrix basics") {
    Matrix m(2, 3);
    CHECK(m.data.size() == 6);
    m(1, 2) = 5.0;
    CHECK(m.row(1)[2] == 5.0);

    const Matrix id = Matrix::identity(3);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(0, 1) == 0.0);
    CHECK(id(2, 2) == 1.0);
}

TEST_CASE("mat_mul matches a naive oracle") {
    Rng rng(7);
    for (const auto& [r, k, c] : {std::tuple<int, int, int>{1, 1, 1}, {3, 4, 2}, {8, 8, 8},
                                  {5, 1, 7}}) {
        const Matrix a = random_matrix(r, k, rng);
        const Matrix b = random_matrix(k, c, rng);
        const Matrix got = mat_mul(a, b);
        const Matrix want = naive_matmul(a, b);
        CHECK(got.rows == want.rows);
        CHECK(got.cols == want.cols);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("mat_mul rejects mismatched shapes") {
    CHECK_THROWS_AS(mat_mul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("identity is neutral for mat_mul") {
    Rng rng(8);
    const Matrix a = random_matrix(4, 4, rng);
    CHECK(max_abs_diff(mat_mul(a, Matrix::identity(4)), a) == 0.0);
    CHECK(max_abs_diff(mat_mul(Matrix::identity(4), a), a) == 0.0);
}

TEST_CASE("transpose") {
    Rng rng(9);
    const Matrix a = random_matrix(3, 5, rng);
    const Matrix t = transpose(a);
    CHECK(t.rows == 5);
    CHECK(t.cols == 3);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) CHECK(t(j, i) == a(i, j));
    }
    CHECK(max_abs_diff(transpose(t), a) == 0.0);
}

TEST_CASE("row_times_mat matches naive product") {
    Rng rng(10);
    const Matrix m = random_matrix(4, 6, rng);
    Vector v(4);
    for (double& x : v) x = rng.gaussian();
    const Vector got = row_times_mat(v, m);
    REQUIRE(got.size() == 6);
    for (std::size_t j = 0; j < 6; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 4; ++i) acc += v[i] * m(i, j);
        CHECK(got[j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("sum_sorted is order-independent bit for bit") {
    Rng rng(11);
    std::vector<double> xs(257);
    for (double& v : xs) v = rng.gaussian() * std::pow(10.0, rng.gaussian());
    const double base = sum_sorted(xs);
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(xs);
        CHECK(sum_sorted(xs) == base);
    }

    // value sanity against extended-precision accumulation
    long double acc = 0.0L;
    for (double v : xs) acc += static_cast<long double>(v);
    CHECK(base == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
}

TEST_CASE("sum_sorted edge cases") {
    CHECK(sum_sorted({}) == 0.0);
    const double one[] = {3.5};
    CHECK(sum_sorted(one) == 3.5);
    const double zeros[] = {0.0, -0.0};
    const double zeros_r[] = {-0.0, 0.0};
    CHECK(sum_sorted(zeros) == sum_sorted(zeros_r));
}

TEST_CASE("dot_sorted_strided matches naive dot and ignores order") {
    Rng rng(12);
    const std::size_t n = 64;
    std::vector<double> x(n), ycol(n);
    Matrix y(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.gaussian();
        for (std::size_t j = 0; j < 3; ++j) y(i, j) = rng.gaussian();
        ycol[i] = y(i, 1);
    }
    const double got = dot_sorted_strided(x.data(), &y.data[1], n, 3);
    double naive = 0.0;
    for (std::size_t i = 0; i < n; ++i) naive += x[i] * ycol[i];
    CHECK(got == doctest::Approx(naive).epsilon(1e-12));

    // permuting both vectors the same way leaves the result identical
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<double> xp(n), yp(n);
    for (std::size_t i = 0; i < n; ++i) {
        xp[i] = x[perm[i]];
        yp[i] = ycol[perm[i]];
    }
    CHECK(dot_sorted_strided(xp.data(), yp.data(), n, 1) ==
          dot_sorted_strided(x.data(), ycol.data(), n, 1));
}

TEST_CASE("mat_inverse inverts well-conditioned matrices") {
    Rng rng(13);
    for (std::size_t n : {1u, 2u, 5u, 16u}) {
        // diagonally dominant, comfortably invertible
        Matrix a = random_matrix(n, n, rng);
        for (std::size_t i = 0; i < n; ++i) a(i, i) += 8.0;
        const Matrix inv = mat_inverse(a);
        CHECK(max_abs_diff(mat_mul(a, inv), Matrix::identity(n)) < 1e-10);
        CHECK(max_abs_diff(mat_mul(inv, a), Matrix::identity(n)) < 1e-10);
    }
}

TEST_CASE("mat_inverse on a permutation matrix is its exact transpose") {
    Rng rng(14);
    const std::size_t n = 12;
    const auto perm = random_permutation(n, rng);
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) p(i, perm[i] - 1) = 1.0;
    const Matrix inv = mat_inverse(p);
    CHECK(max_abs_diff(inv, transpose(p)) == 0.0);
}

TEST_CASE("mat_inverse throws on singular input with a condition estimate") {
    Matrix a(2, 2);
    a(0, 0) = 1.0;
    a(0, 1) = 2.0;
    a(1, 0) = 2.0;
    a(1, 1) = 4.0;  // rank 1
    CHECK_THROWS_AS(mat_inverse(a), SingularMatrixError);
    try {
        mat_inverse(a);
    } catch (const SingularMatrixError& e) {
        CHECK(e.cond_estimate >= kMaxConditionEstimate);
    }
}

TEST_CASE("mat_inverse rejects ill-conditioned matrices") {
    Matrix a = Matrix::identity(2);
    a(1, 1) = 1e-12;  // condition ~1e12, past the 1e8 gate
    CHECK_THROWS_AS(mat_inverse(a), SingularMatrixError);
}

TEST_CASE("determinant hand cases") {
    Matrix a(2, 2);
    a(0, 0) = 3.0;
    a(0, 1) = 1.0;
    a(1, 0) = 2.0;
    a(1, 1) = 5.0;
    CHECK(determinant(a) == doctest::Approx(13.0).epsilon(1e-14));
    CHECK(determinant(Matrix::identity(4)) == 1.0);

    // a transposition has determinant -1
    Matrix swap = Matrix::identity(3);
    std::swap(swap.data[0], swap.data[1]);
    std::swap(swap.data[3], swap.data[4]);
    CHECK(determinant(swap) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("condition_estimate") {
    CHECK(condition_estimate(Matrix::identity(5)) == doctest::Approx(1.0).epsilon(1e-12));
    Matrix bad(2, 2);
    bad(0, 0) = 1.0;
    bad(1, 1) = 0.0;
    CHECK(std::isinf(condition_estimate(bad)));
}

TEST_CASE("rng streams are deterministic and seed-dependent") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 100; ++i) differs = differs || (a2.next_u64() != c.next_u64());
    CHECK(differs);
}

TEST_CASE("rng uniform01 stays in [0,1)") {
    Rng rng(15);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("rng below is in range and roughly uniform") {
    Rng rng(16);
    const std::uint64_t n = 7;
    std::vector<int> counts(n, 0);
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) {
        const std::uint64_t v = rng.below(n);
        REQUIRE(v < n);
        ++counts[v];
    }
    for (int c : counts) {
        CHECK(c > draws / static_cast<int>(n) - 800);
        CHECK(c < draws / static_cast<int>(n) + 800);
    }
    CHECK(rng.below(1) == 0);
}

TEST_CASE("rng gaussian has roughly standard moments") {
    Rng rng(17);
    const int n = 40000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng shuffle is a permutation") {
    Rng rng(18);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    rng.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("random_orthogonal produces orthogonal matrices") {
    Rng rng(19);
    for (std::size_t n : {1u, 2u, 3u, 16u, 64u}) {
        const Matrix q = random_orthogonal(n, rng);
        CHECK(max_abs_diff(mat_mul(q, transpose(q)), Matrix::identity(n)) < 1e-12);
        CHECK(max_abs_diff(mat_mul(transpose(q), q), Matrix::identity(n)) < 1e-12);
        CHECK(std::abs(std::abs(determinant(q)) - 1.0) < 1e-10);
        // rows of an orthogonal matrix are unit vectors
        for (std::size_t i = 0; i < n; ++i) {
            double norm = 0.0;
            for (std::size_t j = 0; j < n; ++j) norm += q(i, j) * q(i, j);
            CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("random_orthogonal condition estimate stays near 1") {
    Rng rng(20);
    const Matrix q = random_orthogonal(32, rng);
    CHECK(condition_estimate(q) < 64.0);  // inf-norm bound for orthogonal: <= n
}

TEST_CASE("random_permutation is a bijection on 1..n") {
    Rng rng(21);
    for (std::size_t n : {1u, 2u, 9u, 100u}) {
        const auto p = random_permutation(n, rng);
        REQUIRE(p.size() == n);
        std::set<std::uint32_t> seen(p.begin(), p.end());
        CHECK(seen.size() == n);
        CHECK(*seen.begin() == 1);
        CHECK(*seen.rbegin() == n);
    }
}

TEST_CASE("random_gaussian uses the requested scale") {
    Rng rng(22);
    const Matrix m = random_gaussian(40, 40, rng, 0.02);
    double sumsq = 0.0;
    for (double v : m.data) sumsq += v * v;
    const double std_est = std::sqrt(sumsq / static_cast<double>(m.data.size()));
    CHECK(std_est == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("all_finite and max_abs_diff") {
    std::vector<double> ok{1.0, -2.0, 0.0};
    CHECK(all_finite(ok));
    std::vector<double> bad{1.0, std::nan("")};
    CHECK_FALSE(all_finite(bad));
    std::vector<double> a{1.0, 2.0}, b{1.5, 2.0};
    CHECK(max_abs_diff(std::span<const double>(a), std::span<const double>(b)) == 0.5);
}

TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("mix_seed separates nearby inputs") {
    CHECK(mix_seed(1, 0, 0) != mix_seed(1, 0, 1));
    CHECK(mix_seed(1, 0, 0) != mix_seed(1, 1, 0));
    CHECK(mix_seed(1, 0, 0) != mix_seed(2, 0, 0));
    CHECK(mix_seed(5, 3, 9) == mix_seed(5, 3, 9));
}
