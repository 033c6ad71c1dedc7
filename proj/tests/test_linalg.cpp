#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "osr/error.hpp"
#include "osr/linalg.hpp"
#include "osr/rng.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace osr::linalg;
using osr::Error;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
    int r = 0;
    for (const auto& row : rows) {
        int c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

double frob(const Matrix& m) {
    double s = 0.0;
    for (double v : m.a) s += v * v;
    return std::sqrt(s);
}

} // namespace

TEST_CASE("sample_covariance: identical rows give the zero matrix") {
    Matrix X = from_rows({{1.5, -2.0, 3.0}, {1.5, -2.0, 3.0}});
    std::vector<double> mu = {1.5, -2.0, 3.0};
    Matrix s = sample_covariance(X, mu);
    for (double v : s.a) CHECK(v == 0.0);
}

TEST_CASE("sample_covariance: symmetric 4-point cross") {
    Matrix X = from_rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    std::vector<double> mu = {0.0, 0.0};
    Matrix s = sample_covariance(X, mu);
    CHECK(s(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s(0, 1) == 0.0);
    CHECK(s(1, 0) == 0.0);
}

TEST_CASE("sample_covariance matches brute-force outer-product oracle") {
    osr::rng::Rng rng(123);
    Matrix X(5, 3);
    for (double& v : X.a) v = rng.normal();
    std::vector<double> mu(3, 0.0);
    for (int i = 0; i < X.rows; ++i) {
        for (int j = 0; j < 3; ++j) mu[j] += X(i, j) / X.rows;
    }
    Matrix got = sample_covariance(X, mu);
    Matrix want = oracles::covariance_bruteforce(X, mu);
    for (size_t i = 0; i < got.a.size(); ++i) {
        CHECK(std::fabs(got.a[i] - want.a[i]) < 1e-12);
    }
}

TEST_CASE("sample_covariance output is exactly symmetric") {
    osr::rng::Rng rng(7);
    Matrix X(9, 6);
    for (double& v : X.a) v = rng.normal(0.0, 3.0);
    std::vector<double> mu(6, 0.1);
    Matrix s = sample_covariance(X, mu);
    for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 6; ++c) {
            CHECK(s(r, c) == s(c, r));
        }
    }
}

TEST_CASE("sample_covariance error paths") {
    Matrix one(1, 2);
    std::vector<double> mu = {0.0, 0.0};
    CHECK_THROWS_AS(sample_covariance(one, mu), Error);

    Matrix bad = from_rows({{1.0, 2.0}, {std::nan(""), 0.0}});
    CHECK_THROWS_AS(sample_covariance(bad, mu), Error);
}

TEST_CASE("regularize adds lambda to the diagonal only") {
    Matrix z(3, 3, 0.0);
    Matrix r = regularize(z, 1e-4);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(r(i, j) == (i == j ? 1e-4 : 0.0));
        }
    }

    osr::rng::Rng rng(5);
    Matrix s = oracles::random_spd(4, rng);
    Matrix same = regularize(s, 0.0);
    for (size_t i = 0; i < s.a.size(); ++i) CHECK(same.a[i] == s.a[i]);

    Matrix rect(2, 3);
    CHECK_THROWS_AS(regularize(rect, 0.1), Error);
}

TEST_CASE("cholesky: identity and a hand-checked 2x2") {
    LowerTriangular li = cholesky(Matrix::identity(4));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(li(i, j) == (i == j ? 1.0 : 0.0));
        }
    }

    Matrix A = from_rows({{4, 2}, {2, 3}});
    LowerTriangular L = cholesky(A);
    CHECK(L(0, 0) == doctest::Approx(2.0));
    CHECK(L(1, 0) == doctest::Approx(1.0));
    CHECK(L(1, 1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(L(0, 1) == 0.0);
}

TEST_CASE("cholesky rejects rank-deficient input and names the pivot") {
    // rank-1: [1 1; 1 1] has a zero eigenvalue
    Matrix A = from_rows({{1, 1}, {1, 1}});
    try {
        cholesky(A);
        FAIL("expected factorization error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("pivot at index 1") != std::string::npos);
    }
}

TEST_CASE("cholesky reconstruction over random SPD up to dim 64") {
    osr::rng::Rng rng(42);
    for (int dim : {2, 3, 5, 8, 16, 33, 64}) {
        Matrix A = oracles::random_spd(dim, rng);
        LowerTriangular L = cholesky(A);
        Matrix rec(dim, dim, 0.0);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) {
                double s = 0.0;
                for (int k = 0; k <= std::min(i, j); ++k) s += L(i, k) * L(j, k);
                rec(i, j) = s;
            }
        }
        Matrix diff = A;
        for (size_t i = 0; i < diff.a.size(); ++i) diff.a[i] -= rec.a[i];
        CHECK(frob(diff) / frob(A) < 1e-10);
        for (int i = 0; i < dim; ++i) CHECK(L(i, i) > 0.0);
    }
}

TEST_CASE("solve_lower: identity, hand case, residual oracle") {
    LowerTriangular I(3);
    for (int i = 0; i < 3; ++i) I(i, i) = 1.0;
    std::vector<double> b = {4.0, -1.0, 0.5};
    auto y = solve_lower(I, b);
    CHECK(y == b);

    LowerTriangular L(2);
    L(0, 0) = 2.0;
    L(1, 0) = 1.0;
    L(1, 1) = 1.0;
    auto y2 = solve_lower(L, std::vector<double>{2.0, 3.0});
    CHECK(y2[0] == doctest::Approx(1.0));
    CHECK(y2[1] == doctest::Approx(2.0));

    osr::rng::Rng rng(9);
    Matrix A = oracles::random_spd(6, rng);
    LowerTriangular Lr = cholesky(A);
    std::vector<double> rhs(6);
    for (double& v : rhs) v = rng.normal();
    auto sol = solve_lower(Lr, rhs);
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int k = 0; k <= i; ++k) s += Lr(i, k) * sol[k];
        CHECK(std::fabs(s - rhs[i]) < 1e-10);
    }

    CHECK_THROWS_AS(solve_lower(L, std::vector<double>{1.0}), Error);
}

TEST_CASE("triangular-solve quadratic form equals explicit-inverse oracle") {
    osr::rng::Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int dim = 2 + (trial % 12);
        Matrix sigma = oracles::random_spd(dim, rng);
        std::vector<double> f(dim), mu(dim), diff(dim);
        for (int i = 0; i < dim; ++i) {
            f[i] = rng.normal();
            mu[i] = rng.normal();
            diff[i] = f[i] - mu[i];
        }
        LowerTriangular L = cholesky(sigma);
        auto y = solve_lower(L, diff);
        const double via_chol = dot(y, y);
        const double via_inverse = std::pow(oracles::mahalanobis_explicit(f, mu, sigma), 2);
        CHECK(std::fabs(via_chol - via_inverse) / std::max(1e-12, std::fabs(via_inverse)) < 1e-8);
    }
}

TEST_CASE("matmul plumbing agrees with naive triple loop") {
    osr::rng::Rng rng(77);
    Matrix A(4, 6), B(6, 3);
    for (double& v : A.a) v = rng.normal();
    for (double& v : B.a) v = rng.normal();
    Matrix C = matmul(A, B);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 6; ++k) s += A(i, k) * B(k, j);
            CHECK(C(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    }

    Matrix Bt(3, 6);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 6; ++j) Bt(i, j) = B(j, i);
    }
    Matrix C2 = matmul_nt(A, Bt);
    for (size_t i = 0; i < C.a.size(); ++i) CHECK(C2.a[i] == doctest::Approx(C.a[i]).epsilon(1e-14));

    Matrix At(6, 4);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) At(i, j) = A(j, i);
    }
    Matrix C3 = matmul_tn(At, B);
    for (size_t i = 0; i < C.a.size(); ++i) CHECK(C3.a[i] == doctest::Approx(C.a[i]).epsilon(1e-14));
}
