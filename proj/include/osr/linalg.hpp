#pragma once

#include <span>
#include <vector>

namespace osr::linalg {

// ============================================================================
// Dense double-precision linear algebra: the numeric substrate for class
// statistics and Mahalanobis scoring. Row-major storage throughout. No
// general inverse is exposed; quadratic forms always go through the
// Cholesky factor and triangular solves.
// ============================================================================

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a; // row-major, rows*cols entries

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const { return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }

    bool finite() const;

    static Matrix identity(int n);
};

// Lower-triangular Cholesky factor with strictly positive diagonal.
// Stored as a full square with an explicitly zero upper triangle.
struct LowerTriangular {
    int dim = 0;
    std::vector<double> a;

    LowerTriangular() = default;
    explicit LowerTriangular(int n) : dim(n), a(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0) {}

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * dim + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * dim + c]; }
};

/**
 * Unbiased sample covariance of the rows of X about the given mean:
 *   Sigma = sum_i (x_i - mu)(x_i - mu)^T / (n - 1).
 * The result is made exactly symmetric (upper triangle mirrored from the
 * computed lower triangle). Requires n >= 2 rows and finite inputs.
 */
Matrix sample_covariance(const Matrix& X, std::span<const double> mu);

/// sigma + lambda * I. Requires a square matrix and lambda >= 0.
Matrix regularize(const Matrix& sigma, double lambda);

/**
 * Cholesky factorization A = L * L^T for symmetric positive definite A.
 * A non-positive pivot throws a numeric error naming the pivot index;
 * callers are expected to regularize first.
 */
LowerTriangular cholesky(const Matrix& A);

/// Forward substitution: returns y with L * y = b.
std::vector<double> solve_lower(const LowerTriangular& L, std::span<const double> b);

// --- small vector/matrix plumbing shared by the model code ---

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);

/// C = A * B
Matrix matmul(const Matrix& A, const Matrix& B);
/// C = A * B^T
Matrix matmul_nt(const Matrix& A, const Matrix& B);
/// C = A^T * B
Matrix matmul_tn(const Matrix& A, const Matrix& B);

} // namespace osr::linalg
