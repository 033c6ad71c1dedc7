#include "osr/linalg.hpp"

#include "osr/error.hpp"

#include <cmath>
#include <string>

namespace osr::linalg {

bool Matrix::finite() const {
    for (double v : a) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix sample_covariance(const Matrix& X, std::span<const double> mu) {
    const int n = X.rows;
    const int d = X.cols;
    if (n < 2) {
        throw numeric_error("sample_covariance: need at least 2 rows, got " + std::to_string(n));
    }
    if (static_cast<int>(mu.size()) != d) {
        throw contract_error("sample_covariance: mean length " + std::to_string(mu.size()) +
                             " does not match feature dim " + std::to_string(d));
    }
    if (!X.finite()) {
        throw numeric_error("sample_covariance: non-finite entry in input");
    }
    for (double v : mu) {
        if (!std::isfinite(v)) throw numeric_error("sample_covariance: non-finite entry in mean");
    }

    Matrix sigma(d, d, 0.0);
    std::vector<double> centered(static_cast<size_t>(d));
    for (int i = 0; i < n; ++i) {
        const auto xi = X.row(i);
        for (int j = 0; j < d; ++j) centered[j] = xi[j] - mu[j];
        // accumulate lower triangle of the outer product
        for (int r = 0; r < d; ++r) {
            const double cr = centered[r];
            for (int c = 0; c <= r; ++c) {
                sigma(r, c) += cr * centered[c];
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (int r = 0; r < d; ++r) {
        for (int c = 0; c <= r; ++c) {
            const double v = sigma(r, c) * scale;
            sigma(r, c) = v;
            sigma(c, r) = v; // exact symmetry by construction
        }
    }
    return sigma;
}

Matrix regularize(const Matrix& sigma, double lambda) {
    if (sigma.rows != sigma.cols) {
        throw contract_error("regularize: matrix is not square (" + std::to_string(sigma.rows) +
                             "x" + std::to_string(sigma.cols) + ")");
    }
    if (lambda < 0.0) {
        throw contract_error("regularize: lambda must be >= 0");
    }
    Matrix out = sigma;
    for (int i = 0; i < out.rows; ++i) out(i, i) += lambda;
    return out;
}

LowerTriangular cholesky(const Matrix& A) {
    if (A.rows != A.cols) {
        throw contract_error("cholesky: matrix is not square");
    }
    const int n = A.rows;
    LowerTriangular L(n);
    for (int j = 0; j < n; ++j) {
        double diag = A(j, j);
        for (int k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
        if (!(diag > 0.0)) {
            throw numeric_error("cholesky: non-positive pivot at index " + std::to_string(j) +
                                " (value " + std::to_string(diag) + "); matrix is not positive definite");
        }
        const double ljj = std::sqrt(diag);
        L(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = A(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / ljj;
        }
    }
    return L;
}

std::vector<double> solve_lower(const LowerTriangular& L, std::span<const double> b) {
    const int n = L.dim;
    if (static_cast<int>(b.size()) != n) {
        throw contract_error("solve_lower: rhs length " + std::to_string(b.size()) +
                             " does not match factor dim " + std::to_string(n));
    }
    std::vector<double> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= L(i, k) * y[k];
        y[i] = s / L(i, i);
    }
    return y;
}

double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

Matrix matmul(const Matrix& A, const Matrix& B) {
    if (A.cols != B.rows) throw contract_error("matmul: inner dimensions disagree");
    Matrix C(A.rows, B.cols, 0.0);
    for (int i = 0; i < A.rows; ++i) {
        for (int k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) {
                C(i, j) += aik * B(k, j);
            }
        }
    }
    return C;
}

Matrix matmul_nt(const Matrix& A, const Matrix& B) {
    if (A.cols != B.cols) throw contract_error("matmul_nt: inner dimensions disagree");
    Matrix C(A.rows, B.rows, 0.0);
    for (int i = 0; i < A.rows; ++i) {
        for (int j = 0; j < B.rows; ++j) {
            C(i, j) = dot(A.row(i), B.row(j));
        }
    }
    return C;
}

Matrix matmul_tn(const Matrix& A, const Matrix& B) {
    if (A.rows != B.rows) throw contract_error("matmul_tn: inner dimensions disagree");
    Matrix C(A.cols, B.cols, 0.0);
    for (int k = 0; k < A.rows; ++k) {
        for (int i = 0; i < A.cols; ++i) {
            const double aki = A(k, i);
            if (aki == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) {
                C(i, j) += aki * B(k, j);
            }
        }
    }
    return C;
}

} // namespace osr::linalg
