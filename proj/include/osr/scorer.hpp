#pragma once

#include "osr/linalg.hpp"

#include <span>
#include <utility>
#include <vector>

namespace osr::scorer {

using linalg::LowerTriangular;
using linalg::Matrix;

// ============================================================================
// Class-conditional statistics on refined features and distance-based
// open-set scoring. Mahalanobis distances always go through the cached
// Cholesky factor; no covariance is ever inverted explicitly.
// ============================================================================

struct ClassStats {
    int class_id = 0;
    int n_samples = 0;
    std::vector<double> mu;   // class center
    Matrix sigma_reg;         // covariance + lambda * I
    LowerTriangular chol;     // factor of sigma_reg
};

enum class Metric { Mahalanobis, Euclidean };

/**
 * Fits per-class mean, regularized covariance and Cholesky factor. Labels
 * must cover 0..n_classes-1 with at least two samples each. When
 * expect_unit_norm is set (the refined-feature pipeline), every row must lie
 * on the unit sphere; ablation variants that score raw features pass false.
 */
std::vector<ClassStats> fit_stats(const Matrix& features, std::span<const int> labels,
                                  int n_classes, double lambda, bool expect_unit_norm = true);

/// sqrt((f-mu)^T sigma_reg^{-1} (f-mu)) via forward substitution.
double mahalanobis(std::span<const double> f, const ClassStats& stats);

/// Plain ||f - mu||_2; shares the norm kernel with the Mahalanobis path so
/// that identity covariances give bit-identical scores.
double euclidean(std::span<const double> f, const ClassStats& stats);

/// Minimum distance over classes and its argmin; ties break to the lowest
/// class id. Returns (score, predicted class).
std::pair<double, int> rejection_score(std::span<const double> f,
                                       std::span<const ClassStats> all_stats, Metric metric);

/**
 * Linear-interpolation percentile of the scores at rank p/100 * (n-1)
 * (zero-indexed order statistics). percentile must lie in (0, 100).
 */
double calibrate_threshold(std::vector<double> known_scores, double percentile);

struct OpenSetDecision {
    double score = 0.0;
    int predicted = -1;
    bool is_unknown = false; // verdict: s >= tau rejects
    double tau = 0.0;
};

/// Known(yhat) iff s < tau; the boundary s == tau rejects.
OpenSetDecision decide(double s, int yhat, double tau);

} // namespace osr::scorer
