#include "osr/scorer.hpp"

#include "osr/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace osr::scorer {

std::vector<ClassStats> fit_stats(const Matrix& features, std::span<const int> labels,
                                  int n_classes, double lambda, bool expect_unit_norm) {
    if (features.rows != static_cast<int>(labels.size())) {
        throw contract_error("fit_stats: feature rows and label count differ");
    }
    if (n_classes < 1) throw contract_error("fit_stats: need at least one class");
    if (lambda < 0.0) throw contract_error("fit_stats: lambda must be >= 0");

    const int d = features.cols;
    std::vector<std::vector<int>> members(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= n_classes) {
            throw contract_error("fit_stats: label " + std::to_string(y) + " out of range [0, " +
                                 std::to_string(n_classes) + ")");
        }
        members[static_cast<size_t>(y)].push_back(static_cast<int>(i));
    }
    if (expect_unit_norm) {
        for (int i = 0; i < features.rows; ++i) {
            const double nrm = linalg::norm2(features.row(i));
            if (std::fabs(nrm - 1.0) > 1e-9) {
                throw contract_error("fit_stats: feature " + std::to_string(i) +
                                     " is not unit-norm (|f| = " + std::to_string(nrm) +
                                     "); refinement contract violated");
            }
        }
    }

    std::vector<ClassStats> out;
    out.reserve(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        const auto& idx = members[static_cast<size_t>(c)];
        if (idx.size() < 2) {
            throw contract_error("fit_stats: class " + std::to_string(c) + " has " +
                                 std::to_string(idx.size()) + " samples, need >= 2");
        }
        ClassStats st;
        st.class_id = c;
        st.n_samples = static_cast<int>(idx.size());
        st.mu.assign(static_cast<size_t>(d), 0.0);
        Matrix rows(static_cast<int>(idx.size()), d);
        for (size_t r = 0; r < idx.size(); ++r) {
            const auto f = features.row(idx[r]);
            for (int j = 0; j < d; ++j) {
                rows(static_cast<int>(r), j) = f[static_cast<size_t>(j)];
                st.mu[static_cast<size_t>(j)] += f[static_cast<size_t>(j)];
            }
        }
        for (double& m : st.mu) m /= static_cast<double>(idx.size());
        st.sigma_reg = linalg::regularize(linalg::sample_covariance(rows, st.mu), lambda);
        st.chol = linalg::cholesky(st.sigma_reg);
        out.push_back(std::move(st));
    }
    return out;
}

double mahalanobis(std::span<const double> f, const ClassStats& stats) {
    const int d = static_cast<int>(stats.mu.size());
    if (static_cast<int>(f.size()) != d) {
        throw contract_error("mahalanobis: feature dim " + std::to_string(f.size()) +
                             " does not match class dim " + std::to_string(d));
    }
    std::vector<double> diff(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) diff[static_cast<size_t>(j)] = f[static_cast<size_t>(j)] - stats.mu[static_cast<size_t>(j)];
    const std::vector<double> y = linalg::solve_lower(stats.chol, diff);
    return linalg::norm2(y);
}

double euclidean(std::span<const double> f, const ClassStats& stats) {
    const int d = static_cast<int>(stats.mu.size());
    if (static_cast<int>(f.size()) != d) {
        throw contract_error("euclidean: feature dim mismatch");
    }
    std::vector<double> diff(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) diff[static_cast<size_t>(j)] = f[static_cast<size_t>(j)] - stats.mu[static_cast<size_t>(j)];
    return linalg::norm2(diff);
}

std::pair<double, int> rejection_score(std::span<const double> f,
                                       std::span<const ClassStats> all_stats, Metric metric) {
    if (all_stats.empty()) {
        throw config_error("rejection_score: no class statistics configured");
    }
    double best = 0.0;
    int best_id = -1;
    for (const ClassStats& st : all_stats) {
        const double dist = metric == Metric::Mahalanobis ? mahalanobis(f, st) : euclidean(f, st);
        if (best_id < 0 || dist < best) { // strict <: ties keep the lowest class id
            best = dist;
            best_id = st.class_id;
        }
    }
    return {best, best_id};
}

double calibrate_threshold(std::vector<double> known_scores, double percentile) {
    if (known_scores.empty()) {
        throw contract_error("calibrate_threshold: empty score list");
    }
    if (!(percentile > 0.0) || !(percentile < 100.0)) {
        throw contract_error("calibrate_threshold: percentile must be in (0, 100)");
    }
    std::sort(known_scores.begin(), known_scores.end());
    const size_t n = known_scores.size();
    if (n == 1) return known_scores[0];
    const double rank = percentile / 100.0 * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= n) return known_scores[n - 1];
    return known_scores[lo] + frac * (known_scores[lo + 1] - known_scores[lo]);
}

OpenSetDecision decide(double s, int yhat, double tau) {
    if (std::isnan(tau)) throw contract_error("decide: threshold is NaN");
    OpenSetDecision d;
    d.score = s;
    d.predicted = yhat;
    d.tau = tau;
    d.is_unknown = s >= tau;
    return d;
}

} // namespace osr::scorer
