#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "osr/error.hpp"
#include "osr/scorer.hpp"
#include "osr/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>

using namespace osr::scorer;
using osr::Error;
using osr::linalg::Matrix;

namespace {

// unit vectors spread on the circle
Matrix circle_features(std::span<const double> angles) {
    Matrix f(static_cast<int>(angles.size()), 2);
    for (size_t i = 0; i < angles.size(); ++i) {
        f(static_cast<int>(i), 0) = std::cos(angles[i]);
        f(static_cast<int>(i), 1) = std::sin(angles[i]);
    }
    return f;
}

ClassStats stats_from(int id, std::vector<double> mu, Matrix sigma) {
    ClassStats st;
    st.class_id = id;
    st.n_samples = 2;
    st.mu = std::move(mu);
    st.sigma_reg = std::move(sigma);
    st.chol = osr::linalg::cholesky(st.sigma_reg);
    return st;
}

} // namespace

TEST_CASE("fit_stats: identical features give mu = feature and sigma = lambda*I") {
    Matrix f(3, 2);
    for (int i = 0; i < 3; ++i) {
        f(i, 0) = 0.6;
        f(i, 1) = 0.8;
    }
    std::vector<int> labels = {0, 0, 0};
    auto stats = fit_stats(f, labels, 1, 1e-4);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].mu[0] == doctest::Approx(0.6));
    CHECK(stats[0].mu[1] == doctest::Approx(0.8));
    CHECK(stats[0].sigma_reg(0, 0) == doctest::Approx(1e-4));
    CHECK(stats[0].sigma_reg(1, 1) == doctest::Approx(1e-4));
    CHECK(stats[0].sigma_reg(0, 1) == 0.0);
    CHECK(stats[0].n_samples == 3);
}

TEST_CASE("fit_stats: six classes produce six stats in id order") {
    const double pi = 3.14159265358979323846;
    std::vector<double> angles;
    std::vector<int> labels;
    for (int c = 0; c < 6; ++c) {
        for (int k = 0; k < 3; ++k) {
            angles.push_back(c * pi / 3.0 + 0.01 * k);
            labels.push_back(c);
        }
    }
    Matrix f = circle_features(angles);
    auto stats = fit_stats(f, labels, 6, 1e-4);
    REQUIRE(stats.size() == 6);
    for (int c = 0; c < 6; ++c) CHECK(stats[static_cast<size_t>(c)].class_id == c);
}

TEST_CASE("fit_stats matches the brute-force covariance oracle") {
    std::vector<double> angles = {0.1, 0.5, 0.9};
    Matrix f = circle_features(angles);
    std::vector<int> labels = {0, 0, 0};
    auto stats = fit_stats(f, labels, 1, 0.0);
    std::vector<double> mu = {0.0, 0.0};
    for (int i = 0; i < 3; ++i) {
        mu[0] += f(i, 0) / 3.0;
        mu[1] += f(i, 1) / 3.0;
    }
    Matrix want = oracles::covariance_bruteforce(f, mu);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
            CHECK(stats[0].sigma_reg(r, c) == doctest::Approx(want(r, c)).epsilon(1e-12));
        }
        CHECK(stats[0].mu[static_cast<size_t>(r)] == doctest::Approx(mu[static_cast<size_t>(r)]).epsilon(1e-12));
    }
}

TEST_CASE("fit_stats error paths: scarce class, non-unit feature") {
    Matrix f = circle_features(std::vector<double>{0.0, 0.3, 1.2});
    std::vector<int> one_sample = {0, 0, 1};
    CHECK_THROWS_AS(fit_stats(f, one_sample, 2, 1e-4), Error);

    Matrix raw(2, 2);
    raw(0, 0) = 2.0;
    raw(0, 1) = 0.0;
    raw(1, 0) = 0.0;
    raw(1, 1) = 2.0;
    std::vector<int> labels = {0, 0};
    CHECK_THROWS_AS(fit_stats(raw, labels, 1, 1e-4, /*expect_unit_norm=*/true), Error);
    CHECK_NOTHROW(fit_stats(raw, labels, 1, 1e-4, /*expect_unit_norm=*/false));
}

TEST_CASE("mahalanobis: zero at the center, anisotropic weighting") {
    Matrix sigma(2, 2, 0.0);
    sigma(0, 0) = 4.0;
    sigma(1, 1) = 1.0;
    ClassStats st = stats_from(0, {0.0, 0.0}, sigma);

    CHECK(mahalanobis(std::vector<double>{0.0, 0.0}, st) == 0.0);
    // the high-variance axis is downweighted: (2,0) -> 1, (0,2) -> 2
    CHECK(mahalanobis(std::vector<double>{2.0, 0.0}, st) == doctest::Approx(1.0));
    CHECK(mahalanobis(std::vector<double>{0.0, 2.0}, st) == doctest::Approx(2.0));
}

TEST_CASE("mahalanobis with identity covariance is exactly the euclidean path") {
    osr::rng::Rng r(31);
    ClassStats st = stats_from(0, {0.25, -0.5, 0.1}, Matrix::identity(3));
    for (int k = 0; k < 20; ++k) {
        std::vector<double> f = {r.normal(), r.normal(), r.normal()};
        CHECK(mahalanobis(f, st) == euclidean(f, st)); // bitwise
    }
}

TEST_CASE("Cholesky-path distance equals explicit-inverse oracle up to dim 64") {
    osr::rng::Rng r(41);
    for (int dim : {2, 5, 16, 64}) {
        Matrix sigma = oracles::random_spd(dim, r);
        std::vector<double> mu(static_cast<size_t>(dim)), f(static_cast<size_t>(dim));
        for (double& v : mu) v = r.normal();
        for (double& v : f) v = r.normal();
        ClassStats st = stats_from(0, mu, sigma);
        const double got = mahalanobis(f, st);
        const double want = oracles::mahalanobis_explicit(f, mu, sigma);
        CHECK(std::fabs(got - want) / want < 1e-8);
    }
}

TEST_CASE("rejection_score basics and brute-force agreement") {
    Matrix sigma = Matrix::identity(2);
    std::vector<ClassStats> stats;
    stats.push_back(stats_from(0, {1.0, 0.0}, sigma));
    stats.push_back(stats_from(1, {0.0, 1.0}, sigma));
    stats.push_back(stats_from(2, {-1.0, 0.0}, sigma));

    // single class
    auto [s1, y1] = rejection_score(std::vector<double>{0.5, 0.5},
                                    std::span<const ClassStats>(stats.data(), 1), Metric::Mahalanobis);
    CHECK(y1 == 0);
    CHECK(s1 == doctest::Approx(std::sqrt(0.25 + 0.25)));

    // exactly at class 2's center
    auto [s2, y2] = rejection_score(std::vector<double>{-1.0, 0.0}, stats, Metric::Mahalanobis);
    CHECK(s2 == 0.0);
    CHECK(y2 == 2);

    // brute force over random features
    osr::rng::Rng r(51);
    for (int k = 0; k < 10; ++k) {
        std::vector<double> f = {r.normal(), r.normal()};
        auto [s, y] = rejection_score(f, stats, Metric::Mahalanobis);
        double best = std::numeric_limits<double>::infinity();
        int best_id = -1;
        for (const auto& st : stats) {
            const double d = mahalanobis(f, st);
            if (d < best) {
                best = d;
                best_id = st.class_id;
            }
        }
        CHECK(s == best);
        CHECK(y == best_id);
    }
}

TEST_CASE("rejection_score: ties break to the lowest class id; empty stats error") {
    Matrix sigma = Matrix::identity(1);
    std::vector<ClassStats> stats;
    stats.push_back(stats_from(0, {1.0}, sigma));
    stats.push_back(stats_from(1, {-1.0}, sigma)); // equidistant from 0
    auto [s, y] = rejection_score(std::vector<double>{0.0}, stats, Metric::Euclidean);
    CHECK(s == 1.0);
    CHECK(y == 0);

    std::vector<ClassStats> empty;
    CHECK_THROWS_AS(rejection_score(std::vector<double>{0.0}, empty, Metric::Euclidean), Error);
}

TEST_CASE("uniform covariance scaling keeps yhat and scales scores by 1/sqrt(k)") {
    osr::rng::Rng r(61);
    const int d = 4;
    std::vector<ClassStats> stats, scaled;
    for (int c = 0; c < 3; ++c) {
        Matrix sigma = oracles::random_spd(d, r);
        std::vector<double> mu(static_cast<size_t>(d));
        for (double& v : mu) v = r.normal();
        stats.push_back(stats_from(c, mu, sigma));
        Matrix sigma4 = sigma;
        for (double& v : sigma4.a) v *= 4.0;
        scaled.push_back(stats_from(c, mu, sigma4));
    }
    for (int k = 0; k < 12; ++k) {
        std::vector<double> f(static_cast<size_t>(d));
        for (double& v : f) v = r.normal();
        auto [s, y] = rejection_score(f, stats, Metric::Mahalanobis);
        auto [s4, y4] = rejection_score(f, scaled, Metric::Mahalanobis);
        CHECK(y4 == y);
        CHECK(s4 == doctest::Approx(s / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("calibrate_threshold: interpolated percentile convention") {
    std::vector<double> scores;
    for (int i = 1; i <= 100; ++i) scores.push_back(static_cast<double>(i));
    CHECK(calibrate_threshold(scores, 95.0) == doctest::Approx(95.05));

    std::vector<double> equal(17, 3.5);
    CHECK(calibrate_threshold(equal, 95.0) == 3.5);

    CHECK_THROWS_AS(calibrate_threshold({}, 95.0), Error);
    CHECK_THROWS_AS(calibrate_threshold({1.0}, 0.0), Error);
    CHECK_THROWS_AS(calibrate_threshold({1.0}, 100.0), Error);
}

TEST_CASE("decide: boundary rejects, zero accepts, +inf disables rejection") {
    OpenSetDecision at_tau = decide(1.5, 2, 1.5);
    CHECK(at_tau.is_unknown);

    OpenSetDecision zero = decide(0.0, 1, 1.5);
    CHECK_FALSE(zero.is_unknown);
    CHECK(zero.predicted == 1);

    OpenSetDecision off = decide(1e12, 0, std::numeric_limits<double>::infinity());
    CHECK_FALSE(off.is_unknown);
}

TEST_CASE("decision monotonicity: raising tau never rejects a previously-known sample") {
    osr::rng::Rng r(71);
    for (int k = 0; k < 200; ++k) {
        const double s = std::fabs(r.normal()) * 3.0;
        const double tau1 = std::fabs(r.normal()) * 3.0;
        const double tau2 = tau1 + std::fabs(r.normal());
        if (!decide(s, 0, tau1).is_unknown) {
            CHECK_FALSE(decide(s, 0, tau2).is_unknown);
        }
    }
}
