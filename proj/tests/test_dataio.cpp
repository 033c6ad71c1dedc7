#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "osr/dataio.hpp"
#include "osr/error.hpp"
#include "osr/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace osr::dataio;
using osr::Error;
using osr::linalg::Matrix;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<double> pooled_features(const SampleMap& s) {
    std::vector<double> f(static_cast<size_t>(s.grid.cols), 0.0);
    for (int t = 0; t < s.grid.rows; ++t) {
        for (int j = 0; j < s.grid.cols; ++j) f[static_cast<size_t>(j)] += s.grid(t, j);
    }
    for (double& v : f) v /= s.grid.rows;
    return f;
}

// power iteration on M and on its explicit inverse; test-only
double condition_number(const Matrix& M) {
    osr::rng::Rng r(99);
    auto power = [&](const Matrix& A) {
        std::vector<double> v(static_cast<size_t>(A.rows));
        for (double& x : v) x = r.normal();
        double lam = 0.0;
        for (int it = 0; it < 2000; ++it) {
            std::vector<double> w(v.size(), 0.0);
            for (int i = 0; i < A.rows; ++i) {
                for (int j = 0; j < A.cols; ++j) w[static_cast<size_t>(i)] += A(i, j) * v[static_cast<size_t>(j)];
            }
            const double n = osr::linalg::norm2(w);
            for (size_t i = 0; i < w.size(); ++i) v[i] = w[i] / n;
            lam = n;
        }
        return lam;
    };
    const double lmax = power(M);
    const double linv = power(oracles::invert(M));
    return lmax * linv;
}

} // namespace

TEST_CASE("downsample_mean basics") {
    RawSequence raw;
    raw.rate_hz = 100.0;
    raw.channels = {{1.0, 2.0, 3.0, 4.0}};
    RawSequence out = downsample_mean(raw, 2);
    CHECK(out.channels[0] == std::vector<double>{1.5, 3.5});
    CHECK(out.rate_hz == 50.0);

    RawSequence c;
    c.rate_hz = 10.0;
    c.channels = {std::vector<double>(30, 7.5)};
    RawSequence cd = downsample_mean(c, 7);
    CHECK(cd.channels[0].size() == 4);
    for (double v : cd.channels[0]) CHECK(v == doctest::Approx(7.5));
}

TEST_CASE("downsample_mean: 26000 points at window 100 -> 260 steps") {
    RawSequence raw;
    raw.rate_hz = 100.0;
    raw.channels = {std::vector<double>(26000)};
    osr::rng::Rng r(3);
    for (double& v : raw.channels[0]) v = r.normal();
    RawSequence out = downsample_mean(raw, 100);
    CHECK(out.channels[0].size() == 260);
    CHECK(out.rate_hz == doctest::Approx(1.0));
}

TEST_CASE("downsample_mean commutes with constant shifts") {
    osr::rng::Rng r(17);
    RawSequence raw;
    raw.rate_hz = 1.0;
    raw.channels = {std::vector<double>(101)};
    for (double& v : raw.channels[0]) v = r.normal();
    const double c = 3.25;
    RawSequence shifted = raw;
    for (double& v : shifted.channels[0]) v += c;
    RawSequence a = downsample_mean(raw, 4);
    RawSequence b = downsample_mean(shifted, 4);
    for (size_t i = 0; i < a.channels[0].size(); ++i) {
        CHECK(b.channels[0][i] == doctest::Approx(a.channels[0][i] + c).epsilon(1e-12));
    }
}

TEST_CASE("downsample_mean error paths") {
    RawSequence empty;
    CHECK_THROWS_AS(downsample_mean(empty, 2), Error);
    RawSequence short_seq;
    short_seq.channels = {{1.0, 2.0}};
    CHECK_THROWS_AS(downsample_mean(short_seq, 5), Error);
}

namespace {

Dataset tiny_dataset() {
    Dataset ds;
    ds.t_steps = 2;
    ds.channels = 2;
    ds.class_names = {"a"};
    ds.positions = {"P1"};
    // channel 0: values {0,0,2,2}; channel 1: constant 5
    SampleMap s0;
    s0.label = 0;
    s0.grid = Matrix(2, 2);
    s0.grid(0, 0) = 0.0;
    s0.grid(1, 0) = 0.0;
    s0.grid(0, 1) = 5.0;
    s0.grid(1, 1) = 5.0;
    SampleMap s1 = s0;
    s1.grid(0, 0) = 2.0;
    s1.grid(1, 0) = 2.0;
    ds.samples = {s0, s1};
    return ds;
}

} // namespace

TEST_CASE("zscore: hand case with population std and dead-channel clamp") {
    Dataset ds = tiny_dataset();
    std::vector<int> fit = {0, 1};
    auto [normed, stats] = zscore_channels(ds, fit);

    // channel 0 pooled values {0,0,2,2}: mean 1, population std 1 -> {-1,+1}
    CHECK(stats.mean[0] == doctest::Approx(1.0));
    CHECK(stats.stddev[0] == doctest::Approx(1.0));
    CHECK(normed.samples[0].grid(0, 0) == doctest::Approx(-1.0));
    CHECK(normed.samples[1].grid(0, 0) == doctest::Approx(1.0));

    // channel 1 constant 5 -> centered to zero, std clamped, channel flagged
    CHECK(stats.clamped_channels == std::vector<int>{1});
    CHECK(normed.samples[0].grid(0, 1) == 0.0);
}

TEST_CASE("zscore: stats from fit split only; reapplication is bit-exact") {
    Dataset ds = tiny_dataset();
    std::vector<int> fit = {0}; // fit on first sample only
    auto [normed, stats] = zscore_channels(ds, fit);
    CHECK(stats.mean[0] == 0.0); // sample 0 channel 0 is all zeros

    Dataset again = apply_zscore(ds, stats);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        for (size_t k = 0; k < ds.samples[i].grid.a.size(); ++k) {
            CHECK(again.samples[i].grid.a[k] == normed.samples[i].grid.a[k]);
        }
    }
}

TEST_CASE("zscore: normalized fit split has mean 0 / std 1 per channel") {
    SynthConfig cfg;
    cfg.n_classes = 3;
    cfg.samples_per_class_per_position = 10;
    cfg.n_positions = 1;
    cfg.position_decay = {1.0};
    cfg.t_steps = 16;
    cfg.channels = 4;
    cfg.seed = 5;
    Dataset ds = generate_synthetic(cfg);
    std::vector<int> fit(ds.samples.size());
    for (size_t i = 0; i < fit.size(); ++i) fit[i] = static_cast<int>(i);
    auto [normed, stats] = zscore_channels(ds, fit);
    (void)stats;

    const size_t n = fit.size() * static_cast<size_t>(cfg.t_steps);
    for (int j = 0; j < cfg.channels; ++j) {
        double sum = 0.0, sumsq = 0.0;
        for (const auto& s : normed.samples) {
            for (int t = 0; t < cfg.t_steps; ++t) {
                sum += s.grid(t, j);
                sumsq += s.grid(t, j) * s.grid(t, j);
            }
        }
        const double mean = sum / static_cast<double>(n);
        const double var = sumsq / static_cast<double>(n) - mean * mean;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-6);
    }
}

TEST_CASE("generate_synthetic is deterministic in the seed") {
    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class_per_position = 3;
    cfg.n_positions = 2;
    cfg.position_decay = {1.0, 0.5};
    cfg.t_steps = 8;
    cfg.channels = 3;
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].grid.a == b.samples[i].grid.a);
    }
    cfg.seed = 42;
    Dataset c = generate_synthetic(cfg);
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size() && !any_diff; ++i) {
        any_diff = a.samples[i].grid.a != c.samples[i].grid.a;
    }
    CHECK(any_diff);
}

TEST_CASE("generate_synthetic: decay (1, 0.5) halves mean map magnitude") {
    SynthConfig cfg;
    cfg.n_classes = 4;
    cfg.samples_per_class_per_position = 40;
    cfg.n_positions = 2;
    cfg.position_decay = {1.0, 0.5};
    cfg.noise_std = 0.01;
    cfg.template_jitter = 0.1; // keep per-sample intensity spread small
    cfg.seed = 11;
    Dataset ds = generate_synthetic(cfg);

    double mag[2] = {0.0, 0.0};
    int cnt[2] = {0, 0};
    for (const auto& s : ds.samples) {
        double n2 = 0.0;
        for (double v : s.grid.a) n2 += v * v;
        mag[s.position] += std::sqrt(n2);
        cnt[s.position] += 1;
    }
    const double ratio = (mag[1] / cnt[1]) / (mag[0] / cnt[0]);
    CHECK(ratio == doctest::Approx(0.5).epsilon(0.10));
}

TEST_CASE("generate_synthetic: class covariance condition number tracks target") {
    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class_per_position = 200;
    cfg.n_positions = 1;
    cfg.position_decay = {1.0};
    cfg.t_steps = 64;
    cfg.channels = 8;
    cfg.feature_anisotropy = 100.0;
    cfg.noise_std = 0.005;
    cfg.template_jitter = 0.0; // frozen template: the pooled features see the
                               // class-amplitude Gaussian directly
    cfg.radial_spread = 0.25;
    cfg.seed = 21;
    Dataset ds = generate_synthetic(cfg);

    for (int cls = 0; cls < 2; ++cls) {
        Matrix F(cfg.samples_per_class_per_position, cfg.channels);
        int row = 0;
        for (const auto& s : ds.samples) {
            if (s.label != cls) continue;
            auto f = pooled_features(s);
            for (int j = 0; j < cfg.channels; ++j) F(row, j) = f[static_cast<size_t>(j)];
            ++row;
        }
        REQUIRE(row == cfg.samples_per_class_per_position);
        std::vector<double> mu(static_cast<size_t>(cfg.channels), 0.0);
        for (int i = 0; i < F.rows; ++i) {
            for (int j = 0; j < F.cols; ++j) mu[static_cast<size_t>(j)] += F(i, j) / F.rows;
        }
        Matrix cov = osr::linalg::sample_covariance(F, mu);
        const double cond = condition_number(cov);
        CHECK(cond > 100.0 / 3.0);
        CHECK(cond < 100.0 * 3.0);
    }
}

TEST_CASE("save/load round trip is bit-exact; empty manifest loads") {
    TempDir tmp("osr_dataio_roundtrip");

    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class_per_position = 3;
    cfg.n_positions = 1;
    cfg.position_decay = {1.0};
    cfg.t_steps = 5;
    cfg.channels = 3;
    cfg.seed = 99;
    Dataset ds = generate_synthetic(cfg);

    save_dataset(ds, tmp.path / "d1", false);
    Dataset back = load_dataset(tmp.path / "d1" / "manifest.json");
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.class_names == ds.class_names);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].grid.a == ds.samples[i].grid.a);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].position == ds.samples[i].position);
    }

    // refusal without force, acceptance with
    CHECK_THROWS_AS(save_dataset(ds, tmp.path / "d1", false), Error);
    save_dataset(ds, tmp.path / "d1", true);

    // empty dataset round trip
    Dataset empty;
    empty.t_steps = 4;
    empty.channels = 2;
    empty.class_names = {"x"};
    empty.positions = {"P1"};
    save_dataset(empty, tmp.path / "d2", false);
    Dataset eback = load_dataset(tmp.path / "d2" / "manifest.json");
    CHECK(eback.samples.empty());
}

TEST_CASE("load_dataset reports shape violations with the file name") {
    TempDir tmp("osr_dataio_badshape");
    SynthConfig cfg;
    cfg.n_classes = 1;
    cfg.samples_per_class_per_position = 1;
    cfg.n_positions = 1;
    cfg.position_decay = {1.0};
    cfg.t_steps = 4;
    cfg.channels = 2;
    Dataset ds = generate_synthetic(cfg);
    save_dataset(ds, tmp.path / "d", false);

    // drop the last row of the sample file: 3 rows against declared t_steps=4
    const fs::path f = tmp.path / "d" / "sample_000000.csv";
    std::ifstream in(f);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    std::ofstream out(f, std::ios::trunc);
    for (size_t i = 0; i + 1 < lines.size(); ++i) out << lines[i] << '\n';
    out.close();

    try {
        load_dataset(tmp.path / "d" / "manifest.json");
        FAIL("expected load error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("sample_000000.csv") != std::string::npos);
    }
}

TEST_CASE("load_dataset rejects non-numeric cells") {
    TempDir tmp("osr_dataio_badcell");
    SynthConfig cfg;
    cfg.n_classes = 1;
    cfg.samples_per_class_per_position = 1;
    cfg.n_positions = 1;
    cfg.position_decay = {1.0};
    cfg.t_steps = 2;
    cfg.channels = 2;
    Dataset ds = generate_synthetic(cfg);
    save_dataset(ds, tmp.path / "d", false);

    std::ofstream out(tmp.path / "d" / "sample_000000.csv", std::ios::trunc);
    out << "1.0,2.0\n1.0,oops\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(tmp.path / "d" / "manifest.json"), Error);
}
