#pragma once

#include "osr/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace osr::dataio {

using linalg::Matrix;

// Label value for samples whose class is not one of the named classes.
inline constexpr int kUnknownLabel = -1;

// ============================================================================
// Raw multi-channel sensor recording, before downsampling.
// ============================================================================
struct RawSequence {
    double rate_hz = 0.0;
    std::vector<std::vector<double>> channels; // parallel series, equal length
};

/// Non-overlapping window means; output length = floor(len / window).
RawSequence downsample_mean(const RawSequence& raw, int window);

// One preprocessed sample: a t_steps x channels spatiotemporal map.
struct SampleMap {
    Matrix grid;       // t_steps rows, channels cols
    int label = kUnknownLabel; // index into Dataset::class_names, or kUnknownLabel
    int position = 0;  // index into Dataset::positions
};

struct Dataset {
    int t_steps = 0;
    int channels = 0;
    std::vector<std::string> class_names;
    std::vector<std::string> positions;
    std::vector<SampleMap> samples;

    void validate() const; // label/position indices in range, grid shapes match
};

// ============================================================================
// Channel-wise z-score. Statistics are fit on a designated subset of samples
// (the training split) and applied to the whole dataset; stored stats allow
// bit-exact re-application.
// ============================================================================
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;        // population std, clamped to 1 where degenerate
    std::vector<int> clamped_channels; // channels whose variance was zero
};

ChannelStats fit_channel_stats(const Dataset& data, std::span<const int> fit_indices);
Dataset apply_zscore(const Dataset& data, const ChannelStats& stats);
std::pair<Dataset, ChannelStats> zscore_channels(const Dataset& data, std::span<const int> fit_indices);

// ============================================================================
// Synthetic drift benchmark generator. Each sample is a smooth rise-plateau-
// decay response curve; per-sample channel amplitudes are drawn from a
// class-conditional anisotropic Gaussian whose largest-variance axis is the
// radial (intensity) direction, and every amplitude is scaled by the
// position's decay multiplier. Additive sensor noise is position-independent.
// ============================================================================
struct SynthConfig {
    int n_classes = 10;
    int samples_per_class_per_position = 60;
    int n_positions = 5;
    int t_steps = 64;
    int channels = 16;
    double feature_anisotropy = 50.0;       // condition-number target for class covariances
    std::vector<double> position_decay = {1.0, 0.8, 0.6, 0.45, 0.3};
    double noise_std = 0.05;
    std::uint64_t seed = 41;

    // Shape constants of the generator (kept configurable for tests). The
    // defaults define the reference desk-scale drift benchmark.
    double base_amplitude = 1.0;   // mean channel-amplitude scale at position 1
    double radial_spread = 0.22;   // std of the intensity axis, as a fraction of amplitude
    double template_jitter = 0.50; // per-sample spread of the response time constants;
                                   // 0 freezes the template (pure Gaussian amplitudes)

    void validate() const;
};

Dataset generate_synthetic(const SynthConfig& cfg);

// ============================================================================
// On-disk format: a directory with manifest.json plus one headerless CSV
// (t_steps rows x channels columns) per sample.
// ============================================================================
Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_dataset(const Dataset& data, const std::filesystem::path& dir, bool force);

} // namespace osr::dataio
