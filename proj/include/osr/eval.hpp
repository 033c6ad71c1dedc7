#pragma once

#include "osr/dataio.hpp"
#include "osr/train.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace osr::eval {

// ============================================================================
// Open-set metrics and the cross-condition experiment protocol: per position
// and fold, partition classes into known/unknown, train each configured
// variant on 60% of the known samples, score the held-out test set, and
// aggregate mean +/- std per configuration and per position.
// ============================================================================

struct ScoredSample {
    double score = 0.0;
    int predicted = -1;
    int true_label = dataio::kUnknownLabel; // original class id, -1 for unknown ground truth
    int position = 0;
};

struct ScoredTestSet {
    std::vector<ScoredSample> samples;
};

/// Closed-set accuracy over known-ground-truth samples: the argmin/argmax
/// prediction is counted, the reject verdict is ignored.
double known_accuracy(const ScoredTestSet& scored);

/// Rank-based Mann-Whitney AUROC with tie handling; unknown is the positive
/// class and higher scores mean "more unknown".
double auroc(std::span<const double> known_scores, std::span<const double> unknown_scores);

/// Fraction of unknown scores at or above the (1 - fpr) quantile of the known
/// scores (same interpolated-percentile convention as the scorer).
double tpr_at_fpr(std::span<const double> known_scores, std::span<const double> unknown_scores,
                  double fpr);

// One scoring/training configuration of the experiment matrix.
struct Variant {
    std::string name = "full";
    std::string method = "cac";               // "cac" | "softmax"
    bool use_bn = true;
    bool use_l2n = true;
    std::string score_metric = "mahalanobis"; // "mahalanobis" | "euclidean" | "anchor"
};

train::TrainConfig apply_variant(train::TrainConfig base, const Variant& v);

/// The five ablation rows plus the softmax baseline.
std::vector<Variant> ablation_matrix();

struct ProtocolConfig {
    int n_folds = 5;
    int n_known = 6;
    int n_unknown = 4;
    double train_fraction = 0.6;
    double unknown_test_fraction = 0.4;
    double fpr = 0.05;
    bool keep_scores = true; // retain per-sample scores for ROC rendering

    void validate() const;
};

struct RunResult {
    int variant_index = 0;
    std::string config;
    int position = 0;
    int fold = 0;
    double accuracy = 0.0;
    double tpr = 0.0;
    double auroc = 0.0;
    double tau = 0.0;
    int best_epoch = 0;
    std::vector<ScoredSample> scores; // empty unless keep_scores
};

struct AggregateStat {
    double mean = 0.0;
    double stddev = 0.0; // sample (n-1) convention; 0 when n < 2
    int n = 0;
};

AggregateStat aggregate(std::span<const double> values);

struct ExperimentReport {
    std::vector<std::string> configs;  // variant names, in configured order
    std::vector<std::string> positions;
    std::vector<std::string> class_names;
    int n_folds = 0;
    std::vector<RunResult> rows;       // sorted by (variant, position, fold)

    std::vector<double> metric_values(const std::string& config, const std::string& metric,
                                      int position = -1) const; // position -1: all
    AggregateStat metric_aggregate(const std::string& config, const std::string& metric,
                                   int position = -1) const;
};

/// Seeded known/unknown class partition for one fold (shared across
/// positions, mirroring repeated random partitions of the class list).
std::pair<std::vector<int>, std::vector<int>> partition_classes(int n_classes, int n_known,
                                                                int n_unknown, rng::Rng& r);

using ProgressFn = std::function<void(const RunResult&)>;
using ModelSinkFn = std::function<void(const RunResult&, const train::TrainedModel&)>;

/**
 * Runs the full matrix: every (position, fold, variant) triple trains and
 * tests inside one position. All randomness derives from `seed`; `jobs`
 * parallelizes independent runs without changing any result. The optional
 * model sink receives each frozen model as its run completes (serialized
 * callbacks, any thread).
 */
ExperimentReport run_protocol(const dataio::Dataset& data, const std::vector<Variant>& variants,
                              const ProtocolConfig& pcfg, const train::TrainConfig& base_tcfg,
                              const backbone::BackboneConfig& bcfg, std::uint64_t seed,
                              int jobs = 1, const ProgressFn& progress = nullptr,
                              const ModelSinkFn& model_sink = nullptr);

} // namespace osr::eval
