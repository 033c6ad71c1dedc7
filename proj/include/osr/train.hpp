#pragma once

#include "osr/backbone.hpp"
#include "osr/refine.hpp"
#include "osr/scorer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace osr::train {

using backbone::Backbone;
using backbone::BackboneConfig;
using backbone::ParamSet;
using linalg::Matrix;
using refine::BNState;

// ============================================================================
// Training of backbone + refinement + projection head with the anchor-based
// loss (or plain cross-entropy for the softmax baseline), Adam, and early
// stopping on a held-out monitor split. Produces a frozen model with fitted
// class statistics and a calibrated rejection threshold.
// ============================================================================

struct TrainConfig {
    int batch_size = 16;
    double lr = 4e-5;
    double weight_decay = 1e-4;
    int max_epochs = 25;
    int patience = 10;
    std::uint64_t seed = 41;
    double dropout = 0.1;
    double lambda_anchor = 1e-5;
    double anchor_magnitude = 10.0;
    double monitor_fraction = 0.1; // share of training samples held out for early stopping

    // pipeline selection
    std::string method = "cac";               // "cac" | "softmax"
    bool use_bn = true;
    bool use_l2n = true;
    bool bn_affine = true;
    std::string score_metric = "mahalanobis"; // "mahalanobis" | "euclidean" | "anchor"
    double reject_percentile = 95.0;
    double cov_lambda = 1e-4;

    void validate() const;
};

// Fixed (non-trainable) anchor points: anchor c = magnitude * one_hot(c).
struct AnchorSet {
    int k = 0;
    double magnitude = 10.0;
    Matrix anchors; // k x k
};
AnchorSet make_anchor_set(int k, double magnitude);

// Trainable linear projection d -> K.
struct Head {
    ParamSet params;
    int in_dim = 0, out_dim = 0;

    Head() = default;
    Head(int in, int out);
    void init(rng::Rng& r);
    Matrix forward(const Matrix& features) const; // n x K
};

struct CacLossResult {
    double loss = 0.0;
    double ce = 0.0;
    double anchor = 0.0;
    Matrix grad_features; // n x d, gradient of the batch-mean loss
};

/**
 * L = CE(softmax(-dist)) + lambda_anchor * mean dist-to-own-anchor, where
 * dist are Euclidean distances from the projected features to the anchors.
 * Accumulates head gradients when with_grads is set.
 */
CacLossResult cac_loss(const Matrix& features, std::span<const int> labels, Head& head,
                       const AnchorSet& anchors, double lambda_anchor, bool with_grads = true);

struct CeLossResult {
    double loss = 0.0;
    Matrix grad_features;
};

/// Standard cross-entropy over head logits (the softmax baseline).
CeLossResult softmax_ce_loss(const Matrix& features, std::span<const int> labels, Head& head,
                             bool with_grads = true);

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8); weight decay
// is coupled L2 added to the gradient. Moments are kept per tensor.
struct AdamState {
    int t = 0;
    std::vector<std::vector<double>> m, v;
};
AdamState make_adam_state(const ParamSet& params);

/// One optimizer step over every trainable tensor. Throws on non-finite
/// gradients, naming the offending tensor. Bumps the ParamSet version.
void adam_step(ParamSet& params, AdamState& state, double lr, double weight_decay);

// Strict-decrease early stopping with patience.
struct EarlyStopper {
    explicit EarlyStopper(int patience_) : patience(patience_) {}
    int patience;
    double best_loss = 0.0;
    int best_epoch = 0;
    int stale = 0;
    bool any = false;

    bool observe(double loss, int epoch); // true if this epoch is a new best
    bool should_stop() const { return stale >= patience; }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double monitor_loss = 0.0;
};

// Preprocessed training inputs: maps must outlive the model training call;
// labels are remapped to 0..n_classes-1 (known classes only).
struct TrainData {
    std::vector<const Matrix*> maps;
    std::vector<int> labels;
    int n_classes = 0;
};

struct TrainedModel {
    BackboneConfig backbone_cfg;
    TrainConfig train_cfg;
    Backbone net;
    BNState bn; // frozen in eval mode
    Head head;
    AnchorSet anchors;
    std::vector<scorer::ClassStats> stats;
    double tau = 0.0;
    int n_classes = 0;
    std::vector<EpochRecord> history;
    int best_epoch = 0;

    TrainedModel() : net(BackboneConfig{}) {}
    explicit TrainedModel(BackboneConfig cfg) : net(std::move(cfg)) {}

    /// Refined feature of one sample under the frozen model.
    std::vector<double> refined_feature(const Matrix& map) const;

    /// (rejection score, predicted class) under the configured score metric.
    std::pair<double, int> score_sample(const Matrix& map) const;

    scorer::OpenSetDecision classify(const Matrix& map) const;
};

TrainedModel train_model(const TrainData& data, const BackboneConfig& bcfg,
                         const TrainConfig& tcfg);

/// Same backbone and protocol with a plain cross-entropy head; the rejection
/// score is the negated maximum softmax probability.
TrainedModel train_softmax_baseline(const TrainData& data, const BackboneConfig& bcfg,
                                    TrainConfig tcfg);

} // namespace osr::train
