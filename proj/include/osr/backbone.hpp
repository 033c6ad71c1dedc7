#pragma once

#include "osr/linalg.hpp"
#include "osr/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace osr::backbone {

using linalg::Matrix;

// ============================================================================
// Differentiable feature extractors with hand-written reverse mode: a
// pooled-MLP reference and a toy multi-head self-attention encoder. Forward
// records a tape; backward replays it exactly (including dropout masks).
// ============================================================================

struct Tensor {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
};

// Named parameter tensors plus a mutation counter. Any in-place update of the
// values must bump the version; tapes check it to reject stale backward calls.
struct ParamSet {
    std::vector<Tensor> tensors;
    std::uint64_t version = 0;

    Tensor& add(const std::string& name, int rows, int cols, bool trainable = true);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    void zero_grads();
    void mark_mutated() { ++version; }
    size_t scalar_count() const;
};

enum class Mode { Train, Eval };

struct BackboneConfig {
    std::string kind = "mlp"; // "mlp" | "attention"
    int t_steps = 64;
    int channels = 16;
    double dropout = 0.1;

    // mlp: temporal mean pooling -> hidden -> activation -> feature_dim
    int hidden_dim = 32;
    int feature_dim = 16;
    std::string mlp_activation = "tanh"; // "tanh" | "linear"

    // attention: linear projection + positional encoding, n_layers pre-norm
    // blocks (multi-head self-attention, GELU feed-forward), mean pooling
    int d_model = 32;
    int n_heads = 2;
    int n_layers = 1;
    int ff_mult = 2; // feed-forward inner dim = ff_mult * d_model

    int out_dim() const { return kind == "attention" ? d_model : feature_dim; }
    void validate() const;
};

// Cached intermediates for one sample's forward pass.
struct Tape {
    std::uint64_t params_version = 0;
    Mode mode = Mode::Eval;

    // mlp
    std::vector<double> pooled, h_pre, h_act, h_drop;
    std::vector<double> mlp_mask; // inverted-dropout multipliers, empty if unused

    // attention (per layer)
    struct LayerTape {
        Matrix h_in;
        Matrix ln1_hat, ln2_hat;           // normalized pre-affine values
        std::vector<double> ln1_invstd, ln2_invstd;
        Matrix a;                          // LN1 output feeding attention
        Matrix q, k, v;                    // T x d_model each
        std::vector<Matrix> probs;         // per head T x T softmax rows
        Matrix concat;                     // heads concatenated, T x d_model
        Matrix attn_out;                   // concat * Wo
        Matrix attn_mask;                  // dropout multipliers (empty if unused)
        Matrix h_mid;                      // after attention residual
        Matrix b;                          // LN2 output feeding the FF
        Matrix ff_pre;                     // B*W1 + b1
        Matrix ff_act;                     // gelu(ff_pre)
        Matrix ff_out;                     // ff_act*W2 + b2
        Matrix ff_mask;
        Matrix h_out;
    };
    Matrix x;           // input map
    Matrix h0;          // projected input + positional encoding
    std::vector<LayerTape> layers;
    Matrix h_final;
};

class Backbone {
public:
    explicit Backbone(BackboneConfig cfg);

    void init_params(rng::Rng& r);

    const BackboneConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    /**
     * Maps one t_steps x channels sample to a feature vector. Train mode with
     * dropout > 0 draws inverted-dropout masks from `dropout_rng` and records
     * them on the tape, so backward is exact for the sampled network.
     */
    std::vector<double> forward(const Matrix& map, Mode mode, rng::Rng* dropout_rng,
                                Tape& tape) const;

    /// Accumulates parameter gradients (into Tensor::grad) and returns the
    /// gradient with respect to the input map. Throws on a stale tape.
    Matrix backward(const Tape& tape, std::span<const double> grad_out);

private:
    std::vector<double> forward_mlp(const Matrix& map, Mode mode, rng::Rng* rng, Tape& tape) const;
    std::vector<double> forward_attention(const Matrix& map, Mode mode, rng::Rng* rng, Tape& tape) const;
    Matrix backward_mlp(const Tape& tape, std::span<const double> grad_out);
    Matrix backward_attention(const Tape& tape, std::span<const double> grad_out);

    BackboneConfig cfg_;
    ParamSet params_;
};

} // namespace osr::backbone
