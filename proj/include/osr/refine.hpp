#pragma once

#include "osr/linalg.hpp"

#include <span>
#include <vector>

namespace osr::refine {

using linalg::Matrix;

// ============================================================================
// Geometric refinement: batch normalization cascaded with L2 projection onto
// the unit hypersphere. Train mode normalizes with batch statistics and
// updates running stats; eval mode is a pure function of (input, state).
// ============================================================================

struct BNState {
    int dim = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    bool affine = true;      // affine off recovers the plain (z - mu)/sqrt(var + eps)
    bool train_mode = true;
    std::vector<double> running_mean; // init 0
    std::vector<double> running_var;  // init 1
    std::vector<double> gamma;        // init 1
    std::vector<double> beta;         // init 0
};

BNState make_bn_state(int dim, bool affine = true);

// Everything needed for an exact backward pass through the refinement stack.
struct RefineTape {
    bool used_bn = false;
    bool used_l2n = false;
    bool bn_train_mode = false;
    bool bn_affine = false;
    int n = 0, d = 0;
    Matrix xhat;                    // BN-normalized pre-affine values
    std::vector<double> invstd;     // per-dim 1/sqrt(var + eps) actually used
    std::vector<double> gamma;      // snapshot of scale at forward time
    Matrix z;                       // input to the L2 stage
    std::vector<double> znorm;      // per-row L2 norms
    Matrix f;                       // final output
};

/// Batch normalization over an n x d batch. Train mode requires n >= 2 and
/// updates running statistics; eval mode reads them and mutates nothing.
Matrix bn_forward(const Matrix& batch, BNState& state, RefineTape* tape = nullptr);

/// Projection onto the unit sphere. A zero vector is a degenerate feature and
/// raises; it is never silently replaced.
std::vector<double> l2_normalize(std::span<const double> z);

/// BN and/or L2 according to the ablation flags; identity when both are off.
Matrix refine_forward(const Matrix& batch, BNState& state, bool use_bn, bool use_l2n,
                      RefineTape* tape = nullptr);

struct RefineGrads {
    Matrix grad_input;              // n x d
    std::vector<double> grad_gamma; // empty unless BN ran with affine
    std::vector<double> grad_beta;
};

/// Exact reverse-mode gradients through whatever the tape recorded.
RefineGrads refine_backward(const RefineTape& tape, const Matrix& grad_out);

} // namespace osr::refine
