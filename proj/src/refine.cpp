#include "osr/refine.hpp"

#include "osr/error.hpp"

#include <cmath>
#include <string>

namespace osr::refine {

BNState make_bn_state(int dim, bool affine) {
    BNState s;
    s.dim = dim;
    s.affine = affine;
    s.running_mean.assign(static_cast<size_t>(dim), 0.0);
    s.running_var.assign(static_cast<size_t>(dim), 1.0);
    s.gamma.assign(static_cast<size_t>(dim), 1.0);
    s.beta.assign(static_cast<size_t>(dim), 0.0);
    return s;
}

Matrix bn_forward(const Matrix& batch, BNState& state, RefineTape* tape) {
    const int n = batch.rows;
    const int d = batch.cols;
    if (d != state.dim) {
        throw contract_error("bn_forward: feature dim " + std::to_string(d) +
                             " does not match state dim " + std::to_string(state.dim));
    }

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    std::vector<double> invstd(static_cast<size_t>(d), 0.0);

    if (state.train_mode) {
        if (n < 2) {
            throw contract_error("bn_forward: train mode needs a batch of >= 2, got " +
                                 std::to_string(n));
        }
        std::vector<double> var(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += batch(i, j);
        }
        for (double& m : mean) m /= n;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                const double c = batch(i, j) - mean[static_cast<size_t>(j)];
                var[static_cast<size_t>(j)] += c * c;
            }
        }
        for (double& v : var) v /= n; // population variance
        for (int j = 0; j < d; ++j) {
            invstd[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + state.eps);
        }
        // exponential moving average of running statistics
        for (int j = 0; j < d; ++j) {
            state.running_mean[static_cast<size_t>(j)] =
                (1.0 - state.momentum) * state.running_mean[static_cast<size_t>(j)] +
                state.momentum * mean[static_cast<size_t>(j)];
            state.running_var[static_cast<size_t>(j)] =
                (1.0 - state.momentum) * state.running_var[static_cast<size_t>(j)] +
                state.momentum * var[static_cast<size_t>(j)];
        }
    } else {
        for (int j = 0; j < d; ++j) {
            mean[static_cast<size_t>(j)] = state.running_mean[static_cast<size_t>(j)];
            invstd[static_cast<size_t>(j)] =
                1.0 / std::sqrt(state.running_var[static_cast<size_t>(j)] + state.eps);
        }
    }

    Matrix xhat(n, d);
    Matrix out(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            const double h = (batch(i, j) - mean[static_cast<size_t>(j)]) * invstd[static_cast<size_t>(j)];
            xhat(i, j) = h;
            out(i, j) = state.affine ? state.gamma[static_cast<size_t>(j)] * h + state.beta[static_cast<size_t>(j)]
                                     : h;
        }
    }

    if (tape) {
        tape->used_bn = true;
        tape->bn_train_mode = state.train_mode;
        tape->bn_affine = state.affine;
        tape->n = n;
        tape->d = d;
        tape->xhat = xhat;
        tape->invstd = invstd;
        tape->gamma = state.affine ? state.gamma : std::vector<double>(static_cast<size_t>(d), 1.0);
    }
    return out;
}

std::vector<double> l2_normalize(std::span<const double> z) {
    const double nrm = linalg::norm2(z);
    if (!(nrm > 0.0)) {
        throw numeric_error("l2_normalize: zero (or non-finite) feature vector; "
                            "upstream representation collapsed");
    }
    std::vector<double> f(z.size());
    for (size_t i = 0; i < z.size(); ++i) f[i] = z[i] / nrm;
    return f;
}

Matrix refine_forward(const Matrix& batch, BNState& state, bool use_bn, bool use_l2n,
                      RefineTape* tape) {
    Matrix cur = use_bn ? bn_forward(batch, state, tape) : batch;
    if (tape) {
        tape->n = cur.rows;
        tape->d = cur.cols;
        tape->used_l2n = use_l2n;
    }
    if (!use_l2n) {
        if (tape) tape->f = cur;
        return cur;
    }

    Matrix f(cur.rows, cur.cols);
    std::vector<double> norms(static_cast<size_t>(cur.rows));
    for (int i = 0; i < cur.rows; ++i) {
        const auto fi = l2_normalize(cur.row(i));
        norms[static_cast<size_t>(i)] = linalg::norm2(cur.row(i));
        for (int j = 0; j < cur.cols; ++j) f(i, j) = fi[static_cast<size_t>(j)];
    }
    if (tape) {
        tape->z = cur;
        tape->znorm = norms;
        tape->f = f;
    }
    return f;
}

RefineGrads refine_backward(const RefineTape& tape, const Matrix& grad_out) {
    const int n = tape.n;
    const int d = tape.d;
    if (grad_out.rows != n || grad_out.cols != d) {
        throw contract_error("refine_backward: gradient shape mismatch");
    }

    Matrix g = grad_out;

    // L2 stage: f = z / |z|, dz = (df - f <f, df>) / |z|
    if (tape.used_l2n) {
        Matrix gz(n, d);
        for (int i = 0; i < n; ++i) {
            const double fdotg = linalg::dot(tape.f.row(i), g.row(i));
            const double inv = 1.0 / tape.znorm[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j) {
                gz(i, j) = (g(i, j) - tape.f(i, j) * fdotg) * inv;
            }
        }
        g = std::move(gz);
    }

    RefineGrads grads;
    if (!tape.used_bn) {
        grads.grad_input = std::move(g);
        return grads;
    }

    // affine stage
    Matrix gxhat(n, d);
    if (tape.bn_affine) {
        grads.grad_gamma.assign(static_cast<size_t>(d), 0.0);
        grads.grad_beta.assign(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                grads.grad_gamma[static_cast<size_t>(j)] += g(i, j) * tape.xhat(i, j);
                grads.grad_beta[static_cast<size_t>(j)] += g(i, j);
                gxhat(i, j) = g(i, j) * tape.gamma[static_cast<size_t>(j)];
            }
        }
    } else {
        gxhat = g;
    }

    Matrix gx(n, d);
    if (tape.bn_train_mode) {
        // backprop through batch statistics
        std::vector<double> sum_g(static_cast<size_t>(d), 0.0), sum_gx(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                sum_g[static_cast<size_t>(j)] += gxhat(i, j);
                sum_gx[static_cast<size_t>(j)] += gxhat(i, j) * tape.xhat(i, j);
            }
        }
        const double invn = 1.0 / static_cast<double>(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                gx(i, j) = tape.invstd[static_cast<size_t>(j)] *
                           (gxhat(i, j) - invn * sum_g[static_cast<size_t>(j)] -
                            tape.xhat(i, j) * invn * sum_gx[static_cast<size_t>(j)]);
            }
        }
    } else {
        // eval mode: running stats are constants
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                gx(i, j) = gxhat(i, j) * tape.invstd[static_cast<size_t>(j)];
            }
        }
    }
    grads.grad_input = std::move(gx);
    return grads;
}

} // namespace osr::refine
