#include "osr/backbone.hpp"

#include "osr/error.hpp"

#include <cmath>

namespace osr::backbone {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

void add_bias_rows(Matrix& m, const Matrix& bias) {
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) m(i, j) += bias(0, j);
    }
}

// row-wise layer norm; returns affine output, stores pre-affine values
Matrix layer_norm(const Matrix& h, const Matrix& g, const Matrix& b, Matrix& hat,
                  std::vector<double>& invstd) {
    const int rows = h.rows, d = h.cols;
    hat = Matrix(rows, d);
    invstd.assign(static_cast<size_t>(rows), 0.0);
    Matrix out(rows, d);
    for (int t = 0; t < rows; ++t) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += h(t, j);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = h(t, j) - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kLnEps);
        invstd[static_cast<size_t>(t)] = is;
        for (int j = 0; j < d; ++j) {
            const double v = (h(t, j) - mean) * is;
            hat(t, j) = v;
            out(t, j) = g(0, j) * v + b(0, j);
        }
    }
    return out;
}

// backward through layer_norm; accumulates dg/db, returns grad wrt input
Matrix layer_norm_backward(const Matrix& dout, const Matrix& hat,
                           const std::vector<double>& invstd, const Matrix& g,
                           Matrix& dg, Matrix& db) {
    const int rows = dout.rows, d = dout.cols;
    Matrix dx(rows, d);
    for (int t = 0; t < rows; ++t) {
        double sum_dhat = 0.0, sum_dhat_hat = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dh = dout(t, j) * g(0, j);
            sum_dhat += dh;
            sum_dhat_hat += dh * hat(t, j);
            dg(0, j) += dout(t, j) * hat(t, j);
            db(0, j) += dout(t, j);
        }
        const double invd = 1.0 / static_cast<double>(d);
        for (int j = 0; j < d; ++j) {
            const double dh = dout(t, j) * g(0, j);
            dx(t, j) = invstd[static_cast<size_t>(t)] *
                       (dh - invd * sum_dhat - hat(t, j) * invd * sum_dhat_hat);
        }
    }
    return dx;
}

Matrix draw_dropout_mask(int rows, int cols, double p, rng::Rng& r) {
    Matrix m(rows, cols);
    const double keep = 1.0 - p;
    for (double& v : m.a) v = (r.uniform() < keep) ? 1.0 / keep : 0.0;
    return m;
}

void apply_mask(Matrix& m, const Matrix& mask) {
    for (size_t i = 0; i < m.a.size(); ++i) m.a[i] *= mask.a[i];
}

} // namespace

Tensor& ParamSet::add(const std::string& name, int rows, int cols, bool trainable) {
    Tensor t;
    t.name = name;
    t.value = Matrix(rows, cols, 0.0);
    t.grad = Matrix(rows, cols, 0.0);
    t.trainable = trainable;
    tensors.push_back(std::move(t));
    return tensors.back();
}

Tensor* ParamSet::find(const std::string& name) {
    for (Tensor& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const Tensor* ParamSet::find(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void ParamSet::zero_grads() {
    for (Tensor& t : tensors) {
        std::fill(t.grad.a.begin(), t.grad.a.end(), 0.0);
    }
}

size_t ParamSet::scalar_count() const {
    size_t n = 0;
    for (const Tensor& t : tensors) n += t.value.a.size();
    return n;
}

void BackboneConfig::validate() const {
    if (kind != "mlp" && kind != "attention") {
        throw config_error("backbone: unknown kind '" + kind + "'");
    }
    if (t_steps < 1 || channels < 1) throw config_error("backbone: t_steps and channels must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("backbone: dropout must be in [0, 1)");
    if (kind == "mlp") {
        if (hidden_dim < 1 || feature_dim < 1) throw config_error("backbone: mlp dims must be >= 1");
        if (mlp_activation != "tanh" && mlp_activation != "linear") {
            throw config_error("backbone: mlp_activation must be 'tanh' or 'linear'");
        }
    } else {
        if (d_model < 1 || n_heads < 1 || n_layers < 1 || ff_mult < 1) {
            throw config_error("backbone: attention dims must be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw config_error("backbone: d_model must be divisible by n_heads");
        }
    }
}

Backbone::Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.kind == "mlp") {
        params_.add("fc1.W", cfg_.channels, cfg_.hidden_dim);
        params_.add("fc1.b", 1, cfg_.hidden_dim);
        params_.add("fc2.W", cfg_.hidden_dim, cfg_.feature_dim);
        params_.add("fc2.b", 1, cfg_.feature_dim);
    } else {
        params_.add("proj.W", cfg_.channels, cfg_.d_model);
        params_.add("pos.E", cfg_.t_steps, cfg_.d_model);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "ln1.g", 1, cfg_.d_model);
            params_.add(p + "ln1.b", 1, cfg_.d_model);
            params_.add(p + "attn.Wq", cfg_.d_model, cfg_.d_model);
            params_.add(p + "attn.Wk", cfg_.d_model, cfg_.d_model);
            params_.add(p + "attn.Wv", cfg_.d_model, cfg_.d_model);
            params_.add(p + "attn.Wo", cfg_.d_model, cfg_.d_model);
            params_.add(p + "ln2.g", 1, cfg_.d_model);
            params_.add(p + "ln2.b", 1, cfg_.d_model);
            params_.add(p + "ff.W1", cfg_.d_model, cfg_.ff_mult * cfg_.d_model);
            params_.add(p + "ff.b1", 1, cfg_.ff_mult * cfg_.d_model);
            params_.add(p + "ff.W2", cfg_.ff_mult * cfg_.d_model, cfg_.d_model);
            params_.add(p + "ff.b2", 1, cfg_.d_model);
        }
    }
}

void Backbone::init_params(rng::Rng& r) {
    for (Tensor& t : params_.tensors) {
        const bool is_ln_gain = t.name.find("ln1.g") != std::string::npos ||
                                t.name.find("ln2.g") != std::string::npos;
        const bool is_bias = t.name.ends_with(".b") || t.name.find("ln1.b") != std::string::npos ||
                             t.name.find("ln2.b") != std::string::npos ||
                             t.name.ends_with("b1") || t.name.ends_with("b2");
        if (is_ln_gain) {
            std::fill(t.value.a.begin(), t.value.a.end(), 1.0);
        } else if (is_bias) {
            std::fill(t.value.a.begin(), t.value.a.end(), 0.0);
        } else {
            const int fan_in = (t.name == "pos.E") ? cfg_.d_model : t.value.rows;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.value.a) v = r.uniform(-bound, bound);
        }
    }
    params_.mark_mutated();
}

std::vector<double> Backbone::forward(const Matrix& map, Mode mode, rng::Rng* dropout_rng,
                                      Tape& tape) const {
    if (map.rows != cfg_.t_steps || map.cols != cfg_.channels) {
        throw config_error("backbone: input map is " + std::to_string(map.rows) + "x" +
                           std::to_string(map.cols) + ", config expects " +
                           std::to_string(cfg_.t_steps) + "x" + std::to_string(cfg_.channels));
    }
    if (mode == Mode::Train && cfg_.dropout > 0.0 && dropout_rng == nullptr) {
        throw contract_error("backbone: train-mode forward with dropout needs a seeded rng");
    }
    tape = Tape{};
    tape.params_version = params_.version;
    tape.mode = mode;
    return cfg_.kind == "mlp" ? forward_mlp(map, mode, dropout_rng, tape)
                              : forward_attention(map, mode, dropout_rng, tape);
}

Matrix Backbone::backward(const Tape& tape, std::span<const double> grad_out) {
    if (tape.params_version != params_.version) {
        throw contract_error("backbone: stale tape (parameters changed since forward)");
    }
    if (static_cast<int>(grad_out.size()) != cfg_.out_dim()) {
        throw contract_error("backbone: grad_out length does not match feature dim");
    }
    return cfg_.kind == "mlp" ? backward_mlp(tape, grad_out) : backward_attention(tape, grad_out);
}

// ---------------------------------------------------------------------------
// MLP: temporal mean pool -> fc1 -> activation -> dropout -> fc2
// ---------------------------------------------------------------------------

std::vector<double> Backbone::forward_mlp(const Matrix& map, Mode mode, rng::Rng* rng,
                                          Tape& tape) const {
    const int T = cfg_.t_steps, C = cfg_.channels, H = cfg_.hidden_dim, D = cfg_.feature_dim;
    const Matrix& W1 = params_.find("fc1.W")->value;
    const Matrix& b1 = params_.find("fc1.b")->value;
    const Matrix& W2 = params_.find("fc2.W")->value;
    const Matrix& b2 = params_.find("fc2.b")->value;

    tape.pooled.assign(static_cast<size_t>(C), 0.0);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < C; ++j) tape.pooled[static_cast<size_t>(j)] += map(t, j);
    }
    for (double& v : tape.pooled) v /= T;

    tape.h_pre.assign(static_cast<size_t>(H), 0.0);
    for (int h = 0; h < H; ++h) {
        double s = b1(0, h);
        for (int j = 0; j < C; ++j) s += tape.pooled[static_cast<size_t>(j)] * W1(j, h);
        tape.h_pre[static_cast<size_t>(h)] = s;
    }

    const bool use_tanh = cfg_.mlp_activation == "tanh";
    tape.h_act.resize(static_cast<size_t>(H));
    for (int h = 0; h < H; ++h) {
        tape.h_act[static_cast<size_t>(h)] =
            use_tanh ? std::tanh(tape.h_pre[static_cast<size_t>(h)]) : tape.h_pre[static_cast<size_t>(h)];
    }

    tape.h_drop = tape.h_act;
    if (mode == Mode::Train && cfg_.dropout > 0.0) {
        const double keep = 1.0 - cfg_.dropout;
        tape.mlp_mask.resize(static_cast<size_t>(H));
        for (int h = 0; h < H; ++h) {
            const double m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
            tape.mlp_mask[static_cast<size_t>(h)] = m;
            tape.h_drop[static_cast<size_t>(h)] *= m;
        }
    }

    std::vector<double> z(static_cast<size_t>(D));
    for (int o = 0; o < D; ++o) {
        double s = b2(0, o);
        for (int h = 0; h < H; ++h) s += tape.h_drop[static_cast<size_t>(h)] * W2(h, o);
        z[static_cast<size_t>(o)] = s;
    }
    return z;
}

Matrix Backbone::backward_mlp(const Tape& tape, std::span<const double> grad_out) {
    const int T = cfg_.t_steps, C = cfg_.channels, H = cfg_.hidden_dim, D = cfg_.feature_dim;
    Tensor& W1 = *params_.find("fc1.W");
    Tensor& b1 = *params_.find("fc1.b");
    Tensor& W2 = *params_.find("fc2.W");
    Tensor& b2 = *params_.find("fc2.b");

    std::vector<double> dh_drop(static_cast<size_t>(H), 0.0);
    for (int o = 0; o < D; ++o) {
        const double go = grad_out[static_cast<size_t>(o)];
        b2.grad(0, o) += go;
        for (int h = 0; h < H; ++h) {
            W2.grad(h, o) += tape.h_drop[static_cast<size_t>(h)] * go;
            dh_drop[static_cast<size_t>(h)] += W2.value(h, o) * go;
        }
    }

    const bool use_tanh = cfg_.mlp_activation == "tanh";
    std::vector<double> dh_pre(static_cast<size_t>(H));
    for (int h = 0; h < H; ++h) {
        double g = dh_drop[static_cast<size_t>(h)];
        if (!tape.mlp_mask.empty()) g *= tape.mlp_mask[static_cast<size_t>(h)];
        if (use_tanh) {
            const double a = tape.h_act[static_cast<size_t>(h)];
            g *= (1.0 - a * a);
        }
        dh_pre[static_cast<size_t>(h)] = g;
    }

    std::vector<double> dpooled(static_cast<size_t>(C), 0.0);
    for (int h = 0; h < H; ++h) {
        const double g = dh_pre[static_cast<size_t>(h)];
        b1.grad(0, h) += g;
        for (int j = 0; j < C; ++j) {
            W1.grad(j, h) += tape.pooled[static_cast<size_t>(j)] * g;
            dpooled[static_cast<size_t>(j)] += W1.value(j, h) * g;
        }
    }

    Matrix dmap(T, C);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < C; ++j) dmap(t, j) = dpooled[static_cast<size_t>(j)] / T;
    }
    return dmap;
}

// ---------------------------------------------------------------------------
// Attention encoder: H0 = X*Wproj + Epos, then pre-norm blocks
//   H += dropout(MultiHead(LN1(H)));  H += dropout(FF(LN2(H)))
// pooled over time at the end.
// ---------------------------------------------------------------------------

std::vector<double> Backbone::forward_attention(const Matrix& map, Mode mode, rng::Rng* rng,
                                                Tape& tape) const {
    const int T = cfg_.t_steps, dm = cfg_.d_model, heads = cfg_.n_heads;
    const int dk = dm / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const bool use_dropout = (mode == Mode::Train && cfg_.dropout > 0.0);

    tape.x = map;
    Matrix h = linalg::matmul(map, params_.find("proj.W")->value);
    const Matrix& epos = params_.find("pos.E")->value;
    for (size_t i = 0; i < h.a.size(); ++i) h.a[i] += epos.a[i];
    tape.h0 = h;

    tape.layers.resize(static_cast<size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        Tape::LayerTape& lt = tape.layers[static_cast<size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        lt.h_in = h;

        lt.a = layer_norm(h, params_.find(p + "ln1.g")->value, params_.find(p + "ln1.b")->value,
                          lt.ln1_hat, lt.ln1_invstd);
        lt.q = linalg::matmul(lt.a, params_.find(p + "attn.Wq")->value);
        lt.k = linalg::matmul(lt.a, params_.find(p + "attn.Wk")->value);
        lt.v = linalg::matmul(lt.a, params_.find(p + "attn.Wv")->value);

        lt.concat = Matrix(T, dm);
        lt.probs.resize(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            const int off = hd * dk;
            Matrix s(T, T);
            for (int i = 0; i < T; ++i) {
                for (int j = 0; j < T; ++j) {
                    double acc = 0.0;
                    for (int c = 0; c < dk; ++c) acc += lt.q(i, off + c) * lt.k(j, off + c);
                    s(i, j) = acc * scale;
                }
            }
            // stable row softmax
            Matrix& prob = lt.probs[static_cast<size_t>(hd)];
            prob = Matrix(T, T);
            for (int i = 0; i < T; ++i) {
                double mx = s(i, 0);
                for (int j = 1; j < T; ++j) mx = std::max(mx, s(i, j));
                double denom = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double e = std::exp(s(i, j) - mx);
                    prob(i, j) = e;
                    denom += e;
                }
                for (int j = 0; j < T; ++j) prob(i, j) /= denom;
            }
            for (int i = 0; i < T; ++i) {
                for (int c = 0; c < dk; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < T; ++j) acc += prob(i, j) * lt.v(j, off + c);
                    lt.concat(i, off + c) = acc;
                }
            }
        }
        lt.attn_out = linalg::matmul(lt.concat, params_.find(p + "attn.Wo")->value);

        Matrix attn_dropped = lt.attn_out;
        if (use_dropout) {
            lt.attn_mask = draw_dropout_mask(T, dm, cfg_.dropout, *rng);
            apply_mask(attn_dropped, lt.attn_mask);
        }
        lt.h_mid = lt.h_in;
        for (size_t i = 0; i < lt.h_mid.a.size(); ++i) lt.h_mid.a[i] += attn_dropped.a[i];

        lt.b = layer_norm(lt.h_mid, params_.find(p + "ln2.g")->value,
                          params_.find(p + "ln2.b")->value, lt.ln2_hat, lt.ln2_invstd);
        lt.ff_pre = linalg::matmul(lt.b, params_.find(p + "ff.W1")->value);
        add_bias_rows(lt.ff_pre, params_.find(p + "ff.b1")->value);
        lt.ff_act = lt.ff_pre;
        for (double& v : lt.ff_act.a) v = gelu(v);
        lt.ff_out = linalg::matmul(lt.ff_act, params_.find(p + "ff.W2")->value);
        add_bias_rows(lt.ff_out, params_.find(p + "ff.b2")->value);

        Matrix ff_dropped = lt.ff_out;
        if (use_dropout) {
            lt.ff_mask = draw_dropout_mask(T, dm, cfg_.dropout, *rng);
            apply_mask(ff_dropped, lt.ff_mask);
        }
        lt.h_out = lt.h_mid;
        for (size_t i = 0; i < lt.h_out.a.size(); ++i) lt.h_out.a[i] += ff_dropped.a[i];
        h = lt.h_out;
    }
    tape.h_final = h;

    std::vector<double> z(static_cast<size_t>(dm), 0.0);
    for (int t = 0; t < T; ++t) {
        for (int o = 0; o < dm; ++o) z[static_cast<size_t>(o)] += h(t, o);
    }
    for (double& v : z) v /= T;
    return z;
}

Matrix Backbone::backward_attention(const Tape& tape, std::span<const double> grad_out) {
    const int T = cfg_.t_steps, dm = cfg_.d_model, heads = cfg_.n_heads;
    const int dk = dm / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Matrix dh(T, dm);
    for (int t = 0; t < T; ++t) {
        for (int o = 0; o < dm; ++o) dh(t, o) = grad_out[static_cast<size_t>(o)] / T;
    }

    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
        const Tape::LayerTape& lt = tape.layers[static_cast<size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        Tensor& ln1g = *params_.find(p + "ln1.g");
        Tensor& ln1b = *params_.find(p + "ln1.b");
        Tensor& wq = *params_.find(p + "attn.Wq");
        Tensor& wk = *params_.find(p + "attn.Wk");
        Tensor& wv = *params_.find(p + "attn.Wv");
        Tensor& wo = *params_.find(p + "attn.Wo");
        Tensor& ln2g = *params_.find(p + "ln2.g");
        Tensor& ln2b = *params_.find(p + "ln2.b");
        Tensor& fw1 = *params_.find(p + "ff.W1");
        Tensor& fb1 = *params_.find(p + "ff.b1");
        Tensor& fw2 = *params_.find(p + "ff.W2");
        Tensor& fb2 = *params_.find(p + "ff.b2");

        // feed-forward sublayer
        Matrix dff_out = dh;
        if (lt.ff_mask.rows > 0) apply_mask(dff_out, lt.ff_mask);
        for (int t = 0; t < T; ++t) {
            for (int o = 0; o < dm; ++o) fb2.grad(0, o) += dff_out(t, o);
        }
        {
            Matrix dW2 = linalg::matmul_tn(lt.ff_act, dff_out);
            for (size_t i = 0; i < dW2.a.size(); ++i) fw2.grad.a[i] += dW2.a[i];
        }
        Matrix dff_act = linalg::matmul_nt(dff_out, fw2.value);
        for (size_t i = 0; i < dff_act.a.size(); ++i) {
            dff_act.a[i] *= gelu_grad(lt.ff_pre.a[i]);
        }
        for (int t = 0; t < T; ++t) {
            for (int o = 0; o < dff_act.cols; ++o) fb1.grad(0, o) += dff_act(t, o);
        }
        {
            Matrix dW1 = linalg::matmul_tn(lt.b, dff_act);
            for (size_t i = 0; i < dW1.a.size(); ++i) fw1.grad.a[i] += dW1.a[i];
        }
        Matrix db_mat = linalg::matmul_nt(dff_act, fw1.value);
        Matrix dh_mid =
            layer_norm_backward(db_mat, lt.ln2_hat, lt.ln2_invstd, ln2g.value, ln2g.grad, ln2b.grad);
        for (size_t i = 0; i < dh_mid.a.size(); ++i) dh_mid.a[i] += dh.a[i]; // residual

        // attention sublayer
        Matrix dattn_out = dh_mid;
        if (lt.attn_mask.rows > 0) apply_mask(dattn_out, lt.attn_mask);
        {
            Matrix dWo = linalg::matmul_tn(lt.concat, dattn_out);
            for (size_t i = 0; i < dWo.a.size(); ++i) wo.grad.a[i] += dWo.a[i];
        }
        Matrix dconcat = linalg::matmul_nt(dattn_out, wo.value);

        Matrix dq(T, dm, 0.0), dkk(T, dm, 0.0), dv(T, dm, 0.0);
        for (int hd = 0; hd < heads; ++hd) {
            const int off = hd * dk;
            const Matrix& prob = lt.probs[static_cast<size_t>(hd)];
            // dV_h = P^T dO_h ; dP = dO_h V_h^T
            Matrix dp(T, T);
            for (int i = 0; i < T; ++i) {
                for (int j = 0; j < T; ++j) {
                    double acc = 0.0;
                    for (int c = 0; c < dk; ++c) acc += dconcat(i, off + c) * lt.v(j, off + c);
                    dp(i, j) = acc;
                }
            }
            for (int j = 0; j < T; ++j) {
                for (int c = 0; c < dk; ++c) {
                    double acc = 0.0;
                    for (int i = 0; i < T; ++i) acc += prob(i, j) * dconcat(i, off + c);
                    dv(j, off + c) += acc;
                }
            }
            // softmax backward: dS = P o (dP - rowsum(dP o P))
            for (int i = 0; i < T; ++i) {
                double rowdot = 0.0;
                for (int j = 0; j < T; ++j) rowdot += dp(i, j) * prob(i, j);
                for (int j = 0; j < T; ++j) {
                    const double ds = prob(i, j) * (dp(i, j) - rowdot);
                    for (int c = 0; c < dk; ++c) {
                        dq(i, off + c) += ds * lt.k(j, off + c) * scale;
                        dkk(j, off + c) += ds * lt.q(i, off + c) * scale;
                    }
                }
            }
        }

        {
            Matrix dWq = linalg::matmul_tn(lt.a, dq);
            Matrix dWk = linalg::matmul_tn(lt.a, dkk);
            Matrix dWv = linalg::matmul_tn(lt.a, dv);
            for (size_t i = 0; i < dWq.a.size(); ++i) {
                wq.grad.a[i] += dWq.a[i];
                wk.grad.a[i] += dWk.a[i];
                wv.grad.a[i] += dWv.a[i];
            }
        }
        Matrix da = linalg::matmul_nt(dq, wq.value);
        {
            Matrix dak = linalg::matmul_nt(dkk, wk.value);
            Matrix dav = linalg::matmul_nt(dv, wv.value);
            for (size_t i = 0; i < da.a.size(); ++i) da.a[i] += dak.a[i] + dav.a[i];
        }
        Matrix dh_in =
            layer_norm_backward(da, lt.ln1_hat, lt.ln1_invstd, ln1g.value, ln1g.grad, ln1b.grad);
        for (size_t i = 0; i < dh_in.a.size(); ++i) dh_in.a[i] += dh_mid.a[i]; // residual
        dh = std::move(dh_in);
    }

    Tensor& epos = *params_.find("pos.E");
    for (size_t i = 0; i < dh.a.size(); ++i) epos.grad.a[i] += dh.a[i];
    Tensor& wproj = *params_.find("proj.W");
    {
        Matrix dW = linalg::matmul_tn(tape.x, dh);
        for (size_t i = 0; i < dW.a.size(); ++i) wproj.grad.a[i] += dW.a[i];
    }
    return linalg::matmul_nt(dh, wproj.value);
}

} // namespace osr::backbone
