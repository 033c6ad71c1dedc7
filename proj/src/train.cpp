#include "osr/train.hpp"

#include "osr/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace osr::train {

using backbone::Mode;
using backbone::Tape;
using backbone::Tensor;

void TrainConfig::validate() const {
    if (batch_size < 2) throw config_error("train: batch_size must be >= 2 (batch norm)");
    if (!(lr > 0.0)) throw config_error("train: lr must be > 0");
    if (weight_decay < 0.0) throw config_error("train: weight_decay must be >= 0");
    if (max_epochs < 1) throw config_error("train: max_epochs must be >= 1");
    if (patience < 1) throw config_error("train: patience must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("train: dropout must be in [0, 1)");
    if (lambda_anchor < 0.0) throw config_error("train: lambda_anchor must be >= 0");
    if (!(anchor_magnitude > 0.0)) throw config_error("train: anchor_magnitude must be > 0");
    if (monitor_fraction < 0.0 || monitor_fraction >= 1.0) {
        throw config_error("train: monitor_fraction must be in [0, 1)");
    }
    if (method != "cac" && method != "softmax") {
        throw config_error("train: method must be 'cac' or 'softmax'");
    }
    if (score_metric != "mahalanobis" && score_metric != "euclidean" && score_metric != "anchor") {
        throw config_error("train: score_metric must be mahalanobis, euclidean or anchor");
    }
    if (method == "softmax" && score_metric == "anchor") {
        throw config_error("train: anchor scoring requires the cac method");
    }
    if (!(reject_percentile > 0.0) || !(reject_percentile < 100.0)) {
        throw config_error("train: reject_percentile must be in (0, 100)");
    }
    if (cov_lambda < 0.0) throw config_error("train: cov_lambda must be >= 0");
}

AnchorSet make_anchor_set(int k, double magnitude) {
    AnchorSet a;
    a.k = k;
    a.magnitude = magnitude;
    a.anchors = Matrix(k, k, 0.0);
    for (int c = 0; c < k; ++c) a.anchors(c, c) = magnitude;
    return a;
}

Head::Head(int in, int out) : in_dim(in), out_dim(out) {
    params.add("head.W", in, out);
    params.add("head.b", 1, out);
}

void Head::init(rng::Rng& r) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : params.find("head.W")->value.a) v = r.uniform(-bound, bound);
    std::fill(params.find("head.b")->value.a.begin(), params.find("head.b")->value.a.end(), 0.0);
    params.mark_mutated();
}

Matrix Head::forward(const Matrix& features) const {
    Matrix p = linalg::matmul(features, params.find("head.W")->value);
    const Matrix& b = params.find("head.b")->value;
    for (int i = 0; i < p.rows; ++i) {
        for (int j = 0; j < p.cols; ++j) p(i, j) += b(0, j);
    }
    return p;
}

CacLossResult cac_loss(const Matrix& features, std::span<const int> labels, Head& head,
                       const AnchorSet& anchors, double lambda_anchor, bool with_grads) {
    const int n = features.rows;
    const int k = anchors.k;
    if (n == 0) throw contract_error("cac_loss: empty batch");
    if (static_cast<int>(labels.size()) != n) throw contract_error("cac_loss: label count mismatch");
    for (int y : labels) {
        if (y < 0 || y >= k) {
            throw contract_error("cac_loss: label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(k) + ")");
        }
    }

    const Matrix p = head.forward(features); // n x k
    Matrix dist(n, k);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) {
                const double dv = p(i, j) - anchors.anchors(c, j);
                s += dv * dv;
            }
            dist(i, c) = std::sqrt(s);
        }
    }

    CacLossResult res;
    Matrix grad_p(n, k, 0.0);
    const double invn = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        // stable log-sum-exp over logits = -dist
        double mx = -dist(i, 0);
        for (int c = 1; c < k; ++c) mx = std::max(mx, -dist(i, c));
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(-dist(i, c) - mx);
        const double lse = mx + std::log(denom);
        res.ce += (dist(i, y) + lse) * invn;
        res.anchor += dist(i, y) * invn;

        if (with_grads) {
            for (int c = 0; c < k; ++c) {
                const double q = std::exp(-dist(i, c) - mx) / denom;
                double ddist = ((c == y ? 1.0 : 0.0) - q) * invn; // CE term
                if (c == y) ddist += lambda_anchor * invn;        // anchor pull
                const double safe = std::max(dist(i, c), 1e-12);
                for (int j = 0; j < k; ++j) {
                    grad_p(i, j) += ddist * (p(i, j) - anchors.anchors(c, j)) / safe;
                }
            }
        }
    }
    res.loss = res.ce + lambda_anchor * res.anchor;

    if (with_grads) {
        Tensor& W = *head.params.find("head.W");
        Tensor& b = *head.params.find("head.b");
        Matrix dW = linalg::matmul_tn(features, grad_p);
        for (size_t i = 0; i < dW.a.size(); ++i) W.grad.a[i] += dW.a[i];
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) b.grad(0, j) += grad_p(i, j);
        }
        res.grad_features = linalg::matmul_nt(grad_p, W.value);
    } else {
        res.grad_features = Matrix(n, features.cols, 0.0);
    }
    return res;
}

CeLossResult softmax_ce_loss(const Matrix& features, std::span<const int> labels, Head& head,
                             bool with_grads) {
    const int n = features.rows;
    const int k = head.out_dim;
    if (n == 0) throw contract_error("softmax_ce_loss: empty batch");
    for (int y : labels) {
        if (y < 0 || y >= k) throw contract_error("softmax_ce_loss: label out of range");
    }

    const Matrix logits = head.forward(features);
    CeLossResult res;
    Matrix grad_logits(n, k, 0.0);
    const double invn = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        double mx = logits(i, 0);
        for (int c = 1; c < k; ++c) mx = std::max(mx, logits(i, c));
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(logits(i, c) - mx);
        res.loss += (-(logits(i, y) - mx) + std::log(denom)) * invn;
        if (with_grads) {
            for (int c = 0; c < k; ++c) {
                const double q = std::exp(logits(i, c) - mx) / denom;
                grad_logits(i, c) = (q - (c == y ? 1.0 : 0.0)) * invn;
            }
        }
    }
    if (with_grads) {
        Tensor& W = *head.params.find("head.W");
        Tensor& b = *head.params.find("head.b");
        Matrix dW = linalg::matmul_tn(features, grad_logits);
        for (size_t i = 0; i < dW.a.size(); ++i) W.grad.a[i] += dW.a[i];
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) b.grad(0, j) += grad_logits(i, j);
        }
        res.grad_features = linalg::matmul_nt(grad_logits, W.value);
    } else {
        res.grad_features = Matrix(n, features.cols, 0.0);
    }
    return res;
}

AdamState make_adam_state(const ParamSet& params) {
    AdamState st;
    st.m.reserve(params.tensors.size());
    st.v.reserve(params.tensors.size());
    for (const Tensor& t : params.tensors) {
        st.m.emplace_back(t.value.a.size(), 0.0);
        st.v.emplace_back(t.value.a.size(), 0.0);
    }
    return st;
}

void adam_step(ParamSet& params, AdamState& state, double lr, double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.size() != params.tensors.size()) {
        throw contract_error("adam_step: state does not match parameter set");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, state.t);
    const double bc2 = 1.0 - std::pow(beta2, state.t);
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
        Tensor& tensor = params.tensors[ti];
        if (!tensor.trainable) continue;
        auto& m = state.m[ti];
        auto& v = state.v[ti];
        for (size_t i = 0; i < tensor.value.a.size(); ++i) {
            double g = tensor.grad.a[i];
            if (!std::isfinite(g)) {
                throw numeric_error("adam_step: non-finite gradient in tensor '" + tensor.name +
                                    "' at entry " + std::to_string(i) + "; training aborted");
            }
            g += weight_decay * tensor.value.a[i]; // coupled L2
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            tensor.value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    params.mark_mutated();
}

bool EarlyStopper::observe(double loss, int epoch) {
    if (!any || loss < best_loss) {
        any = true;
        best_loss = loss;
        best_epoch = epoch;
        stale = 0;
        return true;
    }
    stale += 1;
    return false;
}

// ---------------------------------------------------------------------------
// Full training pipeline
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kOrderStream = 0x4f524452;
constexpr std::uint64_t kDropStream = 0x44524f50;
constexpr std::uint64_t kMonitorStream = 0x4d4f4e49;

struct Pipeline {
    Backbone* net;
    BNState* bn;
    ParamSet* bn_affine; // tensors bn.g / bn.b mirrored into the BN state
    Head* head;
    const TrainConfig* cfg;

    void sync_bn_affine() {
        if (!cfg->use_bn || !cfg->bn_affine) return;
        bn->gamma = bn_affine->find("bn.g")->value.a;
        bn->beta = bn_affine->find("bn.b")->value.a;
    }

    // forward a set of samples to refined features; tapes optional
    Matrix features(const std::vector<const Matrix*>& maps, std::span<const int> idx, Mode mode,
                    rng::Rng* dropout_rng, std::vector<Tape>* tapes, refine::RefineTape* rtape) {
        const int n = static_cast<int>(idx.size());
        const int d = net->config().out_dim();
        Matrix z(n, d);
        if (tapes) tapes->resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Tape local;
            Tape& tape = tapes ? (*tapes)[static_cast<size_t>(i)] : local;
            const auto zi = net->forward(*maps[static_cast<size_t>(idx[static_cast<size_t>(i)])],
                                         mode, dropout_rng, tape);
            for (int j = 0; j < d; ++j) z(i, j) = zi[static_cast<size_t>(j)];
        }
        sync_bn_affine();
        bn->train_mode = (mode == Mode::Train);
        return refine::refine_forward(z, *bn, cfg->use_bn, cfg->use_l2n, rtape);
    }

    double loss_only(const Matrix& feats, std::span<const int> labels, const AnchorSet& anchors) {
        if (cfg->method == "softmax") {
            return softmax_ce_loss(feats, labels, *head, /*with_grads=*/false).loss;
        }
        return cac_loss(feats, labels, *head, anchors, cfg->lambda_anchor, /*with_grads=*/false).loss;
    }
};

struct Checkpoint {
    std::vector<Matrix> net_values;
    std::vector<Matrix> head_values;
    std::vector<Matrix> bn_affine_values;
    BNState bn;
    int epoch = 0;

    void capture(const Backbone& net, const Head& head, const ParamSet& bn_affine,
                 const BNState& bn_state, int ep) {
        net_values.clear();
        head_values.clear();
        bn_affine_values.clear();
        for (const Tensor& t : net.params().tensors) net_values.push_back(t.value);
        for (const Tensor& t : head.params.tensors) head_values.push_back(t.value);
        for (const Tensor& t : bn_affine.tensors) bn_affine_values.push_back(t.value);
        bn = bn_state;
        epoch = ep;
    }

    void restore(Backbone& net, Head& head, ParamSet& bn_affine, BNState& bn_state) const {
        for (size_t i = 0; i < net_values.size(); ++i) net.params().tensors[i].value = net_values[i];
        for (size_t i = 0; i < head_values.size(); ++i) head.params.tensors[i].value = head_values[i];
        for (size_t i = 0; i < bn_affine_values.size(); ++i) bn_affine.tensors[i].value = bn_affine_values[i];
        net.params().mark_mutated();
        head.params.mark_mutated();
        bn_affine.mark_mutated();
        bn_state = bn;
    }
};

} // namespace

std::vector<double> TrainedModel::refined_feature(const Matrix& map) const {
    Tape tape;
    const auto z = net.forward(map, Mode::Eval, nullptr, tape);
    Matrix zrow(1, static_cast<int>(z.size()));
    for (size_t j = 0; j < z.size(); ++j) zrow(0, static_cast<int>(j)) = z[j];
    BNState local = bn; // eval mode mutates nothing; copy keeps this const
    Matrix f = refine::refine_forward(zrow, local, train_cfg.use_bn, train_cfg.use_l2n);
    return {f.a.begin(), f.a.end()};
}

std::pair<double, int> TrainedModel::score_sample(const Matrix& map) const {
    const std::vector<double> f = refined_feature(map);

    if (train_cfg.method == "softmax") {
        Matrix frow(1, static_cast<int>(f.size()));
        for (size_t j = 0; j < f.size(); ++j) frow(0, static_cast<int>(j)) = f[j];
        const Matrix logits = head.forward(frow);
        int best = 0;
        for (int c = 1; c < logits.cols; ++c) {
            if (logits(0, c) > logits(0, best)) best = c;
        }
        double mx = logits(0, best);
        double denom = 0.0;
        for (int c = 0; c < logits.cols; ++c) denom += std::exp(logits(0, c) - mx);
        const double max_prob = 1.0 / denom; // exp(0)/denom
        return {-max_prob, best};
    }

    if (train_cfg.score_metric == "anchor") {
        Matrix frow(1, static_cast<int>(f.size()));
        for (size_t j = 0; j < f.size(); ++j) frow(0, static_cast<int>(j)) = f[j];
        const Matrix p = head.forward(frow);
        double best = std::numeric_limits<double>::infinity();
        int best_id = -1;
        for (int c = 0; c < anchors.k; ++c) {
            double s = 0.0;
            for (int j = 0; j < anchors.k; ++j) {
                const double dv = p(0, j) - anchors.anchors(c, j);
                s += dv * dv;
            }
            const double dist = std::sqrt(s);
            if (dist < best) {
                best = dist;
                best_id = c;
            }
        }
        return {best, best_id};
    }

    const auto metric = train_cfg.score_metric == "euclidean" ? scorer::Metric::Euclidean
                                                              : scorer::Metric::Mahalanobis;
    return scorer::rejection_score(f, stats, metric);
}

scorer::OpenSetDecision TrainedModel::classify(const Matrix& map) const {
    const auto [s, yhat] = score_sample(map);
    return scorer::decide(s, yhat, tau);
}

TrainedModel train_model(const TrainData& data, const BackboneConfig& bcfg_in,
                         const TrainConfig& tcfg) {
    tcfg.validate();
    if (data.maps.empty()) throw contract_error("train_model: empty training split");
    if (data.maps.size() != data.labels.size()) {
        throw contract_error("train_model: maps and labels length mismatch");
    }
    if (data.n_classes < 1) throw contract_error("train_model: need at least one class");
    std::vector<int> per_class(static_cast<size_t>(data.n_classes), 0);
    for (int y : data.labels) {
        if (y < 0 || y >= data.n_classes) {
            throw contract_error("train_model: label outside known-class range");
        }
        per_class[static_cast<size_t>(y)] += 1;
    }
    for (int c = 0; c < data.n_classes; ++c) {
        if (per_class[static_cast<size_t>(c)] < 2) {
            throw contract_error("train_model: class " + std::to_string(c) +
                                 " has fewer than 2 training samples");
        }
    }

    BackboneConfig bcfg = bcfg_in;
    bcfg.dropout = tcfg.dropout;

    TrainedModel model(bcfg);
    model.backbone_cfg = bcfg;
    model.train_cfg = tcfg;
    model.n_classes = data.n_classes;

    rng::Rng init_rng(rng::derive_seed(tcfg.seed, {kInitStream}));
    rng::Rng order_rng(rng::derive_seed(tcfg.seed, {kOrderStream}));
    rng::Rng drop_rng(rng::derive_seed(tcfg.seed, {kDropStream}));
    rng::Rng monitor_rng(rng::derive_seed(tcfg.seed, {kMonitorStream}));

    const int d = bcfg.out_dim();
    model.net.init_params(init_rng);
    model.bn = refine::make_bn_state(d, tcfg.bn_affine);
    model.head = Head(d, data.n_classes);
    model.head.init(init_rng);
    model.anchors = make_anchor_set(data.n_classes, tcfg.anchor_magnitude);

    // learnable BN affine parameters live in their own ParamSet so the
    // optimizer treats them like any other tensor
    ParamSet bn_affine;
    {
        Tensor& g = bn_affine.add("bn.g", 1, d);
        std::fill(g.value.a.begin(), g.value.a.end(), 1.0);
        bn_affine.add("bn.b", 1, d);
    }

    // monitor split: stratified draw per class, capped so >= 2 samples stay
    std::vector<int> train_idx, monitor_idx;
    {
        std::vector<std::vector<int>> members(static_cast<size_t>(data.n_classes));
        for (size_t i = 0; i < data.labels.size(); ++i) {
            members[static_cast<size_t>(data.labels[i])].push_back(static_cast<int>(i));
        }
        for (auto& m : members) {
            monitor_rng.shuffle(m);
            int want = static_cast<int>(std::floor(tcfg.monitor_fraction * static_cast<double>(m.size()) + 0.5));
            want = std::min(want, static_cast<int>(m.size()) - 2);
            want = std::max(want, 0);
            for (size_t i = 0; i < m.size(); ++i) {
                if (static_cast<int>(i) < want) monitor_idx.push_back(m[i]);
                else train_idx.push_back(m[i]);
            }
        }
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(monitor_idx.begin(), monitor_idx.end());
    }

    Pipeline pipe{&model.net, &model.bn, &bn_affine, &model.head, &tcfg};

    AdamState net_adam = make_adam_state(model.net.params());
    AdamState head_adam = make_adam_state(model.head.params);
    AdamState bn_adam = make_adam_state(bn_affine);

    EarlyStopper stopper(tcfg.patience);
    Checkpoint best;
    const std::vector<int>& monitor_set = monitor_idx.empty() ? train_idx : monitor_idx;

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        std::vector<int> order = train_idx;
        order_rng.shuffle(order);

        // batch boundaries; a trailing single sample is merged into the
        // previous batch so batch norm always sees n >= 2
        std::vector<std::pair<int, int>> batches;
        int pos = 0;
        const int ntrain = static_cast<int>(order.size());
        while (pos < ntrain) {
            int len = std::min(tcfg.batch_size, ntrain - pos);
            if (ntrain - (pos + len) == 1) len += 1;
            batches.emplace_back(pos, len);
            pos += len;
        }

        double epoch_loss = 0.0;
        int seen = 0;
        for (const auto& [start, len] : batches) {
            std::vector<int> idx(order.begin() + start, order.begin() + start + len);
            std::vector<int> labels(static_cast<size_t>(len));
            for (int i = 0; i < len; ++i) {
                labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
            }

            model.net.params().zero_grads();
            model.head.params.zero_grads();
            bn_affine.zero_grads();

            std::vector<Tape> tapes;
            refine::RefineTape rtape;
            Matrix feats = pipe.features(data.maps, idx, Mode::Train, &drop_rng, &tapes, &rtape);

            Matrix grad_feats;
            double batch_loss = 0.0;
            if (tcfg.method == "softmax") {
                auto res = softmax_ce_loss(feats, labels, model.head);
                batch_loss = res.loss;
                grad_feats = std::move(res.grad_features);
            } else {
                auto res = cac_loss(feats, labels, model.head, model.anchors, tcfg.lambda_anchor);
                batch_loss = res.loss;
                grad_feats = std::move(res.grad_features);
            }

            refine::RefineGrads rg = refine::refine_backward(rtape, grad_feats);
            if (tcfg.use_bn && tcfg.bn_affine) {
                bn_affine.find("bn.g")->grad.a = rg.grad_gamma;
                bn_affine.find("bn.b")->grad.a = rg.grad_beta;
            }
            for (int i = 0; i < len; ++i) {
                model.net.backward(tapes[static_cast<size_t>(i)], rg.grad_input.row(i));
            }

            adam_step(model.net.params(), net_adam, tcfg.lr, tcfg.weight_decay);
            adam_step(model.head.params, head_adam, tcfg.lr, tcfg.weight_decay);
            if (tcfg.use_bn && tcfg.bn_affine) {
                adam_step(bn_affine, bn_adam, tcfg.lr, /*weight_decay=*/0.0);
            }

            epoch_loss += batch_loss * len;
            seen += len;
        }
        epoch_loss /= std::max(1, seen);

        // monitor loss: deterministic eval-mode pass
        std::vector<int> mon_labels(monitor_set.size());
        for (size_t i = 0; i < monitor_set.size(); ++i) {
            mon_labels[i] = data.labels[static_cast<size_t>(monitor_set[i])];
        }
        Matrix mon_feats = pipe.features(data.maps, monitor_set, Mode::Eval, nullptr, nullptr, nullptr);
        const double monitor_loss = pipe.loss_only(mon_feats, mon_labels, model.anchors);

        model.history.push_back({epoch, epoch_loss, monitor_loss});
        if (stopper.observe(monitor_loss, epoch)) {
            best.capture(model.net, model.head, bn_affine, model.bn, epoch);
        }
        if (stopper.should_stop()) break;
    }

    best.restore(model.net, model.head, bn_affine, model.bn);
    model.best_epoch = best.epoch;

    // freeze: eval-mode BN with the best checkpoint's running statistics
    pipe.sync_bn_affine();
    model.bn.train_mode = false;

    // class statistics on refined training features under the frozen model
    if (tcfg.method == "cac" && tcfg.score_metric != "anchor") {
        const int n = static_cast<int>(data.maps.size());
        Matrix feats(n, d);
        for (int i = 0; i < n; ++i) {
            const auto f = model.refined_feature(*data.maps[static_cast<size_t>(i)]);
            for (int j = 0; j < d; ++j) feats(i, j) = f[static_cast<size_t>(j)];
        }
        model.stats = scorer::fit_stats(feats, data.labels, data.n_classes, tcfg.cov_lambda,
                                        /*expect_unit_norm=*/tcfg.use_l2n);
    }

    // threshold from training-set known-class scores
    std::vector<double> train_scores;
    train_scores.reserve(data.maps.size());
    for (const Matrix* m : data.maps) {
        train_scores.push_back(model.score_sample(*m).first);
    }
    model.tau = scorer::calibrate_threshold(std::move(train_scores), tcfg.reject_percentile);

    return model;
}

TrainedModel train_softmax_baseline(const TrainData& data, const BackboneConfig& bcfg,
                                    TrainConfig tcfg) {
    tcfg.method = "softmax";
    if (tcfg.score_metric == "anchor") tcfg.score_metric = "mahalanobis";
    return train_model(data, bcfg, tcfg);
}

} // namespace osr::train
