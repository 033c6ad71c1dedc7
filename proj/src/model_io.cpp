#include "osr/model_io.hpp"

#include "osr/error.hpp"

#include "json.hpp"

#include <fstream>

namespace osr::model_io {

using nlohmann::json;
using backbone::Tensor;
using linalg::Matrix;

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["name"] = t.name;
    j["rows"] = t.value.rows;
    j["cols"] = t.value.cols;
    j["trainable"] = t.trainable;
    j["values"] = t.value.a;
    return j;
}

void tensor_from_json(const json& j, backbone::ParamSet& params) {
    const std::string name = j.at("name").get<std::string>();
    Tensor* t = params.find(name);
    if (!t) throw data_error("model: unexpected tensor '" + name + "'");
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    if (rows != t->value.rows || cols != t->value.cols) {
        throw data_error("model: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", expected " + std::to_string(t->value.rows) +
                         "x" + std::to_string(t->value.cols));
    }
    t->value.a = j.at("values").get<std::vector<double>>();
    t->trainable = j.at("trainable").get<bool>();
}

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["values"] = m.a;
    return j;
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.a = j.at("values").get<std::vector<double>>();
    if (m.a.size() != static_cast<size_t>(m.rows) * static_cast<size_t>(m.cols)) {
        throw data_error("model: matrix entry count does not match its shape");
    }
    return m;
}

json backbone_cfg_to_json(const backbone::BackboneConfig& c) {
    json j;
    j["kind"] = c.kind;
    j["t_steps"] = c.t_steps;
    j["channels"] = c.channels;
    j["dropout"] = c.dropout;
    j["hidden_dim"] = c.hidden_dim;
    j["feature_dim"] = c.feature_dim;
    j["mlp_activation"] = c.mlp_activation;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_layers"] = c.n_layers;
    j["ff_mult"] = c.ff_mult;
    return j;
}

backbone::BackboneConfig backbone_cfg_from_json(const json& j) {
    backbone::BackboneConfig c;
    c.kind = j.at("kind").get<std::string>();
    c.t_steps = j.at("t_steps").get<int>();
    c.channels = j.at("channels").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.mlp_activation = j.at("mlp_activation").get<std::string>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    return c;
}

json train_cfg_to_json(const train::TrainConfig& c) {
    json j;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["seed"] = c.seed;
    j["dropout"] = c.dropout;
    j["lambda_anchor"] = c.lambda_anchor;
    j["anchor_magnitude"] = c.anchor_magnitude;
    j["monitor_fraction"] = c.monitor_fraction;
    j["method"] = c.method;
    j["use_bn"] = c.use_bn;
    j["use_l2n"] = c.use_l2n;
    j["bn_affine"] = c.bn_affine;
    j["score_metric"] = c.score_metric;
    j["reject_percentile"] = c.reject_percentile;
    j["cov_lambda"] = c.cov_lambda;
    return j;
}

train::TrainConfig train_cfg_from_json(const json& j) {
    train::TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dropout = j.at("dropout").get<double>();
    c.lambda_anchor = j.at("lambda_anchor").get<double>();
    c.anchor_magnitude = j.at("anchor_magnitude").get<double>();
    c.monitor_fraction = j.at("monitor_fraction").get<double>();
    c.method = j.at("method").get<std::string>();
    c.use_bn = j.at("use_bn").get<bool>();
    c.use_l2n = j.at("use_l2n").get<bool>();
    c.bn_affine = j.at("bn_affine").get<bool>();
    c.score_metric = j.at("score_metric").get<std::string>();
    c.reject_percentile = j.at("reject_percentile").get<double>();
    c.cov_lambda = j.at("cov_lambda").get<double>();
    return c;
}

} // namespace

std::string model_to_json(const train::TrainedModel& model) {
    json j;
    j["format"] = kFormatTag;
    j["backbone"] = backbone_cfg_to_json(model.backbone_cfg);
    j["train"] = train_cfg_to_json(model.train_cfg);
    j["n_classes"] = model.n_classes;
    j["tau"] = model.tau;
    j["best_epoch"] = model.best_epoch;

    json params = json::array();
    for (const Tensor& t : model.net.params().tensors) params.push_back(tensor_to_json(t));
    j["params"] = std::move(params);

    json head;
    head["in_dim"] = model.head.in_dim;
    head["out_dim"] = model.head.out_dim;
    json head_params = json::array();
    for (const Tensor& t : model.head.params.tensors) head_params.push_back(tensor_to_json(t));
    head["params"] = std::move(head_params);
    j["head"] = std::move(head);

    json bn;
    bn["dim"] = model.bn.dim;
    bn["eps"] = model.bn.eps;
    bn["momentum"] = model.bn.momentum;
    bn["affine"] = model.bn.affine;
    bn["running_mean"] = model.bn.running_mean;
    bn["running_var"] = model.bn.running_var;
    bn["gamma"] = model.bn.gamma;
    bn["beta"] = model.bn.beta;
    j["bn"] = std::move(bn);

    json anchors;
    anchors["k"] = model.anchors.k;
    anchors["magnitude"] = model.anchors.magnitude;
    j["anchors"] = std::move(anchors);

    json stats = json::array();
    for (const auto& st : model.stats) {
        json s;
        s["class_id"] = st.class_id;
        s["n_samples"] = st.n_samples;
        s["mu"] = st.mu;
        s["sigma_reg"] = matrix_to_json(st.sigma_reg);
        stats.push_back(std::move(s));
    }
    j["stats"] = std::move(stats);

    json history = json::array();
    for (const auto& h : model.history) {
        json e;
        e["epoch"] = h.epoch;
        e["train_loss"] = h.train_loss;
        e["monitor_loss"] = h.monitor_loss;
        history.push_back(std::move(e));
    }
    j["history"] = std::move(history);

    return j.dump(2);
}

train::TrainedModel model_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw data_error("model: parse error: " + std::string(e.what()));
    }
    if (!j.contains("format") || j.at("format").get<std::string>() != kFormatTag) {
        throw data_error("model: missing or unsupported format tag (expected 'osr-model/1')");
    }

    train::TrainedModel model(backbone_cfg_from_json(j.at("backbone")));
    model.backbone_cfg = model.net.config();
    model.train_cfg = train_cfg_from_json(j.at("train"));
    model.n_classes = j.at("n_classes").get<int>();
    model.tau = j.at("tau").get<double>();
    model.best_epoch = j.at("best_epoch").get<int>();

    for (const json& t : j.at("params")) tensor_from_json(t, model.net.params());
    model.net.params().mark_mutated();

    const json& head = j.at("head");
    model.head = train::Head(head.at("in_dim").get<int>(), head.at("out_dim").get<int>());
    for (const json& t : head.at("params")) tensor_from_json(t, model.head.params);

    const json& bn = j.at("bn");
    model.bn = refine::make_bn_state(bn.at("dim").get<int>(), bn.at("affine").get<bool>());
    model.bn.eps = bn.at("eps").get<double>();
    model.bn.momentum = bn.at("momentum").get<double>();
    model.bn.running_mean = bn.at("running_mean").get<std::vector<double>>();
    model.bn.running_var = bn.at("running_var").get<std::vector<double>>();
    model.bn.gamma = bn.at("gamma").get<std::vector<double>>();
    model.bn.beta = bn.at("beta").get<std::vector<double>>();
    model.bn.train_mode = false;

    model.anchors = train::make_anchor_set(j.at("anchors").at("k").get<int>(),
                                           j.at("anchors").at("magnitude").get<double>());

    for (const json& s : j.at("stats")) {
        scorer::ClassStats st;
        st.class_id = s.at("class_id").get<int>();
        st.n_samples = s.at("n_samples").get<int>();
        st.mu = s.at("mu").get<std::vector<double>>();
        st.sigma_reg = matrix_from_json(s.at("sigma_reg"));
        st.chol = linalg::cholesky(st.sigma_reg);
        model.stats.push_back(std::move(st));
    }

    for (const json& h : j.at("history")) {
        model.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                                 h.at("monitor_loss").get<double>()});
    }
    return model;
}

void save_model(const train::TrainedModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw data_error("save_model: cannot write " + path.string());
    out << model_to_json(model) << '\n';
}

train::TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("load_model: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_json(text);
}

} // namespace osr::model_io
