#include "osr/config.hpp"

#include "osr/error.hpp"

#include "json.hpp"

#include <fstream>
#include <set>

namespace osr::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& ctx, std::set<std::string> allowed) {
    if (!j.is_object()) throw config_error("config: '" + ctx + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw config_error("config: unknown key '" + key + "' in " + ctx);
        }
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_dataset(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "dataset", {"source", "path", "synthetic"});
    if (!j.contains("source")) throw config_error("config: dataset.source is required");
    cfg.dataset_source = j.at("source").get<std::string>();
    if (cfg.dataset_source == "path") {
        if (!j.contains("path")) throw config_error("config: dataset.path is required for source 'path'");
        cfg.dataset_path = j.at("path").get<std::string>();
    } else if (cfg.dataset_source == "synthetic") {
        if (j.contains("synthetic")) {
            const json& s = j.at("synthetic");
            check_keys(s, "dataset.synthetic",
                       {"n_classes", "samples_per_class_per_position", "n_positions", "t_steps",
                        "channels", "feature_anisotropy", "position_decay", "noise_std",
                        "base_amplitude", "radial_spread", "template_jitter"});
            get_if(s, "n_classes", cfg.synth.n_classes);
            get_if(s, "samples_per_class_per_position", cfg.synth.samples_per_class_per_position);
            get_if(s, "n_positions", cfg.synth.n_positions);
            get_if(s, "t_steps", cfg.synth.t_steps);
            get_if(s, "channels", cfg.synth.channels);
            get_if(s, "feature_anisotropy", cfg.synth.feature_anisotropy);
            get_if(s, "position_decay", cfg.synth.position_decay);
            get_if(s, "noise_std", cfg.synth.noise_std);
            get_if(s, "base_amplitude", cfg.synth.base_amplitude);
            get_if(s, "radial_spread", cfg.synth.radial_spread);
            get_if(s, "template_jitter", cfg.synth.template_jitter);
        }
    } else {
        throw config_error("config: dataset.source must be 'synthetic' or 'path'");
    }
}

void parse_backbone(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "backbone",
               {"kind", "hidden_dim", "feature_dim", "mlp_activation", "d_model", "n_heads",
                "n_layers", "ff_mult"});
    get_if(j, "kind", cfg.backbone.kind);
    get_if(j, "hidden_dim", cfg.backbone.hidden_dim);
    get_if(j, "feature_dim", cfg.backbone.feature_dim);
    get_if(j, "mlp_activation", cfg.backbone.mlp_activation);
    get_if(j, "d_model", cfg.backbone.d_model);
    get_if(j, "n_heads", cfg.backbone.n_heads);
    get_if(j, "n_layers", cfg.backbone.n_layers);
    get_if(j, "ff_mult", cfg.backbone.ff_mult);
}

void parse_train(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "train",
               {"batch_size", "lr", "weight_decay", "max_epochs", "patience", "dropout",
                "lambda_anchor", "anchor_magnitude", "monitor_fraction", "bn_affine", "method"});
    get_if(j, "batch_size", cfg.train.batch_size);
    get_if(j, "lr", cfg.train.lr);
    get_if(j, "weight_decay", cfg.train.weight_decay);
    get_if(j, "max_epochs", cfg.train.max_epochs);
    get_if(j, "patience", cfg.train.patience);
    get_if(j, "dropout", cfg.train.dropout);
    get_if(j, "lambda_anchor", cfg.train.lambda_anchor);
    get_if(j, "anchor_magnitude", cfg.train.anchor_magnitude);
    get_if(j, "monitor_fraction", cfg.train.monitor_fraction);
    get_if(j, "bn_affine", cfg.train.bn_affine);
    get_if(j, "method", cfg.train.method);
}

void parse_score(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "score", {"metric", "reject_percentile", "lambda"});
    get_if(j, "metric", cfg.train.score_metric);
    get_if(j, "reject_percentile", cfg.train.reject_percentile);
    get_if(j, "lambda", cfg.train.cov_lambda);
}

void parse_ablation(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "ablation", {"use_bn", "use_l2n"});
    get_if(j, "use_bn", cfg.train.use_bn);
    get_if(j, "use_l2n", cfg.train.use_l2n);
}

void parse_protocol(const json& j, ExperimentConfig& cfg) {
    check_keys(j, "protocol",
               {"n_folds", "n_known", "n_unknown", "train_fraction", "unknown_test_fraction", "fpr"});
    get_if(j, "n_folds", cfg.protocol.n_folds);
    get_if(j, "n_known", cfg.protocol.n_known);
    get_if(j, "n_unknown", cfg.protocol.n_unknown);
    get_if(j, "train_fraction", cfg.protocol.train_fraction);
    get_if(j, "unknown_test_fraction", cfg.protocol.unknown_test_fraction);
    get_if(j, "fpr", cfg.protocol.fpr);
}

void parse_variants(const json& j, ExperimentConfig& cfg) {
    if (!j.is_array()) throw config_error("config: 'variants' must be an array");
    std::set<std::string> seen;
    for (const json& v : j) {
        check_keys(v, "variants[]", {"name", "method", "use_bn", "use_l2n", "score_metric"});
        eval::Variant var;
        var.method = cfg.train.method;
        var.use_bn = cfg.train.use_bn;
        var.use_l2n = cfg.train.use_l2n;
        var.score_metric = cfg.train.score_metric;
        if (!v.contains("name")) throw config_error("config: every variant needs a name");
        var.name = v.at("name").get<std::string>();
        get_if(v, "method", var.method);
        get_if(v, "use_bn", var.use_bn);
        get_if(v, "use_l2n", var.use_l2n);
        get_if(v, "score_metric", var.score_metric);
        if (!seen.insert(var.name).second) {
            throw config_error("config: duplicate variant name '" + var.name + "'");
        }
        cfg.variants.push_back(std::move(var));
    }
}

} // namespace

void ExperimentConfig::validate() const {
    if (dataset_source != "synthetic" && dataset_source != "path") {
        throw config_error("config: dataset.source must be 'synthetic' or 'path'");
    }
    if (dataset_source == "synthetic") {
        dataio::SynthConfig s = synth;
        s.seed = seed;
        s.validate();
    } else if (dataset_path.empty()) {
        throw config_error("config: dataset.path must not be empty");
    }
    backbone.validate();
    protocol.validate();
    // validate the base and every variant as a full train config
    train.validate();
    for (const eval::Variant& v : resolved_variants()) {
        eval::apply_variant(train, v).validate();
    }
}

std::vector<eval::Variant> ExperimentConfig::resolved_variants() const {
    if (!variants.empty()) return variants;
    eval::Variant v;
    v.name = "default";
    v.method = train.method;
    v.use_bn = train.use_bn;
    v.use_l2n = train.use_l2n;
    v.score_metric = train.score_metric;
    return {v};
}

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        throw config_error("config: JSON parse error: " + std::string(e.what()));
    }
    check_keys(j, "top level",
               {"seed", "out_dir", "emit_roc_svg", "save_models", "dataset", "backbone", "train",
                "score", "ablation", "protocol", "variants"});

    ExperimentConfig cfg;
    get_if(j, "seed", cfg.seed);
    get_if(j, "out_dir", cfg.out_dir);
    get_if(j, "emit_roc_svg", cfg.emit_roc_svg);
    get_if(j, "save_models", cfg.save_models);

    if (!j.contains("dataset")) throw config_error("config: 'dataset' section is required");
    parse_dataset(j.at("dataset"), cfg);
    if (j.contains("backbone")) parse_backbone(j.at("backbone"), cfg);
    if (j.contains("train")) parse_train(j.at("train"), cfg);
    if (j.contains("score")) parse_score(j.at("score"), cfg);
    if (j.contains("ablation")) parse_ablation(j.at("ablation"), cfg);
    if (j.contains("protocol")) parse_protocol(j.at("protocol"), cfg);
    if (j.contains("variants")) parse_variants(j.at("variants"), cfg);

    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

} // namespace osr::config
