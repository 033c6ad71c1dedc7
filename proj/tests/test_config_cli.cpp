#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "osr/config.hpp"
#include "osr/error.hpp"
#include "osr/eval.hpp"
#include "osr/model_io.hpp"
#include "osr/report_io.hpp"

#include <filesystem>
#include <fstream>

using namespace osr;
using osr::config::ExperimentConfig;
using osr::config::parse_config;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kMinimalConfig = R"({
  "dataset": {"source": "synthetic"}
})";

} // namespace

TEST_CASE("config defaults mirror the reference hyperparameter table") {
    ExperimentConfig cfg = parse_config(kMinimalConfig);
    CHECK(cfg.seed == 41);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.train.lr == 4e-5);
    CHECK(cfg.train.weight_decay == 1e-4);
    CHECK(cfg.train.max_epochs == 25);
    CHECK(cfg.train.patience == 10);
    CHECK(cfg.train.dropout == 0.1);
    CHECK(cfg.train.lambda_anchor == 1e-5);
    CHECK(cfg.train.cov_lambda == 1e-4);
    CHECK(cfg.train.reject_percentile == 95.0);
    CHECK(cfg.protocol.n_known == 6);
    CHECK(cfg.protocol.n_unknown == 4);
    CHECK(cfg.protocol.train_fraction == 0.6);
    CHECK(cfg.protocol.fpr == 0.05);
    CHECK(cfg.backbone.kind == "mlp");
    CHECK(cfg.resolved_variants().size() == 1);
}

TEST_CASE("config rejects unknown keys at every level") {
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"source": "synthetic"}, "oops": 1})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"source": "synthetic", "oops": 1}})"), Error);
    CHECK_THROWS_AS(
        parse_config(R"({"dataset": {"source": "synthetic"}, "train": {"oops": 1}})"), Error);
    CHECK_THROWS_AS(
        parse_config(R"({"dataset": {"source": "synthetic"}, "backbone": {"kind": "mlp", "zzz": 2}})"),
        Error);
    CHECK_THROWS_AS(
        parse_config(
            R"({"dataset": {"source": "synthetic"}, "variants": [{"name": "a", "bogus": true}]})"),
        Error);
}

TEST_CASE("config validation is total: bad values fail before any compute") {
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"source": "nope"}})"), Error);
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"source": "path"}})"), Error);
    CHECK_THROWS_AS(
        parse_config(R"({"dataset": {"source": "synthetic"}, "train": {"lr": -1.0}})"), Error);
    CHECK_THROWS_AS(
        parse_config(R"({"dataset": {"source": "synthetic"}, "protocol": {"n_folds": 0}})"), Error);
    CHECK_THROWS_AS(
        parse_config(
            R"({"dataset": {"source": "synthetic"}, "backbone": {"kind": "attention", "d_model": 6, "n_heads": 4}})"),
        Error);
    CHECK_THROWS_AS(
        parse_config(
            R"({"dataset": {"source": "synthetic", "synthetic": {"position_decay": [1.0]}}})"),
        Error); // decay length disagrees with default n_positions
    // malformed JSON
    CHECK_THROWS_AS(parse_config("{"), Error);
    // duplicate variant names
    CHECK_THROWS_AS(
        parse_config(
            R"({"dataset": {"source": "synthetic"}, "variants": [{"name": "x"}, {"name": "x"}]})"),
        Error);
}

TEST_CASE("variants inherit base flags and override selectively") {
    ExperimentConfig cfg = parse_config(R"({
      "dataset": {"source": "synthetic"},
      "ablation": {"use_bn": false, "use_l2n": true},
      "score": {"metric": "euclidean"},
      "variants": [
        {"name": "a"},
        {"name": "b", "use_bn": true, "score_metric": "mahalanobis"},
        {"name": "c", "method": "softmax"}
      ]
    })");
    auto vs = cfg.resolved_variants();
    REQUIRE(vs.size() == 3);
    CHECK_FALSE(vs[0].use_bn);
    CHECK(vs[0].use_l2n);
    CHECK(vs[0].score_metric == "euclidean");
    CHECK(vs[1].use_bn);
    CHECK(vs[1].score_metric == "mahalanobis");
    CHECK(vs[2].method == "softmax");
}

namespace {

train::TrainedModel tiny_trained_model(std::uint64_t seed = 41) {
    dataio::SynthConfig scfg;
    scfg.n_classes = 3;
    scfg.samples_per_class_per_position = 12;
    scfg.n_positions = 1;
    scfg.position_decay = {1.0};
    scfg.t_steps = 12;
    scfg.channels = 6;
    scfg.seed = 5;
    static dataio::Dataset ds; // static: keeps grids alive for the returned model's tests
    ds = dataio::generate_synthetic(scfg);

    train::TrainData td;
    for (const auto& s : ds.samples) {
        td.maps.push_back(&s.grid);
        td.labels.push_back(s.label);
    }
    td.n_classes = 3;

    backbone::BackboneConfig bcfg;
    bcfg.kind = "mlp";
    bcfg.t_steps = 12;
    bcfg.channels = 6;
    bcfg.hidden_dim = 8;
    bcfg.feature_dim = 6;

    train::TrainConfig tcfg;
    tcfg.lr = 5e-3;
    tcfg.max_epochs = 4;
    tcfg.patience = 3;
    tcfg.dropout = 0.05;
    tcfg.seed = seed;
    return train::train_model(td, bcfg, tcfg);
}

const dataio::Dataset& model_dataset() {
    dataio::SynthConfig scfg;
    scfg.n_classes = 3;
    scfg.samples_per_class_per_position = 12;
    scfg.n_positions = 1;
    scfg.position_decay = {1.0};
    scfg.t_steps = 12;
    scfg.channels = 6;
    scfg.seed = 5;
    static dataio::Dataset ds = dataio::generate_synthetic(scfg);
    return ds;
}

} // namespace

TEST_CASE("model serialization round-trips scores bit-exactly") {
    train::TrainedModel m = tiny_trained_model();
    const std::string text = model_io::model_to_json(m);
    train::TrainedModel back = model_io::model_from_json(text);

    CHECK(back.tau == m.tau);
    CHECK(back.n_classes == m.n_classes);
    CHECK(back.best_epoch == m.best_epoch);

    const auto& ds = model_dataset();
    for (size_t i = 0; i < ds.samples.size(); i += 5) {
        const auto a = m.score_sample(ds.samples[i].grid);
        const auto b = back.score_sample(ds.samples[i].grid);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }

    // serialize(load(serialize(m))) is a fixed point
    CHECK(model_io::model_to_json(back) == text);
}

TEST_CASE("identical (seed, config, dataset) give identical model serializations") {
    const std::string a = model_io::model_to_json(tiny_trained_model(41));
    const std::string b = model_io::model_to_json(tiny_trained_model(41));
    CHECK(a == b);
    const std::string c = model_io::model_to_json(tiny_trained_model(17));
    CHECK(a != c);
}

TEST_CASE("model loader rejects foreign or corrupt payloads") {
    CHECK_THROWS_AS(model_io::model_from_json("{}"), Error);
    CHECK_THROWS_AS(model_io::model_from_json("not json"), Error);
    train::TrainedModel m = tiny_trained_model();
    std::string text = model_io::model_to_json(m);
    // tamper with the format tag
    const auto pos = text.find("osr-model/1");
    text.replace(pos, 11, "osr-model/9");
    CHECK_THROWS_AS(model_io::model_from_json(text), Error);
}

TEST_CASE("report writers: deterministic CSV, score round trip, SVG output") {
    TempDir tmp("osr_report_io");

    dataio::SynthConfig scfg;
    scfg.n_classes = 4;
    scfg.samples_per_class_per_position = 12;
    scfg.n_positions = 1;
    scfg.position_decay = {1.0};
    scfg.t_steps = 12;
    scfg.channels = 6;
    scfg.seed = 9;
    dataio::Dataset ds = dataio::generate_synthetic(scfg);

    eval::ProtocolConfig pcfg;
    pcfg.n_folds = 1;
    pcfg.n_known = 2;
    pcfg.n_unknown = 2;
    train::TrainConfig tcfg;
    tcfg.lr = 5e-3;
    tcfg.max_epochs = 2;
    tcfg.patience = 2;
    tcfg.dropout = 0.0;
    tcfg.batch_size = 8;
    backbone::BackboneConfig bcfg;
    bcfg.kind = "mlp";
    bcfg.hidden_dim = 8;
    bcfg.feature_dim = 6;
    std::vector<eval::Variant> variants = {{"full", "cac", true, true, "mahalanobis"}};

    eval::ExperimentReport rep = eval::run_protocol(ds, variants, pcfg, tcfg, bcfg, 41);

    report_io::write_report_csv(rep, tmp.path / "report.csv");
    report_io::write_scores_csv(rep, tmp.path / "scores.csv");
    report_io::write_aggregates_json(rep, tmp.path / "aggregates.json");

    // identical report -> byte-identical CSV
    report_io::write_report_csv(rep, tmp.path / "report2.csv");
    std::ifstream f1(tmp.path / "report.csv"), f2(tmp.path / "report2.csv");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(s1.find("config,position,fold,accuracy") == 0);

    // score CSV round trip preserves the pooled ROC inputs
    auto rows = report_io::score_rows_from_report(rep);
    auto reread = report_io::read_scores_csv(tmp.path / "scores.csv");
    REQUIRE(rows.size() == reread.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].config == reread[i].config);
        CHECK(rows[i].unknown_truth == reread[i].unknown_truth);
        CHECK(rows[i].score == doctest::Approx(reread[i].score).epsilon(1e-10));
    }

    report_io::write_all_roc_svgs(rows, rep.configs, tmp.path);
    std::ifstream svg(tmp.path / "roc_full.svg");
    REQUIRE(svg.good());
    std::string svg_text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
    CHECK(svg_text.find("<svg") == 0);
    CHECK(svg_text.find("polyline") != std::string::npos);
    CHECK(svg_text.find("AUROC") != std::string::npos);
}
