// osr: open-set gas recognition experiments from the command line.
//
//   osr generate --config cfg.json --out DIR [--force] [--seed N]
//   osr run      --config cfg.json --out DIR [--jobs N] [--seed N]
//   osr ablate   --config cfg.json --out DIR [--jobs N] [--seed N]
//   osr report   --scores scores.csv --out DIR
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/numerical.

#include "osr/config.hpp"
#include "osr/dataio.hpp"
#include "osr/error.hpp"
#include "osr/eval.hpp"
#include "osr/model_io.hpp"
#include "osr/report_io.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    bool force = false;
    int jobs = 1;
    std::int64_t seed_override = -1;
};

osr::config::ExperimentConfig load_config(const CommonArgs& args) {
    osr::config::ExperimentConfig cfg = osr::config::load_config(args.config_path);
    if (args.seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(args.seed_override);
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
    }
    return cfg;
}

fs::path resolve_out(const CommonArgs& args, const osr::config::ExperimentConfig& cfg) {
    if (!args.out_dir.empty()) return args.out_dir;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    throw osr::config_error("no output directory: pass --out or set out_dir in the config");
}

osr::dataio::Dataset resolve_dataset(const osr::config::ExperimentConfig& cfg) {
    if (cfg.dataset_source == "synthetic") {
        osr::dataio::SynthConfig s = cfg.synth;
        s.seed = cfg.seed;
        return osr::dataio::generate_synthetic(s);
    }
    fs::path p = cfg.dataset_path;
    if (fs::is_directory(p)) p /= "manifest.json";
    return osr::dataio::load_dataset(p);
}

std::string file_safe(std::string s) {
    for (char& c : s) {
        if (c == '+' || c == ' ' || c == '/' || c == ',') c = '_';
    }
    return s;
}

void print_summary(const osr::eval::ExperimentReport& report) {
    std::printf("\n%-10s %-20s %-20s %-20s\n", "config", "accuracy", "tpr@fpr", "auroc");
    for (const std::string& cfg : report.configs) {
        const auto acc = report.metric_aggregate(cfg, "accuracy");
        const auto tpr = report.metric_aggregate(cfg, "tpr");
        const auto auc = report.metric_aggregate(cfg, "auroc");
        std::printf("%-10s %.4f +/- %.4f    %.4f +/- %.4f    %.4f +/- %.4f\n", cfg.c_str(),
                    acc.mean, acc.stddev, tpr.mean, tpr.stddev, auc.mean, auc.stddev);
    }
}

int cmd_generate(const CommonArgs& args) {
    osr::config::ExperimentConfig cfg = load_config(args);
    if (cfg.dataset_source != "synthetic") {
        throw osr::config_error("generate: the config must use a synthetic dataset source");
    }
    const fs::path out = resolve_out(args, cfg);
    osr::dataio::SynthConfig s = cfg.synth;
    s.seed = cfg.seed;
    const osr::dataio::Dataset ds = osr::dataio::generate_synthetic(s);
    osr::dataio::save_dataset(ds, out, args.force);
    std::printf("wrote %zu samples (%d classes x %d positions) to %s\n", ds.samples.size(),
                static_cast<int>(ds.class_names.size()), static_cast<int>(ds.positions.size()),
                out.string().c_str());
    return 0;
}

int run_matrix(const CommonArgs& args, const std::vector<osr::eval::Variant>& variants,
               bool write_ablation_summary) {
    osr::config::ExperimentConfig cfg = load_config(args);
    const fs::path out = resolve_out(args, cfg);
    const osr::dataio::Dataset data = resolve_dataset(cfg);
    data.validate();

    osr::backbone::BackboneConfig bcfg = cfg.backbone;
    bcfg.t_steps = data.t_steps;
    bcfg.channels = data.channels;
    bcfg.validate();

    fs::create_directories(out);
    const fs::path models_dir = out / "models";
    if (cfg.save_models) fs::create_directories(models_dir);

    const size_t total = variants.size() * data.positions.size() *
                         static_cast<size_t>(cfg.protocol.n_folds);
    size_t done = 0;
    auto progress = [&](const osr::eval::RunResult& r) {
        ++done;
        std::printf("[%zu/%zu] %-8s pos=%s fold=%d  acc=%.4f tpr=%.4f auroc=%.4f\n", done, total,
                    r.config.c_str(), data.positions[static_cast<size_t>(r.position)].c_str(),
                    r.fold, r.accuracy, r.tpr, r.auroc);
        std::fflush(stdout);
    };
    osr::eval::ModelSinkFn sink = nullptr;
    if (cfg.save_models) {
        sink = [&](const osr::eval::RunResult& r, const osr::train::TrainedModel& m) {
            char name[128];
            std::snprintf(name, sizeof(name), "%s_%s_f%d.model.json",
                          file_safe(r.config).c_str(),
                          data.positions[static_cast<size_t>(r.position)].c_str(), r.fold);
            osr::model_io::save_model(m, models_dir / name);
        };
    }

    const osr::eval::ExperimentReport report = osr::eval::run_protocol(
        data, variants, cfg.protocol, cfg.train, bcfg, cfg.seed, args.jobs, progress, sink);

    osr::report_io::write_report_csv(report, out / "report.csv");
    osr::report_io::write_scores_csv(report, out / "scores.csv");
    osr::report_io::write_aggregates_json(report, out / "aggregates.json");
    if (cfg.emit_roc_svg) {
        const auto rows = osr::report_io::score_rows_from_report(report);
        osr::report_io::write_all_roc_svgs(rows, report.configs, out);
    }
    if (write_ablation_summary) {
        std::ofstream abl(out / "ablation_summary.csv");
        abl << "config,accuracy_mean,accuracy_std,tpr_mean,tpr_std,auroc_mean,auroc_std\n";
        for (const std::string& c : report.configs) {
            const auto acc = report.metric_aggregate(c, "accuracy");
            const auto tpr = report.metric_aggregate(c, "tpr");
            const auto auc = report.metric_aggregate(c, "auroc");
            char line[256];
            std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", c.c_str(),
                          acc.mean, acc.stddev, tpr.mean, tpr.stddev, auc.mean, auc.stddev);
            abl << line;
        }
    }

    print_summary(report);
    std::printf("\nartifacts written to %s\n", out.string().c_str());
    return 0;
}

int cmd_run(const CommonArgs& args) {
    osr::config::ExperimentConfig cfg = load_config(args);
    return run_matrix(args, cfg.resolved_variants(), false);
}

int cmd_ablate(const CommonArgs& args) {
    return run_matrix(args, osr::eval::ablation_matrix(), true);
}

int cmd_report(const std::string& scores_path, const std::string& out_dir) {
    if (out_dir.empty()) throw osr::config_error("report: --out is required");
    const auto rows = osr::report_io::read_scores_csv(scores_path);
    if (rows.empty()) throw osr::data_error("report: no score rows in " + scores_path);
    std::vector<std::string> configs;
    std::set<std::string> seen;
    for (const auto& r : rows) {
        if (seen.insert(r.config).second) configs.push_back(r.config);
    }
    fs::create_directories(out_dir);
    osr::report_io::write_all_roc_svgs(rows, configs, out_dir);
    std::printf("rendered %zu ROC curves to %s\n", configs.size(), out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"open-set gas recognition experiment runner"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string scores_path;

    auto add_common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("--config", args.config_path, "experiment config JSON")->required();
        sub->add_option("--out", args.out_dir, "output directory");
        sub->add_option("--seed", args.seed_override, "override the config seed");
        if (with_jobs) sub->add_option("--jobs", args.jobs, "parallel independent runs");
    };

    CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset directory");
    add_common(gen, false);
    gen->add_flag("--force", args.force, "allow writing into a non-empty directory");

    CLI::App* run = app.add_subcommand("run", "run the configured experiment matrix");
    add_common(run, true);

    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation matrix plus baseline");
    add_common(ablate, true);

    CLI::App* report = app.add_subcommand("report", "re-render ROC plots from a scores.csv");
    report->add_option("--scores", scores_path, "scores.csv from a previous run")->required();
    report->add_option("--out", args.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2; // usage problems are config errors
    }

    try {
        if (gen->parsed()) return cmd_generate(args);
        if (run->parsed()) return cmd_run(args);
        if (ablate->parsed()) return cmd_ablate(args);
        if (report->parsed()) return cmd_report(scores_path, args.out_dir);
    } catch (const osr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
