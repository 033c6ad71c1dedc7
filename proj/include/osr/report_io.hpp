#pragma once

#include "osr/eval.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace osr::report_io {

// Machine-readable experiment artifacts: metric CSV (one row per
// position/fold/config), per-sample score CSV, aggregate JSON, and a
// dependency-free SVG ROC plot per config. Output is byte-deterministic for
// identical reports.

void write_report_csv(const eval::ExperimentReport& report, const std::filesystem::path& path);
void write_scores_csv(const eval::ExperimentReport& report, const std::filesystem::path& path);
void write_aggregates_json(const eval::ExperimentReport& report, const std::filesystem::path& path);

struct ScoreRow {
    std::string config;
    std::string position;
    int fold = 0;
    bool unknown_truth = false;
    double score = 0.0;
};

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

/// Pooled ROC curve (over folds and positions) for one config.
void write_roc_svg(std::span<const ScoreRow> rows, const std::string& config,
                   const std::filesystem::path& path);

/// Renders one SVG per config named roc_<config>.svg into out_dir.
void write_all_roc_svgs(std::span<const ScoreRow> rows, const std::vector<std::string>& configs,
                        const std::filesystem::path& out_dir);

std::vector<ScoreRow> score_rows_from_report(const eval::ExperimentReport& report);

} // namespace osr::report_io
