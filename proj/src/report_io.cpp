#include "osr/report_io.hpp"

#include "osr/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace osr::report_io {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// config names can carry '+' but must not break the CSV
std::string csv_safe(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        if (c == ',' || c == '\n' || c == '\r') c = '_';
    }
    return out;
}

} // namespace

void write_report_csv(const eval::ExperimentReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw data_error("write_report_csv: cannot write " + path.string());
    out << "config,position,fold,accuracy,tpr_at_fpr,auroc,tau,best_epoch\n";
    for (const auto& r : report.rows) {
        out << csv_safe(r.config) << ',' << report.positions[static_cast<size_t>(r.position)] << ','
            << r.fold << ',' << fmt(r.accuracy) << ',' << fmt(r.tpr) << ',' << fmt(r.auroc) << ','
            << fmt(r.tau) << ',' << r.best_epoch << '\n';
    }
}

void write_scores_csv(const eval::ExperimentReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw data_error("write_scores_csv: cannot write " + path.string());
    out << "config,position,fold,ground,true_label,predicted,score\n";
    for (const auto& r : report.rows) {
        for (const auto& s : r.scores) {
            const bool unk = s.true_label == dataio::kUnknownLabel;
            out << csv_safe(r.config) << ',' << report.positions[static_cast<size_t>(r.position)]
                << ',' << r.fold << ',' << (unk ? "unknown" : "known") << ','
                << (unk ? std::string("unknown")
                        : report.class_names[static_cast<size_t>(s.true_label)])
                << ',' << report.class_names[static_cast<size_t>(s.predicted)] << ','
                << fmt(s.score) << '\n';
        }
    }
}

void write_aggregates_json(const eval::ExperimentReport& report, const std::filesystem::path& path) {
    json j;
    j["n_folds"] = report.n_folds;
    j["positions"] = report.positions;
    json configs;
    for (const std::string& cfg : report.configs) {
        json c;
        for (const char* metric : {"accuracy", "tpr", "auroc"}) {
            const auto st = report.metric_aggregate(cfg, metric);
            c["overall"][metric] = {{"mean", st.mean}, {"std", st.stddev}, {"n", st.n}};
        }
        for (size_t p = 0; p < report.positions.size(); ++p) {
            json pos;
            for (const char* metric : {"accuracy", "tpr", "auroc"}) {
                const auto st = report.metric_aggregate(cfg, metric, static_cast<int>(p));
                pos[metric] = {{"mean", st.mean}, {"std", st.stddev}, {"n", st.n}};
            }
            c["per_position"][report.positions[p]] = std::move(pos);
        }
        configs[cfg] = std::move(c);
    }
    j["configs"] = std::move(configs);

    std::ofstream out(path);
    if (!out) throw data_error("write_aggregates_json: cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<ScoreRow> score_rows_from_report(const eval::ExperimentReport& report) {
    std::vector<ScoreRow> rows;
    for (const auto& r : report.rows) {
        for (const auto& s : r.scores) {
            ScoreRow row;
            row.config = r.config;
            row.position = report.positions[static_cast<size_t>(r.position)];
            row.fold = r.fold;
            row.unknown_truth = s.true_label == dataio::kUnknownLabel;
            row.score = s.score;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("read_scores_csv: cannot open " + path.string());
    std::vector<ScoreRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7) {
            throw data_error("read_scores_csv: malformed row '" + line + "'");
        }
        ScoreRow r;
        r.config = cells[0];
        r.position = cells[1];
        r.fold = std::stoi(cells[2]);
        r.unknown_truth = cells[3] == "unknown";
        r.score = std::stod(cells[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Minimal SVG ROC rendering (no plotting dependency)
// ---------------------------------------------------------------------------

void write_roc_svg(std::span<const ScoreRow> rows, const std::string& config,
                   const std::filesystem::path& path) {
    std::vector<double> known, unknown;
    for (const ScoreRow& r : rows) {
        if (r.config != config) continue;
        (r.unknown_truth ? unknown : known).push_back(r.score);
    }
    if (known.empty() || unknown.empty()) {
        throw data_error("write_roc_svg: config '" + config + "' has no scores on both sides");
    }

    // staircase ROC: sweep a descending threshold over the pooled scores
    struct Tagged {
        double score;
        bool unknown;
    };
    std::vector<Tagged> all;
    for (double s : known) all.push_back({s, false});
    for (double s : unknown) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score > b.score; });

    std::vector<std::pair<double, double>> pts; // (fpr, tpr)
    pts.emplace_back(0.0, 0.0);
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j + 1 < all.size() && all[j + 1].score == all[i].score) ++j;
        for (size_t k = i; k <= j; ++k) {
            if (all[k].unknown) ++tp;
            else ++fp;
        }
        pts.emplace_back(static_cast<double>(fp) / static_cast<double>(known.size()),
                         static_cast<double>(tp) / static_cast<double>(unknown.size()));
        i = j + 1;
    }

    const double area = eval::auroc(known, unknown);

    const int W = 480, H = 480, M = 56;
    auto X = [&](double fpr) { return M + fpr * (W - 2 * M); };
    auto Y = [&](double tpr) { return H - M - tpr * (H - 2 * M); };

    std::ofstream out(path);
    if (!out) throw data_error("write_roc_svg: cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(0)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(0) << "\" y2=\"" << Y(1)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(1)
        << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = tick / 4.0;
        out << "<text x=\"" << X(v) << "\" y=\"" << (H - M + 18)
            << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
        out << "<text x=\"" << (M - 8) << "\" y=\"" << (Y(v) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    out << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 12)
        << "\" font-size=\"13\" text-anchor=\"middle\">false positive rate</text>\n";
    out << "<text x=\"16\" y=\"" << (H / 2)
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (H / 2)
        << ")\">true positive rate</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
    for (const auto& [fpr, tpr] : pts) out << fmt(X(fpr)) << ',' << fmt(Y(tpr)) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << (W / 2) << "\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">"
        << config << " (AUROC " << fmt(area) << ")</text>\n";
    out << "</svg>\n";
}

void write_all_roc_svgs(std::span<const ScoreRow> rows, const std::vector<std::string>& configs,
                        const std::filesystem::path& out_dir) {
    for (const std::string& cfg : configs) {
        std::string name = "roc_" + cfg + ".svg";
        for (char& c : name) {
            if (c == '+' || c == ' ' || c == '/') c = '_';
        }
        write_roc_svg(rows, cfg, out_dir / name);
    }
}

} // namespace osr::report_io
