#include "osr/dataio.hpp"

#include "osr/error.hpp"
#include "osr/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace osr::dataio {

using nlohmann::json;

RawSequence downsample_mean(const RawSequence& raw, int window) {
    if (window < 1) throw contract_error("downsample_mean: window must be >= 1");
    if (raw.channels.empty()) throw contract_error("downsample_mean: no channels");
    const size_t len = raw.channels.front().size();
    if (len == 0) throw contract_error("downsample_mean: empty series");
    if (len < static_cast<size_t>(window)) {
        throw contract_error("downsample_mean: series shorter than window");
    }
    for (const auto& ch : raw.channels) {
        if (ch.size() != len) throw contract_error("downsample_mean: channel lengths differ");
    }

    const size_t out_len = len / static_cast<size_t>(window);
    RawSequence out;
    out.rate_hz = raw.rate_hz / window;
    out.channels.reserve(raw.channels.size());
    for (const auto& ch : raw.channels) {
        std::vector<double> ds(out_len);
        for (size_t i = 0; i < out_len; ++i) {
            double s = 0.0;
            for (int k = 0; k < window; ++k) s += ch[i * window + k];
            ds[i] = s / window;
        }
        out.channels.push_back(std::move(ds));
    }
    return out;
}

void Dataset::validate() const {
    for (size_t i = 0; i < samples.size(); ++i) {
        const SampleMap& s = samples[i];
        if (s.grid.rows != t_steps || s.grid.cols != channels) {
            throw data_error("dataset: sample " + std::to_string(i) + " has shape " +
                             std::to_string(s.grid.rows) + "x" + std::to_string(s.grid.cols) +
                             ", expected " + std::to_string(t_steps) + "x" + std::to_string(channels));
        }
        if (s.label != kUnknownLabel &&
            (s.label < 0 || s.label >= static_cast<int>(class_names.size()))) {
            throw data_error("dataset: sample " + std::to_string(i) + " has label index out of range");
        }
        if (s.position < 0 || s.position >= static_cast<int>(positions.size())) {
            throw data_error("dataset: sample " + std::to_string(i) + " has position index out of range");
        }
        if (!s.grid.finite()) {
            throw data_error("dataset: sample " + std::to_string(i) + " contains non-finite values");
        }
    }
}

ChannelStats fit_channel_stats(const Dataset& data, std::span<const int> fit_indices) {
    if (fit_indices.empty()) throw contract_error("zscore: empty fit split");
    const int c_count = data.channels;
    ChannelStats st;
    st.mean.assign(c_count, 0.0);
    st.stddev.assign(c_count, 0.0);

    // pooled over all timesteps of all fit samples, per channel
    std::vector<double> sum(c_count, 0.0), sumsq(c_count, 0.0);
    size_t n = 0;
    for (int idx : fit_indices) {
        const Matrix& g = data.samples[static_cast<size_t>(idx)].grid;
        for (int t = 0; t < g.rows; ++t) {
            for (int j = 0; j < c_count; ++j) {
                const double v = g(t, j);
                sum[j] += v;
                sumsq[j] += v * v;
            }
        }
        n += static_cast<size_t>(g.rows);
    }
    for (int j = 0; j < c_count; ++j) {
        const double mean = sum[j] / static_cast<double>(n);
        double var = sumsq[j] / static_cast<double>(n) - mean * mean; // population variance
        if (var < 0.0) var = 0.0;
        st.mean[j] = mean;
        if (var == 0.0) {
            st.stddev[j] = 1.0; // dead channel: center only
            st.clamped_channels.push_back(j);
        } else {
            st.stddev[j] = std::sqrt(var);
        }
    }
    return st;
}

Dataset apply_zscore(const Dataset& data, const ChannelStats& stats) {
    if (static_cast<int>(stats.mean.size()) != data.channels) {
        throw contract_error("apply_zscore: stats dimension mismatch");
    }
    Dataset out = data;
    for (SampleMap& s : out.samples) {
        for (int t = 0; t < s.grid.rows; ++t) {
            for (int j = 0; j < s.grid.cols; ++j) {
                s.grid(t, j) = (s.grid(t, j) - stats.mean[j]) / stats.stddev[j];
            }
        }
    }
    return out;
}

std::pair<Dataset, ChannelStats> zscore_channels(const Dataset& data, std::span<const int> fit_indices) {
    ChannelStats st = fit_channel_stats(data, fit_indices);
    return {apply_zscore(data, st), std::move(st)};
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (n_classes < 1 || samples_per_class_per_position < 1 || n_positions < 1 ||
        t_steps < 1 || channels < 1) {
        throw config_error("synthetic config: all counts must be >= 1");
    }
    if (static_cast<int>(position_decay.size()) != n_positions) {
        throw config_error("synthetic config: position_decay must have n_positions entries");
    }
    for (double d : position_decay) {
        if (!(d > 0.0)) throw config_error("synthetic config: decay multipliers must be > 0");
    }
    if (!(feature_anisotropy >= 1.0)) {
        throw config_error("synthetic config: feature_anisotropy must be >= 1");
    }
    if (noise_std < 0.0) throw config_error("synthetic config: noise_std must be >= 0");
    if (!(base_amplitude > 0.0) || !(radial_spread > 0.0)) {
        throw config_error("synthetic config: amplitude parameters must be > 0");
    }
    if (template_jitter < 0.0 || template_jitter > 0.5) {
        throw config_error("synthetic config: template_jitter must be in [0, 0.5]");
    }
}

namespace {

// rise-plateau-decay response shape over t = 0..T-1; exposure-to-exposure
// variability enters through lognormal jitter of the time constants, which
// scales the integrated response the way concentration fluctuations do
struct ClassTemplate {
    double tau_rise, t_plateau, tau_decay;

    double value(int t, double jr, double jp, double jd) const {
        const double rise = 1.0 - std::exp(-static_cast<double>(t) / (tau_rise * jr));
        const double fall =
            std::exp(-std::max(0.0, static_cast<double>(t) - t_plateau * jp) / (tau_decay * jd));
        return rise * fall;
    }
};

constexpr double kDirectionCosCap = 0.95; // max cosine between class mean directions

// Per-class Gaussian over channel amplitudes. Axis 0 is the radial
// (intensity) direction with the largest variance; tangential axes fall off
// geometrically so that cond(Sigma) equals the configured anisotropy.
struct ClassAmplitudeModel {
    std::vector<double> mean;            // length C
    Matrix axes;                         // C x C, rows orthonormal, row 0 radial
    std::vector<double> axis_std;        // per-axis standard deviation

    std::vector<double> sample(rng::Rng& r) const {
        const int c = static_cast<int>(mean.size());
        std::vector<double> a = mean;
        for (int ax = 0; ax < c; ++ax) {
            const double z = r.normal() * axis_std[static_cast<size_t>(ax)];
            for (int j = 0; j < c; ++j) a[static_cast<size_t>(j)] += z * axes(ax, j);
        }
        return a;
    }
};

ClassAmplitudeModel make_class_model(int channels, double base_amplitude, double radial_spread,
                                     double anisotropy, rng::Rng& r,
                                     const std::vector<std::vector<double>>& other_dirs) {
    const int c = channels;
    ClassAmplitudeModel m;

    // positive-orthant mean direction, scaled so the channel RMS amplitude
    // equals base_amplitude; cubing the draw concentrates each class on a
    // few dominant channels, like sensors with distinct target gases.
    // Redraw when too aligned with an existing class (distinct gases excite
    // distinct sensor patterns).
    std::vector<double> dir(static_cast<size_t>(c));
    std::vector<double> best = dir;
    double best_cos = 2.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
        for (double& v : dir) {
            const double u = r.uniform(0.0, 1.0);
            v = 0.05 + u * u * u;
        }
        const double n = linalg::norm2(dir);
        double worst = 0.0;
        for (const auto& od : other_dirs) {
            const double cosang = linalg::dot(dir, od) / n;
            worst = std::max(worst, cosang);
        }
        if (worst < best_cos) {
            best_cos = worst;
            best = dir;
        }
        if (worst < kDirectionCosCap) break;
    }
    dir = best;
    double nrm = linalg::norm2(dir);
    const double target_norm = base_amplitude * std::sqrt(static_cast<double>(c));
    m.mean.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) m.mean[static_cast<size_t>(j)] = dir[static_cast<size_t>(j)] / nrm * target_norm;

    // orthonormal basis seeded with the radial direction (Gram-Schmidt)
    m.axes = Matrix(c, c, 0.0);
    for (int j = 0; j < c; ++j) m.axes(0, j) = m.mean[static_cast<size_t>(j)] / target_norm;
    for (int ax = 1; ax < c; ++ax) {
        std::vector<double> v(static_cast<size_t>(c));
        double vn = 0.0;
        // redraw until numerically independent (always succeeds in practice)
        do {
            for (double& x : v) x = r.normal();
            for (int prev = 0; prev < ax; ++prev) {
                const double proj = linalg::dot(v, m.axes.row(prev));
                for (int j = 0; j < c; ++j) v[static_cast<size_t>(j)] -= proj * m.axes(prev, j);
            }
            vn = linalg::norm2(v);
        } while (vn < 1e-8);
        for (int j = 0; j < c; ++j) m.axes(ax, j) = v[static_cast<size_t>(j)] / vn;
    }

    // eigenvalue ladder: the radial (intensity) variance on top; tangential
    // axes start sqrt(anisotropy) below it and decay geometrically to
    // lambda_max/anisotropy, so the condition number is met exactly while
    // intensity stays the dominant mode of variation
    const double lambda_max = std::pow(radial_spread * target_norm, 2);
    m.axis_std.assign(static_cast<size_t>(c), std::sqrt(lambda_max));
    if (c > 1 && anisotropy > 1.0) {
        const double gap = std::sqrt(anisotropy);
        for (int ax = 1; ax < c; ++ax) {
            const double frac = (c == 2) ? 1.0 : static_cast<double>(ax - 1) / static_cast<double>(c - 2);
            const double lam = lambda_max / (gap * std::pow(anisotropy / gap, frac));
            m.axis_std[static_cast<size_t>(ax)] = std::sqrt(lam);
        }
        m.axis_std.back() = std::sqrt(lambda_max / anisotropy); // pin the condition number
    }
    return m;
}

} // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();

    Dataset ds;
    ds.t_steps = cfg.t_steps;
    ds.channels = cfg.channels;
    for (int c = 0; c < cfg.n_classes; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "gas_%02d", c);
        ds.class_names.emplace_back(buf);
    }
    for (int p = 0; p < cfg.n_positions; ++p) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "P%d", p + 1);
        ds.positions.emplace_back(buf);
    }

    rng::Rng master(rng::derive_seed(cfg.seed, {0x53594e54ULL})); // synth stream

    std::vector<ClassTemplate> templates;
    std::vector<ClassAmplitudeModel> models;
    std::vector<std::vector<double>> unit_dirs;
    const double T = static_cast<double>(cfg.t_steps);
    for (int c = 0; c < cfg.n_classes; ++c) {
        ClassTemplate tpl;
        tpl.tau_rise = master.uniform(T / 16.0, T / 6.0);
        tpl.t_plateau = master.uniform(0.4 * T, 0.7 * T);
        tpl.tau_decay = master.uniform(T / 6.0, T / 2.0);
        templates.push_back(tpl);
        models.push_back(make_class_model(cfg.channels, cfg.base_amplitude, cfg.radial_spread,
                                          cfg.feature_anisotropy, master, unit_dirs));
        std::vector<double> u(models.back().axes.row(0).begin(), models.back().axes.row(0).end());
        unit_dirs.push_back(std::move(u));
    }

    for (int c = 0; c < cfg.n_classes; ++c) {
        for (int p = 0; p < cfg.n_positions; ++p) {
            const double decay = cfg.position_decay[static_cast<size_t>(p)];
            for (int s = 0; s < cfg.samples_per_class_per_position; ++s) {
                SampleMap sm;
                sm.label = c;
                sm.position = p;
                sm.grid = Matrix(cfg.t_steps, cfg.channels);
                const std::vector<double> amp = models[static_cast<size_t>(c)].sample(master);
                const double tj = cfg.template_jitter;
                const double jr = std::exp(tj * master.normal());
                // exposures happen at a few discrete release durations; the
                // plateau level is drawn from three such settings per sample
                const double plateau_levels[3] = {1.0 - 1.83 * tj, 1.0, 1.0 + 1.83 * tj};
                const double jp = plateau_levels[master.uniform_int(0, 2)];
                const double jd = std::exp(tj * master.normal());
                for (int t = 0; t < cfg.t_steps; ++t) {
                    const double g = templates[static_cast<size_t>(c)].value(t, jr, jp, jd);
                    for (int j = 0; j < cfg.channels; ++j) {
                        sm.grid(t, j) = decay * amp[static_cast<size_t>(j)] * g +
                                        cfg.noise_std * master.normal();
                    }
                }
                ds.samples.push_back(std::move(sm));
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(std::string_view tok, const std::string& file, int row) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw data_error("load_dataset: non-numeric cell in " + file + " at row " +
                         std::to_string(row + 1) + ": '" + std::string(tok) + "'");
    }
    return v;
}

} // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw data_error("load_dataset: cannot open manifest " + manifest_path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw data_error("load_dataset: manifest parse error: " + std::string(e.what()));
    }

    for (const char* key : {"class_names", "positions", "t_steps", "channels", "samples"}) {
        if (!j.contains(key)) throw data_error(std::string("load_dataset: manifest missing '") + key + "'");
    }

    Dataset ds;
    ds.t_steps = j.at("t_steps").get<int>();
    ds.channels = j.at("channels").get<int>();
    ds.class_names = j.at("class_names").get<std::vector<std::string>>();
    ds.positions = j.at("positions").get<std::vector<std::string>>();
    if (ds.t_steps < 1 || ds.channels < 1) {
        throw data_error("load_dataset: t_steps and channels must be >= 1");
    }

    const std::filesystem::path base = manifest_path.parent_path();
    for (const json& entry : j.at("samples")) {
        for (const char* key : {"file", "label", "position"}) {
            if (!entry.contains(key)) {
                throw data_error(std::string("load_dataset: sample entry missing '") + key + "'");
            }
        }
        const std::string rel = entry.at("file").get<std::string>();
        const std::string label = entry.at("label").get<std::string>();
        const std::string position = entry.at("position").get<std::string>();

        SampleMap sm;
        if (label == "unknown") {
            sm.label = kUnknownLabel;
        } else {
            auto it = std::find(ds.class_names.begin(), ds.class_names.end(), label);
            if (it == ds.class_names.end()) {
                throw data_error("load_dataset: label '" + label + "' of " + rel +
                                 " is not in class_names");
            }
            sm.label = static_cast<int>(it - ds.class_names.begin());
        }
        auto pit = std::find(ds.positions.begin(), ds.positions.end(), position);
        if (pit == ds.positions.end()) {
            throw data_error("load_dataset: position '" + position + "' of " + rel +
                             " is not in positions");
        }
        sm.position = static_cast<int>(pit - ds.positions.begin());

        const std::filesystem::path file = base / rel;
        std::ifstream fs(file);
        if (!fs) throw data_error("load_dataset: missing sample file " + file.string());
        sm.grid = Matrix(ds.t_steps, ds.channels);
        std::string line;
        int row = 0;
        while (std::getline(fs, line)) {
            if (line.empty() && fs.eof()) break;
            if (row >= ds.t_steps) {
                throw data_error("load_dataset: " + file.string() + " has more than " +
                                 std::to_string(ds.t_steps) + " rows");
            }
            int col = 0;
            size_t start = 0;
            while (start <= line.size()) {
                size_t comma = line.find(',', start);
                const size_t end = (comma == std::string::npos) ? line.size() : comma;
                if (col >= ds.channels) {
                    throw data_error("load_dataset: " + file.string() + " row " +
                                     std::to_string(row + 1) + " has more than " +
                                     std::to_string(ds.channels) + " columns");
                }
                sm.grid(row, col) = parse_double(
                    std::string_view(line).substr(start, end - start), file.string(), row);
                ++col;
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            if (col != ds.channels) {
                throw data_error("load_dataset: " + file.string() + " row " + std::to_string(row + 1) +
                                 " has " + std::to_string(col) + " columns, expected " +
                                 std::to_string(ds.channels));
            }
            ++row;
        }
        if (row != ds.t_steps) {
            throw data_error("load_dataset: " + file.string() + " has " + std::to_string(row) +
                             " rows, expected " + std::to_string(ds.t_steps));
        }
        ds.samples.push_back(std::move(sm));
    }
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw data_error("save_dataset: " + dir.string() + " is not a directory");
        if (!fs::is_empty(dir) && !force) {
            throw data_error("save_dataset: refusing to write into non-empty directory " +
                             dir.string() + " (use --force)");
        }
    } else {
        fs::create_directories(dir);
    }

    json manifest;
    manifest["t_steps"] = data.t_steps;
    manifest["channels"] = data.channels;
    manifest["class_names"] = data.class_names;
    manifest["positions"] = data.positions;
    json samples = json::array();

    for (size_t i = 0; i < data.samples.size(); ++i) {
        const SampleMap& sm = data.samples[i];
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%06zu.csv", i);
        std::ofstream out(dir / name);
        if (!out) throw data_error("save_dataset: cannot write " + (dir / name).string());
        for (int t = 0; t < sm.grid.rows; ++t) {
            for (int j = 0; j < sm.grid.cols; ++j) {
                if (j) out << ',';
                out << format_double(sm.grid(t, j));
            }
            out << '\n';
        }
        json entry;
        entry["file"] = name;
        entry["label"] = sm.label == kUnknownLabel ? std::string("unknown")
                                                   : data.class_names[static_cast<size_t>(sm.label)];
        entry["position"] = data.positions[static_cast<size_t>(sm.position)];
        samples.push_back(std::move(entry));
    }
    manifest["samples"] = std::move(samples);

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw data_error("save_dataset: cannot write manifest.json");
    mf << manifest.dump(2) << '\n';
}

} // namespace osr::dataio
