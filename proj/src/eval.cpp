#include "osr/eval.hpp"

#include "osr/error.hpp"
#include "osr/scorer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

namespace osr::eval {

double known_accuracy(const ScoredTestSet& scored) {
    int known = 0, correct = 0;
    for (const ScoredSample& s : scored.samples) {
        if (s.true_label == dataio::kUnknownLabel) continue;
        known += 1;
        if (s.predicted == s.true_label) correct += 1;
    }
    if (known == 0) {
        throw contract_error("known_accuracy: no known-ground-truth samples; metric undefined");
    }
    return static_cast<double>(correct) / static_cast<double>(known);
}

double auroc(std::span<const double> known_scores, std::span<const double> unknown_scores) {
    if (known_scores.empty() || unknown_scores.empty()) {
        throw contract_error("auroc: both score lists must be non-empty");
    }
    struct Entry {
        double score;
        bool unknown;
    };
    std::vector<Entry> all;
    all.reserve(known_scores.size() + unknown_scores.size());
    for (double s : known_scores) all.push_back({s, false});
    for (double s : unknown_scores) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // average ranks over tie groups (1-based ranks)
    double rank_sum_unknown = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j + 1 < all.size() && all[j + 1].score == all[i].score) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) {
            if (all[k].unknown) rank_sum_unknown += avg_rank;
        }
        i = j + 1;
    }
    const double nu = static_cast<double>(unknown_scores.size());
    const double nk = static_cast<double>(known_scores.size());
    const double u = rank_sum_unknown - nu * (nu + 1.0) / 2.0;
    return u / (nu * nk);
}

double tpr_at_fpr(std::span<const double> known_scores, std::span<const double> unknown_scores,
                  double fpr) {
    if (known_scores.empty() || unknown_scores.empty()) {
        throw contract_error("tpr_at_fpr: both score lists must be non-empty");
    }
    if (!(fpr > 0.0) || !(fpr < 1.0)) {
        throw contract_error("tpr_at_fpr: fpr must be in (0, 1)");
    }
    std::vector<double> known(known_scores.begin(), known_scores.end());
    const double threshold = scorer::calibrate_threshold(std::move(known), (1.0 - fpr) * 100.0);
    size_t detected = 0;
    for (double s : unknown_scores) {
        if (s >= threshold) ++detected;
    }
    return static_cast<double>(detected) / static_cast<double>(unknown_scores.size());
}

train::TrainConfig apply_variant(train::TrainConfig base, const Variant& v) {
    base.method = v.method;
    base.use_bn = v.use_bn;
    base.use_l2n = v.use_l2n;
    base.score_metric = v.score_metric;
    return base;
}

std::vector<Variant> ablation_matrix() {
    return {
        {"BASE", "cac", false, false, "anchor"},
        {"+M", "cac", false, false, "mahalanobis"},
        {"+M+BN", "cac", true, false, "mahalanobis"},
        {"+M+L2N", "cac", false, true, "mahalanobis"},
        {"full", "cac", true, true, "mahalanobis"},
        {"softmax", "softmax", false, false, "mahalanobis"},
    };
}

void ProtocolConfig::validate() const {
    if (n_folds < 1) throw config_error("protocol: n_folds must be >= 1");
    if (n_known < 1 || n_unknown < 1) {
        throw config_error("protocol: need at least one known and one unknown class");
    }
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
        throw config_error("protocol: train_fraction must be in (0, 1)");
    }
    if (!(unknown_test_fraction > 0.0) || unknown_test_fraction > 1.0) {
        throw config_error("protocol: unknown_test_fraction must be in (0, 1]");
    }
    if (!(fpr > 0.0) || !(fpr < 1.0)) throw config_error("protocol: fpr must be in (0, 1)");
}

AggregateStat aggregate(std::span<const double> values) {
    AggregateStat st;
    st.n = static_cast<int>(values.size());
    if (st.n == 0) return st;
    for (double v : values) st.mean += v;
    st.mean /= static_cast<double>(st.n);
    if (st.n >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - st.mean) * (v - st.mean);
        st.stddev = std::sqrt(ss / static_cast<double>(st.n - 1));
    }
    return st;
}

std::vector<double> ExperimentReport::metric_values(const std::string& config,
                                                    const std::string& metric, int position) const {
    std::vector<double> out;
    for (const RunResult& r : rows) {
        if (r.config != config) continue;
        if (position >= 0 && r.position != position) continue;
        if (metric == "accuracy") out.push_back(r.accuracy);
        else if (metric == "tpr") out.push_back(r.tpr);
        else if (metric == "auroc") out.push_back(r.auroc);
        else throw contract_error("metric_values: unknown metric '" + metric + "'");
    }
    return out;
}

AggregateStat ExperimentReport::metric_aggregate(const std::string& config,
                                                 const std::string& metric, int position) const {
    return aggregate(metric_values(config, metric, position));
}

std::pair<std::vector<int>, std::vector<int>> partition_classes(int n_classes, int n_known,
                                                                int n_unknown, rng::Rng& r) {
    if (n_known + n_unknown > n_classes) {
        throw config_error("partition_classes: n_known + n_unknown exceeds class count");
    }
    std::vector<int> ids(static_cast<size_t>(n_classes));
    std::iota(ids.begin(), ids.end(), 0);
    r.shuffle(ids);
    std::vector<int> known(ids.begin(), ids.begin() + n_known);
    std::vector<int> unknown(ids.begin() + n_known, ids.begin() + n_known + n_unknown);
    std::sort(known.begin(), known.end());
    std::sort(unknown.begin(), unknown.end());
    return {known, unknown};
}

// ---------------------------------------------------------------------------
// Protocol driver
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kPartitionStream = 0x50415254;
constexpr std::uint64_t kSplitStream = 0x53504c49;
constexpr std::uint64_t kTrainStream = 0x5452414e;

struct FoldPlan {
    std::vector<int> known_classes;   // original class ids, ascending
    std::vector<int> unknown_classes;
};

// One (position, fold, variant) unit of work.
struct RunTask {
    int variant = 0;
    int position = 0;
    int fold = 0;
};

RunResult execute_run(const dataio::Dataset& data, const FoldPlan& plan, const Variant& variant,
                      int variant_index, int position, int fold, const ProtocolConfig& pcfg,
                      const train::TrainConfig& base_tcfg, const backbone::BackboneConfig& bcfg,
                      std::uint64_t seed, train::TrainedModel* model_out) {
    // position-local sample pool
    std::vector<int> pool;
    for (size_t i = 0; i < data.samples.size(); ++i) {
        if (data.samples[i].position == position) pool.push_back(static_cast<int>(i));
    }

    std::vector<int> known_lookup(data.class_names.size(), -1);
    for (size_t k = 0; k < plan.known_classes.size(); ++k) {
        known_lookup[static_cast<size_t>(plan.known_classes[k])] = static_cast<int>(k);
    }
    std::vector<bool> is_unknown_class(data.class_names.size(), false);
    for (int c : plan.unknown_classes) is_unknown_class[static_cast<size_t>(c)] = true;

    // per-class index lists within this position
    std::vector<std::vector<int>> by_class(data.class_names.size());
    std::vector<int> permanent_unknown;
    for (int idx : pool) {
        const int y = data.samples[static_cast<size_t>(idx)].label;
        if (y == dataio::kUnknownLabel) permanent_unknown.push_back(idx);
        else by_class[static_cast<size_t>(y)].push_back(idx);
    }

    rng::Rng split_rng(rng::derive_seed(seed, {kSplitStream, static_cast<std::uint64_t>(position),
                                               static_cast<std::uint64_t>(fold)}));

    std::vector<int> train_idx, test_idx;
    for (int c : plan.known_classes) {
        auto members = by_class[static_cast<size_t>(c)];
        const int n = static_cast<int>(members.size());
        const int want = static_cast<int>(std::floor(pcfg.train_fraction * n + 0.5));
        if (n < 3 || want < 2 || want >= n) {
            throw data_error("protocol: class '" + data.class_names[static_cast<size_t>(c)] +
                             "' has too few samples (" + std::to_string(n) + ") at position '" +
                             data.positions[static_cast<size_t>(position)] + "'");
        }
        split_rng.shuffle(members);
        for (int i = 0; i < n; ++i) {
            if (i < want) train_idx.push_back(members[static_cast<size_t>(i)]);
            else test_idx.push_back(members[static_cast<size_t>(i)]);
        }
    }
    for (int c : plan.unknown_classes) {
        auto members = by_class[static_cast<size_t>(c)];
        const int n = static_cast<int>(members.size());
        if (n < 1) {
            throw data_error("protocol: unknown class '" + data.class_names[static_cast<size_t>(c)] +
                             "' has no samples at position '" +
                             data.positions[static_cast<size_t>(position)] + "'");
        }
        split_rng.shuffle(members);
        int want = static_cast<int>(std::floor(pcfg.unknown_test_fraction * n + 0.5));
        want = std::max(want, 1);
        for (int i = 0; i < want; ++i) test_idx.push_back(members[static_cast<size_t>(i)]);
    }
    test_idx.insert(test_idx.end(), permanent_unknown.begin(), permanent_unknown.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    // assemble the position-local working set and z-score on the train split
    dataio::Dataset local;
    local.t_steps = data.t_steps;
    local.channels = data.channels;
    local.class_names = data.class_names;
    local.positions = data.positions;
    std::vector<int> local_train, local_test;
    for (int idx : train_idx) {
        local.samples.push_back(data.samples[static_cast<size_t>(idx)]);
        local_train.push_back(static_cast<int>(local.samples.size()) - 1);
    }
    for (int idx : test_idx) {
        local.samples.push_back(data.samples[static_cast<size_t>(idx)]);
        local_test.push_back(static_cast<int>(local.samples.size()) - 1);
    }
    auto [normed, chstats] = dataio::zscore_channels(local, local_train);
    (void)chstats;

    train::TrainData td;
    td.n_classes = static_cast<int>(plan.known_classes.size());
    for (int li : local_train) {
        td.maps.push_back(&normed.samples[static_cast<size_t>(li)].grid);
        td.labels.push_back(known_lookup[static_cast<size_t>(normed.samples[static_cast<size_t>(li)].label)]);
    }

    train::TrainConfig tcfg = apply_variant(base_tcfg, variant);
    tcfg.seed = rng::derive_seed(seed, {kTrainStream, static_cast<std::uint64_t>(position),
                                        static_cast<std::uint64_t>(fold)});

    backbone::BackboneConfig bc = bcfg;
    bc.t_steps = data.t_steps;
    bc.channels = data.channels;

    const train::TrainedModel model = train::train_model(td, bc, tcfg);

    RunResult rr;
    rr.variant_index = variant_index;
    rr.config = variant.name;
    rr.position = position;
    rr.fold = fold;
    rr.tau = model.tau;
    rr.best_epoch = model.best_epoch;

    ScoredTestSet scored;
    std::vector<double> known_scores, unknown_scores;
    for (int li : local_test) {
        const auto& sample = normed.samples[static_cast<size_t>(li)];
        const auto [s, yhat_local] = model.score_sample(sample.grid);
        ScoredSample sc;
        sc.score = s;
        sc.position = position;
        const bool unknown_gt = sample.label == dataio::kUnknownLabel ||
                                is_unknown_class[static_cast<size_t>(sample.label)];
        sc.true_label = unknown_gt ? dataio::kUnknownLabel : sample.label;
        // map the local prediction back to the original class id
        sc.predicted = plan.known_classes[static_cast<size_t>(yhat_local)];
        scored.samples.push_back(sc);
        if (unknown_gt) unknown_scores.push_back(s);
        else known_scores.push_back(s);
    }

    rr.accuracy = known_accuracy(scored);
    rr.auroc = auroc(known_scores, unknown_scores);
    rr.tpr = tpr_at_fpr(known_scores, unknown_scores, pcfg.fpr);
    if (pcfg.keep_scores) rr.scores = std::move(scored.samples);
    if (model_out) *model_out = model;
    return rr;
}

} // namespace

ExperimentReport run_protocol(const dataio::Dataset& data, const std::vector<Variant>& variants,
                              const ProtocolConfig& pcfg, const train::TrainConfig& base_tcfg,
                              const backbone::BackboneConfig& bcfg, std::uint64_t seed, int jobs,
                              const ProgressFn& progress, const ModelSinkFn& model_sink) {
    pcfg.validate();
    base_tcfg.validate();
    data.validate();
    if (variants.empty()) throw config_error("run_protocol: no variants configured");
    if (static_cast<int>(data.class_names.size()) < pcfg.n_known + pcfg.n_unknown) {
        throw data_error("run_protocol: dataset has " + std::to_string(data.class_names.size()) +
                         " classes, protocol needs " + std::to_string(pcfg.n_known + pcfg.n_unknown));
    }
    if (jobs < 1) jobs = 1;

    // class partitions per fold (shared across positions)
    std::vector<FoldPlan> plans;
    for (int fold = 0; fold < pcfg.n_folds; ++fold) {
        rng::Rng part_rng(rng::derive_seed(seed, {kPartitionStream, static_cast<std::uint64_t>(fold)}));
        FoldPlan plan;
        auto [known, unknown] = partition_classes(static_cast<int>(data.class_names.size()),
                                                  pcfg.n_known, pcfg.n_unknown, part_rng);
        plan.known_classes = std::move(known);
        plan.unknown_classes = std::move(unknown);
        plans.push_back(std::move(plan));
    }

    std::vector<RunTask> tasks;
    for (int v = 0; v < static_cast<int>(variants.size()); ++v) {
        for (int p = 0; p < static_cast<int>(data.positions.size()); ++p) {
            for (int f = 0; f < pcfg.n_folds; ++f) tasks.push_back({v, p, f});
        }
    }

    std::vector<RunResult> results(tasks.size());
    std::atomic<size_t> next{0};
    std::mutex progress_mutex;
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            {
                std::lock_guard<std::mutex> lk(error_mutex);
                if (first_error) return;
            }
            const RunTask& t = tasks[i];
            try {
                train::TrainedModel model;
                results[i] = execute_run(data, plans[static_cast<size_t>(t.fold)],
                                         variants[static_cast<size_t>(t.variant)], t.variant,
                                         t.position, t.fold, pcfg, base_tcfg, bcfg, seed,
                                         model_sink ? &model : nullptr);
                if (progress || model_sink) {
                    std::lock_guard<std::mutex> lk(progress_mutex);
                    if (model_sink) model_sink(results[i], model);
                    if (progress) progress(results[i]);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    ExperimentReport report;
    for (const Variant& v : variants) report.configs.push_back(v.name);
    report.positions = data.positions;
    report.class_names = data.class_names;
    report.n_folds = pcfg.n_folds;
    report.rows = std::move(results);
    std::sort(report.rows.begin(), report.rows.end(), [](const RunResult& a, const RunResult& b) {
        if (a.variant_index != b.variant_index) return a.variant_index < b.variant_index;
        if (a.position != b.position) return a.position < b.position;
        return a.fold < b.fold;
    });
    return report;
}

} // namespace osr::eval
