#include "voxmim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "voxmim/errors.hpp"
#include "voxmim/volume.hpp"

namespace voxmim {

void PredictionSet::validate(bool need_both_classes) const {
    if (items.empty()) throw DataError("empty prediction set");
    size_t pos = 0, neg = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        const auto& p = items[i];
        if (p.label != 0 && p.label != 1) throw DataError("prediction label must be 0 or 1");
        if (!std::isfinite(p.score)) throw DataError("non-finite score for id '" + p.id + "'");
        if (i > 0 && !(items[i - 1].id < p.id))
            throw DataError("prediction ids must be unique and sorted");
        (p.label ? pos : neg)++;
    }
    if (need_both_classes && (pos == 0 || neg == 0))
        throw DataError("prediction set must contain both classes");
}

void PredictionSet::sort_by_id() {
    std::sort(items.begin(), items.end(),
              [](const Prediction& a, const Prediction& b) { return a.id < b.id; });
}

namespace {

double auc_of(const std::vector<Prediction>& items) {
    std::vector<std::pair<double, int>> sorted;
    sorted.reserve(items.size());
    size_t pos = 0, neg = 0;
    for (const auto& p : items) {
        sorted.emplace_back(p.score, p.label);
        (p.label ? pos : neg)++;
    }
    if (pos == 0 || neg == 0) throw DataError("AUC requires both classes");
    std::sort(sorted.begin(), sorted.end());

    // Walk score-tie groups in ascending order; every negative already seen
    // scores strictly below the positives of the current group.
    double num = 0.0;
    size_t cum_neg = 0, i = 0;
    while (i < sorted.size()) {
        size_t j = i, gp = 0, gn = 0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            (sorted[j].second ? gp : gn)++;
            ++j;
        }
        num += static_cast<double>(gp) * static_cast<double>(cum_neg) + 0.5 * gp * gn;
        cum_neg += gn;
        i = j;
    }
    return num / (static_cast<double>(pos) * static_cast<double>(neg));
}

ThresholdMetrics threshold_of(const std::vector<Prediction>& items, double threshold) {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& p : items) {
        const bool predicted = p.score >= threshold;
        if (predicted && p.label) ++tp;
        else if (predicted) ++fp;
        else if (p.label) ++fn;
        else ++tn;
    }
    auto ratio = [](size_t a, size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    ThresholdMetrics m;
    m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

BootstrapResult summarize(std::vector<double> replicates, uint64_t seed) {
    BootstrapResult r;
    r.seed = seed;
    double sum = 0.0;
    for (double v : replicates) sum += v;
    r.point = sum / static_cast<double>(replicates.size());
    std::vector<double> sorted = replicates;
    std::sort(sorted.begin(), sorted.end());
    r.ci_lo = percentile_of_sorted(sorted, 2.5);
    r.ci_hi = percentile_of_sorted(sorted, 97.5);
    r.replicates = std::move(replicates);
    return r;
}

// Index sets drawn serially from the generator; replicates that lose a class
// are redrawn so AUC stays defined on every replicate.
std::vector<std::vector<size_t>> draw_index_sets(const std::vector<Prediction>& items, int n, Rng& rng,
                                                 int* redraws) {
    constexpr int kMaxAttempts = 1000;
    std::vector<std::vector<size_t>> sets;
    sets.reserve(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        std::vector<size_t> idx(items.size());
        int attempts = 0;
        for (;;) {
            if (++attempts > kMaxAttempts)
                throw DataError("bootstrap: could not draw a two-class resample in 1000 attempts");
            bool has_pos = false, has_neg = false;
            for (size_t& k : idx) {
                k = rng.below(items.size());
                (items[k].label ? has_pos : has_neg) = true;
            }
            if (has_pos && has_neg) break;
            if (redraws) ++(*redraws);
        }
        sets.push_back(std::move(idx));
    }
    return sets;
}

std::vector<Prediction> take(const std::vector<Prediction>& items, const std::vector<size_t>& idx) {
    std::vector<Prediction> out;
    out.reserve(idx.size());
    for (size_t k : idx) out.push_back(items[k]);
    return out;
}

double normal_sf2(double z) {  // two-sided tail of |z|
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace

double roc_auc(const PredictionSet& predictions) {
    predictions.validate(true);
    return auc_of(predictions.items);
}

ThresholdMetrics threshold_metrics(const PredictionSet& predictions, double threshold) {
    predictions.validate(false);
    return threshold_of(predictions.items, threshold);
}

MetricReport bootstrap(const PredictionSet& predictions, int n, Rng& rng, double threshold) {
    predictions.validate(true);
    if (n < 2) throw UsageError("bootstrap requires n >= 2 replicates");
    if (predictions.items.size() < 2) throw DataError("bootstrap requires at least two cases");

    MetricReport report;
    const auto sets = draw_index_sets(predictions.items, n, rng, &report.degenerate_redraws);
    std::vector<double> auc_r, acc_r, pre_r, rec_r, f1_r;
    for (const auto& idx : sets) {
        const auto sample = take(predictions.items, idx);
        auc_r.push_back(auc_of(sample));
        const ThresholdMetrics tm = threshold_of(sample, threshold);
        acc_r.push_back(tm.accuracy);
        pre_r.push_back(tm.precision);
        rec_r.push_back(tm.recall);
        f1_r.push_back(tm.f1);
    }
    report.auc = summarize(std::move(auc_r), 0);
    report.accuracy = summarize(std::move(acc_r), 0);
    report.precision = summarize(std::move(pre_r), 0);
    report.recall = summarize(std::move(rec_r), 0);
    report.f1 = summarize(std::move(f1_r), 0);
    return report;
}

double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b, bool pratt) {
    if (a.size() != b.size()) throw UsageError("wilcoxon: paired vectors must have equal length");
    if (a.empty()) throw UsageError("wilcoxon: empty input");

    std::vector<double> diffs(a.size());
    for (size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];

    // Rank |d| with average ranks over ties; classical handling drops zeros
    // before ranking, Pratt ranks them and then discards their ranks.
    std::vector<double> absd;
    std::vector<int> sign;
    for (double d : diffs) {
        if (d == 0.0 && !pratt) continue;
        absd.push_back(std::abs(d));
        sign.push_back(d > 0.0 ? 1 : (d < 0.0 ? -1 : 0));
    }
    if (absd.empty()) return 1.0;

    std::vector<size_t> order(absd.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return absd[x] < absd[y]; });

    std::vector<double> rank(absd.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && absd[order[j]] == absd[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (size_t k = i; k < j; ++k) rank[order[k]] = avg;
        i = j;
    }

    // Used ranks: nonzero differences only.
    std::vector<double> used;
    double w_plus = 0.0;
    for (size_t k = 0; k < absd.size(); ++k) {
        if (sign[k] == 0) continue;
        used.push_back(rank[k]);
        if (sign[k] > 0) w_plus += rank[k];
    }
    const size_t m = used.size();
    if (m == 0) return 1.0;

    if (m <= 25) {
        // Exact: distribution of W+ over all 2^m sign assignments, counted by
        // a subset-sum DP over doubled (integer) ranks.
        std::vector<long long> r2(m);
        long long total2 = 0;
        for (size_t k = 0; k < m; ++k) {
            r2[k] = static_cast<long long>(std::llround(used[k] * 2.0));
            total2 += r2[k];
        }
        std::vector<double> count(static_cast<size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        long long reach = 0;
        for (size_t k = 0; k < m; ++k) {
            reach += r2[k];
            for (long long w = reach; w >= r2[k]; --w)
                count[static_cast<size_t>(w)] += count[static_cast<size_t>(w - r2[k])];
        }
        const long long w2 = static_cast<long long>(std::llround(w_plus * 2.0));
        double le = 0.0, ge = 0.0;
        for (long long w = 0; w <= total2; ++w) {
            if (w <= w2) le += count[static_cast<size_t>(w)];
            if (w >= w2) ge += count[static_cast<size_t>(w)];
        }
        const double denom = std::pow(2.0, static_cast<double>(m));
        const double p = 2.0 * std::min(le, ge) / denom;
        return std::clamp(p, std::nextafter(0.0, 1.0), 1.0);
    }

    // Normal approximation. With signs +/-1 equally likely on fixed ranks,
    // E[W+] = sum(r)/2 and Var[W+] = sum(r^2)/4, which already folds in the
    // average-rank tie correction.
    double sum_r = 0.0, sum_r2 = 0.0;
    for (double r : used) {
        sum_r += r;
        sum_r2 += r * r;
    }
    const double mu = sum_r / 2.0;
    const double sd = std::sqrt(sum_r2 / 4.0);
    if (sd == 0.0) return 1.0;
    double delta = w_plus - mu;
    if (delta == 0.0) return 1.0;
    delta -= delta > 0.0 ? 0.5 : -0.5;  // continuity correction toward the mean
    const double p = normal_sf2(delta / sd);
    return std::clamp(p, std::nextafter(0.0, 1.0), 1.0);
}

ComparisonReport compare_methods(const PredictionSet& pred_a, const PredictionSet& pred_b, int n,
                                 Rng& rng) {
    pred_a.validate(true);
    pred_b.validate(true);
    if (pred_a.items.size() != pred_b.items.size())
        throw DataError("compare_methods: prediction sets cover different cases");
    for (size_t i = 0; i < pred_a.items.size(); ++i) {
        if (pred_a.items[i].id != pred_b.items[i].id)
            throw DataError("compare_methods: prediction id sets differ");
        if (pred_a.items[i].label != pred_b.items[i].label)
            throw DataError("compare_methods: labels disagree for id '" + pred_a.items[i].id + "'");
    }
    if (n < 2) throw UsageError("compare_methods requires n >= 2 replicates");

    ComparisonReport report;
    const auto sets = draw_index_sets(pred_a.items, n, rng, nullptr);
    for (const auto& idx : sets) {
        report.auc_a.push_back(auc_of(take(pred_a.items, idx)));
        report.auc_b.push_back(auc_of(take(pred_b.items, idx)));
    }
    report.p_value = wilcoxon_signed_rank(report.auc_a, report.auc_b);
    report.significant = report.p_value < 0.05;
    return report;
}

}  // namespace voxmim
