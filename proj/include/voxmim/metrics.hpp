#pragma once

#include <string>
#include <vector>

#include "voxmim/rng.hpp"

namespace voxmim {

struct Prediction {
    std::string id;
    int label;     // 0 or 1
    double score;  // in [0,1]
};

/// Per-case predictions, sorted by id with unique ids.
struct PredictionSet {
    std::vector<Prediction> items;

    void validate(bool need_both_classes) const;
    void sort_by_id();
};

// Mann-Whitney formulation: (concordant pairs + 0.5 * tied pairs) / (P*N).
double roc_auc(const PredictionSet& predictions);

struct ThresholdMetrics {
    double accuracy;
    double precision;
    double recall;
    double f1;
};

// score >= threshold predicts positive; zero-denominator metrics are 0.
ThresholdMetrics threshold_metrics(const PredictionSet& predictions, double threshold = 0.5);

struct BootstrapResult {
    std::vector<double> replicates;
    double point;  // mean of replicates
    double ci_lo;
    double ci_hi;
    uint64_t seed;
};

struct MetricReport {
    BootstrapResult auc, accuracy, precision, recall, f1;
    int degenerate_redraws = 0;  // single-class resamples that were redrawn

    std::vector<std::pair<std::string, const BootstrapResult*>> named() const {
        return {{"auc", &auc}, {"accuracy", &accuracy}, {"precision", &precision},
                {"recall", &recall}, {"f1", &f1}};
    }
};

// Resamples cases with replacement, same size as the input set; replicates
// missing a class are redrawn (capped). 95% percentile CI.
MetricReport bootstrap(const PredictionSet& predictions, int n, Rng& rng, double threshold = 0.5);

// Two-sided signed-rank p value. Zeros dropped by default (Pratt variant
// keeps them in the ranking). Exact enumeration for m <= 25 nonzero
// differences, normal approximation with tie and continuity corrections
// beyond; all-zero differences give p = 1.
double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                            bool pratt = false);

struct ComparisonReport {
    std::vector<double> auc_a;
    std::vector<double> auc_b;
    double p_value;
    bool significant;  // at the 0.05 level
};

// Paired bootstrap: identical resample index sets applied to both sets, then
// Wilcoxon signed-rank on the paired AUC replicates.
ComparisonReport compare_methods(const PredictionSet& pred_a, const PredictionSet& pred_b, int n,
                                 Rng& rng);

}  // namespace voxmim
