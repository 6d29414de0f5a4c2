// voxmim: masked-image-modelling pre-training and downstream lesion
// classification on synthetic volumetric phantoms, end to end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxmim/config.hpp"
#include "voxmim/errors.hpp"
#include "voxmim/metrics.hpp"
#include "voxmim/pipeline.hpp"
#include "voxmim/synthdata.hpp"
#include "voxmim/trainer.hpp"

namespace fs = std::filesystem;
using namespace voxmim;

namespace {

struct Common {
    std::string config_path;
    int64_t seed_override = -1;

    RunConfig load() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        cfg.validate();
        return cfg;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "Run configuration file (TOML-style sections)");
    cmd->add_option("--seed", common.seed_override, "Master seed (overrides the config file)");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void write_report(const MetricReport& report, const std::string& out_base) {
    nlohmann::json j;
    for (const auto& [name, r] : report.named())
        j[name] = {{"point", r->point}, {"ci_lo", r->ci_lo}, {"ci_hi", r->ci_hi}};
    j["degenerate_redraws"] = report.degenerate_redraws;
    std::ofstream js(out_base + ".json");
    js << j.dump(2) << "\n";

    std::ofstream csv(out_base + ".csv");
    csv << "metric,point,ci_lo,ci_hi\n";
    for (const auto& [name, r] : report.named())
        csv << name << "," << fmt(r->point) << "," << fmt(r->ci_lo) << "," << fmt(r->ci_hi) << "\n";
}

int dispatch(int argc, char** argv) {
    CLI::App app{"3D masked image modelling pre-training and evaluation toolkit"};
    app.require_subcommand(1);

    // --- synth ------------------------------------------------------------
    Common synth_common;
    std::string synth_out = "dataset";
    int synth_unlabeled = -1, synth_labeled = -1;
    double synth_balance = -1.0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
    add_common(synth, synth_common);
    synth->add_option("--out", synth_out, "Output dataset directory");
    synth->add_option("--n-unlabeled", synth_unlabeled, "Unlabeled cohort size (default from config)");
    synth->add_option("--n-labeled", synth_labeled, "Labeled cohort size (default from config)");
    synth->add_option("--balance", synth_balance, "Positive-class balance in [0,1]");
    synth->callback([&] {
        RunConfig cfg = synth_common.load();
        if (synth_unlabeled >= 0) cfg.n_unlabeled = synth_unlabeled;
        if (synth_labeled >= 0) cfg.n_labeled = synth_labeled;
        if (synth_balance >= 0.0) cfg.balance = synth_balance;
        generate_dataset(cfg.phantom, cfg.n_unlabeled, cfg.n_labeled, cfg.balance,
                         derive_seed(cfg.seed, {1}), synth_out);
        std::cout << (fs::path(synth_out) / "unlabeled.csv").string() << "\n"
                  << (fs::path(synth_out) / "labeled.csv").string() << "\n";
    });

    // --- preprocess -------------------------------------------------------
    Common prep_common;
    std::string prep_manifest, prep_out = "prep", prep_role = "labeled";
    bool prep_force = false;
    auto* prep = app.add_subcommand("preprocess", "Resample, clip and normalize every volume");
    add_common(prep, prep_common);
    prep->add_option("--manifest", prep_manifest, "Input manifest CSV")->required();
    prep->add_option("--out", prep_out, "Output directory for preprocessed volumes");
    prep->add_option("--role", prep_role, "Manifest role: labeled or unlabeled");
    prep->add_flag("--force", prep_force, "Re-process volumes even if outputs exist");
    prep->callback([&] {
        const RunConfig cfg = prep_common.load();
        const ManifestRole role =
            prep_role == "unlabeled" ? ManifestRole::Unlabeled : ManifestRole::Labeled;
        const DatasetManifest in = load_manifest(prep_manifest, role);
        const DatasetManifest out = preprocess_manifest(in, cfg.preprocess, prep_out, prep_force);
        const std::string out_csv = (fs::path(prep_out) / "manifest.csv").string();
        save_manifest(out, out_csv);
        std::cout << out_csv << "\n";
    });

    // --- pretrain ---------------------------------------------------------
    Common pre_common;
    std::string pre_manifest, pre_out = "mae";
    auto* pre = app.add_subcommand("pretrain", "MIM pre-training of the masked autoencoder");
    add_common(pre, pre_common);
    pre->add_option("--manifest", pre_manifest, "Unlabeled manifest CSV")->required();
    pre->add_option("--out", pre_out, "Checkpoint base path");
    pre->callback([&] {
        const RunConfig cfg = pre_common.load();
        const DatasetManifest unlabeled = load_manifest(pre_manifest, ManifestRole::Unlabeled);
        Rng init_rng(derive_seed(cfg.seed, {5}));
        MaskedAutoencoder mae(cfg.model, init_rng);
        TrainConfig tc = cfg.pretrain_cfg;
        tc.seed = cfg.seed;
        const TrainResult result = pretrain(mae, unlabeled, cfg.mask, tc);
        save_mae_checkpoint(mae, {tc.epochs, result.epoch_loss, cfg.seed}, pre_out);
        std::ofstream loss_csv(pre_out + ".loss.csv");
        loss_csv << "epoch,loss\n";
        for (size_t e = 0; e < result.epoch_loss.size(); ++e)
            loss_csv << e << "," << fmt(result.epoch_loss[e]) << "\n";
        std::cout << pre_out << ".ckpt.json\n";
    });

    // --- train ------------------------------------------------------------
    Common train_common;
    std::string train_manifest, train_mode = "probe", train_mae, train_external, train_out = "clf";
    double train_fraction = 1.0;
    auto* train = app.add_subcommand("train", "Train a downstream lesion classifier");
    add_common(train, train_common);
    train->add_option("--manifest", train_manifest, "Labeled training manifest CSV")->required();
    train->add_option("--mode", train_mode, "probe | finetune | random | external");
    train->add_option("--fraction", train_fraction, "Label fraction (must be listed in the config)");
    train->add_option("--mae", train_mae, "MAE checkpoint (probe/finetune encoder source)");
    train->add_option("--external", train_external, "External MAE checkpoint (mode external)");
    train->add_option("--out", train_out, "Classifier checkpoint base path");
    train->callback([&] {
        const RunConfig cfg = train_common.load();
        const ClassifierMode mode = classifier_mode_from_string(train_mode);
        if (std::none_of(cfg.fractions.begin(), cfg.fractions.end(),
                         [&](double f) { return f == train_fraction; })) {
            std::string allowed;
            for (double f : cfg.fractions) allowed += (allowed.empty() ? "" : ", ") + fmt(f);
            throw UsageError("fraction " + fmt(train_fraction) + " not configured; allowed: " + allowed);
        }
        const DatasetManifest labeled = load_manifest(train_manifest, ManifestRole::Labeled);
        Rng subset_rng(derive_seed(cfg.seed, {4}));
        const DatasetManifest subset = sample_label_fraction(labeled, train_fraction, subset_rng);

        std::unique_ptr<MaskedAutoencoder> source;
        if (mode == ClassifierMode::LinearProbe || mode == ClassifierMode::FineTune) {
            if (train_mae.empty()) throw UsageError("--mae is required for probe/finetune");
            source = load_mae_checkpoint(train_mae);
        } else if (mode == ClassifierMode::ExternalWeights) {
            if (train_external.empty()) throw UsageError("--external is required for mode external");
            source = load_mae_checkpoint(train_external);
        }
        Rng init_rng(derive_seed(cfg.seed, {5}));
        Classifier clf(cfg.model, mode, source.get(), init_rng);
        TrainConfig tc = cfg.train_cfg;
        tc.seed = derive_seed(cfg.seed, {6});
        const TrainResult result = train_downstream(clf, subset, tc);
        save_classifier_checkpoint(clf, {tc.epochs, result.epoch_loss, cfg.seed}, train_out);
        std::cout << train_out << ".ckpt.json\n";
    });

    // --- evaluate ---------------------------------------------------------
    Common eval_common;
    std::string eval_ckpt, eval_manifest, eval_out = "report";
    auto* eval = app.add_subcommand("evaluate", "Bootstrap metrics for a classifier on a test set");
    add_common(eval, eval_common);
    eval->add_option("--checkpoint", eval_ckpt, "Classifier checkpoint")->required();
    eval->add_option("--manifest", eval_manifest, "Labeled test manifest CSV")->required();
    eval->add_option("--out", eval_out, "Report base path (.json and .csv)");
    eval->callback([&] {
        const RunConfig cfg = eval_common.load();
        auto clf = load_classifier_checkpoint(eval_ckpt);
        const DatasetManifest test = load_manifest(eval_manifest, ManifestRole::Labeled);
        const PredictionSet preds = evaluate_classifier(*clf, test);
        Rng boot_rng(derive_seed(cfg.seed, {7}));
        const MetricReport report = bootstrap(preds, cfg.bootstrap_n, boot_rng, cfg.threshold);
        write_report(report, eval_out);
        std::cout << eval_out << ".json\n";
    });

    // --- compare ----------------------------------------------------------
    Common cmp_common;
    std::string cmp_a, cmp_b, cmp_manifest, cmp_out = "comparison";
    auto* cmp = app.add_subcommand("compare", "Paired-bootstrap AUC comparison of two classifiers");
    add_common(cmp, cmp_common);
    cmp->add_option("--checkpoint-a", cmp_a, "First classifier checkpoint")->required();
    cmp->add_option("--checkpoint-b", cmp_b, "Second classifier checkpoint")->required();
    cmp->add_option("--manifest", cmp_manifest, "Labeled test manifest CSV")->required();
    cmp->add_option("--out", cmp_out, "Comparison report base path (.json)");
    cmp->callback([&] {
        const RunConfig cfg = cmp_common.load();
        auto clf_a = load_classifier_checkpoint(cmp_a);
        auto clf_b = load_classifier_checkpoint(cmp_b);
        const DatasetManifest test = load_manifest(cmp_manifest, ManifestRole::Labeled);
        const PredictionSet pred_a = evaluate_classifier(*clf_a, test);
        const PredictionSet pred_b = evaluate_classifier(*clf_b, test);
        Rng cmp_rng(derive_seed(cfg.seed, {8}));
        const ComparisonReport report = compare_methods(pred_a, pred_b, cfg.bootstrap_n, cmp_rng);
        nlohmann::json j;
        j["p_value"] = report.p_value;
        j["significant_at_0.05"] = report.significant;
        j["auc_a_mean"] = std::accumulate(report.auc_a.begin(), report.auc_a.end(), 0.0) /
                          static_cast<double>(report.auc_a.size());
        j["auc_b_mean"] = std::accumulate(report.auc_b.begin(), report.auc_b.end(), 0.0) /
                          static_cast<double>(report.auc_b.size());
        std::ofstream out(cmp_out + ".json");
        out << j.dump(2) << "\n";
        std::cout << cmp_out << ".json\n";
    });

    // --- reproduce --------------------------------------------------------
    Common rep_common;
    std::string rep_out = "run";
    auto* rep = app.add_subcommand(
        "reproduce", "Full grid: {random, mim-probe, mim-finetune} x label fractions x seeds");
    add_common(rep, rep_common);
    rep->add_option("--out", rep_out, "Run directory");
    rep->callback([&] {
        const RunConfig cfg = rep_common.load();
        run_reproduce(cfg, rep_out);
        std::cout << (fs::path(rep_out) / "results.csv").string() << "\n";
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
