#include "voxmim/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "voxmim/errors.hpp"
#include "voxmim/metrics.hpp"
#include "voxmim/synthdata.hpp"
#include "voxmim/trainer.hpp"

namespace voxmim {

namespace fs = std::filesystem;

namespace {

// Seed-derivation stream ids for the reproduce pipeline.
constexpr uint64_t kSeedSynth = 1;
constexpr uint64_t kSeedSplit = 2;
constexpr uint64_t kSeedGrid = 3;
constexpr uint64_t kSeedSubset = 4;
constexpr uint64_t kSeedInit = 5;
constexpr uint64_t kSeedTrain = 6;
constexpr uint64_t kSeedBootstrap = 7;
constexpr uint64_t kSeedCompare = 8;

const char* kMethods[] = {"random", "mim-probe", "mim-finetune"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string cell_name(const std::string& method, double fraction, int seed_index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_f%03d_s%d", method.c_str(),
                  static_cast<int>(fraction * 100.0 + 0.5), seed_index);
    return buf;
}

nlohmann::json predictions_json(const PredictionSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : set.items)
        arr.push_back({{"id", p.id}, {"label", p.label}, {"score", p.score}});
    return arr;
}

PredictionSet predictions_from_json(const nlohmann::json& arr) {
    PredictionSet set;
    for (const auto& j : arr)
        set.items.push_back({j.at("id").get<std::string>(), j.at("label").get<int>(),
                             j.at("score").get<double>()});
    return set;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

}  // namespace

DatasetManifest preprocess_manifest(const DatasetManifest& manifest, const PreprocessOptions& opts,
                                    const std::string& out_dir, bool force) {
    manifest.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());

    DatasetManifest out = manifest;
    for (auto& r : out.records) {
        const std::string base = (fs::path(out_dir) / r.id).string();
        if (force || !fs::exists(base + ".json") || !fs::exists(base + ".raw")) {
            const Volume v = load_volume(r.volume_path);
            save_volume(preprocess(v, opts), base);
        }
        r.volume_path = base + ".json";
    }
    return out;
}

void run_reproduce(const RunConfig& cfg, const std::string& run_dir) {
    cfg.validate();
    std::error_code ec;
    for (const char* sub : {"", "ckpt", "cells"}) {
        fs::create_directories(fs::path(run_dir) / sub, ec);
        if (ec) throw DataError("cannot create run directory: " + ec.message());
    }

    // Provenance record: config hash and the derived seeds.
    {
        nlohmann::json run;
        run["config_canonical"] = cfg.canonical_string();
        run["config_hash"] = std::hash<std::string>{}(cfg.canonical_string());
        run["master_seed"] = cfg.seed;
        run["seeds"] = nlohmann::json::array();
        for (int k = 0; k < cfg.reproduce_seeds; ++k)
            run["seeds"].push_back(derive_seed(cfg.seed, {kSeedGrid, static_cast<uint64_t>(k)}));
        write_text_atomic(fs::path(run_dir) / "run.json", run.dump(2) + "\n");
    }

    // Data: synthesize once, then preprocess.
    const std::string data_dir = (fs::path(run_dir) / "data").string();
    DatasetManifest unlabeled, labeled;
    if (fs::exists(fs::path(data_dir) / "unlabeled.csv") &&
        fs::exists(fs::path(data_dir) / "labeled.csv")) {
        unlabeled = load_manifest((fs::path(data_dir) / "unlabeled.csv").string(),
                                  ManifestRole::Unlabeled);
        labeled = load_manifest((fs::path(data_dir) / "labeled.csv").string(), ManifestRole::Labeled);
    } else {
        std::tie(unlabeled, labeled) =
            generate_dataset(cfg.phantom, cfg.n_unlabeled, cfg.n_labeled, cfg.balance,
                             derive_seed(cfg.seed, {kSeedSynth}), data_dir);
    }
    const std::string prep_dir = (fs::path(run_dir) / "prep").string();
    unlabeled = preprocess_manifest(unlabeled, cfg.preprocess, prep_dir);
    labeled = preprocess_manifest(labeled, cfg.preprocess, prep_dir);

    Rng split_rng(derive_seed(cfg.seed, {kSeedSplit}));
    auto [train_manifest, test_manifest] = split_labeled(labeled, cfg.train_split, split_rng);
    save_manifest(train_manifest, (fs::path(run_dir) / "train.csv").string());
    save_manifest(test_manifest, (fs::path(run_dir) / "test.csv").string());

    for (int k = 0; k < cfg.reproduce_seeds; ++k) {
        const uint64_t seed_k = derive_seed(cfg.seed, {kSeedGrid, static_cast<uint64_t>(k)});

        const std::string mae_path =
            (fs::path(run_dir) / "ckpt" / ("mae_s" + std::to_string(k))).string();
        std::unique_ptr<MaskedAutoencoder> mae;
        if (fs::exists(mae_path + ".ckpt.json")) {
            mae = load_mae_checkpoint(mae_path);
        } else {
            Rng init_rng(derive_seed(seed_k, {kSeedInit}));
            mae = std::make_unique<MaskedAutoencoder>(cfg.model, init_rng);
            TrainConfig pt = cfg.pretrain_cfg;
            pt.seed = seed_k;
            const TrainResult pr = pretrain(*mae, unlabeled, cfg.mask, pt);
            CheckpointMeta meta{pt.epochs, pr.epoch_loss, seed_k};
            save_mae_checkpoint(*mae, meta, mae_path);
        }

        for (size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
            const double fraction = cfg.fractions[fi];
            Rng subset_rng(derive_seed(seed_k, {kSeedSubset, fi}));
            DatasetManifest train_set = train_manifest, eval_set = test_manifest;
            if (cfg.fraction_from_test)
                eval_set = sample_label_fraction(test_manifest, fraction, subset_rng);
            else
                train_set = sample_label_fraction(train_manifest, fraction, subset_rng);

            for (size_t mi = 0; mi < 3; ++mi) {
                const std::string method = kMethods[mi];
                const fs::path cell_path =
                    fs::path(run_dir) / "cells" / (cell_name(method, fraction, k) + ".json");
                if (fs::exists(cell_path)) continue;

                Rng init_rng(derive_seed(seed_k, {kSeedInit, fi, mi}));
                Classifier clf =
                    method == "random"
                        ? Classifier(cfg.model, ClassifierMode::RandomInit, nullptr, init_rng)
                        : Classifier(cfg.model,
                                     method == "mim-probe" ? ClassifierMode::LinearProbe
                                                           : ClassifierMode::FineTune,
                                     mae.get(), init_rng);

                TrainConfig tc = cfg.train_cfg;
                tc.seed = derive_seed(seed_k, {kSeedTrain, fi, mi});
                const TrainResult tr = train_downstream(clf, train_set, tc);

                const PredictionSet preds = evaluate_classifier(clf, eval_set);
                Rng boot_rng(derive_seed(seed_k, {kSeedBootstrap, fi, mi}));
                const MetricReport report = bootstrap(preds, cfg.bootstrap_n, boot_rng, cfg.threshold);

                nlohmann::json cell;
                cell["method"] = method;
                cell["fraction"] = fraction;
                cell["seed_index"] = k;
                cell["final_train_loss"] = tr.epoch_loss.back();
                for (const auto& [name, result] : report.named())
                    cell["metrics"][name] = {{"point", result->point},
                                             {"ci_lo", result->ci_lo},
                                             {"ci_hi", result->ci_hi}};
                cell["predictions"] = predictions_json(preds);
                write_text_atomic(cell_path, cell.dump(2) + "\n");
            }
        }
    }

    // Aggregate cells into the tidy results CSV; p values compare each
    // method's AUC against the random baseline via paired bootstrap.
    std::string csv = "method,fraction,seed,metric,point,ci_lo,ci_hi,p_value\n";
    for (int k = 0; k < cfg.reproduce_seeds; ++k) {
        const uint64_t seed_k = derive_seed(cfg.seed, {kSeedGrid, static_cast<uint64_t>(k)});
        for (size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
            const double fraction = cfg.fractions[fi];
            std::array<nlohmann::json, 3> cells;
            for (size_t mi = 0; mi < 3; ++mi) {
                const fs::path cell_path =
                    fs::path(run_dir) / "cells" / (cell_name(kMethods[mi], fraction, k) + ".json");
                std::ifstream in(cell_path);
                if (!in) throw DataError("missing cell " + cell_path.string());
                in >> cells[mi];
            }
            const PredictionSet baseline = predictions_from_json(cells[0].at("predictions"));
            for (size_t mi = 0; mi < 3; ++mi) {
                std::string p_value;
                if (mi != 0) {
                    Rng cmp_rng(derive_seed(seed_k, {kSeedCompare, fi, mi}));
                    const auto cmp = compare_methods(
                        predictions_from_json(cells[mi].at("predictions")), baseline,
                        cfg.bootstrap_n, cmp_rng);
                    p_value = fmt(cmp.p_value);
                }
                for (const char* metric : {"auc", "accuracy", "precision", "recall", "f1"}) {
                    const auto& m = cells[mi].at("metrics").at(metric);
                    csv += std::string(kMethods[mi]) + "," + fmt(fraction) + "," + std::to_string(k) +
                           "," + metric + "," + fmt(m.at("point").get<double>()) + "," +
                           fmt(m.at("ci_lo").get<double>()) + "," + fmt(m.at("ci_hi").get<double>()) +
                           "," + (std::string(metric) == "auc" ? p_value : "") + "\n";
                }
            }
        }
    }
    write_text_atomic(fs::path(run_dir) / "results.csv", csv);
}

}  // namespace voxmim
