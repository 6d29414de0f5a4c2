#pragma once

#include <string>
#include <vector>

#include "voxmim/architecture.hpp"
#include "voxmim/corruption.hpp"
#include "voxmim/synthdata.hpp"
#include "voxmim/trainer.hpp"
#include "voxmim/volume.hpp"

namespace voxmim {

/// Whole-pipeline configuration. Defaults mirror the reference protocol:
/// dynamic masking, lr 1e-4, bootstrap n=100, label fractions 10/25/50/100%,
/// 70/30 stratified split.
struct RunConfig {
    uint64_t seed = 42;

    PreprocessOptions preprocess{{1.0, 1.0, 1.0}, 1.0, 99.0, true};
    MaskPolicy mask = MaskPolicy::dynamic_preset();
    ModelConfig model;

    TrainConfig pretrain_cfg{30, 4, 1e-4, 0, false};
    TrainConfig train_cfg{40, 8, 1e-4, 0, false};

    int bootstrap_n = 100;
    double threshold = 0.5;
    std::vector<double> fractions{0.10, 0.25, 0.50, 1.00};
    double train_split = 0.70;
    // Literal reading of the evaluation protocol: sample the label fraction
    // from the test set and evaluate on that subset. Off by default; the
    // default samples fractions of the training set and evaluates on the
    // full test set.
    bool fraction_from_test = false;

    PhantomConfig phantom;
    int n_unlabeled = 64;
    int n_labeled = 40;
    double balance = 0.5;

    int reproduce_seeds = 3;

    void validate() const;
    // Stable serialization used for the provenance hash.
    std::string canonical_string() const;
};

// TOML-style sections of key = value pairs; '#' and ';' start comments.
// Unknown sections or keys are rejected.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin);

}  // namespace voxmim
