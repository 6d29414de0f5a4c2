#pragma once

#include <memory>
#include <string>
#include <vector>

#include "voxmim/architecture.hpp"
#include "voxmim/corruption.hpp"
#include "voxmim/manifest.hpp"
#include "voxmim/metrics.hpp"
#include "voxmim/rng.hpp"

namespace voxmim {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double lr = 1e-4;
    uint64_t seed = 0;
    bool masked_only_loss = false;  // reconstruction loss over corrupted cubes only

    void validate() const;
};

// Stratified 70/30-style split: per class, round-half-up(fraction * size)
// cases go to train; train and test partition the input exactly.
std::pair<DatasetManifest, DatasetManifest> split_labeled(const DatasetManifest& manifest,
                                                          double train_fraction, Rng& rng);

// Stratified subsample without replacement; per-class count is
// round-half-up(fraction * class size) with a minimum of 1.
DatasetManifest sample_label_fraction(const DatasetManifest& train, double fraction, Rng& rng);

struct TrainResult {
    std::vector<double> epoch_loss;
};

// MIM pre-training: per epoch and per volume a fresh corruption plan (fresh
// cube dims and fraction in Dynamic mode), MSE against the uncorrupted
// volume, Adam updates. Never sees labels: the manifest is unlabeled.
TrainResult pretrain(MaskedAutoencoder& mae, const DatasetManifest& unlabeled,
                     const MaskPolicy& policy, const TrainConfig& config);

// BCE training of the classifier head (and encoder, when trainable).
TrainResult train_downstream(Classifier& classifier, const DatasetManifest& labeled,
                             const TrainConfig& config);

PredictionSet evaluate_classifier(Classifier& classifier, const DatasetManifest& test);

struct CheckpointMeta {
    int epochs = 0;
    std::vector<double> loss_history;
    uint64_t seed = 0;
};

void save_mae_checkpoint(const MaskedAutoencoder& mae, const CheckpointMeta& meta,
                         const std::string& path);
std::unique_ptr<MaskedAutoencoder> load_mae_checkpoint(const std::string& path,
                                                       CheckpointMeta* meta = nullptr);

void save_classifier_checkpoint(const Classifier& classifier, const CheckpointMeta& meta,
                                const std::string& path);
std::unique_ptr<Classifier> load_classifier_checkpoint(const std::string& path,
                                                       CheckpointMeta* meta = nullptr);

// Batch tensor (N,1,D,H,W) from volumes that must match the model dims.
nn::Var volumes_to_batch(const std::vector<const Volume*>& volumes, std::array<int, 3> input_dims,
                         bool requires_grad = false);

}  // namespace voxmim
