#pragma once

#include <string>

#include "voxmim/config.hpp"
#include "voxmim/manifest.hpp"

namespace voxmim {

// Rewrites every volume of `manifest` through the preprocessing chain into
// `out_dir`, returning the manifest pointing at the new files. Volumes whose
// outputs already exist are skipped unless `force`.
DatasetManifest preprocess_manifest(const DatasetManifest& manifest, const PreprocessOptions& opts,
                                    const std::string& out_dir, bool force = false);

/// Full results grid: synth -> preprocess -> split -> per-seed MIM pretrain
/// -> {random, mim-probe, mim-finetune} x label fractions -> bootstrap
/// metrics, aggregated into <run_dir>/results.csv. Resumable: completed
/// cells and checkpoints are skipped on re-run.
void run_reproduce(const RunConfig& cfg, const std::string& run_dir);

}  // namespace voxmim
