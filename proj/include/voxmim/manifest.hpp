#pragma once

#include <optional>
#include <string>
#include <vector>

namespace voxmim {

enum class ManifestRole { Unlabeled, Labeled };

struct ManifestRecord {
    std::string id;
    std::string volume_path;
    std::optional<int> label;  // absent for unlabeled cohorts
};

/// CSV-backed dataset listing: `id,volume,label` with label empty for
/// unlabeled rows. Unlabeled manifests never carry labels, so pretraining
/// cannot read one even by accident.
struct DatasetManifest {
    ManifestRole role = ManifestRole::Unlabeled;
    std::vector<ManifestRecord> records;

    void validate() const;
    size_t count_label(int label) const;
};

DatasetManifest load_manifest(const std::string& path, ManifestRole role);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

}  // namespace voxmim
