#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "voxmim/manifest.hpp"
#include "voxmim/volume.hpp"

namespace voxmim {

/// Desk-scale phantom: smoothed-noise background, a darker organ ellipsoid,
/// and (positive cases) a brighter lesion ellipsoid inside the organ.
struct PhantomConfig {
    std::array<int, 3> dims{32, 32, 16};
    double noise_amplitude = 0.06;
    std::array<double, 2> organ_radii_xy{8.0, 12.0};  // voxels (1 mm spacing)
    std::array<double, 2> organ_radii_z{4.0, 6.5};
    std::array<double, 2> lesion_radii_xy{2.0, 3.5};
    std::array<double, 2> lesion_radii_z{1.2, 2.2};
    double organ_delta = 0.15;   // subtracted inside the organ
    double lesion_delta = 0.18;  // added inside the lesion
    double class_balance = 0.5;

    void validate() const;
};

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;

    bool contains(double x, double y, double z) const {
        const double dx = (x - center[0]) / radii[0];
        const double dy = (y - center[1]) / radii[1];
        const double dz = (z - center[2]) / radii[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

struct PhantomInfo {
    Ellipsoid organ;
    Ellipsoid lesion;
    bool has_lesion = false;
};

// Patient label: 1 iff the highest lesion score is >= 7.
int derive_label(const std::vector<int>& gleason_scores);

Volume generate_phantom(const PhantomConfig& config, int label, uint64_t seed,
                        PhantomInfo* info = nullptr);

// Writes volumes under <out_dir>/volumes and the two manifest CSVs; the
// labeled cohort has exactly round-half-up(balance * n_labeled) positives.
std::pair<DatasetManifest, DatasetManifest> generate_dataset(const PhantomConfig& config,
                                                             int n_unlabeled, int n_labeled,
                                                             double balance, uint64_t seed,
                                                             const std::string& out_dir);

}  // namespace voxmim
