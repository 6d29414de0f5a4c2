#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace voxmim {

/// Dense 3D scalar grid with physical spacing. Voxels are stored x-fastest,
/// then y, then z; value at (x,y,z) lives at index x + dims[0]*(y + dims[1]*z).
struct Volume {
    std::array<int, 3> dims{0, 0, 0};          // voxels along x, y, z
    std::array<double, 3> spacing{1, 1, 1};    // mm per voxel along x, y, z
    std::vector<float> voxels;

    Volume() = default;
    Volume(std::array<int, 3> d, std::array<double, 3> s, float fill = 0.0f);

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) +
               static_cast<size_t>(dims[0]) *
                   (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * static_cast<size_t>(z));
    }
    float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    size_t voxel_count() const { return voxels.size(); }

    // Throws DataError on any invariant violation (count, finiteness, spacing).
    void validate() const;
};

// File pair `<base>.json` + `<base>.raw`, little-endian f32, x-fastest.
// `path` may name either the base or the .json header.
Volume load_volume(const std::string& path);
void save_volume(const Volume& volume, const std::string& path);

Volume resample_trilinear(const Volume& volume, std::array<double, 3> target_spacing);

// Percentile convention used across the project (preprocessing and bootstrap
// CIs): linear interpolation between closest ranks, rank = p/100*(n-1),
// zero-based. Input must be sorted ascending.
template <typename T>
double percentile_of_sorted(const std::vector<T>& sorted, double p);

extern template double percentile_of_sorted<float>(const std::vector<float>&, double);
extern template double percentile_of_sorted<double>(const std::vector<double>&, double);

Volume clip_percentiles(const Volume& volume, double lo, double hi);
Volume normalize_minmax(const Volume& volume);

struct PreprocessOptions {
    std::array<double, 3> target_spacing{0.5, 0.5, 3.6};
    double lo = 1.0;
    double hi = 99.0;
    bool clip_first = true;  // clip-then-normalize keeps the [0,1] range; the
                             // literal normalize-then-clip order is selectable
};

Volume preprocess(const Volume& volume, const PreprocessOptions& opts);

}  // namespace voxmim
