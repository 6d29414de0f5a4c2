#include "voxmim/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "voxmim/errors.hpp"

namespace voxmim {

namespace {

int round_half_up_pos(double x) { return static_cast<int>(std::floor(x + 0.5)); }

std::string base_path(const std::string& path) {
    if (path.size() > 5 && path.ends_with(".json")) return path.substr(0, path.size() - 5);
    if (path.size() > 4 && path.ends_with(".raw")) return path.substr(0, path.size() - 4);
    return path;
}

}  // namespace

Volume::Volume(std::array<int, 3> d, std::array<double, 3> s, float fill)
    : dims(d), spacing(s),
      voxels(static_cast<size_t>(d[0]) * d[1] * d[2], fill) {}

void Volume::validate() const {
    for (int i = 0; i < 3; ++i) {
        if (dims[i] <= 0) throw DataError("volume dims must be positive");
        if (!(spacing[i] > 0.0)) throw DataError("volume spacing must be positive");
    }
    size_t expected = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    if (voxels.size() != expected)
        throw DataError("voxel count " + std::to_string(voxels.size()) + " does not match dims product " +
                        std::to_string(expected));
    for (size_t i = 0; i < voxels.size(); ++i)
        if (!std::isfinite(voxels[i]))
            throw DataError("non-finite voxel at linear index " + std::to_string(i));
}

Volume load_volume(const std::string& path) {
    const std::string base = base_path(path);
    std::ifstream header(base + ".json");
    if (!header) throw DataError("cannot open volume header " + base + ".json");
    nlohmann::json j;
    try {
        header >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed volume header " + base + ".json: " + e.what());
    }

    Volume v;
    try {
        auto d = j.at("dims");
        auto s = j.at("spacing_mm");
        for (int i = 0; i < 3; ++i) {
            v.dims[i] = d.at(i).get<int>();
            v.spacing[i] = s.at(i).get<double>();
        }
        if (j.at("dtype").get<std::string>() != "f32le")
            throw DataError("unsupported dtype in " + base + ".json");
        if (j.at("order").get<std::string>() != "x-fastest")
            throw DataError("unsupported order in " + base + ".json");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid volume header " + base + ".json: " + e.what());
    }
    for (int i = 0; i < 3; ++i) {
        if (v.dims[i] <= 0) throw DataError("non-positive dim in " + base + ".json");
        if (!(v.spacing[i] > 0.0)) throw DataError("non-positive spacing in " + base + ".json");
    }

    std::ifstream raw(base + ".raw", std::ios::binary);
    if (!raw) throw DataError("cannot open volume payload " + base + ".raw");
    raw.seekg(0, std::ios::end);
    const size_t bytes = static_cast<size_t>(raw.tellg());
    raw.seekg(0);
    const size_t count = static_cast<size_t>(v.dims[0]) * v.dims[1] * v.dims[2];
    if (bytes != count * 4)
        throw DataError("payload length mismatch in " + base + ".raw: expected " +
                        std::to_string(count * 4) + " bytes, got " + std::to_string(bytes));
    v.voxels.resize(count);
    raw.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(bytes));
    if (!raw) throw DataError("short read on " + base + ".raw");

    v.validate();
    return v;
}

void save_volume(const Volume& volume, const std::string& path) {
    volume.validate();
    const std::string base = base_path(path);

    nlohmann::json j;
    j["dims"] = volume.dims;
    j["spacing_mm"] = volume.spacing;
    j["dtype"] = "f32le";
    j["order"] = "x-fastest";
    std::ofstream header(base + ".json");
    if (!header) throw DataError("cannot write volume header " + base + ".json");
    header << j.dump() << "\n";
    if (!header) throw DataError("write failure on " + base + ".json");

    std::ofstream raw(base + ".raw", std::ios::binary);
    if (!raw) throw DataError("cannot write volume payload " + base + ".raw");
    raw.write(reinterpret_cast<const char*>(volume.voxels.data()),
              static_cast<std::streamsize>(volume.voxels.size() * 4));
    if (!raw) throw DataError("write failure on " + base + ".raw");
}

Volume resample_trilinear(const Volume& volume, std::array<double, 3> target_spacing) {
    for (double s : target_spacing)
        if (!(s > 0.0)) throw DataError("target spacing must be positive");

    if (target_spacing == volume.spacing) return volume;  // bit-exact identity

    Volume out;
    out.spacing = target_spacing;
    for (int i = 0; i < 3; ++i)
        out.dims[i] = std::max(1, round_half_up_pos(volume.dims[i] * volume.spacing[i] / target_spacing[i]));
    out.voxels.resize(static_cast<size_t>(out.dims[0]) * out.dims[1] * out.dims[2]);

    const int nx = volume.dims[0], ny = volume.dims[1], nz = volume.dims[2];
    auto coord = [&](int i, int axis) {
        // Voxel-center convention: physical position of index i is (i+0.5)*spacing.
        double p = (i + 0.5) * target_spacing[axis];
        double u = p / volume.spacing[axis] - 0.5;
        return std::clamp(u, 0.0, static_cast<double>(volume.dims[axis] - 1));
    };

    for (int z = 0; z < out.dims[2]; ++z) {
        const double uz = coord(z, 2);
        const int z0 = static_cast<int>(uz), z1 = std::min(z0 + 1, nz - 1);
        const double fz = uz - z0;
        for (int y = 0; y < out.dims[1]; ++y) {
            const double uy = coord(y, 1);
            const int y0 = static_cast<int>(uy), y1 = std::min(y0 + 1, ny - 1);
            const double fy = uy - y0;
            for (int x = 0; x < out.dims[0]; ++x) {
                const double ux = coord(x, 0);
                const int x0 = static_cast<int>(ux), x1 = std::min(x0 + 1, nx - 1);
                const double fx = ux - x0;
                const double c00 = volume.at(x0, y0, z0) * (1 - fx) + volume.at(x1, y0, z0) * fx;
                const double c10 = volume.at(x0, y1, z0) * (1 - fx) + volume.at(x1, y1, z0) * fx;
                const double c01 = volume.at(x0, y0, z1) * (1 - fx) + volume.at(x1, y0, z1) * fx;
                const double c11 = volume.at(x0, y1, z1) * (1 - fx) + volume.at(x1, y1, z1) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

template <typename T>
double percentile_of_sorted(const std::vector<T>& sorted, double p) {
    if (sorted.empty()) throw DataError("percentile of empty set");
    const double rank = p / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

template double percentile_of_sorted<float>(const std::vector<float>&, double);
template double percentile_of_sorted<double>(const std::vector<double>&, double);

Volume clip_percentiles(const Volume& volume, double lo, double hi) {
    if (!(lo < hi)) throw DataError("clip_percentiles requires lo < hi");
    if (lo < 0.0 || hi > 100.0) throw DataError("percentiles must lie in [0,100]");
    std::vector<float> sorted = volume.voxels;
    std::sort(sorted.begin(), sorted.end());
    const float plo = static_cast<float>(percentile_of_sorted(sorted, lo));
    const float phi = static_cast<float>(percentile_of_sorted(sorted, hi));

    Volume out = volume;
    for (float& v : out.voxels) v = std::clamp(v, plo, phi);
    return out;
}

Volume normalize_minmax(const Volume& volume) {
    const auto [mn_it, mx_it] = std::minmax_element(volume.voxels.begin(), volume.voxels.end());
    const float mn = *mn_it, mx = *mx_it;
    Volume out = volume;
    if (mx == mn) {
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    const float range = mx - mn;
    for (float& v : out.voxels) v = (v - mn) / range;
    return out;
}

Volume preprocess(const Volume& volume, const PreprocessOptions& opts) {
    Volume v = resample_trilinear(volume, opts.target_spacing);
    if (opts.clip_first) {
        v = clip_percentiles(v, opts.lo, opts.hi);
        return normalize_minmax(v);
    }
    v = normalize_minmax(v);
    return clip_percentiles(v, opts.lo, opts.hi);
}

}  // namespace voxmim
