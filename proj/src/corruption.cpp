#include "voxmim/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "voxmim/errors.hpp"

namespace voxmim {

std::string to_string(CorruptionOp op) {
    switch (op) {
        case CorruptionOp::Occlusion: return "occlusion";
        case CorruptionOp::Rotation30: return "rotation30";
        case CorruptionOp::FlipHorizontal: return "flip_horizontal";
        case CorruptionOp::FlipVertical: return "flip_vertical";
    }
    return "?";
}

MaskPolicy MaskPolicy::static_preset() {
    MaskPolicy p;
    p.mode = MaskMode::Static;
    p.cube_dims = {32, 32, 16};
    p.subsample = 0.60;
    p.occlusion_ratio = 1.0;
    return p;
}

MaskPolicy MaskPolicy::dynamic_preset() {
    MaskPolicy p;
    p.mode = MaskMode::Dynamic;
    p.inplane_range = {9, 32};
    p.depth_range = {2, 16};
    p.subsample_range = {0.60, 0.90};
    p.occlusion_ratio = 0.5;
    return p;
}

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

CubeGrid partition_cubes(std::array<int, 3> volume_dims, std::array<int, 3> cube_dims) {
    for (int i = 0; i < 3; ++i) {
        if (cube_dims[i] <= 0) throw DataError("cube dims must be positive");
        if (cube_dims[i] > volume_dims[i])
            throw DataError("cube dim " + std::to_string(cube_dims[i]) + " exceeds volume dim " +
                            std::to_string(volume_dims[i]));
    }
    CubeGrid grid{volume_dims, cube_dims, {}};
    std::array<int, 3> counts;
    for (int i = 0; i < 3; ++i) counts[i] = (volume_dims[i] + cube_dims[i] - 1) / cube_dims[i];
    grid.cubes.reserve(static_cast<size_t>(counts[0]) * counts[1] * counts[2]);
    for (int cz = 0; cz < counts[2]; ++cz)
        for (int cy = 0; cy < counts[1]; ++cy)
            for (int cx = 0; cx < counts[0]; ++cx) {
                CubeExtent e;
                e.origin = {cx * cube_dims[0], cy * cube_dims[1], cz * cube_dims[2]};
                for (int i = 0; i < 3; ++i) {
                    int idx = i == 0 ? cx : (i == 1 ? cy : cz);
                    e.size[i] = std::min(cube_dims[i], volume_dims[i] - idx * cube_dims[i]);
                }
                grid.cubes.push_back(e);
            }
    return grid;
}

namespace {

// Sample k distinct indices from [0, n) uniformly without replacement.
std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
}

int select_count(double fraction, size_t cube_count) {
    int k = round_half_up(fraction * static_cast<double>(cube_count));
    if (k == 0 && cube_count > 0) k = 1;  // guarantee some corruption
    return k;
}

CorruptionOp draw_op(const MaskPolicy& policy, Rng& rng) {
    if (rng.bernoulli(policy.occlusion_ratio)) return CorruptionOp::Occlusion;
    switch (rng.below(3)) {
        case 0: return CorruptionOp::Rotation30;
        case 1: return CorruptionOp::FlipHorizontal;
        default: return CorruptionOp::FlipVertical;
    }
}

}  // namespace

MaskPlan plan_static(const CubeGrid& grid, const MaskPolicy& policy, Rng& rng) {
    if (policy.mode != MaskMode::Static) throw UsageError("plan_static requires a Static policy");
    MaskPlan plan;
    plan.sampled_fraction = policy.subsample;
    const int k = select_count(policy.subsample, grid.cubes.size());
    for (int idx : sample_without_replacement(static_cast<int>(grid.cubes.size()), k, rng)) {
        CorruptionOp op = policy.occlusion_ratio >= 1.0 ? CorruptionOp::Occlusion : draw_op(policy, rng);
        plan.assignments.push_back({idx, op});
    }
    return plan;
}

std::pair<CubeGrid, MaskPlan> plan_dynamic(std::array<int, 3> volume_dims, const MaskPolicy& policy,
                                           Rng& rng) {
    if (policy.mode != MaskMode::Dynamic) throw UsageError("plan_dynamic requires a Dynamic policy");
    if (volume_dims[0] < policy.inplane_range[0] || volume_dims[1] < policy.inplane_range[0] ||
        volume_dims[2] < policy.depth_range[0])
        throw DataError("volume dims smaller than minimum dynamic cube dims");

    // One draw per volume: square in-plane side, independent depth.
    const int side = static_cast<int>(rng.uniform_int(
        policy.inplane_range[0], std::min({policy.inplane_range[1], volume_dims[0], volume_dims[1]})));
    const int depth = static_cast<int>(
        rng.uniform_int(policy.depth_range[0], std::min(policy.depth_range[1], volume_dims[2])));
    CubeGrid grid = partition_cubes(volume_dims, {side, side, depth});

    MaskPlan plan;
    plan.sampled_fraction = rng.uniform(policy.subsample_range[0], policy.subsample_range[1]);
    const int k = select_count(plan.sampled_fraction, grid.cubes.size());
    for (int idx : sample_without_replacement(static_cast<int>(grid.cubes.size()), k, rng))
        plan.assignments.push_back({idx, draw_op(policy, rng)});
    return {std::move(grid), std::move(plan)};
}

namespace {

void validate_plan(const Volume& volume, const CubeGrid& grid, const MaskPlan& plan) {
    if (grid.volume_dims != volume.dims) throw DataError("grid does not match volume dims");
    std::vector<uint8_t> seen(grid.cubes.size(), 0);
    for (const auto& a : plan.assignments) {
        if (a.cube_index < 0 || a.cube_index >= static_cast<int>(grid.cubes.size()))
            throw DataError("plan cube index out of range");
        if (seen[static_cast<size_t>(a.cube_index)]++) throw DataError("duplicate cube index in plan");
    }
}

void occlude(Volume& v, const CubeExtent& c) {
    for (int z = c.origin[2]; z < c.origin[2] + c.size[2]; ++z)
        for (int y = c.origin[1]; y < c.origin[1] + c.size[1]; ++y)
            for (int x = c.origin[0]; x < c.origin[0] + c.size[0]; ++x) v.at(x, y, z) = 0.0f;
}

void flip_axis(Volume& v, const CubeExtent& c, int axis) {
    for (int z = 0; z < c.size[2]; ++z)
        for (int y = 0; y < c.size[1]; ++y)
            for (int x = 0; x < c.size[0]; ++x) {
                std::array<int, 3> a{x, y, z};
                if (a[axis] * 2 >= c.size[axis]) continue;
                std::array<int, 3> b = a;
                b[axis] = c.size[axis] - 1 - a[axis];
                std::swap(v.at(c.origin[0] + a[0], c.origin[1] + a[1], c.origin[2] + a[2]),
                          v.at(c.origin[0] + b[0], c.origin[1] + b[1], c.origin[2] + b[2]));
            }
}

// Rotate each in-plane (x-y) slice of the cube by `angle_deg` about the cube
// center, bilinear interpolation, out-of-cube samples fill with 0.
void rotate_inplane(Volume& v, const CubeExtent& c, double angle_deg) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double cx = (c.size[0] - 1) / 2.0, cy = (c.size[1] - 1) / 2.0;
    std::vector<float> slice(static_cast<size_t>(c.size[0]) * c.size[1]);
    for (int z = 0; z < c.size[2]; ++z) {
        for (int y = 0; y < c.size[1]; ++y)
            for (int x = 0; x < c.size[0]; ++x)
                slice[static_cast<size_t>(y) * c.size[0] + x] =
                    v.at(c.origin[0] + x, c.origin[1] + y, c.origin[2] + z);
        for (int y = 0; y < c.size[1]; ++y)
            for (int x = 0; x < c.size[0]; ++x) {
                // inverse mapping: sample the source at the back-rotated point
                const double xs = cx + ct * (x - cx) + st * (y - cy);
                const double ys = cy - st * (x - cx) + ct * (y - cy);
                float val = 0.0f;
                if (xs >= 0.0 && ys >= 0.0 && xs <= c.size[0] - 1 && ys <= c.size[1] - 1) {
                    const int x0 = static_cast<int>(xs), y0 = static_cast<int>(ys);
                    const int x1 = std::min(x0 + 1, c.size[0] - 1);
                    const int y1 = std::min(y0 + 1, c.size[1] - 1);
                    const double fx = xs - x0, fy = ys - y0;
                    auto s = [&](int xi, int yi) {
                        return static_cast<double>(slice[static_cast<size_t>(yi) * c.size[0] + xi]);
                    };
                    val = static_cast<float>((s(x0, y0) * (1 - fx) + s(x1, y0) * fx) * (1 - fy) +
                                             (s(x0, y1) * (1 - fx) + s(x1, y1) * fx) * fy);
                }
                v.at(c.origin[0] + x, c.origin[1] + y, c.origin[2] + z) = val;
            }
    }
}

}  // namespace

Volume apply_plan(const Volume& volume, const CubeGrid& grid, const MaskPlan& plan) {
    validate_plan(volume, grid, plan);
    Volume out = volume;
    for (const auto& a : plan.assignments) {
        const CubeExtent& c = grid.cubes[static_cast<size_t>(a.cube_index)];
        switch (a.op) {
            case CorruptionOp::Occlusion: occlude(out, c); break;
            case CorruptionOp::FlipHorizontal: flip_axis(out, c, 0); break;
            case CorruptionOp::FlipVertical: flip_axis(out, c, 1); break;
            case CorruptionOp::Rotation30: rotate_inplane(out, c, 30.0); break;
        }
    }
    return out;
}

std::vector<uint8_t> plan_mask(const CubeGrid& grid, const MaskPlan& plan) {
    Volume marker(grid.volume_dims, {1, 1, 1}, 0.0f);
    for (const auto& a : plan.assignments) {
        const CubeExtent& c = grid.cubes[static_cast<size_t>(a.cube_index)];
        for (int z = c.origin[2]; z < c.origin[2] + c.size[2]; ++z)
            for (int y = c.origin[1]; y < c.origin[1] + c.size[1]; ++y)
                for (int x = c.origin[0]; x < c.origin[0] + c.size[0]; ++x) marker.at(x, y, z) = 1.0f;
    }
    std::vector<uint8_t> mask(marker.voxels.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = marker.voxels[i] != 0.0f;
    return mask;
}

std::string plan_to_json(const MaskPlan& plan) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : plan.assignments)
        arr.push_back({{"cube_index", a.cube_index}, {"op", to_string(a.op)}});
    nlohmann::json j{{"sampled_fraction", plan.sampled_fraction}, {"assignments", arr}};
    return j.dump();
}

}  // namespace voxmim
