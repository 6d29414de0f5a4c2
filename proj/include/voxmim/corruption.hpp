#pragma once

#include <array>
#include <string>
#include <vector>

#include "voxmim/rng.hpp"
#include "voxmim/volume.hpp"

namespace voxmim {

enum class CorruptionOp { Occlusion, Rotation30, FlipHorizontal, FlipVertical };

std::string to_string(CorruptionOp op);

struct CubeExtent {
    std::array<int, 3> origin;
    std::array<int, 3> size;
};

/// Partition of a volume into regular non-overlapping cubes; trailing cubes
/// on each axis are the (smaller) residuals.
struct CubeGrid {
    std::array<int, 3> volume_dims;
    std::array<int, 3> cube_dims;
    std::vector<CubeExtent> cubes;
};

enum class MaskMode { Static, Dynamic };

struct MaskPolicy {
    MaskMode mode = MaskMode::Dynamic;
    // Static: fixed cube dims and subsample fraction.
    std::array<int, 3> cube_dims{32, 32, 16};
    double subsample = 0.60;
    // Dynamic: in-plane side drawn square from [lo,hi], depth drawn
    // independently; subsample fraction drawn from [lo,hi].
    std::array<int, 2> inplane_range{9, 32};
    std::array<int, 2> depth_range{2, 16};
    std::array<double, 2> subsample_range{0.60, 0.90};
    // Probability that a selected cube gets Occlusion rather than one of
    // Rotation30 / FlipHorizontal / FlipVertical.
    double occlusion_ratio = 0.5;

    static MaskPolicy static_preset();
    static MaskPolicy dynamic_preset();
};

struct MaskPlan {
    struct Assignment {
        int cube_index;
        CorruptionOp op;
    };
    std::vector<Assignment> assignments;
    double sampled_fraction = 0.0;
};

int round_half_up(double x);

CubeGrid partition_cubes(std::array<int, 3> volume_dims, std::array<int, 3> cube_dims);

MaskPlan plan_static(const CubeGrid& grid, const MaskPolicy& policy, Rng& rng);

std::pair<CubeGrid, MaskPlan> plan_dynamic(std::array<int, 3> volume_dims, const MaskPolicy& policy,
                                           Rng& rng);

Volume apply_plan(const Volume& volume, const CubeGrid& grid, const MaskPlan& plan);

/// 1 inside corrupted cubes, 0 elsewhere; used for the masked-region-only
/// reconstruction loss.
std::vector<uint8_t> plan_mask(const CubeGrid& grid, const MaskPlan& plan);

std::string plan_to_json(const MaskPlan& plan);

}  // namespace voxmim
