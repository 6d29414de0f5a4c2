#include "voxmim/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "voxmim/corruption.hpp"
#include "voxmim/errors.hpp"
#include "voxmim/rng.hpp"

namespace voxmim {

namespace {

constexpr uint64_t kStreamUnlabeled = 1;
constexpr uint64_t kStreamLabeled = 2;
constexpr uint64_t kStreamLabelOrder = 3;

// Separable 3-wide box blur, applied `passes` times.
void box_blur(Volume& v, int passes) {
    Volume tmp = v;
    for (int pass = 0; pass < passes; ++pass) {
        for (int axis = 0; axis < 3; ++axis) {
            for (int z = 0; z < v.dims[2]; ++z)
                for (int y = 0; y < v.dims[1]; ++y)
                    for (int x = 0; x < v.dims[0]; ++x) {
                        std::array<int, 3> lo{x, y, z}, hi{x, y, z};
                        lo[axis] = std::max(0, lo[axis] - 1);
                        hi[axis] = std::min(v.dims[axis] - 1, hi[axis] + 1);
                        double acc = 0.0;
                        int count = 0;
                        std::array<int, 3> p{x, y, z};
                        for (int t = lo[axis]; t <= hi[axis]; ++t) {
                            p[axis] = t;
                            acc += v.at(p[0], p[1], p[2]);
                            ++count;
                        }
                        tmp.at(x, y, z) = static_cast<float>(acc / count);
                    }
            std::swap(v.voxels, tmp.voxels);
        }
    }
}

void add_ellipsoid(Volume& v, const Ellipsoid& e, double delta) {
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x)
                if (e.contains(x, y, z)) v.at(x, y, z) += static_cast<float>(delta);
}

}  // namespace

void PhantomConfig::validate() const {
    for (int d : dims)
        if (d <= 0) throw UsageError("phantom dims must be positive");
    for (auto [lo, hi] : {organ_radii_xy, organ_radii_z, lesion_radii_xy, lesion_radii_z})
        if (!(lo > 0.0) || !(hi > lo)) throw UsageError("phantom radii ranges must be non-degenerate");
    if (!(lesion_delta > 0.0) || lesion_delta > 1.0)
        throw UsageError("lesion_delta must lie in (0,1]");
    if (lesion_radii_xy[1] >= organ_radii_xy[0] || lesion_radii_z[1] >= organ_radii_z[0])
        throw UsageError("lesion radii must fit inside the organ radii");
    if (class_balance < 0.0 || class_balance > 1.0)
        throw UsageError("class_balance must lie in [0,1]");
}

int derive_label(const std::vector<int>& gleason_scores) {
    if (gleason_scores.empty()) throw DataError("derive_label: empty score list");
    int max = 0;
    for (int s : gleason_scores) {
        if (s < 2 || s > 10)
            throw DataError("derive_label: score " + std::to_string(s) + " outside [2,10]");
        max = std::max(max, s);
    }
    return max >= 7 ? 1 : 0;
}

Volume generate_phantom(const PhantomConfig& config, int label, uint64_t seed, PhantomInfo* info) {
    config.validate();
    if (label != 0 && label != 1) throw UsageError("phantom label must be 0 or 1");
    Rng rng(seed);

    Volume v(config.dims, {1.0, 1.0, 1.0});
    for (float& t : v.voxels)
        t = static_cast<float>(rng.uniform(-config.noise_amplitude, config.noise_amplitude));
    box_blur(v, 2);
    for (float& t : v.voxels) t += 0.55f;

    Ellipsoid organ;
    for (int i = 0; i < 3; ++i)
        organ.center[i] = (config.dims[i] - 1) / 2.0 + rng.uniform(-0.08, 0.08) * config.dims[i];
    organ.radii[0] = rng.uniform(config.organ_radii_xy[0], config.organ_radii_xy[1]);
    organ.radii[1] = rng.uniform(config.organ_radii_xy[0], config.organ_radii_xy[1]);
    organ.radii[2] = rng.uniform(config.organ_radii_z[0], config.organ_radii_z[1]);
    add_ellipsoid(v, organ, -config.organ_delta);

    PhantomInfo result;
    result.organ = organ;

    // Lesion draws come last so a label-0 twin with the same seed shares the
    // background and organ exactly.
    if (label == 1) {
        Ellipsoid lesion;
        lesion.radii[0] = rng.uniform(config.lesion_radii_xy[0], config.lesion_radii_xy[1]);
        lesion.radii[1] = rng.uniform(config.lesion_radii_xy[0], config.lesion_radii_xy[1]);
        lesion.radii[2] = rng.uniform(config.lesion_radii_z[0], config.lesion_radii_z[1]);
        for (;;) {
            double u0 = rng.uniform(-1.0, 1.0), u1 = rng.uniform(-1.0, 1.0), u2 = rng.uniform(-1.0, 1.0);
            if (u0 * u0 + u1 * u1 + u2 * u2 > 1.0) continue;
            for (int i = 0; i < 3; ++i) {
                const double margin = organ.radii[i] - lesion.radii[i];
                lesion.center[i] = organ.center[i] + (i == 0 ? u0 : i == 1 ? u1 : u2) * margin * 0.7;
            }
            break;
        }
        add_ellipsoid(v, lesion, config.lesion_delta);
        result.lesion = lesion;
        result.has_lesion = true;
    }

    for (float& t : v.voxels) t = std::clamp(t, 0.0f, 1.0f);
    if (info) *info = result;
    return v;
}

std::pair<DatasetManifest, DatasetManifest> generate_dataset(const PhantomConfig& config,
                                                             int n_unlabeled, int n_labeled,
                                                             double balance, uint64_t seed,
                                                             const std::string& out_dir) {
    config.validate();
    if (n_unlabeled < 0 || n_labeled < 0) throw UsageError("cohort sizes must be >= 0");
    if (balance < 0.0 || balance > 1.0) throw UsageError("balance must lie in [0,1]");

    namespace fs = std::filesystem;
    const fs::path volumes = fs::path(out_dir) / "volumes";
    std::error_code ec;
    fs::create_directories(volumes, ec);
    if (ec) throw DataError("cannot create " + volumes.string() + ": " + ec.message());

    auto pad = [](int i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "%04d", i);
        return std::string(buf);
    };

    DatasetManifest unlabeled;
    unlabeled.role = ManifestRole::Unlabeled;
    for (int i = 0; i < n_unlabeled; ++i) {
        const std::string id = "u" + pad(i);
        const uint64_t pseed = derive_seed(seed, {kStreamUnlabeled, static_cast<uint64_t>(i)});
        Rng label_rng(derive_seed(seed, {kStreamUnlabeled, static_cast<uint64_t>(i), 99}));
        const int hidden_label = label_rng.bernoulli(balance) ? 1 : 0;
        Volume v = generate_phantom(config, hidden_label, pseed);
        const std::string path = (volumes / id).string();
        save_volume(v, path);
        unlabeled.records.push_back({id, path + ".json", std::nullopt});
    }

    const int n_pos = std::min(n_labeled, round_half_up(balance * n_labeled));
    std::vector<int> labels(static_cast<size_t>(n_labeled), 0);
    std::fill_n(labels.begin(), n_pos, 1);
    Rng order_rng(derive_seed(seed, {kStreamLabelOrder}));
    order_rng.shuffle(labels);

    DatasetManifest labeled;
    labeled.role = ManifestRole::Labeled;
    for (int i = 0; i < n_labeled; ++i) {
        const std::string id = "l" + pad(i);
        const uint64_t pseed = derive_seed(seed, {kStreamLabeled, static_cast<uint64_t>(i)});
        Volume v = generate_phantom(config, labels[static_cast<size_t>(i)], pseed);
        const std::string path = (volumes / id).string();
        save_volume(v, path);
        labeled.records.push_back({id, path + ".json", labels[static_cast<size_t>(i)]});
    }

    save_manifest(unlabeled, (fs::path(out_dir) / "unlabeled.csv").string());
    save_manifest(labeled, (fs::path(out_dir) / "labeled.csv").string());
    return {std::move(unlabeled), std::move(labeled)};
}

}  // namespace voxmim
