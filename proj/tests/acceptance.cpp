// Acceptance gate: one pass/fail line per criterion. Groups let the long
// training criteria run as separate ctest entries:
//   acceptance fast         -> criteria 1 (note), 2, 3, 4, 7, 8
//   acceptance pretrain     -> criterion 5
//   acceptance ordering     -> criterion 6 (plus the criterion-8 CI check on
//                              every report it emits)
//   acceptance determinism  -> criterion 9 (drives the voxmim binary)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "voxmim/architecture.hpp"
#include "voxmim/config.hpp"
#include "voxmim/corruption.hpp"
#include "voxmim/errors.hpp"
#include "voxmim/metrics.hpp"
#include "voxmim/synthdata.hpp"
#include "voxmim/tensor.hpp"
#include "voxmim/trainer.hpp"
#include "voxmim/volume.hpp"

using namespace voxmim;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << ": " << detail << "\n";
    if (!pass) ++g_failures;
}

fs::path work_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / "voxmim_acceptance" / tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<double> random_values(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> out(n);
    for (double& v : out) v = rng.uniform(lo, hi);
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient checks.

double max_grad_error(const std::vector<nn::Var>& params, const std::function<nn::Var()>& build) {
    for (const nn::Var& p : params) p->zero_grad();
    nn::Var loss = build();
    nn::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const nn::Var& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }
    const double eps = 1e-4;
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (size_t j = 0; j < params[pi]->value.size(); ++j) {
            const double orig = params[pi]->value[j];
            params[pi]->value[j] = orig + eps;
            const double up = build()->value[0];
            params[pi]->value[j] = orig - eps;
            const double down = build()->value[0];
            params[pi]->value[j] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][j];
            const double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / scale);
        }
    return worst;
}

void criterion_2() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    Rng rng(2001);
    for (int trial = 0; trial < 20; ++trial) {
        // conv3d
        {
            nn::Var x = nn::make_tensor({1, 2, 3, 3, 3}, random_values(54, rng), true);
            nn::Var k = nn::make_tensor({2, 2, 3, 3, 3}, random_values(108, rng), true);
            nn::Var b = nn::make_tensor({2}, random_values(2, rng), true);
            nn::Var t = nn::make_constant({1, 2, 3, 3, 3}, random_values(54, rng));
            worst = std::max(worst, max_grad_error({x, k, b}, [&] {
                return nn::mse_loss(nn::conv3d(x, k, b, {1, 1, 1}), t);
            }));
        }
        // batchnorm3d (train and eval)
        {
            nn::Var x = nn::make_tensor({2, 2, 2, 2, 2}, random_values(32, rng), true);
            nn::Var g = nn::make_tensor({2}, random_values(2, rng, 0.5, 1.5), true);
            nn::Var be = nn::make_tensor({2}, random_values(2, rng), true);
            nn::Var t = nn::make_constant({2, 2, 2, 2, 2}, random_values(32, rng));
            nn::BatchNormState st(2);
            worst = std::max(worst, max_grad_error({x, g, be}, [&] {
                return nn::mse_loss(nn::batchnorm3d(x, g, be, st, nn::Mode::Train), t);
            }));
            nn::BatchNormState se(2);
            se.running_mean = random_values(2, rng, -0.3, 0.3);
            se.running_var = random_values(2, rng, 0.5, 1.5);
            worst = std::max(worst, max_grad_error({x, g, be}, [&] {
                return nn::mse_loss(nn::batchnorm3d(x, g, be, se, nn::Mode::Eval), t);
            }));
        }
        // maxpool3d away from ties + upsample
        {
            nn::Var x = nn::make_tensor({1, 1, 2, 4, 4}, random_values(32, rng), true);
            nn::Var t = nn::make_constant({1, 1, 1, 2, 2}, random_values(4, rng));
            worst = std::max(worst, max_grad_error({x}, [&] {
                return nn::mse_loss(nn::maxpool3d(x, {2, 2, 2}), t);
            }));
            nn::Var tu = nn::make_constant({1, 1, 4, 8, 8}, random_values(256, rng));
            worst = std::max(worst, max_grad_error({x}, [&] {
                return nn::mse_loss(nn::upsample_nearest3d(x, {2, 2, 2}), tu);
            }));
        }
        // activations (inputs away from the ReLU kink)
        {
            std::vector<double> vals = random_values(8, rng);
            for (double& v : vals)
                if (std::abs(v) < 0.02) v = v < 0 ? -0.02 : 0.02;
            nn::Var x = nn::make_tensor({8}, vals, true);
            nn::Var t = nn::make_constant({8}, random_values(8, rng));
            worst = std::max(worst,
                             max_grad_error({x}, [&] { return nn::mse_loss(nn::relu(x), t); }));
            worst = std::max(worst,
                             max_grad_error({x}, [&] { return nn::mse_loss(nn::sigmoid(x), t); }));
        }
        // linear + losses
        {
            nn::Var x = nn::make_tensor({2, 3}, random_values(6, rng), true);
            nn::Var w = nn::make_tensor({2, 3}, random_values(6, rng), true);
            nn::Var b = nn::make_tensor({2}, random_values(2, rng), true);
            nn::Var t = nn::make_constant({2, 2}, random_values(4, rng));
            worst = std::max(worst, max_grad_error({x, w, b}, [&] {
                return nn::mse_loss(nn::linear(x, w, b), t);
            }));
            nn::Var p = nn::make_tensor({4}, random_values(4, rng, 0.05, 0.95), true);
            const std::vector<double> labels{1, 0, 1, 0};
            worst = std::max(worst,
                             max_grad_error({p}, [&] { return nn::bce_loss(p, labels); }));
        }
    }
    const bool per_op = worst < 1e-4;

    // Whole-network check on a 2-stage toy net.
    ModelConfig cfg;
    cfg.input_dims = {8, 8, 4};
    cfg.base_channels = 2;
    cfg.stages = 2;
    cfg.convs_per_stage = {1, 1};
    Rng mrng(2002);
    MaskedAutoencoder mae(cfg, mrng);
    auto params = mae.parameters();
    Rng drng(2003);
    nn::Var batch = nn::make_constant({1, 1, 4, 8, 8}, random_values(256, drng, 0.0, 1.0));
    nn::Var target = nn::make_constant({1, 1, 4, 8, 8}, random_values(256, drng, 0.0, 1.0));
    // Check a subset of parameters (first layer + final conv) for runtime.
    std::vector<nn::Var> probe_params{params[0], params[1], params[2], params[3],
                                      params[params.size() - 2], params.back()};
    const double net_worst = max_grad_error(probe_params, [&] {
        return nn::mse_loss(mae.reconstruct(batch, nn::Mode::Train), target);
    });
    const bool net_ok = net_worst < 1e-3;

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << "gradient suite max rel err " << worst << " (< 1e-4), toy-net " << net_worst
       << " (< 1e-3), " << secs << " s (< 60)";
    report(2, per_op && net_ok && secs < 60.0, os.str());
}

// ---------------------------------------------------------------------------
// Criterion 3: oracle equivalence.

double auc_pairwise(const PredictionSet& s) {
    double num = 0.0;
    size_t pairs = 0;
    for (const auto& p : s.items) {
        if (!p.label) continue;
        for (const auto& n : s.items) {
            if (n.label) continue;
            ++pairs;
            if (p.score > n.score) num += 1.0;
            else if (p.score == n.score) num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

double wilcoxon_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> absd;
    std::vector<int> sign;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        absd.push_back(std::abs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const size_t m = absd.size();
    if (m == 0) return 1.0;
    std::vector<size_t> order(m);
    for (size_t i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return absd[x] < absd[y]; });
    std::vector<double> rank(m);
    size_t i = 0;
    while (i < m) {
        size_t j = i;
        while (j < m && absd[order[j]] == absd[order[i]]) ++j;
        const double avg = static_cast<double>(i + j - 1) / 2.0 + 1.0;
        for (size_t k = i; k < j; ++k) rank[order[k]] = avg;
        i = j;
    }
    double w = 0.0;
    for (size_t k = 0; k < m; ++k)
        if (sign[k] > 0) w += rank[k];
    size_t le = 0, ge = 0;
    for (size_t bits = 0; bits < (1u << m); ++bits) {
        double wb = 0.0;
        for (size_t k = 0; k < m; ++k)
            if (bits & (1u << k)) wb += rank[k];
        if (wb <= w + 1e-12) ++le;
        if (wb >= w - 1e-12) ++ge;
    }
    return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) /
                             std::pow(2.0, static_cast<double>(m)));
}

void criterion_3() {
    bool ok = true;
    std::ostringstream why;

    // conv3d vs naive loop reference.
    Rng rng(3001);
    for (int trial = 0; trial < 10 && ok; ++trial) {
        const int N = 1 + static_cast<int>(rng.below(2)), Cin = 1 + static_cast<int>(rng.below(3));
        const int Cout = 1 + static_cast<int>(rng.below(3));
        const int D = 2 + static_cast<int>(rng.below(3)), H = 2 + static_cast<int>(rng.below(4)),
                  W = 2 + static_cast<int>(rng.below(4));
        const auto iv = random_values(static_cast<size_t>(N) * Cin * D * H * W, rng);
        const auto kv = random_values(static_cast<size_t>(Cout) * Cin * 27, rng);
        const auto bv = random_values(static_cast<size_t>(Cout), rng);
        const nn::Var out = nn::conv3d(nn::make_constant({N, Cin, D, H, W}, iv),
                                       nn::make_constant({Cout, Cin, 3, 3, 3}, kv),
                                       nn::make_constant({Cout}, bv), {1, 1, 1});
        size_t oi = 0;
        for (int n = 0; n < N && ok; ++n)
            for (int co = 0; co < Cout && ok; ++co)
                for (int z = 0; z < D && ok; ++z)
                    for (int y = 0; y < H && ok; ++y)
                        for (int x = 0; x < W && ok; ++x, ++oi) {
                            double acc = bv[static_cast<size_t>(co)];
                            for (int ci = 0; ci < Cin; ++ci)
                                for (int dz = -1; dz <= 1; ++dz)
                                    for (int dy = -1; dy <= 1; ++dy)
                                        for (int dx = -1; dx <= 1; ++dx) {
                                            const int iz = z + dz, iy = y + dy, ix = x + dx;
                                            if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 ||
                                                ix >= W)
                                                continue;
                                            acc += iv[((static_cast<size_t>(n) * Cin + ci) * D + iz) *
                                                          H * W +
                                                      static_cast<size_t>(iy) * W + ix] *
                                                   kv[(((static_cast<size_t>(co) * Cin + ci) * 3 +
                                                        (dz + 1)) *
                                                           3 +
                                                       (dy + 1)) *
                                                          3 +
                                                      (dx + 1)];
                                        }
                            if (std::abs(out->value[oi] - acc) > 1e-9 * std::max(1.0, std::abs(acc))) {
                                ok = false;
                                why << "conv mismatch; ";
                            }
                        }
    }

    // roc_auc vs pairwise enumeration on 100 random sets.
    Rng arng(3002);
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const size_t n = 4 + arng.below(47);
        PredictionSet s;
        size_t pos = 0;
        for (size_t k = 0; k < n; ++k) {
            char id[8];
            std::snprintf(id, sizeof id, "a%03zu", k);
            const int label = arng.bernoulli(0.5) ? 1 : 0;
            pos += static_cast<size_t>(label);
            s.items.push_back({id, label, std::round(arng.uniform(0.0, 1.0) * 10.0) / 10.0});
        }
        if (pos == 0 || pos == n) continue;
        if (std::abs(roc_auc(s) - auc_pairwise(s)) > 1e-12) {
            ok = false;
            why << "auc mismatch; ";
        }
    }

    // percentile clip vs sort oracle.
    {
        Rng prng(3003);
        Volume v({50, 4, 2}, {1, 1, 1});
        for (float& t : v.voxels) t = static_cast<float>(prng.uniform(-10.0, 10.0));
        std::vector<float> sorted = v.voxels;
        std::sort(sorted.begin(), sorted.end());
        const double lo = percentile_of_sorted(sorted, 5.0);
        const double hi = percentile_of_sorted(sorted, 95.0);
        const Volume c = clip_percentiles(v, 5.0, 95.0);
        for (size_t k = 0; k < v.voxels.size(); ++k) {
            const float expect = std::clamp(v.voxels[k], static_cast<float>(lo), static_cast<float>(hi));
            if (c.voxels[k] != expect) {
                ok = false;
                why << "clip mismatch; ";
                break;
            }
        }
    }

    // Wilcoxon exact branch vs 2^m enumeration.
    Rng wrng(3004);
    double worst_dp = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const size_t m = 3 + wrng.below(10);
        std::vector<double> a(m), b(m);
        for (size_t k = 0; k < m; ++k) {
            b[k] = wrng.uniform(0.0, 1.0);
            a[k] = b[k] + std::round(wrng.uniform(-1.0, 1.0) * 4.0) / 8.0;
        }
        worst_dp = std::max(worst_dp,
                            std::abs(wilcoxon_signed_rank(a, b) - wilcoxon_enumerated(a, b)));
    }
    if (worst_dp >= 1e-12) {
        ok = false;
        why << "wilcoxon |dp| " << worst_dp << "; ";
    }

    report(3, ok,
           ok ? "conv, AUC, percentile clip and Wilcoxon all match their independent oracles"
              : why.str());
}

// ---------------------------------------------------------------------------
// Criterion 4: masking invariants.

void criterion_4() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream why;
    Rng rng(4001);
    size_t occ = 0, assignments = 0;

    for (int trial = 0; trial < 1000 && ok; ++trial) {
        const std::array<int, 3> dims{34 + static_cast<int>(rng.below(63)),
                                      34 + static_cast<int>(rng.below(63)),
                                      16 + static_cast<int>(rng.below(33))};
        if (rng.bernoulli(0.5)) {
            MaskPolicy policy = MaskPolicy::static_preset();
            const CubeGrid grid = partition_cubes(dims, policy.cube_dims);

            // Exact tiling.
            std::vector<uint8_t> hits(static_cast<size_t>(dims[0]) * dims[1] * dims[2], 0);
            for (const auto& c : grid.cubes)
                for (int z = c.origin[2]; z < c.origin[2] + c.size[2]; ++z)
                    for (int y = c.origin[1]; y < c.origin[1] + c.size[1]; ++y)
                        for (int x = c.origin[0]; x < c.origin[0] + c.size[0]; ++x)
                            hits[static_cast<size_t>(x) +
                                 static_cast<size_t>(dims[0]) *
                                     (static_cast<size_t>(y) +
                                      static_cast<size_t>(dims[1]) * static_cast<size_t>(z))]++;
            if (!std::all_of(hits.begin(), hits.end(), [](uint8_t h) { return h == 1; })) {
                ok = false;
                why << "tiling not exact; ";
                break;
            }

            const MaskPlan plan = plan_static(grid, policy, rng);
            const int expect =
                std::max(1, round_half_up(0.6 * static_cast<double>(grid.cubes.size())));
            if (static_cast<int>(plan.assignments.size()) != expect) {
                ok = false;
                why << "static count " << plan.assignments.size() << " != " << expect << "; ";
            }
            for (const auto& a : plan.assignments)
                if (a.op != CorruptionOp::Occlusion) {
                    ok = false;
                    why << "static non-occlusion op; ";
                }
        } else {
            const MaskPolicy policy = MaskPolicy::dynamic_preset();
            const auto [grid, plan] = plan_dynamic(dims, policy, rng);
            if (grid.cube_dims[0] != grid.cube_dims[1] || grid.cube_dims[0] < 9 ||
                grid.cube_dims[0] > 32 || grid.cube_dims[2] < 2 || grid.cube_dims[2] > 16) {
                ok = false;
                why << "dynamic cube dims out of range; ";
            }
            if (plan.sampled_fraction < 0.60 || plan.sampled_fraction > 0.90) {
                ok = false;
                why << "dynamic fraction out of range; ";
            }
            for (const auto& a : plan.assignments) {
                ++assignments;
                if (a.op == CorruptionOp::Occlusion) ++occ;
            }
        }
    }

    // Top up the occlusion-share sample to at least 10,000 assignments.
    while (assignments < 10000) {
        const auto [grid, plan] = plan_dynamic({64, 64, 32}, MaskPolicy::dynamic_preset(), rng);
        for (const auto& a : plan.assignments) {
            ++assignments;
            if (a.op == CorruptionOp::Occlusion) ++occ;
        }
    }
    const double share = static_cast<double>(occ) / static_cast<double>(assignments);
    if (std::abs(share - 0.5) > 0.02) {
        ok = false;
        why << "occlusion share " << share << "; ";
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 30.0) {
        ok = false;
        why << "runtime " << secs << " s; ";
    }
    std::ostringstream os;
    os << "1000 draws tile exactly, counts/ranges hold, occlusion share " << share << " over "
       << assignments << " assignments, " << secs << " s (< 30)";
    report(4, ok, ok ? os.str() : why.str());
}

// ---------------------------------------------------------------------------
// Shared training fixtures for criteria 5–8.

ModelConfig acceptance_model() {
    ModelConfig c;
    c.input_dims = {32, 32, 16};
    c.base_channels = 4;
    c.stages = 2;
    c.convs_per_stage = {1, 1};
    c.skip_connections = true;
    return c;
}

ModelConfig toy_model() {
    ModelConfig c;
    c.input_dims = {8, 8, 4};
    c.base_channels = 2;
    c.stages = 2;
    c.convs_per_stage = {1, 1};
    return c;
}

DatasetManifest toy_labeled(const fs::path& dir, int n, uint64_t seed) {
    DatasetManifest m;
    m.role = ManifestRole::Labeled;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Volume v({8, 8, 4}, {1, 1, 1});
        for (float& t : v.voxels) t = static_cast<float>(rng.uniform(0.0, 1.0));
        char id[8];
        std::snprintf(id, sizeof id, "t%03d", i);
        const std::string base = (dir / id).string();
        save_volume(v, base);
        m.records.push_back({id, base + ".json", i % 2});
    }
    return m;
}

void criterion_5() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = work_dir("pretrain");

    PhantomConfig phantom;  // 32 x 32 x 16 default
    const auto [unlabeled, labeled] =
        generate_dataset(phantom, 64, 0, 0.5, derive_seed(5001, {1}), dir.string());

    Rng init_rng(derive_seed(5001, {5}));
    MaskedAutoencoder mae(acceptance_model(), init_rng);

    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = derive_seed(5001, {6});

    bool ok = true;
    std::ostringstream detail;
    try {
        const TrainResult r = pretrain(mae, unlabeled, MaskPolicy::dynamic_preset(), tc);
        const double first = r.epoch_loss.front(), last = r.epoch_loss.back();
        for (double l : r.epoch_loss)
            if (!std::isfinite(l)) ok = false;
        if (!(last <= 0.5 * first)) ok = false;
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs >= 600.0) ok = false;
        detail << "64 phantoms, 50 epochs: first-epoch MSE " << first << ", final " << last
               << " (need <= " << 0.5 * first << "), " << secs << " s (< 600)";
    } catch (const std::exception& e) {
        ok = false;
        detail << "exception: " << e.what();
    }
    report(5, ok, detail.str());
}

struct CellResult {
    double auc_point;
    double ci_lo, ci_hi;
};

void criterion_6() {
    const fs::path dir = work_dir("ordering");
    const ModelConfig model = acceptance_model();

    // Desk-scale calibration: a clearly visible lesion keeps the 12-case
    // test AUCs away from coin-flip territory so orderings are stable.
    PhantomConfig phantom;
    phantom.lesion_delta = 0.50;
    phantom.lesion_radii_xy = {4.0, 6.0};
    phantom.lesion_radii_z = {2.0, 3.5};
    const uint64_t master = 6001;
    const auto [unlabeled, labeled] =
        generate_dataset(phantom, 64, 40, 0.5, derive_seed(master, {1}), dir.string());

    Rng split_rng(derive_seed(master, {2}));
    const auto [train_all, test_set] = split_labeled(labeled, 0.70, split_rng);

    const std::vector<std::string> methods{"random-probe", "mim-probe", "mim-finetune",
                                           "random-full"};
    // AUC per method per seed, keyed by fraction index (0 -> 0.10, 1 -> 1.00).
    std::vector<std::vector<std::vector<CellResult>>> results(
        2, std::vector<std::vector<CellResult>>(methods.size()));

    bool ci_ok = true;
    for (int k = 0; k < 3; ++k) {
        const uint64_t seed_k = derive_seed(master, {3, static_cast<uint64_t>(k)});

        // Shared MIM pretraining for this seed.
        Rng init_rng(derive_seed(seed_k, {5}));
        MaskedAutoencoder mae(model, init_rng);
        TrainConfig pt;
        pt.epochs = 40;
        pt.batch_size = 4;
        pt.lr = 1e-3;
        pt.seed = seed_k;
        pretrain(mae, unlabeled, MaskPolicy::dynamic_preset(), pt);

        // Untrained encoder of the same shape for the random-probe arm.
        Rng fresh_rng(derive_seed(seed_k, {9}));
        MaskedAutoencoder fresh(model, fresh_rng);

        const std::array<double, 2> fractions{0.10, 1.00};
        for (size_t fi = 0; fi < 2; ++fi) {
            Rng subset_rng(derive_seed(seed_k, {4, fi}));
            const DatasetManifest train_set =
                sample_label_fraction(train_all, fractions[fi], subset_rng);

            for (size_t mi = 0; mi < methods.size(); ++mi) {
                Rng head_rng(derive_seed(seed_k, {7, fi, mi}));
                Classifier clf =
                    methods[mi] == "random-probe"
                        ? Classifier(model, ClassifierMode::LinearProbe, &fresh, head_rng)
                    : methods[mi] == "mim-probe"
                        ? Classifier(model, ClassifierMode::LinearProbe, &mae, head_rng)
                    : methods[mi] == "mim-finetune"
                        ? Classifier(model, ClassifierMode::FineTune, &mae, head_rng)
                        : Classifier(model, ClassifierMode::RandomInit, nullptr, head_rng);

                const bool probe_like = mi < 2;  // linear head only: few params
                TrainConfig tc;
                tc.epochs = probe_like ? 300 : 80;
                tc.batch_size = 8;
                tc.lr = probe_like ? 3e-2 : 2e-3;
                tc.seed = derive_seed(seed_k, {8, fi, mi});
                train_downstream(clf, train_set, tc);

                const PredictionSet preds = evaluate_classifier(clf, test_set);
                Rng boot_rng(derive_seed(seed_k, {10, fi, mi}));
                const MetricReport rep = bootstrap(preds, 100, boot_rng);
                // Criterion 8's bracket requirement for every emitted report.
                for (const auto& [name, res] : rep.named())
                    if (!(res->ci_lo <= res->point && res->point <= res->ci_hi)) ci_ok = false;
                results[fi][mi].push_back({rep.auc.point, rep.auc.ci_lo, rep.auc.ci_hi});
                std::cout << "  [info] seed " << k << " fraction " << fractions[fi] << " "
                          << methods[mi] << ": AUC " << rep.auc.point << " [" << rep.auc.ci_lo
                          << ", " << rep.auc.ci_hi << "]\n";
            }
        }
    }

    auto mean_auc = [&](size_t fi, size_t mi) {
        double s = 0.0;
        for (const auto& c : results[fi][mi]) s += c.auc_point;
        return s / static_cast<double>(results[fi][mi].size());
    };
    auto no_seed_inverts = [&](size_t fi, size_t hi_mi, size_t lo_mi) {
        for (size_t k = 0; k < results[fi][hi_mi].size(); ++k)
            if (results[fi][hi_mi][k].auc_point < results[fi][lo_mi][k].auc_point - 0.03)
                return false;
        return true;
    };

    const double ft10 = mean_auc(0, 2), pr10 = mean_auc(0, 1), rp10 = mean_auc(0, 0);
    const double ft100 = mean_auc(1, 2), rf100 = mean_auc(1, 3);
    bool ok = ft10 >= pr10 && pr10 >= rp10 && ft100 >= rf100;
    ok = ok && no_seed_inverts(0, 2, 1) && no_seed_inverts(0, 1, 0) && no_seed_inverts(1, 2, 3);

    std::ostringstream os;
    os << "mean AUC at 0.10: finetune " << ft10 << " >= probe " << pr10 << " >= random-probe "
       << rp10 << "; at 1.00: finetune " << ft100 << " >= random " << rf100
       << "; per-seed inversions bounded by 0.03";
    report(6, ok, os.str());
    report(8, ci_ok,
           "every bootstrap report emitted above brackets its point estimate "
           "(criterion-8 supplement)");
}

void criterion_7() {
    const fs::path dir = work_dir("contracts");
    bool ok = true;
    std::ostringstream why;

    const ModelConfig model = toy_model();
    Rng mrng(7001);
    MaskedAutoencoder mae(model, mrng);
    const DatasetManifest labeled = toy_labeled(dir, 8, 7002);

    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.lr = 1e-2;
    tc.seed = 7003;

    // Probing leaves the encoder bit-identical.
    Rng prng(7004);
    Classifier probe(model, ClassifierMode::LinearProbe, &mae, prng);
    const auto before = probe.encoder_blob();
    train_downstream(probe, labeled, tc);
    if (probe.encoder_blob() != before) {
        ok = false;
        why << "probe encoder changed; ";
    }

    // Fine-tuning changes it.
    Rng frng(7005);
    Classifier tune(model, ClassifierMode::FineTune, &mae, frng);
    const auto tbefore = tune.encoder_blob();
    train_downstream(tune, labeled, tc);
    if (tune.encoder_blob() == tbefore) {
        ok = false;
        why << "finetune encoder unchanged; ";
    }

    // Splits are exact stratified partitions.
    Rng srng(7006);
    DatasetManifest big;
    big.role = ManifestRole::Labeled;
    for (int i = 0; i < 40; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "s%03d", i);
        big.records.push_back({id, "unused", i < 24 ? 1 : 0});
    }
    const auto [tr, te] = split_labeled(big, 0.70, srng);
    if (tr.count_label(1) != 17 || tr.count_label(0) != 11 ||  // round_half_up splits
        tr.records.size() + te.records.size() != 40) {
        ok = false;
        why << "split not an exact stratified partition; ";
    }
    std::vector<std::string> ids;
    for (const auto& r : tr.records) ids.push_back(r.id);
    for (const auto& r : te.records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        ok = false;
        why << "split leaks cases; ";
    }

    // Pretraining can never observe labels: the unlabeled manifest type
    // rejects labels outright, and pretrain rejects labeled manifests.
    DatasetManifest sneaky;
    sneaky.role = ManifestRole::Unlabeled;
    sneaky.records.push_back({"x1", "unused", 1});
    try {
        sneaky.validate();
        ok = false;
        why << "unlabeled manifest accepted a label; ";
    } catch (const DataError&) {
    }
    try {
        pretrain(mae, labeled, MaskPolicy::dynamic_preset(), tc);
        ok = false;
        why << "pretrain accepted a labeled manifest; ";
    } catch (const UsageError&) {
    }

    report(7, ok,
           ok ? "probe freezes encoder, finetune updates it, splits partition exactly, "
                "pretraining cannot see labels"
              : why.str());
}

void criterion_8() {
    bool ok = true;
    std::ostringstream why;

    PredictionSet s;
    Rng rng(8001);
    for (int i = 0; i < 24; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "b%03d", i);
        const int label = i % 2;
        s.items.push_back({id, label, 0.3 * rng.uniform(0.0, 1.0) + 0.4 * label});
    }

    // Bit-reproducible bootstrap.
    Rng r1(8002), r2(8002);
    const MetricReport a = bootstrap(s, 100, r1);
    const MetricReport b = bootstrap(s, 100, r2);
    if (a.auc.replicates != b.auc.replicates || a.f1.replicates != b.f1.replicates) {
        ok = false;
        why << "bootstrap not bit-reproducible; ";
    }
    for (const auto& [name, res] : a.named())
        if (!(res->ci_lo <= res->point && res->point <= res->ci_hi)) {
            ok = false;
            why << "CI does not bracket " << name << "; ";
        }

    // Identical prediction sets compare at p = 1.
    Rng c1(8003);
    const ComparisonReport same = compare_methods(s, s, 100, c1);
    if (same.p_value != 1.0) {
        ok = false;
        why << "identical sets gave p " << same.p_value << "; ";
    }

    // Perfectly ranked vs anti-ranked: significant.
    PredictionSet good = s, bad = s;
    for (auto& p : good.items) p.score = p.label ? 0.9 : 0.1;
    for (auto& p : bad.items) p.score = p.label ? 0.1 : 0.9;
    Rng c2(8004);
    const ComparisonReport diff = compare_methods(good, bad, 100, c2);
    if (!(diff.p_value < 0.05) || !diff.significant) {
        ok = false;
        why << "ranked vs anti-ranked p " << diff.p_value << "; ";
    }

    report(8, ok,
           ok ? "bootstrap bit-reproducible, CIs bracket points, identity p = 1, "
                "ranked-vs-anti-ranked p < 0.05"
              : why.str());
}

// ---------------------------------------------------------------------------
// Criterion 9: end-to-end determinism through the CLI.

void criterion_9() {
    const char* bin = std::getenv("VOXMIM_BIN");
    if (!bin) {
        report(9, false, "VOXMIM_BIN not set; run via ctest (acceptance_determinism)");
        return;
    }
    const fs::path dir = work_dir("determinism");
    const fs::path cfg_path = dir / "run.cfg";
    std::ofstream(cfg_path) << R"(seed = 11

[model]
input_dims = 16, 16, 8
base_channels = 2
stages = 2
convs_per_stage = 1, 1

[pretrain]
epochs = 2
batch_size = 4

[train]
epochs = 3
batch_size = 4

[eval]
bootstrap_n = 20
fractions = 0.5, 1.0

[synth]
n_unlabeled = 6
n_labeled = 10

[reproduce]
seeds = 1
)";

    auto run = [&](const std::string& out) {
        const std::string cmd = std::string("\"") + bin + "\" reproduce --config \"" +
                                cfg_path.string() + "\" --out \"" + (dir / out).string() +
                                "\" > \"" + (dir / (out + ".log")).string() + "\" 2>&1";
        return std::system(cmd.c_str());
    };

    const int rc1 = run("run1");
    const int rc2 = run("run2");
    bool ok = rc1 == 0 && rc2 == 0;
    std::ostringstream why;
    if (!ok) why << "reproduce exited with " << rc1 << " / " << rc2 << "; ";

    if (ok) {
        auto slurp = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        const std::string csv1 = slurp(dir / "run1" / "results.csv");
        const std::string csv2 = slurp(dir / "run2" / "results.csv");
        if (csv1.empty() || csv1 != csv2) {
            ok = false;
            why << "results.csv differ or empty; ";
        }
    }
    report(9, ok,
           ok ? "two clean `voxmim reproduce` runs produced byte-identical results.csv"
              : why.str());
}

}  // namespace

int main(int argc, char** argv) {
    const std::string group = argc > 1 ? argv[1] : "all";

    if (group == "fast" || group == "all") {
        std::cout << "NOTE criterion 1: paper-scale clinical results are not reproducible at "
                     "desk scale; the property-based criteria below substitute for them.\n";
        criterion_2();
        criterion_3();
        criterion_4();
        criterion_7();
        criterion_8();
    }
    if (group == "pretrain" || group == "all") criterion_5();
    if (group == "ordering" || group == "all") criterion_6();
    if (group == "determinism" || group == "all") criterion_9();

    if (g_failures) {
        std::cout << g_failures << " criterion check(s) failed\n";
        return 1;
    }
    std::cout << "all checks in group '" << group << "' passed\n";
    return 0;
}
