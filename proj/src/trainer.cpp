#include "voxmim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "voxmim/errors.hpp"

namespace voxmim {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr uint64_t kStreamEpochOrder = 11;
constexpr uint64_t kStreamPlan = 12;

std::vector<Volume> load_volumes(const DatasetManifest& manifest, std::array<int, 3> input_dims) {
    std::vector<Volume> volumes;
    volumes.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        Volume v = load_volume(r.volume_path);
        if (v.dims != input_dims)
            throw DataError("volume '" + r.id + "' dims do not match the model input dims");
        volumes.push_back(std::move(v));
    }
    return volumes;
}

std::vector<ManifestRecord> of_class(const DatasetManifest& m, int label) {
    std::vector<ManifestRecord> out;
    for (const auto& r : m.records)
        if (r.label && *r.label == label) out.push_back(r);
    return out;
}

nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"input_dims", c.input_dims},
            {"base_channels", c.base_channels},
            {"stages", c.stages},
            {"convs_per_stage", c.convs_per_stage},
            {"skip_connections", c.skip_connections}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (int i = 0; i < 3; ++i) c.input_dims[i] = j.at("input_dims").at(i).get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.stages = j.at("stages").get<int>();
    c.convs_per_stage = j.at("convs_per_stage").get<std::vector<int>>();
    c.skip_connections = j.at("skip_connections").get<bool>();
    return c;
}

std::string ckpt_base(const std::string& path) {
    for (const char* suffix : {".ckpt.json", ".ckpt.raw", ".ckpt"}) {
        const std::string s(suffix);
        if (path.size() > s.size() && path.ends_with(s)) return path.substr(0, path.size() - s.size());
    }
    return path;
}

void write_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& extra,
                      const CheckpointMeta& meta, const std::vector<float>& blob) {
    const std::string base = ckpt_base(path);
    nlohmann::json j{{"version", kCheckpointVersion},
                     {"kind", kind},
                     {"metadata",
                      {{"epochs", meta.epochs}, {"loss_history", meta.loss_history}, {"seed", meta.seed}}},
                     {"blob_floats", blob.size()}};
    j.update(extra);
    std::ofstream header(base + ".ckpt.json");
    if (!header) throw DataError("cannot write checkpoint header " + base + ".ckpt.json");
    header << j.dump(2) << "\n";
    std::ofstream raw(base + ".ckpt.raw", std::ios::binary);
    if (!raw) throw DataError("cannot write checkpoint blob " + base + ".ckpt.raw");
    raw.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * 4));
    if (!raw) throw DataError("write failure on " + base + ".ckpt.raw");
}

nlohmann::json read_checkpoint(const std::string& path, const std::string& expected_kind,
                               CheckpointMeta* meta, std::vector<float>& blob) {
    const std::string base = ckpt_base(path);
    std::ifstream header(base + ".ckpt.json");
    if (!header) throw DataError("cannot open checkpoint header " + base + ".ckpt.json");
    nlohmann::json j;
    try {
        header >> j;
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw DataError("checkpoint version mismatch in " + base + ".ckpt.json");
        if (j.at("kind").get<std::string>() != expected_kind)
            throw DataError("checkpoint kind is '" + j.at("kind").get<std::string>() + "', expected '" +
                            expected_kind + "'");
        if (meta) {
            meta->epochs = j.at("metadata").at("epochs").get<int>();
            meta->loss_history = j.at("metadata").at("loss_history").get<std::vector<double>>();
            meta->seed = j.at("metadata").at("seed").get<uint64_t>();
        }
        const size_t count = j.at("blob_floats").get<size_t>();
        std::ifstream raw(base + ".ckpt.raw", std::ios::binary);
        if (!raw) throw DataError("cannot open checkpoint blob " + base + ".ckpt.raw");
        raw.seekg(0, std::ios::end);
        if (static_cast<size_t>(raw.tellg()) != count * 4)
            throw DataError("checkpoint blob length mismatch in " + base + ".ckpt.raw");
        raw.seekg(0);
        blob.resize(count);
        raw.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(count * 4));
        if (!raw) throw DataError("short read on " + base + ".ckpt.raw");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint " + base + ".ckpt.json: " + e.what());
    }
    return j;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
}

std::pair<DatasetManifest, DatasetManifest> split_labeled(const DatasetManifest& manifest,
                                                          double train_fraction, Rng& rng) {
    manifest.validate();
    if (manifest.role != ManifestRole::Labeled) throw UsageError("split_labeled needs a labeled manifest");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw UsageError("train fraction must lie in (0,1)");

    DatasetManifest train, test;
    train.role = test.role = ManifestRole::Labeled;
    for (int label : {0, 1}) {
        auto cls = of_class(manifest, label);
        if (cls.empty()) throw DataError("split_labeled: class " + std::to_string(label) + " is empty");
        rng.shuffle(cls);
        const size_t k = static_cast<size_t>(round_half_up(train_fraction * static_cast<double>(cls.size())));
        for (size_t i = 0; i < cls.size(); ++i)
            (i < k ? train : test).records.push_back(cls[i]);
    }
    auto by_id = [](const ManifestRecord& a, const ManifestRecord& b) { return a.id < b.id; };
    std::sort(train.records.begin(), train.records.end(), by_id);
    std::sort(test.records.begin(), test.records.end(), by_id);
    return {std::move(train), std::move(test)};
}

DatasetManifest sample_label_fraction(const DatasetManifest& train, double fraction, Rng& rng) {
    train.validate();
    if (train.role != ManifestRole::Labeled)
        throw UsageError("sample_label_fraction needs a labeled manifest");
    if (!(fraction > 0.0) || fraction > 1.0) throw UsageError("fraction must lie in (0,1]");
    if (fraction == 1.0) return train;

    DatasetManifest subset;
    subset.role = ManifestRole::Labeled;
    for (int label : {0, 1}) {
        auto cls = of_class(train, label);
        if (cls.empty())
            throw DataError("sample_label_fraction: class " + std::to_string(label) + " is empty");
        rng.shuffle(cls);
        const size_t k = std::max<size_t>(
            1, static_cast<size_t>(round_half_up(fraction * static_cast<double>(cls.size()))));
        for (size_t i = 0; i < std::min(k, cls.size()); ++i) subset.records.push_back(cls[i]);
    }
    std::sort(subset.records.begin(), subset.records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) { return a.id < b.id; });
    return subset;
}

nn::Var volumes_to_batch(const std::vector<const Volume*>& volumes, std::array<int, 3> input_dims,
                         bool requires_grad) {
    if (volumes.empty()) throw UsageError("empty batch");
    const int d = input_dims[2], h = input_dims[1], w = input_dims[0];
    const size_t spatial = static_cast<size_t>(d) * h * w;
    std::vector<double> data;
    data.reserve(volumes.size() * spatial);
    for (const Volume* v : volumes) {
        if (v->dims != input_dims) throw DataError("batch volume dims mismatch");
        for (float f : v->voxels) data.push_back(f);
    }
    return nn::make_tensor({static_cast<int>(volumes.size()), 1, d, h, w}, std::move(data),
                           requires_grad);
}

TrainResult pretrain(MaskedAutoencoder& mae, const DatasetManifest& unlabeled,
                     const MaskPolicy& policy, const TrainConfig& config) {
    unlabeled.validate();
    if (unlabeled.role != ManifestRole::Unlabeled)
        throw UsageError("pretrain takes the unlabeled manifest");
    if (unlabeled.records.empty()) throw DataError("pretrain: empty manifest");
    config.validate();

    const auto input_dims = mae.config().input_dims;
    const std::vector<Volume> volumes = load_volumes(unlabeled, input_dims);

    auto params = mae.parameters();
    nn::AdamState adam;
    adam.lr = config.lr;

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(volumes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(config.seed, {kStreamEpochOrder, static_cast<uint64_t>(epoch)}));
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<Volume> corrupted;
            std::vector<const Volume*> clean_ptrs, corrupted_ptrs;
            std::vector<uint8_t> mask;
            for (size_t i = start; i < end; ++i) {
                const Volume& clean = volumes[order[i]];
                Rng plan_rng(derive_seed(config.seed,
                                         {kStreamPlan, static_cast<uint64_t>(epoch), order[i]}));
                CubeGrid grid;
                MaskPlan plan;
                if (policy.mode == MaskMode::Static) {
                    grid = partition_cubes(clean.dims, policy.cube_dims);
                    plan = plan_static(grid, policy, plan_rng);
                } else {
                    std::tie(grid, plan) = plan_dynamic(clean.dims, policy, plan_rng);
                }
                corrupted.push_back(apply_plan(clean, grid, plan));
                if (config.masked_only_loss) {
                    const auto m = plan_mask(grid, plan);
                    mask.insert(mask.end(), m.begin(), m.end());
                }
                clean_ptrs.push_back(&clean);
            }
            for (const Volume& v : corrupted) corrupted_ptrs.push_back(&v);

            nn::Var input = volumes_to_batch(corrupted_ptrs, input_dims, true);
            nn::Var target = volumes_to_batch(clean_ptrs, input_dims, false);
            nn::Var output = mae.reconstruct(input, nn::Mode::Train);
            nn::Var loss = nn::mse_loss(output, target, config.masked_only_loss ? &mask : nullptr);
            if (!std::isfinite(loss->value[0])) throw NumericError("pretrain: non-finite loss");
            nn::backward(loss);
            nn::adam_step(params, adam);

            epoch_loss += loss->value[0] * static_cast<double>(end - start);
            seen += end - start;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
    }
    return result;
}

TrainResult train_downstream(Classifier& classifier, const DatasetManifest& labeled,
                             const TrainConfig& config) {
    labeled.validate();
    if (labeled.role != ManifestRole::Labeled)
        throw UsageError("train_downstream takes a labeled manifest");
    if (labeled.records.empty()) throw DataError("train_downstream: empty manifest");
    config.validate();

    const auto input_dims = classifier.config().input_dims;
    const std::vector<Volume> volumes = load_volumes(labeled, input_dims);
    std::vector<double> labels;
    for (const auto& r : labeled.records) labels.push_back(static_cast<double>(*r.label));

    auto params = classifier.trainable_parameters();
    nn::AdamState adam;
    adam.lr = config.lr;

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(volumes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(config.seed, {kStreamEpochOrder, static_cast<uint64_t>(epoch)}));
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<const Volume*> batch;
            std::vector<double> batch_labels;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&volumes[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            nn::Var input = volumes_to_batch(batch, input_dims, true);
            nn::Var probs = classifier.forward(input, nn::Mode::Train);
            nn::Var loss = nn::bce_loss(probs, batch_labels);
            if (!std::isfinite(loss->value[0])) throw NumericError("train_downstream: non-finite loss");
            nn::backward(loss);
            nn::adam_step(params, adam);

            epoch_loss += loss->value[0] * static_cast<double>(end - start);
            seen += end - start;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
    }
    return result;
}

PredictionSet evaluate_classifier(Classifier& classifier, const DatasetManifest& test) {
    test.validate();
    if (test.role != ManifestRole::Labeled) throw UsageError("evaluate needs a labeled manifest");
    const auto input_dims = classifier.config().input_dims;

    PredictionSet set;
    for (const auto& r : test.records) {
        const Volume v = load_volume(r.volume_path);
        if (v.dims != input_dims) throw DataError("volume '" + r.id + "' dims mismatch");
        const auto probs = classifier.predict(volumes_to_batch({&v}, input_dims, false));
        set.items.push_back({r.id, *r.label, probs[0]});
    }
    set.sort_by_id();
    return set;
}

void save_mae_checkpoint(const MaskedAutoencoder& mae, const CheckpointMeta& meta,
                         const std::string& path) {
    write_checkpoint(path, "mae", {{"model", model_config_json(mae.config())}}, meta,
                     mae.state_blob());
}

std::unique_ptr<MaskedAutoencoder> load_mae_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::vector<float> blob;
    const nlohmann::json j = read_checkpoint(path, "mae", meta, blob);
    const ModelConfig config = model_config_from_json(j.at("model"));
    Rng rng(0);
    auto mae = std::make_unique<MaskedAutoencoder>(config, rng);
    mae->load_state_blob(blob);
    return mae;
}

void save_classifier_checkpoint(const Classifier& classifier, const CheckpointMeta& meta,
                                const std::string& path) {
    write_checkpoint(path, "classifier",
                     {{"model", model_config_json(classifier.config())},
                      {"mode", to_string(classifier.mode())}},
                     meta, classifier.state_blob());
}

std::unique_ptr<Classifier> load_classifier_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::vector<float> blob;
    const nlohmann::json j = read_checkpoint(path, "classifier", meta, blob);
    const ModelConfig config = model_config_from_json(j.at("model"));
    const ClassifierMode mode = classifier_mode_from_string(j.at("mode").get<std::string>());
    return std::make_unique<Classifier>(Classifier::from_state(config, mode, blob));
}

}  // namespace voxmim
