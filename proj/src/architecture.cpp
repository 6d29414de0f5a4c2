#include "voxmim/architecture.hpp"

#include <algorithm>

#include "voxmim/errors.hpp"

namespace voxmim {

namespace {

constexpr std::array<int, 3> kPad{1, 1, 1};
constexpr std::array<int, 3> kPool{2, 2, 2};

ConvBNLayer make_conv_bn(int cin, int cout, Rng& rng) {
    ConvBNLayer layer;
    const size_t wcount = static_cast<size_t>(cout) * cin * 27;
    layer.weight = nn::make_param({cout, cin, 3, 3, 3},
                                  nn::kaiming_uniform(wcount, static_cast<size_t>(cin) * 27, rng));
    layer.bias = nn::make_param({cout}, std::vector<double>(static_cast<size_t>(cout), 0.0));
    layer.gamma = nn::make_param({cout}, std::vector<double>(static_cast<size_t>(cout), 1.0));
    layer.beta = nn::make_param({cout}, std::vector<double>(static_cast<size_t>(cout), 0.0));
    layer.bn = nn::BatchNormState(cout);
    return layer;
}

std::vector<std::vector<ConvBNLayer>> build_encoder(const ModelConfig& cfg, Rng& rng) {
    std::vector<std::vector<ConvBNLayer>> encoder;
    int cin = 1;
    for (int s = 0; s < cfg.stages; ++s) {
        std::vector<ConvBNLayer> stage;
        for (int i = 0; i < cfg.convs_per_stage[static_cast<size_t>(s)]; ++i) {
            stage.push_back(make_conv_bn(cin, cfg.stage_channels(s), rng));
            cin = cfg.stage_channels(s);
        }
        encoder.push_back(std::move(stage));
    }
    return encoder;
}

nn::Var conv_bn_relu(const nn::Var& x, ConvBNLayer& layer, nn::Mode mode) {
    nn::Var y = nn::conv3d(x, layer.weight, layer.bias, kPad);
    y = nn::batchnorm3d(y, layer.gamma, layer.beta, layer.bn, mode);
    return nn::relu(y);
}

nn::Var run_encoder(std::vector<std::vector<ConvBNLayer>>& encoder, const nn::Var& input, nn::Mode mode,
                    std::vector<nn::Var>* skips) {
    nn::Var x = input;
    for (auto& stage : encoder) {
        for (auto& layer : stage) x = conv_bn_relu(x, layer, mode);
        if (skips) skips->push_back(x);
        x = nn::maxpool3d(x, kPool);
    }
    return x;
}

void append_layer_blob(const ConvBNLayer& layer, std::vector<float>& blob) {
    for (const nn::Var& v : {layer.weight, layer.bias, layer.gamma, layer.beta})
        for (double d : v->value) blob.push_back(static_cast<float>(d));
    for (double d : layer.bn.running_mean) blob.push_back(static_cast<float>(d));
    for (double d : layer.bn.running_var) blob.push_back(static_cast<float>(d));
}

void read_layer_blob(ConvBNLayer& layer, const std::vector<float>& blob, size_t& pos) {
    for (const nn::Var& v : {layer.weight, layer.bias, layer.gamma, layer.beta})
        for (double& d : v->value) d = blob[pos++];
    for (double& d : layer.bn.running_mean) d = blob[pos++];
    for (double& d : layer.bn.running_var) d = blob[pos++];
}

size_t layer_blob_count(int cin, int cout) {
    return static_cast<size_t>(cout) * cin * 27 + 5 * static_cast<size_t>(cout);
}

std::vector<std::vector<ConvBNLayer>> copy_encoder(const std::vector<std::vector<ConvBNLayer>>& src,
                                                   bool trainable) {
    std::vector<std::vector<ConvBNLayer>> out;
    for (const auto& stage : src) {
        std::vector<ConvBNLayer> copy;
        for (const auto& layer : stage) {
            ConvBNLayer c;
            c.weight = nn::make_tensor(layer.weight->shape, layer.weight->value, trainable);
            c.bias = nn::make_tensor(layer.bias->shape, layer.bias->value, trainable);
            c.gamma = nn::make_tensor(layer.gamma->shape, layer.gamma->value, trainable);
            c.beta = nn::make_tensor(layer.beta->shape, layer.beta->value, trainable);
            c.bn = layer.bn;
            copy.push_back(std::move(c));
        }
        out.push_back(std::move(copy));
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (stages < 2 || stages > 5) throw UsageError("model stages must be in [2,5]");
    if (base_channels < 1) throw UsageError("base_channels must be positive");
    if (static_cast<int>(convs_per_stage.size()) != stages)
        throw UsageError("convs_per_stage must list one entry per stage");
    for (int c : convs_per_stage)
        if (c < 1) throw UsageError("convs_per_stage entries must be >= 1");
    const int div = 1 << stages;
    for (int d : input_dims)
        if (d <= 0 || d % div)
            throw UsageError("input dim " + std::to_string(d) + " not divisible by 2^stages = " +
                             std::to_string(div));
}

MaskedAutoencoder::MaskedAutoencoder(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    encoder_ = build_encoder(config_, rng);
    for (int s = config_.stages - 1; s >= 0; --s) {
        const int ch = config_.stage_channels(s);
        int cin = s == config_.stages - 1 ? ch : config_.stage_channels(s + 1);
        if (config_.skip_connections) cin += ch;
        std::vector<ConvBNLayer> stage;
        for (int i = 0; i < config_.convs_per_stage[static_cast<size_t>(s)]; ++i) {
            stage.push_back(make_conv_bn(cin, ch, rng));
            cin = ch;
        }
        decoder_.push_back(std::move(stage));
    }
    const int c0 = config_.base_channels;
    final_weight_ = nn::make_param({1, c0, 3, 3, 3},
                                   nn::kaiming_uniform(static_cast<size_t>(c0) * 27,
                                                       static_cast<size_t>(c0) * 27, rng));
    final_bias_ = nn::make_param({1}, {0.0});
}

MaskedAutoencoder::Encoded MaskedAutoencoder::encode(const nn::Var& input, nn::Mode mode) {
    Encoded enc;
    enc.latent = run_encoder(encoder_, input, mode, &enc.skips);
    return enc;
}

nn::Var MaskedAutoencoder::reconstruct(const nn::Var& corrupted_batch, nn::Mode mode) {
    if (corrupted_batch->shape.size() != 5 || corrupted_batch->shape[1] != 1 ||
        corrupted_batch->shape[2] != config_.input_dims[2] ||
        corrupted_batch->shape[3] != config_.input_dims[1] ||
        corrupted_batch->shape[4] != config_.input_dims[0])
        throw UsageError("reconstruct: batch shape does not match model config");

    Encoded enc = encode(corrupted_batch, mode);
    nn::Var x = enc.latent;
    for (size_t i = 0; i < decoder_.size(); ++i) {
        const int s = config_.stages - 1 - static_cast<int>(i);
        x = nn::upsample_nearest3d(x, kPool);
        if (config_.skip_connections) x = nn::concat_channels(x, enc.skips[static_cast<size_t>(s)]);
        for (auto& layer : decoder_[i]) x = conv_bn_relu(x, layer, mode);
    }
    x = nn::conv3d(x, final_weight_, final_bias_, kPad);
    return nn::sigmoid(x);
}

std::vector<nn::Var> MaskedAutoencoder::parameters() {
    std::vector<nn::Var> out;
    for (auto* block : {&encoder_, &decoder_})
        for (auto& stage : *block)
            for (auto& layer : stage) {
                out.push_back(layer.weight);
                out.push_back(layer.bias);
                out.push_back(layer.gamma);
                out.push_back(layer.beta);
            }
    out.push_back(final_weight_);
    out.push_back(final_bias_);
    return out;
}

std::vector<float> MaskedAutoencoder::state_blob() const {
    std::vector<float> blob;
    blob.reserve(state_count());
    for (const auto* block : {&encoder_, &decoder_})
        for (const auto& stage : *block)
            for (const auto& layer : stage) append_layer_blob(layer, blob);
    for (double d : final_weight_->value) blob.push_back(static_cast<float>(d));
    for (double d : final_bias_->value) blob.push_back(static_cast<float>(d));
    return blob;
}

void MaskedAutoencoder::load_state_blob(const std::vector<float>& blob) {
    if (blob.size() != state_count())
        throw DataError("state blob length " + std::to_string(blob.size()) + " does not match model (" +
                        std::to_string(state_count()) + ")");
    size_t pos = 0;
    for (auto* block : {&encoder_, &decoder_})
        for (auto& stage : *block)
            for (auto& layer : stage) read_layer_blob(layer, blob, pos);
    for (double& d : final_weight_->value) d = blob[pos++];
    for (double& d : final_bias_->value) d = blob[pos++];
}

size_t MaskedAutoencoder::state_count() const { return mae_state_count(config_); }

size_t mae_state_count(const ModelConfig& config) {
    config.validate();
    size_t count = 0;
    int cin = 1;
    for (int s = 0; s < config.stages; ++s)
        for (int i = 0; i < config.convs_per_stage[static_cast<size_t>(s)]; ++i) {
            count += layer_blob_count(cin, config.stage_channels(s));
            cin = config.stage_channels(s);
        }
    for (int s = config.stages - 1; s >= 0; --s) {
        const int ch = config.stage_channels(s);
        int c = s == config.stages - 1 ? ch : config.stage_channels(s + 1);
        if (config.skip_connections) c += ch;
        for (int i = 0; i < config.convs_per_stage[static_cast<size_t>(s)]; ++i) {
            count += layer_blob_count(c, ch);
            c = ch;
        }
    }
    count += static_cast<size_t>(config.base_channels) * 27 + 1;  // final conv
    return count;
}

size_t classifier_state_count(const ModelConfig& config) {
    config.validate();
    size_t count = 0;
    int cin = 1;
    for (int s = 0; s < config.stages; ++s)
        for (int i = 0; i < config.convs_per_stage[static_cast<size_t>(s)]; ++i) {
            count += layer_blob_count(cin, config.stage_channels(s));
            cin = config.stage_channels(s);
        }
    count += static_cast<size_t>(config.stage_channels(config.stages - 1)) + 1;  // head
    return count;
}

std::string to_string(ClassifierMode mode) {
    switch (mode) {
        case ClassifierMode::LinearProbe: return "probe";
        case ClassifierMode::FineTune: return "finetune";
        case ClassifierMode::RandomInit: return "random";
        case ClassifierMode::ExternalWeights: return "external";
    }
    return "?";
}

ClassifierMode classifier_mode_from_string(const std::string& s) {
    if (s == "probe") return ClassifierMode::LinearProbe;
    if (s == "finetune") return ClassifierMode::FineTune;
    if (s == "random") return ClassifierMode::RandomInit;
    if (s == "external") return ClassifierMode::ExternalWeights;
    throw UsageError("unknown classifier mode '" + s + "' (probe|finetune|random|external)");
}

Classifier::Classifier(const ModelConfig& config, ClassifierMode mode, const MaskedAutoencoder* source,
                       Rng& rng)
    : config_(config), mode_(mode) {
    config_.validate();
    if (mode == ClassifierMode::RandomInit) {
        encoder_ = build_encoder(config_, rng);
    } else {
        if (!source) throw UsageError("classifier mode " + to_string(mode) + " needs an encoder source");
        if (source->config().input_dims != config_.input_dims ||
            source->config().base_channels != config_.base_channels ||
            source->config().stages != config_.stages ||
            source->config().convs_per_stage != config_.convs_per_stage)
            throw DataError("encoder source config does not match classifier config");
        encoder_ = copy_encoder(source->encoder(), encoder_trainable());
    }
    const int feat = config_.stage_channels(config_.stages - 1);
    head_weight_ = nn::make_param({1, feat}, nn::kaiming_uniform(static_cast<size_t>(feat),
                                                                 static_cast<size_t>(feat), rng));
    head_bias_ = nn::make_param({1}, {0.0});
}

Classifier Classifier::from_state(const ModelConfig& config, ClassifierMode mode,
                                  const std::vector<float>& blob) {
    Rng rng(0);
    Classifier clf(config, ClassifierMode::RandomInit, nullptr, rng);
    clf.mode_ = mode;
    if (mode == ClassifierMode::LinearProbe)
        for (auto& stage : clf.encoder_)
            for (auto& layer : stage)
                for (const nn::Var& v : {layer.weight, layer.bias, layer.gamma, layer.beta})
                    v->requires_grad = false;
    clf.load_state_blob(blob);
    return clf;
}

nn::Var Classifier::forward(const nn::Var& batch, nn::Mode mode) {
    const nn::Mode enc_mode = encoder_trainable() ? mode : nn::Mode::Eval;
    nn::Var x = run_encoder(encoder_, batch, enc_mode, nullptr);
    x = nn::global_avg_pool(x);
    x = nn::linear(x, head_weight_, head_bias_);
    return nn::sigmoid(x);
}

std::vector<double> Classifier::predict(const nn::Var& batch) {
    return forward(batch, nn::Mode::Eval)->value;
}

std::vector<nn::Var> Classifier::trainable_parameters() {
    std::vector<nn::Var> out;
    if (encoder_trainable())
        for (auto& stage : encoder_)
            for (auto& layer : stage) {
                out.push_back(layer.weight);
                out.push_back(layer.bias);
                out.push_back(layer.gamma);
                out.push_back(layer.beta);
            }
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
}

std::vector<float> Classifier::state_blob() const {
    std::vector<float> blob;
    blob.reserve(state_count());
    for (const auto& stage : encoder_)
        for (const auto& layer : stage) append_layer_blob(layer, blob);
    for (double d : head_weight_->value) blob.push_back(static_cast<float>(d));
    for (double d : head_bias_->value) blob.push_back(static_cast<float>(d));
    return blob;
}

std::vector<float> Classifier::encoder_blob() const {
    std::vector<float> blob;
    for (const auto& stage : encoder_)
        for (const auto& layer : stage) append_layer_blob(layer, blob);
    return blob;
}

void Classifier::load_state_blob(const std::vector<float>& blob) {
    if (blob.size() != state_count())
        throw DataError("classifier state blob length mismatch: got " + std::to_string(blob.size()) +
                        ", expected " + std::to_string(state_count()));
    size_t pos = 0;
    for (auto& stage : encoder_)
        for (auto& layer : stage) read_layer_blob(layer, blob, pos);
    for (double& d : head_weight_->value) d = blob[pos++];
    for (double& d : head_bias_->value) d = blob[pos++];
}

size_t Classifier::state_count() const { return classifier_state_count(config_); }

}  // namespace voxmim
