#pragma once

#include <array>
#include <string>
#include <vector>

#include "voxmim/rng.hpp"
#include "voxmim/tensor.hpp"

namespace voxmim {

/// Truncated-VGG encoder/decoder plan. Channel width doubles per stage; a
/// 2x2x2 maxpool follows every encoder stage, so input dims must be
/// divisible by 2^stages per axis.
struct ModelConfig {
    std::array<int, 3> input_dims{32, 32, 16};  // x, y, z
    int base_channels = 8;
    int stages = 3;
    std::vector<int> convs_per_stage{2, 2, 3};
    bool skip_connections = true;

    void validate() const;
    int stage_channels(int stage) const { return base_channels << stage; }
};

struct ConvBNLayer {
    nn::Var weight;  // (Cout,Cin,3,3,3)
    nn::Var bias;
    nn::Var gamma;
    nn::Var beta;
    nn::BatchNormState bn;
};

class MaskedAutoencoder {
public:
    MaskedAutoencoder(const ModelConfig& config, Rng& rng);

    // Input and output shape (N,1,D,H,W) with (D,H,W) = (z,y,x) of config dims.
    nn::Var reconstruct(const nn::Var& corrupted_batch, nn::Mode mode);

    std::vector<nn::Var> parameters();
    // Trainable parameters plus batch-norm running stats, declared order.
    std::vector<float> state_blob() const;
    void load_state_blob(const std::vector<float>& blob);
    size_t state_count() const;

    const ModelConfig& config() const { return config_; }
    std::vector<std::vector<ConvBNLayer>>& encoder() { return encoder_; }
    const std::vector<std::vector<ConvBNLayer>>& encoder() const { return encoder_; }

private:
    friend class Classifier;
    struct Encoded {
        nn::Var latent;
        std::vector<nn::Var> skips;  // pre-pool feature of each stage
    };
    Encoded encode(const nn::Var& input, nn::Mode mode);

    ModelConfig config_;
    std::vector<std::vector<ConvBNLayer>> encoder_;
    std::vector<std::vector<ConvBNLayer>> decoder_;
    nn::Var final_weight_;
    nn::Var final_bias_;
};

enum class ClassifierMode { LinearProbe, FineTune, RandomInit, ExternalWeights };

std::string to_string(ClassifierMode mode);
ClassifierMode classifier_mode_from_string(const std::string& s);

/// Encoder + global average pooling + single linear unit + sigmoid.
/// LinearProbe freezes the encoder: its parameters are non-trainable and it
/// always runs in Eval mode, so running stats stay untouched too.
class Classifier {
public:
    // `source` supplies encoder weights for LinearProbe / FineTune /
    // ExternalWeights (the latter loaded from a checkpoint by the caller,
    // standing in for weights pretrained elsewhere); ignored for RandomInit.
    Classifier(const ModelConfig& config, ClassifierMode mode, const MaskedAutoencoder* source,
               Rng& rng);

    // Rebuild from a checkpoint state blob, preserving the recorded mode.
    static Classifier from_state(const ModelConfig& config, ClassifierMode mode,
                                 const std::vector<float>& blob);

    nn::Var forward(const nn::Var& batch, nn::Mode mode);
    // Eval-mode probabilities, one per case.
    std::vector<double> predict(const nn::Var& batch);

    std::vector<nn::Var> trainable_parameters();
    std::vector<float> state_blob() const;
    void load_state_blob(const std::vector<float>& blob);
    size_t state_count() const;
    std::vector<float> encoder_blob() const;

    ClassifierMode mode() const { return mode_; }
    bool encoder_trainable() const { return mode_ != ClassifierMode::LinearProbe; }
    const ModelConfig& config() const { return config_; }

private:
    ModelConfig config_;
    ClassifierMode mode_;
    std::vector<std::vector<ConvBNLayer>> encoder_;
    nn::Var head_weight_;
    nn::Var head_bias_;
};

// Number of floats in an MAE / classifier state blob for this config.
size_t mae_state_count(const ModelConfig& config);
size_t classifier_state_count(const ModelConfig& config);

}  // namespace voxmim
