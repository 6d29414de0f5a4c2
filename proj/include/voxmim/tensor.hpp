#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "voxmim/rng.hpp"

namespace voxmim::nn {

enum class Mode { Train, Eval };
enum class ActKind { ReLU, Sigmoid };

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of the recorded computation graph. Values are held in double for
/// stable gradient checks; parameters are kept float-representable so the
/// f32 checkpoint format round-trips bit-exactly.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads
    bool backward_done = false;

    size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { grad.assign(value.size(), 0.0); }
};

Var make_tensor(std::vector<int> shape, std::vector<double> value, bool requires_grad = false);
Var make_constant(std::vector<int> shape, std::vector<double> value);
// Leaf parameter; value is rounded through float.
Var make_param(std::vector<int> shape, std::vector<double> value);

size_t shape_size(const std::vector<int>& shape);

// Kaiming-uniform fan-in init, values float-rounded.
std::vector<double> kaiming_uniform(size_t count, size_t fan_in, Rng& rng);

// ---- ops ----------------------------------------------------------------
// Feature maps are laid out (N, C, D, H, W), W fastest.

Var conv3d(const Var& input, const Var& kernel, const Var& bias, std::array<int, 3> padding);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<size_t>(channels), 0.0),
          running_var(static_cast<size_t>(channels), 1.0) {}
};

Var batchnorm3d(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

Var maxpool3d(const Var& input, std::array<int, 3> window);
Var upsample_nearest3d(const Var& input, std::array<int, 3> factor);
Var activation(const Var& input, ActKind kind);
Var relu(const Var& input);
Var sigmoid(const Var& input);
Var linear(const Var& input, const Var& weight, const Var& bias);
Var global_avg_pool(const Var& input);           // (N,C,D,H,W) -> (N,C)
Var concat_channels(const Var& a, const Var& b);

// Mean squared error over all elements, or over mask!=0 elements only.
Var mse_loss(const Var& prediction, const Var& target, const std::vector<uint8_t>* mask = nullptr);
// Mean binary cross-entropy over a batch of probabilities (shape (N) or (N,1)).
Var bce_loss(const Var& probabilities, const std::vector<double>& labels);

// Reverse-mode sweep from a scalar loss. A second call on the same root
// without rebuilding the graph is an error.
void backward(const Var& loss);

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Standard Adam with bias correction; consumes and zeroes parameter grads.
// Updated parameters are rounded through float.
void adam_step(const std::vector<Var>& params, AdamState& state);

}  // namespace voxmim::nn
