#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advdef/tensor.hpp"

namespace advdef::nn {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TrainingDivergedError : std::runtime_error {
    int epoch;
    explicit TrainingDivergedError(int ep)
        : std::runtime_error("training diverged (NaN loss) at epoch " + std::to_string(ep)),
          epoch(ep) {}
};

struct ModelFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// One-hot class label of length L.
struct OneHotLabel {
    std::vector<double> probabilities;

    static OneHotLabel from_index(int index, int class_count) {
        if (index < 0 || index >= class_count) throw std::invalid_argument("label index out of range");
        OneHotLabel y;
        y.probabilities.assign(class_count, 0.0);
        y.probabilities[index] = 1.0;
        return y;
    }
    int index() const {
        for (std::size_t i = 0; i < probabilities.size(); ++i)
            if (probabilities[i] == 1.0) return static_cast<int>(i);
        throw std::invalid_argument("not a one-hot label");
    }
    bool valid() const {
        int ones = 0;
        for (double v : probabilities) {
            if (v == 1.0) ++ones;
            else if (v != 0.0) return false;
        }
        return ones == 1;
    }
};

enum class LayerKind { dense, conv2d, relu, maxpool, flatten, softmax };

std::string layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    int in_features = 0, out_features = 0;        // dense
    int in_channels = 0, out_channels = 0;        // conv2d
    int kernel = 0, stride = 1;                   // conv2d
    int window = 0, pool_stride = 0;              // maxpool (pool_stride 0 -> window)

    static LayerSpec dense(int in, int out) {
        LayerSpec s{LayerKind::dense};
        s.in_features = in;
        s.out_features = out;
        return s;
    }
    static LayerSpec conv2d(int in_c, int out_c, int kernel, int stride = 1) {
        LayerSpec s{LayerKind::conv2d};
        s.in_channels = in_c;
        s.out_channels = out_c;
        s.kernel = kernel;
        s.stride = stride;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
    static LayerSpec maxpool(int window, int stride = 0) {
        LayerSpec s{LayerKind::maxpool};
        s.window = window;
        s.pool_stride = stride == 0 ? window : stride;
        return s;
    }
    static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }
    static LayerSpec softmax() { return LayerSpec{LayerKind::softmax}; }
};

/// Output shape of a layer given its input shape; throws ShapeError on an
/// incompatible pair.
std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in);

/// Layered classifier. Parameters are owned per layer (empty tensors for
/// parameterless layers). Immutable during inference; training is the only
/// writer.
struct Network {
    std::vector<int> input_shape;  // {C,H,W} for conv nets, {n} for dense-only
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights;  // conv: {out_c,in_c,k,k}; dense: {out,in}
    std::vector<Tensor> biases;   // {out_c} / {out}

    int class_count() const;
    /// Index of the layer feeding the trailing softmax (the logits layer),
    /// or layers.size() if the net has no softmax head.
    std::size_t logits_layer() const;
};

/// Validates the layer chain (shape compatibility, softmax only as the final
/// layer) and initializes parameters uniformly scaled by fan-in, seeded.
Network make_network(std::vector<int> input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

/// Per-layer input/output activations from one forward pass.
struct ForwardTrace {
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    /// Pre-softmax logits (input of the trailing softmax layer).
    const Tensor& logits(const Network& net) const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

std::pair<Tensor, ForwardTrace> forward(const Network& net, const Tensor& x);

/// Forward without recording a trace; cheaper for inference-only paths.
Tensor forward_probs(const Network& net, const Tensor& x);

/// argmax with ties broken toward the lowest class index.
int argmax(const Tensor& probs);
int predict_class(const Network& net, const Tensor& x);

enum class ReluBackwardRule {
    standard,  // gradient gated by forward positivity only
    guided     // additionally gated by backward positivity (deconv-style)
};

struct BackwardOptions {
    ReluBackwardRule relu_rule = ReluBackwardRule::standard;
    bool want_param_grads = false;
    bool record_layer_grads = false;  // keeps grad at every layer input, for inspection
};

struct BackwardResult {
    Tensor input_grad;
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
    std::vector<Tensor> layer_input_grads;  // filled when record_layer_grads
};

/// Backpropagates `logit_grad` (defined at the pre-softmax logits) down to
/// the network input. The softmax layer itself is not traversed.
BackwardResult backward_from_logits(const Network& net, const ForwardTrace& trace,
                                    const Tensor& logit_grad, const BackwardOptions& opts = {});

/// d(logit_l)/dx for every input element. `class_index` must lie in [0, L).
Tensor backward_input(const Network& net, const ForwardTrace& trace, int class_index);

/// Cross-entropy of a recorded forward pass against a class index.
double cross_entropy(const Tensor& probs, int label);

/// d(cross-entropy loss)/dx, using the fused softmax + cross-entropy seed
/// (p - y) at the logits.
Tensor backward_loss(const Network& net, const ForwardTrace& trace, int label);

struct TrainConfig {
    double learning_rate = 0.05;
    int batch_size = 32;
    int epochs = 5;
    std::uint64_t seed = 1;
    enum class Loss { cross_entropy } loss = Loss::cross_entropy;
};

struct TrainReport {
    std::vector<double> epoch_losses;
    double final_train_accuracy = 0.0;
};

/// Minibatch SGD. Deterministic given (seed, data, config); epochs = 0 leaves
/// the parameters untouched. Throws TrainingDivergedError on NaN loss.
TrainReport train(Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels,
                  const TrainConfig& cfg);

/// Same optimizer, starting from the network's current parameters.
TrainReport fine_tune(Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels,
                      const TrainConfig& cfg);

double accuracy(const Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels);

/// Versioned binary container; load(save(net)) reproduces forward outputs
/// bit-exactly. Layout documented in docs/formats.md.
void save_model(const Network& net, const std::string& path);
Network load_model(const std::string& path);
void write_model(const Network& net, std::ostream& out);
Network read_model(std::istream& in);

}  // namespace advdef::nn
