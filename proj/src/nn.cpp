#include "advdef/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace advdef::nn {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in) {
    switch (spec.kind) {
        case LayerKind::dense: {
            if (Tensor::numel_of(in) != spec.in_features)
                throw ShapeError("dense: input numel != in_features");
            return {spec.out_features};
        }
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[0] != spec.in_channels)
                throw ShapeError("conv2d: expected {in_channels,H,W} input");
            const int oh = (in[1] - spec.kernel) / spec.stride + 1;
            const int ow = (in[2] - spec.kernel) / spec.stride + 1;
            if (spec.kernel <= 0 || spec.stride <= 0 || oh <= 0 || ow <= 0)
                throw ShapeError("conv2d: kernel does not fit input");
            return {spec.out_channels, oh, ow};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::maxpool: {
            if (in.size() != 3) throw ShapeError("maxpool: expected {C,H,W} input");
            const int oh = (in[1] - spec.window) / spec.pool_stride + 1;
            const int ow = (in[2] - spec.window) / spec.pool_stride + 1;
            if (spec.window <= 0 || oh <= 0 || ow <= 0)
                throw ShapeError("maxpool: window does not fit input");
            return {in[0], oh, ow};
        }
        case LayerKind::flatten:
            return {static_cast<int>(Tensor::numel_of(in))};
        case LayerKind::softmax:
            if (in.size() != 1) throw ShapeError("softmax: expected flat input");
            return in;
    }
    throw ShapeError("unknown layer kind");
}

int Network::class_count() const {
    if (layers.empty()) throw ShapeError("empty network");
    std::vector<int> shape = input_shape;
    for (const auto& l : layers) shape = layer_output_shape(l, shape);
    return shape[0];
}

std::size_t Network::logits_layer() const {
    if (!layers.empty() && layers.back().kind == LayerKind::softmax) return layers.size() - 1;
    return layers.size();
}

Network make_network(std::vector<int> input_shape, std::vector<LayerSpec> layers, std::uint64_t seed) {
    Network net;
    net.input_shape = std::move(input_shape);
    net.layers = std::move(layers);
    net.weights.resize(net.layers.size());
    net.biases.resize(net.layers.size());

    std::vector<int> shape = net.input_shape;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& spec = net.layers[i];
        if (spec.kind == LayerKind::softmax && i + 1 != net.layers.size())
            throw ShapeError("softmax may appear only as the final layer");
        shape = layer_output_shape(spec, shape);  // validates compatibility

        if (spec.kind == LayerKind::dense) {
            net.weights[i] = Tensor({spec.out_features, spec.in_features});
            net.biases[i] = Tensor({spec.out_features});
            const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_features));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& w : net.weights[i].data) w = dist(rng);
        } else if (spec.kind == LayerKind::conv2d) {
            net.weights[i] = Tensor({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
            net.biases[i] = Tensor({spec.out_channels});
            const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel * spec.kernel;
            const double bound = 1.0 / std::sqrt(fan_in);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& w : net.weights[i].data) w = dist(rng);
        }
    }
    return net;
}

const Tensor& ForwardTrace::logits(const Network& net) const {
    const std::size_t li = net.logits_layer();
    if (li < inputs.size()) return inputs[li];
    return outputs.back();
}

// ---------------------------------------------------------------------------
// Layer forward kernels
// ---------------------------------------------------------------------------

namespace {

Tensor dense_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x) {
    Tensor out({spec.out_features});
    for (int o = 0; o < spec.out_features; ++o) {
        double acc = b.data[o];
        const double* row = &w.data[static_cast<std::size_t>(o) * spec.in_features];
        for (int i = 0; i < spec.in_features; ++i) acc += row[i] * x.data[i];
        out.data[o] = acc;
    }
    return out;
}

Tensor conv_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x,
                    const std::vector<int>& out_shape) {
    Tensor out(out_shape);
    const int in_c = spec.in_channels, k = spec.kernel, s = spec.stride;
    const int ih = x.shape[1], iw = x.shape[2];
    const int oh = out_shape[1], ow = out_shape[2];
    for (int oc = 0; oc < spec.out_channels; ++oc) {
        for (int oi = 0; oi < oh; ++oi) {
            for (int oj = 0; oj < ow; ++oj) {
                double acc = b.data[oc];
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* plane = &x.data[static_cast<std::size_t>(ic) * ih * iw];
                    const double* ker =
                        &w.data[((static_cast<std::size_t>(oc) * in_c + ic) * k) * k];
                    for (int ki = 0; ki < k; ++ki) {
                        const double* row = plane + static_cast<std::size_t>(oi * s + ki) * iw + oj * s;
                        const double* krow = ker + static_cast<std::size_t>(ki) * k;
                        for (int kj = 0; kj < k; ++kj) acc += krow[kj] * row[kj];
                    }
                }
                out.at3(oc, oi, oj) = acc;
            }
        }
    }
    return out;
}

Tensor maxpool_forward(const LayerSpec& spec, const Tensor& x, const std::vector<int>& out_shape) {
    Tensor out(out_shape);
    const int c = x.shape[0], win = spec.window, s = spec.pool_stride;
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < out_shape[1]; ++oi)
            for (int oj = 0; oj < out_shape[2]; ++oj) {
                double m = -std::numeric_limits<double>::infinity();
                for (int ki = 0; ki < win; ++ki)
                    for (int kj = 0; kj < win; ++kj)
                        m = std::max(m, x.at3(ch, oi * s + ki, oj * s + kj));
                out.at3(ch, oi, oj) = m;
            }
    return out;
}

Tensor softmax_forward(const Tensor& x) {
    Tensor out(x.shape);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x.data) m = std::max(m, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = std::exp(x.data[i] - m);
        denom += out.data[i];
    }
    for (double& v : out.data) v /= denom;
    return out;
}

Tensor layer_forward(const Network& net, std::size_t li, const Tensor& x) {
    const LayerSpec& spec = net.layers[li];
    switch (spec.kind) {
        case LayerKind::dense:
            return dense_forward(spec, net.weights[li], net.biases[li], x);
        case LayerKind::conv2d:
            return conv_forward(spec, net.weights[li], net.biases[li], x,
                                layer_output_shape(spec, x.shape));
        case LayerKind::relu: {
            Tensor out(x.shape);
            for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::max(0.0, x.data[i]);
            return out;
        }
        case LayerKind::maxpool:
            return maxpool_forward(spec, x, layer_output_shape(spec, x.shape));
        case LayerKind::flatten: {
            Tensor out = x;
            out.shape = {static_cast<int>(x.numel())};
            return out;
        }
        case LayerKind::softmax:
            return softmax_forward(x);
    }
    throw ShapeError("unknown layer kind");
}

}  // namespace

std::pair<Tensor, ForwardTrace> forward(const Network& net, const Tensor& x) {
    if (x.shape != net.input_shape) throw ShapeError("forward: input shape mismatch");
    ForwardTrace trace;
    trace.inputs.reserve(net.layers.size());
    trace.outputs.reserve(net.layers.size());
    Tensor cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        trace.inputs.push_back(cur);
        cur = layer_forward(net, i, cur);
        trace.outputs.push_back(cur);
    }
    return {cur, std::move(trace)};
}

Tensor forward_probs(const Network& net, const Tensor& x) {
    if (x.shape != net.input_shape) throw ShapeError("forward: input shape mismatch");
    Tensor cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) cur = layer_forward(net, i, cur);
    return cur;
}

int argmax(const Tensor& probs) {
    int best = 0;
    for (std::size_t i = 1; i < probs.data.size(); ++i)
        if (probs.data[i] > probs.data[best]) best = static_cast<int>(i);
    return best;
}

int predict_class(const Network& net, const Tensor& x) { return argmax(forward_probs(net, x)); }

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

struct LayerGrads {
    Tensor input_grad;
    Tensor weight_grad;  // empty unless requested and parameterized
    Tensor bias_grad;
};

LayerGrads dense_backward(const LayerSpec& spec, const Tensor& w, const Tensor& x,
                          const Tensor& out_grad, bool want_params) {
    LayerGrads g;
    g.input_grad = Tensor(x.shape);
    for (int o = 0; o < spec.out_features; ++o) {
        const double go = out_grad.data[o];
        if (go == 0.0) continue;
        const double* row = &w.data[static_cast<std::size_t>(o) * spec.in_features];
        for (int i = 0; i < spec.in_features; ++i) g.input_grad.data[i] += go * row[i];
    }
    if (want_params) {
        g.weight_grad = Tensor(w.shape);
        g.bias_grad = Tensor({spec.out_features});
        for (int o = 0; o < spec.out_features; ++o) {
            const double go = out_grad.data[o];
            g.bias_grad.data[o] = go;
            if (go == 0.0) continue;
            double* wrow = &g.weight_grad.data[static_cast<std::size_t>(o) * spec.in_features];
            for (int i = 0; i < spec.in_features; ++i) wrow[i] = go * x.data[i];
        }
    }
    return g;
}

LayerGrads conv_backward(const LayerSpec& spec, const Tensor& w, const Tensor& x,
                         const Tensor& out_grad, bool want_params) {
    LayerGrads g;
    g.input_grad = Tensor(x.shape);
    if (want_params) {
        g.weight_grad = Tensor(w.shape);
        g.bias_grad = Tensor({spec.out_channels});
    }
    const int in_c = spec.in_channels, k = spec.kernel, s = spec.stride;
    const int oh = out_grad.shape[1], ow = out_grad.shape[2];
    for (int oc = 0; oc < spec.out_channels; ++oc) {
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                const double go = out_grad.at3(oc, oi, oj);
                if (go == 0.0) continue;
                if (want_params) g.bias_grad.data[oc] += go;
                for (int ic = 0; ic < in_c; ++ic)
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * in_c + ic) * k + ki) * k + kj;
                            g.input_grad.at3(ic, oi * s + ki, oj * s + kj) += go * w.data[wi];
                            if (want_params)
                                g.weight_grad.data[wi] += go * x.at3(ic, oi * s + ki, oj * s + kj);
                        }
            }
    }
    return g;
}

Tensor maxpool_backward(const LayerSpec& spec, const Tensor& x, const Tensor& out_grad) {
    Tensor in_grad(x.shape);
    const int c = x.shape[0], win = spec.window, s = spec.pool_stride;
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < out_grad.shape[1]; ++oi)
            for (int oj = 0; oj < out_grad.shape[2]; ++oj) {
                // route to the first-scanned maximum; same winner as LRP routing
                int bi = oi * s, bj = oj * s;
                double m = x.at3(ch, bi, bj);
                for (int ki = 0; ki < win; ++ki)
                    for (int kj = 0; kj < win; ++kj) {
                        const double v = x.at3(ch, oi * s + ki, oj * s + kj);
                        if (v > m) {
                            m = v;
                            bi = oi * s + ki;
                            bj = oj * s + kj;
                        }
                    }
                in_grad.at3(ch, bi, bj) += out_grad.at3(ch, oi, oj);
            }
    return in_grad;
}

}  // namespace

BackwardResult backward_from_logits(const Network& net, const ForwardTrace& trace,
                                    const Tensor& logit_grad, const BackwardOptions& opts) {
    if (trace.inputs.size() != net.layers.size())
        throw ShapeError("backward: trace does not cover every layer");
    BackwardResult result;
    if (opts.want_param_grads) {
        result.weight_grads.resize(net.layers.size());
        result.bias_grads.resize(net.layers.size());
    }
    const std::size_t logits_li = net.logits_layer();
    if (opts.record_layer_grads) result.layer_input_grads.resize(logits_li);

    Tensor grad = logit_grad;
    for (std::size_t li = logits_li; li-- > 0;) {
        const LayerSpec& spec = net.layers[li];
        const Tensor& x = trace.inputs[li];
        switch (spec.kind) {
            case LayerKind::dense: {
                LayerGrads g = dense_backward(spec, net.weights[li], x, grad, opts.want_param_grads);
                if (opts.want_param_grads) {
                    result.weight_grads[li] = std::move(g.weight_grad);
                    result.bias_grads[li] = std::move(g.bias_grad);
                }
                grad = std::move(g.input_grad);
                break;
            }
            case LayerKind::conv2d: {
                LayerGrads g = conv_backward(spec, net.weights[li], x, grad, opts.want_param_grads);
                if (opts.want_param_grads) {
                    result.weight_grads[li] = std::move(g.weight_grad);
                    result.bias_grads[li] = std::move(g.bias_grad);
                }
                grad = std::move(g.input_grad);
                break;
            }
            case LayerKind::relu: {
                Tensor in_grad(x.shape);
                if (opts.relu_rule == ReluBackwardRule::standard) {
                    for (std::size_t i = 0; i < x.data.size(); ++i)
                        in_grad.data[i] = x.data[i] > 0.0 ? grad.data[i] : 0.0;
                } else {
                    // forward-positivity gate AND incoming-gradient-positivity gate
                    for (std::size_t i = 0; i < x.data.size(); ++i)
                        in_grad.data[i] =
                            (x.data[i] > 0.0 && grad.data[i] > 0.0) ? grad.data[i] : 0.0;
                }
                grad = std::move(in_grad);
                break;
            }
            case LayerKind::maxpool:
                grad = maxpool_backward(spec, x, grad);
                break;
            case LayerKind::flatten: {
                Tensor in_grad = grad;
                in_grad.shape = x.shape;
                grad = std::move(in_grad);
                break;
            }
            case LayerKind::softmax:
                throw ShapeError("softmax encountered below the logits layer");
        }
        if (opts.record_layer_grads) result.layer_input_grads[li] = grad;
    }
    result.input_grad = std::move(grad);
    return result;
}

Tensor backward_input(const Network& net, const ForwardTrace& trace, int class_index) {
    const int L = net.class_count();
    if (class_index < 0 || class_index >= L)
        throw std::out_of_range("backward_input: class index out of range");
    Tensor seed({L});
    seed.data[class_index] = 1.0;
    return backward_from_logits(net, trace, seed).input_grad;
}

double cross_entropy(const Tensor& probs, int label) {
    return -std::log(std::max(probs.data[label], 1e-300));
}

Tensor backward_loss(const Network& net, const ForwardTrace& trace, int label) {
    const int L = net.class_count();
    if (label < 0 || label >= L) throw std::out_of_range("backward_loss: label out of range");
    if (net.logits_layer() == net.layers.size())
        throw ShapeError("backward_loss: network has no softmax head");
    const Tensor& probs = trace.outputs.back();
    Tensor seed({L});
    for (int i = 0; i < L; ++i) seed.data[i] = probs.data[i] - (i == label ? 1.0 : 0.0);
    return backward_from_logits(net, trace, seed).input_grad;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainReport train(Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels,
                  const TrainConfig& cfg) {
    if (images.empty()) throw std::invalid_argument("train: empty dataset");
    if (images.size() != labels.size()) throw std::invalid_argument("train: image/label count mismatch");
    if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train: learning rate must be positive");
    if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch size must be positive");
    const int L = net.class_count();
    for (int y : labels)
        if (y < 0 || y >= L) throw std::invalid_argument("train: label out of range");

    TrainReport report;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch_end = std::min(order.size(), pos + cfg.batch_size);
            std::vector<Tensor> wsum, bsum;
            wsum.reserve(net.layers.size());
            bsum.reserve(net.layers.size());
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                wsum.push_back(net.weights[li].data.empty() ? Tensor() : Tensor(net.weights[li].shape));
                bsum.push_back(net.biases[li].data.empty() ? Tensor() : Tensor(net.biases[li].shape));
            }
            for (std::size_t bi = pos; bi < batch_end; ++bi) {
                const std::size_t idx = order[bi];
                auto [probs, trace] = forward(net, images[idx]);
                epoch_loss += cross_entropy(probs, labels[idx]);
                Tensor seed({L});
                for (int i = 0; i < L; ++i)
                    seed.data[i] = probs.data[i] - (i == labels[idx] ? 1.0 : 0.0);
                BackwardOptions opts;
                opts.want_param_grads = true;
                BackwardResult grads = backward_from_logits(net, trace, seed, opts);
                for (std::size_t li = 0; li < net.layers.size(); ++li) {
                    if (!wsum[li].data.empty()) wsum[li] += grads.weight_grads[li];
                    if (!bsum[li].data.empty()) bsum[li] += grads.bias_grads[li];
                }
            }
            const double scale = cfg.learning_rate / static_cast<double>(batch_end - pos);
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                if (!wsum[li].data.empty())
                    for (std::size_t i = 0; i < wsum[li].data.size(); ++i)
                        net.weights[li].data[i] -= scale * wsum[li].data[i];
                if (!bsum[li].data.empty())
                    for (std::size_t i = 0; i < bsum[li].data.size(); ++i)
                        net.biases[li].data[i] -= scale * bsum[li].data[i];
            }
            pos = batch_end;
        }
        epoch_loss /= static_cast<double>(images.size());
        if (!std::isfinite(epoch_loss)) throw TrainingDivergedError(epoch);
        report.epoch_losses.push_back(epoch_loss);
    }
    report.final_train_accuracy = accuracy(net, images, labels);
    return report;
}

TrainReport fine_tune(Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels,
                      const TrainConfig& cfg) {
    return train(net, images, labels, cfg);
}

double accuracy(const Network& net, const std::vector<Tensor>& images, const std::vector<int>& labels) {
    if (images.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
        hits += predict_class(net, images[i]) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(images.size());
}

// ---------------------------------------------------------------------------
// Serialization (format: docs/formats.md)
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kModelMagic = 0x41444E4Du;  // "ADNM"
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ModelFormatError("model file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw ModelFormatError("model file truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f64(out, v);
}

Tensor get_tensor(std::istream& in) {
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) throw ModelFormatError("implausible tensor rank");
    if (rank == 0) return Tensor();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(in));
    Tensor t(shape);
    for (double& v : t.data) v = get_f64(in);
    return t;
}

}  // namespace

void write_model(const Network& net, std::ostream& out) {
    put_u32(out, kModelMagic);
    put_u32(out, kModelVersion);
    put_u32(out, static_cast<std::uint32_t>(net.input_shape.size()));
    for (int d : net.input_shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const LayerSpec& s : net.layers) {
        put_u32(out, static_cast<std::uint32_t>(s.kind));
        put_u32(out, static_cast<std::uint32_t>(s.in_features));
        put_u32(out, static_cast<std::uint32_t>(s.out_features));
        put_u32(out, static_cast<std::uint32_t>(s.in_channels));
        put_u32(out, static_cast<std::uint32_t>(s.out_channels));
        put_u32(out, static_cast<std::uint32_t>(s.kernel));
        put_u32(out, static_cast<std::uint32_t>(s.stride));
        put_u32(out, static_cast<std::uint32_t>(s.window));
        put_u32(out, static_cast<std::uint32_t>(s.pool_stride));
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        put_tensor(out, net.weights[i]);
        put_tensor(out, net.biases[i]);
    }
}

Network read_model(std::istream& in) {
    if (get_u32(in) != kModelMagic) throw ModelFormatError("bad model magic");
    const std::uint32_t version = get_u32(in);
    if (version != kModelVersion)
        throw ModelVersionError("unsupported model version " + std::to_string(version));
    Network net;
    const std::uint32_t rank = get_u32(in);
    if (rank == 0 || rank > 8) throw ModelFormatError("implausible input rank");
    net.input_shape.resize(rank);
    for (auto& d : net.input_shape) d = static_cast<int>(get_u32(in));
    const std::uint32_t n_layers = get_u32(in);
    if (n_layers == 0 || n_layers > 4096) throw ModelFormatError("implausible layer count");
    net.layers.resize(n_layers);
    for (LayerSpec& s : net.layers) {
        const std::uint32_t kind = get_u32(in);
        if (kind > static_cast<std::uint32_t>(LayerKind::softmax))
            throw ModelFormatError("unknown layer kind in model file");
        s.kind = static_cast<LayerKind>(kind);
        s.in_features = static_cast<int>(get_u32(in));
        s.out_features = static_cast<int>(get_u32(in));
        s.in_channels = static_cast<int>(get_u32(in));
        s.out_channels = static_cast<int>(get_u32(in));
        s.kernel = static_cast<int>(get_u32(in));
        s.stride = static_cast<int>(get_u32(in));
        s.window = static_cast<int>(get_u32(in));
        s.pool_stride = static_cast<int>(get_u32(in));
    }
    net.weights.resize(n_layers);
    net.biases.resize(n_layers);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        net.weights[i] = get_tensor(in);
        net.biases[i] = get_tensor(in);
    }
    // validate the chain before handing the model out
    std::vector<int> shape = net.input_shape;
    for (const auto& l : net.layers) shape = layer_output_shape(l, shape);
    return net;
}

void save_model(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelFormatError("cannot open " + path + " for writing");
    write_model(net, out);
}

Network load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelFormatError("cannot open " + path);
    return read_model(in);
}

}  // namespace advdef::nn
