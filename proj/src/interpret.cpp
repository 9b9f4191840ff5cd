#include "advdef/interpret.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace advdef::interpret {

std::string method_name(Method m) {
    switch (m) {
        case Method::VG: return "VG";
        case Method::IG: return "IG";
        case Method::GBP: return "GBP";
        case Method::LRP: return "LRP";
    }
    return "?";
}

namespace {

void check_input(const nn::Network& net, const Tensor& x) {
    if (x.shape != net.input_shape) throw nn::ShapeError("interpreter: input shape mismatch");
    if (!x.all_finite()) throw std::invalid_argument("interpreter: non-finite input");
}

}  // namespace

// ---------------------------------------------------------------------------
// Vanilla gradient
// ---------------------------------------------------------------------------

Tensor vanilla_gradient_at(const nn::Network& net, const nn::ForwardTrace& trace, int l) {
    return nn::backward_input(net, trace, l);
}

SensitivityTensor vanilla_gradient(const nn::Network& net, const Tensor& x) {
    check_input(net, x);
    auto [probs, trace] = nn::forward(net, x);
    SensitivityTensor t;
    t.method = Method::VG;
    const int L = net.class_count();
    t.per_class.reserve(L);
    for (int l = 0; l < L; ++l) t.per_class.push_back(nn::backward_input(net, trace, l));
    return t;
}

// ---------------------------------------------------------------------------
// Integrated gradient (midpoint Riemann sum over the straight-line path)
// ---------------------------------------------------------------------------

namespace {

Tensor ig_baseline(const nn::Network& net, const IGConfig& cfg) {
    if (cfg.baseline.data.empty()) return Tensor(net.input_shape);
    if (cfg.baseline.shape != net.input_shape)
        throw nn::ShapeError("integrated gradient: baseline shape mismatch");
    return cfg.baseline;
}

}  // namespace

Tensor integrated_gradient_at(const nn::Network& net, const Tensor& x, int l, const IGConfig& cfg) {
    check_input(net, x);
    if (cfg.steps < 1) throw std::invalid_argument("integrated gradient: steps must be >= 1");
    const Tensor baseline = ig_baseline(net, cfg);
    Tensor acc(net.input_shape);
    Tensor point(net.input_shape);
    for (int s = 0; s < cfg.steps; ++s) {
        const double alpha = (s + 0.5) / cfg.steps;
        for (std::size_t i = 0; i < point.data.size(); ++i)
            point.data[i] = baseline.data[i] + alpha * (x.data[i] - baseline.data[i]);
        auto [probs, trace] = nn::forward(net, point);
        acc += nn::backward_input(net, trace, l);
    }
    for (std::size_t i = 0; i < acc.data.size(); ++i)
        acc.data[i] *= (x.data[i] - baseline.data[i]) / cfg.steps;
    return acc;
}

SensitivityTensor integrated_gradient(const nn::Network& net, const Tensor& x, const IGConfig& cfg) {
    check_input(net, x);
    if (cfg.steps < 1) throw std::invalid_argument("integrated gradient: steps must be >= 1");
    const Tensor baseline = ig_baseline(net, cfg);
    const int L = net.class_count();
    SensitivityTensor t;
    t.method = Method::IG;
    t.per_class.assign(L, Tensor(net.input_shape));
    Tensor point(net.input_shape);
    for (int s = 0; s < cfg.steps; ++s) {
        const double alpha = (s + 0.5) / cfg.steps;
        for (std::size_t i = 0; i < point.data.size(); ++i)
            point.data[i] = baseline.data[i] + alpha * (x.data[i] - baseline.data[i]);
        auto [probs, trace] = nn::forward(net, point);
        for (int l = 0; l < L; ++l) t.per_class[l] += nn::backward_input(net, trace, l);
    }
    for (int l = 0; l < L; ++l)
        for (std::size_t i = 0; i < t.per_class[l].data.size(); ++i)
            t.per_class[l].data[i] *= (x.data[i] - baseline.data[i]) / cfg.steps;
    return t;
}

// ---------------------------------------------------------------------------
// Guided backpropagation
// ---------------------------------------------------------------------------

Tensor guided_backprop_at(const nn::Network& net, const nn::ForwardTrace& trace, int l) {
    const int L = net.class_count();
    if (l < 0 || l >= L) throw std::out_of_range("guided backprop: class index out of range");
    Tensor seed({L});
    seed.data[l] = 1.0;
    nn::BackwardOptions opts;
    opts.relu_rule = nn::ReluBackwardRule::guided;
    return nn::backward_from_logits(net, trace, seed, opts).input_grad;
}

SensitivityTensor guided_backprop(const nn::Network& net, const Tensor& x) {
    check_input(net, x);
    auto [probs, trace] = nn::forward(net, x);
    SensitivityTensor t;
    t.method = Method::GBP;
    const int L = net.class_count();
    t.per_class.reserve(L);
    for (int l = 0; l < L; ++l) t.per_class.push_back(guided_backprop_at(net, trace, l));
    return t;
}

// ---------------------------------------------------------------------------
// Layer-wise relevance propagation
// ---------------------------------------------------------------------------

namespace {

constexpr double kLrpEpsilon = 1e-9;

double stabilized(double denom) {
    // sign(0) treated as +1
    return denom + (denom < 0.0 ? -kLrpEpsilon : kLrpEpsilon);
}

Tensor lrp_dense(const nn::LayerSpec& spec, const Tensor& w, const Tensor& a, const Tensor& rel_out) {
    Tensor rel_in(a.shape);
    for (int q = 0; q < spec.out_features; ++q) {
        const double rq = rel_out.data[q];
        if (rq == 0.0) continue;
        const double* row = &w.data[static_cast<std::size_t>(q) * spec.in_features];
        double denom = 0.0;
        for (int p = 0; p < spec.in_features; ++p) denom += a.data[p] * row[p];
        const double scale = rq / stabilized(denom);
        for (int p = 0; p < spec.in_features; ++p) rel_in.data[p] += a.data[p] * row[p] * scale;
    }
    return rel_in;
}

Tensor lrp_conv(const nn::LayerSpec& spec, const Tensor& w, const Tensor& a, const Tensor& rel_out) {
    Tensor rel_in(a.shape);
    const int in_c = spec.in_channels, k = spec.kernel, s = spec.stride;
    for (int oc = 0; oc < spec.out_channels; ++oc)
        for (int oi = 0; oi < rel_out.shape[1]; ++oi)
            for (int oj = 0; oj < rel_out.shape[2]; ++oj) {
                const double rq = rel_out.at3(oc, oi, oj);
                if (rq == 0.0) continue;
                double denom = 0.0;
                for (int ic = 0; ic < in_c; ++ic)
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * in_c + ic) * k + ki) * k + kj;
                            denom += a.at3(ic, oi * s + ki, oj * s + kj) * w.data[wi];
                        }
                const double scale = rq / stabilized(denom);
                for (int ic = 0; ic < in_c; ++ic)
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * in_c + ic) * k + ki) * k + kj;
                            rel_in.at3(ic, oi * s + ki, oj * s + kj) +=
                                a.at3(ic, oi * s + ki, oj * s + kj) * w.data[wi] * scale;
                        }
            }
    return rel_in;
}

// Winner-takes-all routing; the winner is the first-scanned maximum, matching
// the engine's maxpool backward.
Tensor lrp_maxpool(const nn::LayerSpec& spec, const Tensor& a, const Tensor& rel_out) {
    Tensor rel_in(a.shape);
    const int c = a.shape[0], win = spec.window, s = spec.pool_stride;
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < rel_out.shape[1]; ++oi)
            for (int oj = 0; oj < rel_out.shape[2]; ++oj) {
                int bi = oi * s, bj = oj * s;
                double m = a.at3(ch, bi, bj);
                for (int ki = 0; ki < win; ++ki)
                    for (int kj = 0; kj < win; ++kj) {
                        const double v = a.at3(ch, oi * s + ki, oj * s + kj);
                        if (v > m) {
                            m = v;
                            bi = oi * s + ki;
                            bj = oj * s + kj;
                        }
                    }
                rel_in.at3(ch, bi, bj) += rel_out.at3(ch, oi, oj);
            }
    return rel_in;
}

}  // namespace

Tensor lrp_at(const nn::Network& net, const nn::ForwardTrace& trace, int l) {
    const int L = net.class_count();
    if (l < 0 || l >= L) throw std::out_of_range("lrp: class index out of range");
    const std::size_t logits_li = net.logits_layer();
    // relevance at the output initialized as one-hot on logit l, value F_l(x)
    Tensor rel({L});
    rel.data[l] = trace.logits(net).data[l];
    for (std::size_t li = logits_li; li-- > 0;) {
        const nn::LayerSpec& spec = net.layers[li];
        const Tensor& a = trace.inputs[li];
        switch (spec.kind) {
            case nn::LayerKind::dense:
                rel = lrp_dense(spec, net.weights[li], a, rel);
                break;
            case nn::LayerKind::conv2d:
                rel = lrp_conv(spec, net.weights[li], a, rel);
                break;
            case nn::LayerKind::relu:
                break;  // pass-through along active paths
            case nn::LayerKind::maxpool:
                rel = lrp_maxpool(spec, a, rel);
                break;
            case nn::LayerKind::flatten: {
                Tensor r = rel;
                r.shape = a.shape;
                rel = std::move(r);
                break;
            }
            default:
                throw UnsupportedArchitectureError("lrp: no relevance rule for layer kind " +
                                                   nn::layer_kind_name(spec.kind));
        }
    }
    return rel;
}

SensitivityTensor lrp(const nn::Network& net, const Tensor& x) {
    check_input(net, x);
    auto [probs, trace] = nn::forward(net, x);
    SensitivityTensor t;
    t.method = Method::LRP;
    const int L = net.class_count();
    t.per_class.reserve(L);
    for (int l = 0; l < L; ++l) t.per_class.push_back(lrp_at(net, trace, l));
    return t;
}

Tensor interpret_at(Method m, const nn::Network& net, const nn::ForwardTrace& trace, const Tensor& x,
                    int l, const IGConfig& ig) {
    switch (m) {
        case Method::VG: return vanilla_gradient_at(net, trace, l);
        case Method::IG: return integrated_gradient_at(net, x, l, ig);
        case Method::GBP: return guided_backprop_at(net, trace, l);
        case Method::LRP: return lrp_at(net, trace, l);
    }
    throw std::invalid_argument("unknown interpreter method");
}

Tensor spatial_map(const Tensor& slice) {
    if (slice.shape.size() == 2) return slice;
    if (slice.shape.size() != 3) throw nn::ShapeError("spatial_map: expected {C,H,W}");
    Tensor out({slice.shape[1], slice.shape[2]});
    for (int c = 0; c < slice.shape[0]; ++c)
        for (int i = 0; i < slice.shape[1]; ++i)
            for (int j = 0; j < slice.shape[2]; ++j) out.at2(i, j) += slice.at3(c, i, j);
    return out;
}

PredictionSlice slice_for_prediction(const SensitivityTensor& tensor, const nn::Network& net,
                                     const Tensor& x) {
    const int l = nn::predict_class(net, x);
    return {l, spatial_map(tensor.slice(l))};
}

void export_map(const std::string& path, Method method, int class_index, const Tensor& map) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "advdef-map v1\n";
    out << "method " << method_name(method) << "\n";
    out << "class " << class_index << "\n";
    out << "shape";
    for (int d : map.shape) out << ' ' << d;
    out << "\n";
    out.precision(17);
    for (double v : map.data) out << v << "\n";
}

}  // namespace advdef::interpret
