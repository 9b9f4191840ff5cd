#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "advdef/nn.hpp"
#include "advdef/tensor.hpp"

namespace advdef::interpret {

struct UnsupportedArchitectureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Method { VG, IG, GBP, LRP };

std::string method_name(Method m);

/// Per-pixel, per-class attribution scores. One slice per class, each shaped
/// like the network input ({C,H,W} for images).
struct SensitivityTensor {
    Method method;
    std::vector<Tensor> per_class;

    int class_count() const { return static_cast<int>(per_class.size()); }
    const Tensor& slice(int l) const {
        if (l < 0 || l >= class_count()) throw std::out_of_range("sensitivity slice out of range");
        return per_class[l];
    }
};

struct IGConfig {
    Tensor baseline;  // empty -> all-zero blank image of the input shape
    int steps = 50;
};

// Full tensors (all classes).
SensitivityTensor vanilla_gradient(const nn::Network& net, const Tensor& x);
SensitivityTensor integrated_gradient(const nn::Network& net, const Tensor& x, const IGConfig& cfg = {});
SensitivityTensor guided_backprop(const nn::Network& net, const Tensor& x);
SensitivityTensor lrp(const nn::Network& net, const Tensor& x);

// Single-class slices; same values as slice(l) of the full tensors, without
// paying for the other classes. These carry the pipeline's per-image cost.
Tensor vanilla_gradient_at(const nn::Network& net, const nn::ForwardTrace& trace, int l);
Tensor integrated_gradient_at(const nn::Network& net, const Tensor& x, int l, const IGConfig& cfg = {});
Tensor guided_backprop_at(const nn::Network& net, const nn::ForwardTrace& trace, int l);
Tensor lrp_at(const nn::Network& net, const nn::ForwardTrace& trace, int l);

Tensor interpret_at(Method m, const nn::Network& net, const nn::ForwardTrace& trace, const Tensor& x,
                    int l, const IGConfig& ig);

/// Collapses the channel axis by summation: {C,H,W} -> {H,W}.
Tensor spatial_map(const Tensor& slice);

struct PredictionSlice {
    int predicted_class;
    Tensor map;  // {H,W}
};

/// Slice at l = argmax F(x) (ties toward the lowest index), channel-summed.
PredictionSlice slice_for_prediction(const SensitivityTensor& tensor, const nn::Network& net,
                                     const Tensor& x);

/// Debug export: small text header followed by flat values, one per line.
/// Format documented in docs/formats.md.
void export_map(const std::string& path, Method method, int class_index, const Tensor& map);

}  // namespace advdef::interpret
