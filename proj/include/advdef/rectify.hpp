#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "advdef/detect.hpp"
#include "advdef/interpret.hpp"
#include "advdef/nn.hpp"

namespace advdef::rectify {

struct RectifyConfig {
    double threshold_ratio = 0.6;  // suspect-pixel ratio control, in (0,1)
    double erase_prob = 0.5;       // Bernoulli p
    int duplicates = 4;            // randomized copies per example for fine-tuning
    std::uint64_t seed = 0;
};

struct SuspectMask {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> mask;

    bool at(int i, int j) const { return mask[static_cast<std::size_t>(i) * cols + j] != 0; }
    int count() const;
};

/// Marks pixel (i,j) iff map(i,j) > ratio * (max - min) + min (strict).
/// A constant map yields the empty mask. Rejects NaN input.
SuspectMask suspect_mask(const Tensor& map, double threshold_ratio);

/// Bernoulli(p)-gated Gaussian erasure of the masked pixels. Noise sigma is
/// the standard deviation over all pixels of the input; non-masked pixels are
/// returned bit-exactly; the result is clipped back to [0,1].
Tensor random_erase(const Tensor& image, const SuspectMask& mask, double p, std::mt19937_64& rng);

struct InterpreterChoice {
    detect::SubKind kind = detect::SubKind::VG;
    double entropy = 0.0;
};

/// Shannon entropy (base 2) of a tri-class prediction; 0 log 0 = 0.
double prediction_entropy(const std::array<double, 3>& z);

/// Picks the interpreter-kind sub-detector (ORG excluded) with the lowest
/// prediction entropy among those that agree the input is adversarial; ties
/// resolve in the fixed order VG < IG < GBP < LRP. Falls back to the global
/// entropy minimum when no interpreter sub-detector agrees.
InterpreterChoice select_interpreter(const std::array<std::array<double, 3>, 5>& sub_outputs);

/// Full rectification of a detected-adversarial input: interpreter selection,
/// suspect masking on the selected map at the predicted class, randomized
/// erasure.
Tensor rectify(const nn::Network& net, const detect::Detection& detection, const Tensor& x,
               const RectifyConfig& cfg, std::mt19937_64& rng);

struct FineTuneReport {
    int clean_count = 0;
    int rectified_count = 0;
    nn::TrainReport train;
};

/// Fine-tunes the classifier on randomized rectified duplicates of the given
/// adversarial examples (labeled with their original true labels) mixed with
/// clean images.
FineTuneReport finetune_on_rectified(nn::Network& net,
                                     const std::vector<detect::Detection>& detections,
                                     const std::vector<Tensor>& adversarial_images,
                                     const std::vector<int>& true_labels,
                                     const std::vector<Tensor>& clean_images,
                                     const std::vector<int>& clean_labels,
                                     const RectifyConfig& rcfg, const nn::TrainConfig& tcfg);

/// Zeroes exactly ceil(fraction * rows * cols) pixels with the largest
/// absolute vanilla-gradient score at the predicted class (ties by scan
/// order).
Tensor erase_top_fraction(const nn::Network& net, const Tensor& x, double fraction);

}  // namespace advdef::rectify
