#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "advdef/nn.hpp"
#include "advdef/tensor.hpp"

namespace advdef::data {

struct BadMagicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TruncatedFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CountMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Split { train, detector_train, rf_train, test };

struct Dataset {
    std::string name;
    int class_count = 0;
    std::vector<Tensor> images;          // {C,H,W}, pixels in [0,1]
    std::vector<nn::OneHotLabel> labels;
    std::vector<Split> splits;           // one tag per image; tags partition the set

    std::size_t size() const { return images.size(); }
    int label_index(std::size_t i) const { return labels[i].index(); }

    std::vector<std::size_t> indices_of(Split s) const;
    /// Images/labels restricted to one split.
    std::pair<std::vector<Tensor>, std::vector<int>> split_view(Split s) const;
};

/// IDX (big-endian) loader; image magic 0x00000803, label magic 0x00000801.
/// Raw bytes are scaled by 1/255. The two files are cross-checked.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

enum class SynthKind { blobs, stripes, templates };

struct SynthSpec {
    SynthKind kind = SynthKind::templates;
    int n = 1000;
    int rows = 28, cols = 28, channels = 1;
    int classes = 8;
    double noise = 0.12;      // additive pixel noise sigma
    int max_shift = 2;        // templates: random translation in pixels
    std::uint64_t seed = 7;
};

/// Deterministic synthetic dataset with class-conditional structure
/// separable by construction.
Dataset synth_dataset(const SynthSpec& spec);

/// Deterministically partitions a dataset into the four split tags with the
/// given fractions (test gets the remainder).
void assign_splits(Dataset& ds, double train_frac, double detector_frac, double rf_frac,
                   std::uint64_t seed);

}  // namespace advdef::data
