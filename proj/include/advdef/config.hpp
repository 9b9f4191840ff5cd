#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advdef/attack.hpp"
#include "advdef/data.hpp"
#include "advdef/detect.hpp"
#include "advdef/nn.hpp"
#include "advdef/pipeline.hpp"
#include "advdef/rectify.hpp"

namespace advdef::config {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ArchPreset { desk_small, desk_alt, desk_tiny };
ArchPreset arch_preset_from_name(const std::string& name);
nn::Network make_classifier(ArchPreset preset, const std::vector<int>& input_shape, int classes,
                            std::uint64_t seed);

struct DatasetConfig {
    std::string kind = "synth-templates";  // synth-* or "idx"
    std::string images_path, labels_path;  // idx only
    data::SynthSpec synth;
    double train_frac = 0.5, detector_frac = 0.2, rf_frac = 0.1;
    std::uint64_t split_seed = 3;
};

struct RunConfig {
    DatasetConfig dataset;
    std::string architecture = "desk_small";
    nn::TrainConfig train;
    std::vector<pipeline::NamedAttack> linf_attacks;
    std::vector<pipeline::NamedAttack> l2_attacks;
    bool vaccinated = true;
    detect::ForestConfig forest;
    nn::TrainConfig sub_detector_train;
    rectify::RectifyConfig rectify;
    nn::TrainConfig finetune;
    std::string threat_model = "grey_box";
    std::string surrogate_architecture = "desk_alt";
    std::uint64_t surrogate_seed = 1234;
    double ig_steps = 50;
    double erasure_fraction = 0.05;
    std::uint64_t seed = 99;
    std::string output_dir = "out";
};

/// Parses and validates a JSON run configuration. Unknown keys are rejected
/// with their full path.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

/// FNV-1a hash of the canonical (sorted-key) serialization; embedded in every
/// output artifact.
std::string config_hash(const RunConfig& cfg);

std::string canonical_json(const RunConfig& cfg);

data::Dataset load_dataset(const DatasetConfig& cfg);

}  // namespace advdef::config
