#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "advdef/detect.hpp"
#include "advdef/nn.hpp"
#include "advdef/pipeline.hpp"

namespace advdef::serialize {

struct ArtifactFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArtifactVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Raised when an artifact's embedded config hash does not match the run's.
struct ConfigHashMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_forest(const detect::Forest& forest, const std::string& path,
                 const std::string& config_hash);
detect::Forest load_forest(const std::string& path, const std::string& expected_hash);

void save_sub_detector(const detect::SubDetector& sub, const std::string& path,
                       const std::string& config_hash);
detect::SubDetector load_sub_detector(const std::string& path, const std::string& expected_hash);

/// One persisted adversarial set: the attack tag plus per-example records.
struct AdversarialSet {
    std::string attack_tag;
    std::vector<std::uint32_t> source_indices;
    std::vector<int> true_labels;
    std::vector<attack::AdversarialResult> results;
};

void save_adversarial_set(const AdversarialSet& set, const std::string& path,
                          const std::string& config_hash);
AdversarialSet load_adversarial_set(const std::string& path, const std::string& expected_hash);

/// Whole defended model (classifier, fine-tuned classifier, five
/// sub-detectors, forest, rectifier parameters).
void save_defended_model(const pipeline::DefendedModel& model, const std::string& path,
                         const std::string& config_hash);
pipeline::DefendedModel load_defended_model(const std::string& path,
                                            const std::string& expected_hash);

}  // namespace advdef::serialize
