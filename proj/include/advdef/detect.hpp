#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advdef/attack.hpp"
#include "advdef/interpret.hpp"
#include "advdef/nn.hpp"

namespace advdef::detect {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DegenerateForestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Labels and samples
// ---------------------------------------------------------------------------

/// Tri-class ground truth: (1,0,0)=clean, (0,1,0)=l2-attacked, (0,0,1)=linf-attacked.
enum class TriClass : int { clean = 0, l2_attacked = 1, linf_attacked = 2 };

struct TriLabel {
    std::array<double, 3> v{0, 0, 0};
    static TriLabel of(TriClass c) {
        TriLabel t;
        t.v[static_cast<int>(c)] = 1.0;
        return t;
    }
    TriClass cls() const {
        for (int i = 0; i < 3; ++i)
            if (v[i] == 1.0) return static_cast<TriClass>(i);
        throw std::invalid_argument("not a one-hot tri-label");
    }
};

/// One interpretation-map record: the source image, the four interpreter
/// slices at the target classifier's predicted class, and ground truth.
struct DetectionSample {
    Tensor image;
    std::array<Tensor, 4> maps;  // VG, IG, GBP, LRP slices ({C,H,W})
    TriClass label = TriClass::clean;
    std::string provenance;  // attack method name or "clean"
    int true_label = -1;
};

enum class SubKind : int { ORG = 0, VG = 1, IG = 2, GBP = 3, LRP = 4 };
std::string sub_kind_name(SubKind k);

/// Tri-class CNN over one input channel of a DetectionSample. `input_scale`
/// is a feature-scaling constant fixed at training time and applied at both
/// training and inference.
struct SubDetector {
    SubKind kind = SubKind::ORG;
    nn::Network net;
    double input_scale = 1.0;
};

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

struct DetectionBuildConfig {
    std::vector<attack::AttackConfig> l2_attacks;
    std::vector<attack::AttackConfig> linf_attacks;
    bool vaccinated = true;  // when true, both families must be nonempty
    interpret::IGConfig ig;
    bool balance = true;     // trim classes to the smallest class count
    std::uint64_t seed = 0;
};

struct DetectionBuildReport {
    std::array<int, 3> class_counts{0, 0, 0};
    int attacks_attempted = 0;
    int attacks_failed = 0;  // unsuccessful adversarial candidates, excluded
};

/// Mixes the clean set with successful l2- and linf-attacked counterparts,
/// computing all four interpretation maps at the predicted class of every
/// sample. Only verified-successful adversarial examples are kept.
std::vector<DetectionSample> build_detection_dataset(const nn::Network& net,
                                                     const std::vector<Tensor>& clean_images,
                                                     const std::vector<int>& clean_labels,
                                                     const DetectionBuildConfig& cfg,
                                                     DetectionBuildReport* report = nullptr);

/// Maps + label for a single image (clean path of the pipeline).
DetectionSample make_sample(const nn::Network& net, const Tensor& image, TriClass label,
                            const std::string& provenance, const interpret::IGConfig& ig);

/// One pre-generated adversarial group destined for a norm family.
struct AdversarialGroup {
    std::string tag;
    TriClass label = TriClass::l2_attacked;
    std::vector<Tensor> images;      // verified-successful adversarial examples
    std::vector<int> true_labels;
};

/// Same mixing/balancing as build_detection_dataset, but over already
/// generated (and verified) adversarial examples.
std::vector<DetectionSample> build_samples_from_groups(const nn::Network& net,
                                                       const std::vector<Tensor>& clean_images,
                                                       const std::vector<int>& clean_labels,
                                                       const std::vector<AdversarialGroup>& groups,
                                                       const interpret::IGConfig& ig, bool balance,
                                                       DetectionBuildReport* report = nullptr);

// ---------------------------------------------------------------------------
// Sub-detectors
// ---------------------------------------------------------------------------

std::vector<DetectionSample> without_class(const std::vector<DetectionSample>& samples, TriClass c);

SubDetector train_sub_detector(SubKind kind, const std::vector<DetectionSample>& samples,
                               const nn::TrainConfig& cfg);

std::array<double, 3> sub_detector_scores(const SubDetector& sub, const DetectionSample& sample);
std::array<double, 3> sub_detector_scores_on(const SubDetector& sub, const Tensor& image,
                                             const std::array<Tensor, 4>& maps);

/// Scalar detection score D = (p_l2 + p_linf) - p_clean, in [-1, 1];
/// D > 0 iff adversarial mass dominates.
double detector_scalar_score(const std::array<double, 3>& z);

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

/// Concatenated tri-class outputs of the five sub-detectors, ORG first.
using FeatureVector = std::array<double, 15>;

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 8;
    int feature_subsample = 4;  // features examined per node
    int min_samples_leaf = 1;
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::array<int, 2> class_counts{0, 0};
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    int predict(const FeatureVector& f) const;
};

struct Forest {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    double oob_error = 0.0;
};

Forest rf_train(const std::vector<FeatureVector>& features, const std::vector<int>& labels,
                const ForestConfig& cfg);

/// Best threshold on one feature over the index set, by weighted Gini.
/// feature < 0 on return means the feature admits no nontrivial split.
struct SplitEval {
    int feature = -1;
    double threshold = 0.0;
    double gini = std::numeric_limits<double>::infinity();
};
SplitEval evaluate_best_split(const std::vector<FeatureVector>& features,
                              const std::vector<int>& labels, const std::vector<int>& indices,
                              int feature);

struct ForestVote {
    int z = 0;               // 1 iff vote_fraction > 0.5 (tie -> benign)
    double vote_fraction = 0.0;
};

ForestVote rf_predict(const Forest& forest, const FeatureVector& feature);

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

struct Detection {
    int z = 0;
    double vote_fraction = 0.0;
    std::array<std::array<double, 3>, 5> sub_outputs{};  // ORG, VG, IG, GBP, LRP
    int predicted_class = -1;
    std::array<Tensor, 4> maps;  // interpreter slices, kept for the rectifier
};

FeatureVector to_feature_vector(const std::array<std::array<double, 3>, 5>& sub_outputs);

/// Recomputes all interpretation maps for x at the predicted class, runs the
/// five sub-detectors, and applies the forest.
Detection ensemble_detect(const nn::Network& net, const std::vector<SubDetector>& subs,
                          const Forest& forest, const Tensor& x, const interpret::IGConfig& ig);

}  // namespace advdef::detect
