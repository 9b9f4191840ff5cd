#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advdef/attack.hpp"
#include "advdef/detect.hpp"
#include "advdef/nn.hpp"
#include "advdef/rectify.hpp"

namespace advdef::pipeline {

// ---------------------------------------------------------------------------
// Defended model
// ---------------------------------------------------------------------------

struct DefendedModel {
    nn::Network classifier;  // F
    std::vector<detect::SubDetector> subs;  // ORG, VG, IG, GBP, LRP
    detect::Forest forest;
    rectify::RectifyConfig rectify_cfg;
    nn::Network rectified_classifier;  // fine-tuned copy applied after rectification
    interpret::IGConfig ig;
};

struct AuditRecord {
    int verdict = 0;
    double vote_fraction = 0.0;
    int selected_interpreter = -1;  // SubKind index, -1 on the benign path
    int label = -1;
};

/// Benign verdict returns exactly F(x); adversarial verdict routes through
/// rectification and the fine-tuned classifier. `image_id` seeds the
/// per-image erasure stream.
std::pair<Tensor, AuditRecord> classify_defended(const DefendedModel& model, const Tensor& x,
                                                 std::uint64_t image_id = 0);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string attack;        // "clean" or attacker tag such as "CW-U"
    std::string threat_model;  // grey_box / black_box / white_box / transfer
    int n_total = 0;
    int n_success = 0;
    double attack_success_rate = 0.0;
    double detection_auc = 0.0;        // successful adversarial vs clean scores
    double false_positive_rate = 0.0;  // clean flagged adversarial
    double undefended_accuracy = 0.0;
    double defended_accuracy = 0.0;
};

struct EvalReport {
    std::string threat_model;
    std::string config_hash;
    std::vector<EvalRow> rows;
    std::string to_csv() const;
};

struct NamedAttack {
    std::string tag;  // e.g. "FGSM-U", "CW-T"
    attack::AttackConfig config;
};

// ---------------------------------------------------------------------------
// Threat-model runners
// ---------------------------------------------------------------------------

EvalReport run_grey_box(const DefendedModel& model, const std::vector<Tensor>& images,
                        const std::vector<int>& labels, const std::vector<NamedAttack>& attacks);

/// Adversarial examples are generated against the surrogate; the evaluation
/// set is balanced between transfer successes and failures so the undefended
/// classifier scores 0.50 (one-example granularity).
EvalReport run_black_box(const DefendedModel& model, const nn::Network& surrogate,
                         const std::vector<Tensor>& images, const std::vector<int>& labels,
                         const std::vector<NamedAttack>& attacks);

// ---------------------------------------------------------------------------
// White-box composite target
// ---------------------------------------------------------------------------

/// L+4-channel differentiable attack target: base classifier probabilities
/// plus one channel (D_k + 1) * max_j F(x)_j per differentiable sub-detector
/// (ORG, VG, IG, GBP; LRP excluded).
struct CompositeClassifier {
    const nn::Network* classifier = nullptr;
    std::array<const detect::SubDetector*, 4> detectors{};  // ORG, VG, IG, GBP
    interpret::IGConfig ig;   // IG resolution used inside the attacker's map evaluations
    double fd_step = 1e-3;    // finite-difference step for map-channel gradients
    int base_classes = 0;

    int num_channels() const { return base_classes + 4; }
    std::vector<double> forward_channels(const Tensor& x) const;

    /// Gradient estimate of sum_i weights[i] * G_i(x). Base and ORG channels
    /// are exact reverse-mode; interpreter channels use finite-difference
    /// curvature estimates (the attacker's standin for second-order autodiff).
    Tensor weighted_gradient(const Tensor& x, const std::vector<double>& weights) const;
};

CompositeClassifier build_composite(const DefendedModel& model);

/// Targeted attack on the composite (PGD / CW / DDN style depending on
/// cfg.method); success means argmax over all L+4 channels equals the target.
attack::AdversarialResult composite_attack(const CompositeClassifier& g, const Tensor& x, int target,
                                           const attack::AttackConfig& cfg, std::mt19937_64& rng);

/// Targeted-only white-box evaluation over the composite; targets are drawn
/// per example from the attack seed, always != true label.
EvalReport run_white_box(const DefendedModel& model, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const std::vector<NamedAttack>& attacks);

// ---------------------------------------------------------------------------
// Detector-targeted transferable attacks
// ---------------------------------------------------------------------------

struct TransferRow {
    detect::SubKind targeted;
    std::array<double, 5> sub_fooled_rate{};  // per sub-detector, ORG..LRP
    double ensemble_fooled_rate = 0.0;        // X-Det said benign
    double escaped_success_rate = 0.0;        // escaped examples that still mislead F
    int n_examples = 0;
};

struct TransferConfig {
    std::vector<NamedAttack> base_attacks;  // stage 1: attacks on F
    double detector_epsilon = 0.031;        // stage 2 l-inf budget around the stage-1 example
    double detector_step = 0.0078;
    int detector_iterations = 30;
    int ig_attack_steps = 8;  // reduced IG resolution inside the attacker
    double fd_step = 1e-3;
};

/// Crafts examples that push one sub-detector toward the benign class
/// (starting from classifier-adversarial examples), then measures how every
/// detector and the ensemble fare. LRP cannot be targeted.
TransferRow run_transfer_attack(const DefendedModel& model, detect::SubKind target_kind,
                                const std::vector<Tensor>& images, const std::vector<int>& labels,
                                const TransferConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics and the erasure experiment
// ---------------------------------------------------------------------------

/// ROC-AUC via the Mann-Whitney statistic; ties count one half.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ErasureRow {
    std::string attack;
    int n_successful = 0;
    double success_before = 0.0;  // 1.0 by construction
    double success_after = 0.0;
};

/// Success rate of already-successful adversarial sets before and after
/// zeroing the top-|gradient| fraction of pixels.
std::vector<ErasureRow> toy_erasure_experiment(const nn::Network& net,
                                               const std::vector<Tensor>& images,
                                               const std::vector<int>& labels,
                                               const std::vector<NamedAttack>& attacks,
                                               double fraction);

}  // namespace advdef::pipeline
