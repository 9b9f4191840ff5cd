#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advdef/nn.hpp"
#include "advdef/tensor.hpp"

namespace advdef::attack {

enum class Method { FGSM, PGD, DeepFool, CW, DDN, OnePixel };
enum class Norm { l0, l2, linf };

std::string method_name(Method m);
std::string norm_name(Norm n);

struct AttackConfig {
    Method method = Method::FGSM;
    Norm norm = Norm::linf;
    double epsilon = 0.031;    // ball radius for l-inf methods
    double step_size = 0.0078; // per-iteration step
    int iterations = 100;
    bool targeted = false;
    int target_class = -1;  // -1: draw a random target != true label per example
    std::uint64_t seed = 0;

    bool pgd_random_start = true;
    double deepfool_overshoot = 0.02;
    double cw_confidence = 0.0;   // margin kappa
    double cw_lr = 0.01;
    double cw_initial_const = 1.0;
    int cw_const_rounds = 3;      // escalate c x10 per round until success
    double ddn_init_norm = 1.0;
    double ddn_adjust = 0.05;     // multiplicative norm factor per step
    int pixel_budget = 3;         // OnePixel
    int population = 100;         // OnePixel candidates per iteration
};

struct AdversarialResult {
    Tensor image;
    bool success = false;
    double distance = 0.0;  // under the attack's declared norm
    int iterations_used = 0;
    std::vector<double> norm_trace;  // DDN: radius after each adjustment
};

/// Projects x_adv into the epsilon ball around x_orig under `norm`, then into
/// the [0,1] box. Idempotent.
Tensor project(const Tensor& x_adv, const Tensor& x_orig, Norm norm, double epsilon);

AdversarialResult fgsm(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg);
AdversarialResult pgd(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                      std::mt19937_64& rng);
AdversarialResult deepfool(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg);
AdversarialResult cw(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                     std::mt19937_64& rng);
AdversarialResult ddn(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                      std::mt19937_64& rng);
AdversarialResult one_pixel(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                            std::mt19937_64& rng);

/// Dispatch on cfg.method with a per-example RNG stream.
AdversarialResult run_attack(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                             std::mt19937_64& rng);

struct BatchResult {
    std::vector<AdversarialResult> results;
    double success_rate = 0.0;
};

/// Attacks every (image, label) pair; example i uses an RNG stream derived
/// from (cfg.seed, i).
BatchResult attack_batch(const nn::Network& net, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const AttackConfig& cfg);

}  // namespace advdef::attack
