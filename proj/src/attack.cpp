#include "advdef/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace advdef::attack {

std::string method_name(Method m) {
    switch (m) {
        case Method::FGSM: return "FGSM";
        case Method::PGD: return "PGD";
        case Method::DeepFool: return "DeepFool";
        case Method::CW: return "CW";
        case Method::DDN: return "DDN";
        case Method::OnePixel: return "OnePixel";
    }
    return "?";
}

std::string norm_name(Norm n) {
    switch (n) {
        case Norm::l0: return "l0";
        case Norm::l2: return "l2";
        case Norm::linf: return "linf";
    }
    return "?";
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double distance_under(Norm norm, const Tensor& a, const Tensor& b) {
    switch (norm) {
        case Norm::l0: return static_cast<double>(l0_pixel_distance(a, b));
        case Norm::l2: return l2_distance(a, b);
        case Norm::linf: return linf_distance(a, b);
    }
    return 0.0;
}

bool is_adversarial(const nn::Network& net, const Tensor& x_adv, int y, const AttackConfig& cfg,
                    int target) {
    const int pred = nn::predict_class(net, x_adv);
    return cfg.targeted ? pred == target : pred != y;
}

/// Fresh-forward verification at return time; fills the shared result fields.
AdversarialResult finish(const nn::Network& net, Tensor x_adv, const Tensor& x_orig, int y,
                         const AttackConfig& cfg, int target, int iterations_used) {
    AdversarialResult r;
    r.success = is_adversarial(net, x_adv, y, cfg, target);
    r.distance = distance_under(cfg.norm, x_adv, x_orig);
    r.iterations_used = iterations_used;
    r.image = std::move(x_adv);
    return r;
}

int pick_target(int y, int class_count, const AttackConfig& cfg, std::mt19937_64& rng) {
    if (!cfg.targeted) return -1;
    if (cfg.target_class >= 0) {
        if (cfg.target_class >= class_count) throw std::invalid_argument("target class out of range");
        return cfg.target_class;
    }
    std::uniform_int_distribution<int> dist(0, class_count - 2);
    int t = dist(rng);
    if (t >= y) ++t;
    return t;
}

}  // namespace

Tensor project(const Tensor& x_adv, const Tensor& x_orig, Norm norm, double epsilon) {
    if (!x_adv.same_shape(x_orig)) throw nn::ShapeError("project: shape mismatch");
    Tensor out = x_adv;
    switch (norm) {
        case Norm::linf:
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = std::clamp(out.data[i], x_orig.data[i] - epsilon,
                                         x_orig.data[i] + epsilon);
            break;
        case Norm::l2: {
            double n2 = 0.0;
            for (std::size_t i = 0; i < out.data.size(); ++i) {
                const double d = out.data[i] - x_orig.data[i];
                n2 += d * d;
            }
            const double n = std::sqrt(n2);
            if (n > epsilon && n > 0.0) {
                const double scale = epsilon / n;
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] = x_orig.data[i] + scale * (out.data[i] - x_orig.data[i]);
            }
            break;
        }
        case Norm::l0: {
            // keep the floor(epsilon) positions with the largest channel-max
            // |delta|; earlier scan positions win ties
            const int budget = static_cast<int>(epsilon);
            const int rows = x_orig.shape[1], cols = x_orig.shape[2], channels = x_orig.shape[0];
            std::vector<std::pair<double, int>> mags;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) {
                    double m = 0.0;
                    for (int c = 0; c < channels; ++c)
                        m = std::max(m, std::abs(out.at3(c, i, j) - x_orig.at3(c, i, j)));
                    if (m > 0.0) mags.push_back({m, i * cols + j});
                }
            std::stable_sort(mags.begin(), mags.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t k = budget; k < mags.size(); ++k) {
                const int i = mags[k].second / cols, j = mags[k].second % cols;
                for (int c = 0; c < channels; ++c) out.at3(c, i, j) = x_orig.at3(c, i, j);
            }
            break;
        }
    }
    clip01(out);
    return out;
}

// ---------------------------------------------------------------------------
// FGSM
// ---------------------------------------------------------------------------

AdversarialResult fgsm(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg) {
    if (cfg.targeted) throw std::invalid_argument("fgsm: untargeted only");
    auto [probs, trace] = nn::forward(net, x);
    const Tensor grad = nn::backward_loss(net, trace, y);
    Tensor x_adv = x;
    for (std::size_t i = 0; i < x_adv.data.size(); ++i)
        x_adv.data[i] += cfg.epsilon * sign(grad.data[i]);
    clip01(x_adv);
    return finish(net, std::move(x_adv), x, y, cfg, -1, 1);
}

// ---------------------------------------------------------------------------
// PGD
// ---------------------------------------------------------------------------

AdversarialResult pgd(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                      std::mt19937_64& rng) {
    if (cfg.iterations < 1) throw std::invalid_argument("pgd: iterations must be >= 1");
    const int target = pick_target(y, net.class_count(), cfg, rng);
    const int loss_label = cfg.targeted ? target : y;
    const double dir = cfg.targeted ? -1.0 : 1.0;  // descend toward target / ascend at truth

    Tensor x_adv = x;
    if (cfg.pgd_random_start && cfg.epsilon > 0.0) {
        std::uniform_real_distribution<double> dist(-cfg.epsilon, cfg.epsilon);
        for (double& v : x_adv.data) v += dist(rng);
        x_adv = project(x_adv, x, cfg.norm, cfg.epsilon);
    }
    for (int it = 0; it < cfg.iterations; ++it) {
        auto [probs, trace] = nn::forward(net, x_adv);
        const Tensor grad = nn::backward_loss(net, trace, loss_label);
        if (cfg.norm == Norm::linf) {
            for (std::size_t i = 0; i < x_adv.data.size(); ++i)
                x_adv.data[i] += dir * cfg.step_size * sign(grad.data[i]);
        } else {
            double gn = 0.0;
            for (double g : grad.data) gn += g * g;
            gn = std::sqrt(gn);
            if (gn > 0.0)
                for (std::size_t i = 0; i < x_adv.data.size(); ++i)
                    x_adv.data[i] += dir * cfg.step_size * grad.data[i] / gn;
        }
        x_adv = project(x_adv, x, cfg.norm, cfg.epsilon);
    }
    return finish(net, std::move(x_adv), x, y, cfg, target, cfg.iterations);
}

// ---------------------------------------------------------------------------
// DeepFool
// ---------------------------------------------------------------------------

AdversarialResult deepfool(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg) {
    const int L = net.class_count();
    AttackConfig reported = cfg;
    reported.targeted = false;
    const int orig = nn::predict_class(net, x);
    if (orig != y) return finish(net, x, x, y, reported, -1, 0);  // already adversarial

    Tensor delta(x.shape);  // accumulated raw perturbation, overshoot applied on top
    Tensor x_adv = x;
    int it = 0;
    while (it < cfg.iterations && nn::predict_class(net, x_adv) == orig) {
        auto [probs, trace] = nn::forward(net, x_adv);
        const Tensor& logits = trace.logits(net);
        const Tensor grad_orig = nn::backward_input(net, trace, orig);

        double best_ratio = std::numeric_limits<double>::infinity();
        Tensor best_w;
        double best_f = 0.0;
        for (int k = 0; k < L; ++k) {
            if (k == orig) continue;
            Tensor w = nn::backward_input(net, trace, k);
            w -= grad_orig;
            double wn2 = 0.0;
            for (double v : w.data) wn2 += v * v;
            if (wn2 <= 0.0) continue;
            const double f = logits.data[k] - logits.data[orig];
            const double ratio = std::abs(f) / std::sqrt(wn2);
            if (ratio < best_ratio) {
                best_ratio = ratio;
                best_w = std::move(w);
                best_f = f;
            }
        }
        if (best_w.data.empty()) break;  // no usable direction (constant classifier)
        double wn2 = 0.0;
        for (double v : best_w.data) wn2 += v * v;
        const double scale = (std::abs(best_f) + 1e-6) / wn2;
        for (std::size_t i = 0; i < delta.data.size(); ++i) delta.data[i] += scale * best_w.data[i];
        for (std::size_t i = 0; i < x_adv.data.size(); ++i)
            x_adv.data[i] = x.data[i] + (1.0 + cfg.deepfool_overshoot) * delta.data[i];
        clip01(x_adv);
        ++it;
    }
    return finish(net, std::move(x_adv), x, y, reported, -1, it);
}

// ---------------------------------------------------------------------------
// CW (margin loss, plain first-order descent, box via clipping)
// ---------------------------------------------------------------------------

AdversarialResult cw(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                     std::mt19937_64& rng) {
    const int L = net.class_count();
    const int target = pick_target(y, L, cfg, rng);

    Tensor best_image = x;
    bool found = false;
    double best_norm = std::numeric_limits<double>::infinity();
    int used = 0;

    double c = cfg.cw_initial_const;
    for (int round = 0; round < std::max(1, cfg.cw_const_rounds) && !found; ++round, c *= 10.0) {
        Tensor delta(x.shape);
        for (int it = 0; it < cfg.iterations; ++it) {
            ++used;
            Tensor x_adv = x;
            x_adv += delta;
            clip01(x_adv);
            auto [probs, trace] = nn::forward(net, x_adv);
            const Tensor& logits = trace.logits(net);

            // margin and the pair of logits it compares
            int hi = -1;  // class whose logit the loss pushes down
            int lo = -1;  // class whose logit the loss pushes up
            double margin;
            if (cfg.targeted) {
                int runner = -1;
                for (int j = 0; j < L; ++j)
                    if (j != target && (runner < 0 || logits.data[j] > logits.data[runner]))
                        runner = j;
                margin = logits.data[runner] - logits.data[target];
                hi = runner;
                lo = target;
            } else {
                int runner = -1;
                for (int j = 0; j < L; ++j)
                    if (j != y && (runner < 0 || logits.data[j] > logits.data[runner])) runner = j;
                margin = logits.data[y] - logits.data[runner];
                hi = y;
                lo = runner;
            }

            const int pred = nn::argmax(probs);
            const bool adv = cfg.targeted ? pred == target : pred != y;
            if (adv) {
                const double n = l2_distance(x_adv, x);
                if (n < best_norm) {
                    best_norm = n;
                    best_image = x_adv;
                    found = true;
                }
            }

            Tensor grad(x.shape);
            if (margin > -cfg.cw_confidence) {
                Tensor seed({L});
                seed.data[hi] = 1.0;
                seed.data[lo] = -1.0;
                grad = nn::backward_from_logits(net, trace, seed).input_grad;
                grad *= c;
            }
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                delta.data[i] -= cfg.cw_lr * (2.0 * delta.data[i] + grad.data[i]);
        }
    }

    AdversarialResult r;
    r.image = found ? std::move(best_image) : x;
    r.success = found && is_adversarial(net, r.image, y, cfg, target);
    r.distance = distance_under(cfg.norm, r.image, x);
    r.iterations_used = used;
    return r;
}

// ---------------------------------------------------------------------------
// DDN (gradient step on loss direction, multiplicative norm adjustment)
// ---------------------------------------------------------------------------

AdversarialResult ddn(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                      std::mt19937_64& rng) {
    const int target = pick_target(y, net.class_count(), cfg, rng);
    const int loss_label = cfg.targeted ? target : y;
    const double dir = cfg.targeted ? -1.0 : 1.0;

    double radius = cfg.ddn_init_norm;
    Tensor delta(x.shape);
    Tensor best_image = x;
    double best_norm = std::numeric_limits<double>::infinity();
    bool found = false;
    std::vector<double> trace_norms{radius};

    for (int it = 0; it < cfg.iterations; ++it) {
        Tensor x_adv = x;
        x_adv += delta;
        clip01(x_adv);
        auto [probs, fwd] = nn::forward(net, x_adv);
        const int pred = nn::argmax(probs);
        const bool adv = cfg.targeted ? pred == target : pred != y;
        if (adv) {
            const double n = l2_distance(x_adv, x);
            if (n < best_norm) {
                best_norm = n;
                best_image = x_adv;
                found = true;
            }
        }
        Tensor grad = nn::backward_loss(net, fwd, loss_label);
        double gn = 0.0;
        for (double g : grad.data) gn += g * g;
        gn = std::sqrt(gn);
        if (gn > 0.0)
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                delta.data[i] += dir * cfg.step_size * grad.data[i] / gn;

        radius = adv ? radius * (1.0 - cfg.ddn_adjust) : radius * (1.0 + cfg.ddn_adjust);
        trace_norms.push_back(radius);

        double dn = 0.0;
        for (double d : delta.data) dn += d * d;
        dn = std::sqrt(dn);
        if (dn > 0.0) {
            const double scale = radius / dn;
            for (double& d : delta.data) d *= scale;
        }
    }

    AdversarialResult r;
    r.image = found ? std::move(best_image) : x;
    r.success = found && is_adversarial(net, r.image, y, cfg, target);
    r.distance = distance_under(cfg.norm, r.image, x);
    r.iterations_used = cfg.iterations;
    r.norm_trace = std::move(trace_norms);
    return r;
}

// ---------------------------------------------------------------------------
// OnePixel (differential evolution over (row, col, value...) triples)
// ---------------------------------------------------------------------------

namespace {

struct PixelGene {
    int row = 0, col = 0;
    std::vector<double> values;  // one per channel
};

Tensor apply_genes(const Tensor& x, const std::vector<PixelGene>& genes) {
    Tensor out = x;
    for (const PixelGene& g : genes)
        for (std::size_t c = 0; c < g.values.size(); ++c)
            out.at3(static_cast<int>(c), g.row, g.col) = g.values[c];
    return out;
}

}  // namespace

AdversarialResult one_pixel(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                            std::mt19937_64& rng) {
    if (cfg.targeted) throw std::invalid_argument("one_pixel: untargeted only");
    AttackConfig reported = cfg;
    reported.norm = Norm::l0;
    if (cfg.pixel_budget <= 0) return finish(net, x, x, y, reported, -1, 0);

    const int rows = x.shape[1], cols = x.shape[2], channels = x.shape[0];
    const int budget = cfg.pixel_budget;
    std::uniform_int_distribution<int> row_dist(0, rows - 1), col_dist(0, cols - 1);
    std::uniform_real_distribution<double> val_dist(0.0, 1.0);

    auto fitness = [&](const std::vector<PixelGene>& genes) {
        const Tensor probs = nn::forward_probs(net, apply_genes(x, genes));
        return probs.data[y];  // minimize true-class probability
    };

    std::vector<std::vector<PixelGene>> pop(cfg.population);
    std::vector<double> fit(cfg.population);
    for (int m = 0; m < cfg.population; ++m) {
        pop[m].resize(budget);
        for (PixelGene& g : pop[m]) {
            g.row = row_dist(rng);
            g.col = col_dist(rng);
            g.values.resize(channels);
            for (double& v : g.values) v = val_dist(rng);
        }
        fit[m] = fitness(pop[m]);
    }

    constexpr double kDiffWeight = 0.5;
    constexpr double kCrossover = 0.9;
    std::uniform_int_distribution<int> member_dist(0, cfg.population - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    int it = 0;
    bool stop = false;
    for (; it < cfg.iterations && !stop; ++it) {
        for (int m = 0; m < cfg.population && !stop; ++m) {
            int a, b, c;
            do a = member_dist(rng); while (a == m);
            do b = member_dist(rng); while (b == m || b == a);
            do c = member_dist(rng); while (c == m || c == a || c == b);
            std::vector<PixelGene> trial = pop[m];
            for (int p = 0; p < budget; ++p) {
                if (unit(rng) > kCrossover) continue;
                PixelGene& t = trial[p];
                const PixelGene &ga = pop[a][p], &gb = pop[b][p], &gc = pop[c][p];
                t.row = std::clamp(
                    static_cast<int>(std::lround(ga.row + kDiffWeight * (gb.row - gc.row))), 0,
                    rows - 1);
                t.col = std::clamp(
                    static_cast<int>(std::lround(ga.col + kDiffWeight * (gb.col - gc.col))), 0,
                    cols - 1);
                for (int ch = 0; ch < channels; ++ch)
                    t.values[ch] = std::clamp(
                        ga.values[ch] + kDiffWeight * (gb.values[ch] - gc.values[ch]), 0.0, 1.0);
            }
            const double tf = fitness(trial);
            if (tf <= fit[m]) {
                pop[m] = std::move(trial);
                fit[m] = tf;
                if (nn::predict_class(net, apply_genes(x, pop[m])) != y) stop = true;
            }
        }
    }

    const std::size_t best =
        std::min_element(fit.begin(), fit.end()) - fit.begin();
    return finish(net, apply_genes(x, pop[best]), x, y, reported, -1, it);
}

// ---------------------------------------------------------------------------
// Dispatch and batching
// ---------------------------------------------------------------------------

AdversarialResult run_attack(const nn::Network& net, const Tensor& x, int y, const AttackConfig& cfg,
                             std::mt19937_64& rng) {
    switch (cfg.method) {
        case Method::FGSM: return fgsm(net, x, y, cfg);
        case Method::PGD: return pgd(net, x, y, cfg, rng);
        case Method::DeepFool: return deepfool(net, x, y, cfg);
        case Method::CW: return cw(net, x, y, cfg, rng);
        case Method::DDN: return ddn(net, x, y, cfg, rng);
        case Method::OnePixel: return one_pixel(net, x, y, cfg, rng);
    }
    throw std::invalid_argument("unknown attack method");
}

BatchResult attack_batch(const nn::Network& net, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const AttackConfig& cfg) {
    if (images.size() != labels.size())
        throw std::invalid_argument("attack_batch: image/label count mismatch");
    BatchResult batch;
    batch.results.reserve(images.size());
    std::size_t successes = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::mt19937_64 rng(mix_seed(cfg.seed, i));
        batch.results.push_back(run_attack(net, images[i], labels[i], cfg, rng));
        successes += batch.results.back().success;
    }
    batch.success_rate =
        images.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(images.size());
    return batch;
}

}  // namespace advdef::attack
