#include "advdef/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace advdef::pipeline {

// ---------------------------------------------------------------------------
// Defended classification
// ---------------------------------------------------------------------------

std::pair<Tensor, AuditRecord> classify_defended(const DefendedModel& model, const Tensor& x,
                                                 std::uint64_t image_id) {
    const detect::Detection det =
        detect::ensemble_detect(model.classifier, model.subs, model.forest, x, model.ig);
    AuditRecord audit;
    audit.verdict = det.z;
    audit.vote_fraction = det.vote_fraction;
    if (det.z == 0) {
        Tensor probs = nn::forward_probs(model.classifier, x);
        audit.label = nn::argmax(probs);
        return {std::move(probs), audit};
    }
    const rectify::InterpreterChoice choice = rectify::select_interpreter(det.sub_outputs);
    audit.selected_interpreter = static_cast<int>(choice.kind);
    std::mt19937_64 rng(mix_seed(model.rectify_cfg.seed, image_id));
    const Tensor x_r = rectify::rectify(model.classifier, det, x, model.rectify_cfg, rng);
    Tensor probs = nn::forward_probs(model.rectified_classifier, x_r);
    audit.label = nn::argmax(probs);
    return {std::move(probs), audit};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "attack,threat_model,n_total,n_success,attack_success_rate,detection_auc,"
           "false_positive_rate,undefended_accuracy,defended_accuracy,config_hash\n";
    for (const EvalRow& r : rows) {
        out << r.attack << ',' << r.threat_model << ',' << r.n_total << ',' << r.n_success << ','
            << fmt(r.attack_success_rate) << ',' << fmt(r.detection_auc) << ','
            << fmt(r.false_positive_rate) << ',' << fmt(r.undefended_accuracy) << ','
            << fmt(r.defended_accuracy) << ',' << config_hash << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Grey box
// ---------------------------------------------------------------------------

namespace {

struct CleanBaseline {
    std::vector<double> scores;  // vote fractions on clean inputs
    double defended_accuracy = 0.0;
    double undefended_accuracy = 0.0;
    double false_positive_rate = 0.0;
};

CleanBaseline clean_baseline(const DefendedModel& model, const std::vector<Tensor>& images,
                             const std::vector<int>& labels) {
    CleanBaseline base;
    std::size_t def_hits = 0, und_hits = 0, fps = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const detect::Detection det =
            detect::ensemble_detect(model.classifier, model.subs, model.forest, images[i], model.ig);
        base.scores.push_back(det.vote_fraction);
        fps += det.z == 1;
        auto [probs, audit] = classify_defended(model, images[i], i);
        def_hits += audit.label == labels[i];
        und_hits += nn::predict_class(model.classifier, images[i]) == labels[i];
    }
    const double n = std::max<std::size_t>(images.size(), 1);
    base.defended_accuracy = def_hits / n;
    base.undefended_accuracy = und_hits / n;
    base.false_positive_rate = fps / n;
    return base;
}

double auc_adv_vs_clean(const DefendedModel& model, const std::vector<double>& clean_scores,
                        const std::vector<Tensor>& adv_images) {
    std::vector<double> scores = clean_scores;
    std::vector<int> lab(clean_scores.size(), 0);
    for (const Tensor& img : adv_images) {
        const detect::Detection det =
            detect::ensemble_detect(model.classifier, model.subs, model.forest, img, model.ig);
        scores.push_back(det.vote_fraction);
        lab.push_back(1);
    }
    return roc_auc(scores, lab);
}

}  // namespace

EvalReport run_grey_box(const DefendedModel& model, const std::vector<Tensor>& images,
                        const std::vector<int>& labels, const std::vector<NamedAttack>& attacks) {
    EvalReport report;
    report.threat_model = "grey_box";
    const CleanBaseline base = clean_baseline(model, images, labels);

    EvalRow clean_row;
    clean_row.attack = "clean";
    clean_row.threat_model = report.threat_model;
    clean_row.n_total = static_cast<int>(images.size());
    clean_row.detection_auc = 0.5;  // no positives against themselves
    clean_row.false_positive_rate = base.false_positive_rate;
    clean_row.undefended_accuracy = base.undefended_accuracy;
    clean_row.defended_accuracy = base.defended_accuracy;
    report.rows.push_back(clean_row);

    for (const NamedAttack& na : attacks) {
        const attack::BatchResult batch = attack::attack_batch(model.classifier, images, labels, na.config);
        EvalRow row;
        row.attack = na.tag;
        row.threat_model = report.threat_model;
        row.n_total = static_cast<int>(images.size());
        row.attack_success_rate = batch.success_rate;
        row.false_positive_rate = base.false_positive_rate;

        std::vector<Tensor> successful;
        std::size_t und_hits = 0, def_hits = 0;
        for (std::size_t i = 0; i < batch.results.size(); ++i) {
            const attack::AdversarialResult& r = batch.results[i];
            if (r.success) successful.push_back(r.image);
            und_hits += nn::predict_class(model.classifier, r.image) == labels[i];
            auto [probs, audit] = classify_defended(model, r.image, i);
            def_hits += audit.label == labels[i];
        }
        row.n_success = static_cast<int>(successful.size());
        row.undefended_accuracy = und_hits / std::max(1.0, static_cast<double>(images.size()));
        row.defended_accuracy = def_hits / std::max(1.0, static_cast<double>(images.size()));
        row.detection_auc = successful.empty() ? 0.5 : auc_adv_vs_clean(model, base.scores, successful);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Black box
// ---------------------------------------------------------------------------

EvalReport run_black_box(const DefendedModel& model, const nn::Network& surrogate,
                         const std::vector<Tensor>& images, const std::vector<int>& labels,
                         const std::vector<NamedAttack>& attacks) {
    {
        std::ostringstream a, b;
        nn::write_model(model.classifier, a);
        nn::write_model(surrogate, b);
        if (a.str() == b.str())
            throw detect::ConfigError("black box requires a surrogate distinct from the classifier");
    }
    EvalReport report;
    report.threat_model = "black_box";
    const CleanBaseline base = clean_baseline(model, images, labels);

    EvalRow clean_row;
    clean_row.attack = "clean";
    clean_row.threat_model = report.threat_model;
    clean_row.n_total = static_cast<int>(images.size());
    clean_row.detection_auc = 0.5;
    clean_row.false_positive_rate = base.false_positive_rate;
    clean_row.undefended_accuracy = base.undefended_accuracy;
    clean_row.defended_accuracy = base.defended_accuracy;
    report.rows.push_back(clean_row);

    for (const NamedAttack& na : attacks) {
        const attack::BatchResult batch = attack::attack_batch(surrogate, images, labels, na.config);
        // candidates: fooled the surrogate; split by whether they transfer to F
        std::vector<std::size_t> transfer_hits, transfer_misses;
        for (std::size_t i = 0; i < batch.results.size(); ++i) {
            if (!batch.results[i].success) continue;
            if (nn::predict_class(model.classifier, batch.results[i].image) != labels[i])
                transfer_hits.push_back(i);
            else
                transfer_misses.push_back(i);
        }
        const std::size_t m = std::min(transfer_hits.size(), transfer_misses.size());
        std::vector<std::size_t> balanced;
        for (std::size_t k = 0; k < m; ++k) {
            balanced.push_back(transfer_hits[k]);
            balanced.push_back(transfer_misses[k]);
        }

        EvalRow row;
        row.attack = na.tag;
        row.threat_model = report.threat_model;
        row.n_total = static_cast<int>(balanced.size());
        row.n_success = static_cast<int>(m);
        row.attack_success_rate =
            images.empty() ? 0.0
                           : static_cast<double>(transfer_hits.size()) /
                                 static_cast<double>(images.size());
        row.false_positive_rate = base.false_positive_rate;

        std::size_t und_hits = 0, def_hits = 0;
        std::vector<Tensor> successful;
        for (std::size_t idx : balanced) {
            const Tensor& img = batch.results[idx].image;
            und_hits += nn::predict_class(model.classifier, img) == labels[idx];
            auto [probs, audit] = classify_defended(model, img, idx);
            def_hits += audit.label == labels[idx];
        }
        for (std::size_t idx : transfer_hits) successful.push_back(batch.results[idx].image);
        const double nb = std::max<std::size_t>(balanced.size(), 1);
        row.undefended_accuracy = und_hits / nb;
        row.defended_accuracy = def_hits / nb;
        row.detection_auc = successful.empty() ? 0.5 : auc_adv_vs_clean(model, base.scores, successful);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Composite classifier
// ---------------------------------------------------------------------------

CompositeClassifier build_composite(const DefendedModel& model) {
    CompositeClassifier g;
    g.classifier = &model.classifier;
    // ORG, VG, IG, GBP; LRP has no second-order derivative and is excluded
    g.detectors = {&model.subs[0], &model.subs[1], &model.subs[2], &model.subs[3]};
    g.ig = model.ig;
    g.base_classes = model.classifier.class_count();
    return g;
}

namespace {

/// d p_clean / d input of a sub-detector at a fixed raw input (scale applied).
struct SubCleanGrad {
    double p_clean = 0.0;
    Tensor grad;  // w.r.t. the unscaled sub-detector input
};

SubCleanGrad sub_clean_gradient(const detect::SubDetector& sub, const Tensor& raw_input) {
    Tensor scaled = raw_input;
    if (sub.input_scale != 1.0) scaled *= sub.input_scale;
    auto [probs, trace] = nn::forward(sub.net, scaled);
    Tensor seed({3});
    for (int i = 0; i < 3; ++i)
        seed.data[i] = probs.data[0] * ((i == 0 ? 1.0 : 0.0) - probs.data[i]);
    SubCleanGrad out;
    out.p_clean = probs.data[0];
    out.grad = nn::backward_from_logits(sub.net, trace, seed).input_grad;
    if (sub.input_scale != 1.0) out.grad *= sub.input_scale;
    return out;
}

Tensor interpreter_map_for(detect::SubKind kind, const nn::Network& net,
                           const nn::ForwardTrace& trace, const Tensor& x, int l,
                           const interpret::IGConfig& ig) {
    switch (kind) {
        case detect::SubKind::VG: return interpret::vanilla_gradient_at(net, trace, l);
        case detect::SubKind::IG: return interpret::integrated_gradient_at(net, x, l, ig);
        case detect::SubKind::GBP: return interpret::guided_backprop_at(net, trace, l);
        default: throw std::invalid_argument("not an interpreter sub-detector");
    }
}

/// D_k(x) and its gradient estimate for one detector channel. ORG is exact;
/// VG uses a Hessian-vector product by central differences of the gradient
/// map (the Hessian is symmetric, so forward equals reverse); IG and GBP use
/// the same central-difference map probe as a curvature estimate.
struct DetectorChannel {
    double score = 0.0;  // D_k in [-1, 1]
    Tensor grad;
};

DetectorChannel detector_channel(const detect::SubDetector& sub, const nn::Network& net,
                                 const Tensor& x, int l, const interpret::IGConfig& ig,
                                 double fd_step, bool want_grad) {
    DetectorChannel out;
    if (sub.kind == detect::SubKind::ORG) {
        const SubCleanGrad g = sub_clean_gradient(sub, x);
        out.score = 1.0 - 2.0 * g.p_clean;  // D = (p1+p2) - p0 with sum(p)=1
        if (want_grad) {
            out.grad = g.grad;
            out.grad *= -2.0;
        }
        return out;
    }
    auto [probs, trace] = nn::forward(net, x);
    const Tensor map = interpreter_map_for(sub.kind, net, trace, x, l, ig);
    const SubCleanGrad g = sub_clean_gradient(sub, map);
    out.score = 1.0 - 2.0 * g.p_clean;
    if (!want_grad) return out;

    double un = 0.0;
    for (double v : g.grad.data) un += v * v;
    un = std::sqrt(un);
    out.grad = Tensor(x.shape);
    if (un == 0.0) return out;

    Tensor xp = x, xm = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double dv = fd_step * g.grad.data[i] / un;
        xp.data[i] += dv;
        xm.data[i] -= dv;
    }
    auto [pp, tp] = nn::forward(net, xp);
    auto [pm, tm] = nn::forward(net, xm);
    const Tensor map_p = interpreter_map_for(sub.kind, net, tp, xp, l, ig);
    const Tensor map_m = interpreter_map_for(sub.kind, net, tm, xm, l, ig);
    const double scale = -2.0 * un / (2.0 * fd_step);
    for (std::size_t i = 0; i < out.grad.data.size(); ++i)
        out.grad.data[i] = scale * (map_p.data[i] - map_m.data[i]);
    return out;
}

}  // namespace

std::vector<double> CompositeClassifier::forward_channels(const Tensor& x) const {
    const Tensor probs = nn::forward_probs(*classifier, x);
    const int l = nn::argmax(probs);
    const double max_f = probs.data[l];
    std::vector<double> channels(probs.data.begin(), probs.data.end());
    for (const detect::SubDetector* sub : detectors) {
        const DetectorChannel ch = detector_channel(*sub, *classifier, x, l, ig, fd_step, false);
        channels.push_back((ch.score + 1.0) * max_f);
    }
    return channels;
}

Tensor CompositeClassifier::weighted_gradient(const Tensor& x,
                                              const std::vector<double>& weights) const {
    if (static_cast<int>(weights.size()) != num_channels())
        throw std::invalid_argument("weighted_gradient: weight count mismatch");
    auto [probs, trace] = nn::forward(*classifier, x);
    const int L = base_classes;
    const int l = nn::argmax(probs);
    const double max_f = probs.data[l];

    // detector channels appear as (D_k + 1) * p_l; fold their p_l factor into
    // the probability seed and add the D_k gradients separately
    std::vector<double> prob_weights(L, 0.0);
    for (int i = 0; i < L; ++i) prob_weights[i] = weights[i];
    Tensor total(x.shape);
    for (int k = 0; k < 4; ++k) {
        const double wk = weights[L + k];
        if (wk == 0.0) continue;
        const DetectorChannel ch =
            detector_channel(*detectors[k], *classifier, x, l, ig, fd_step, true);
        prob_weights[l] += wk * (ch.score + 1.0);
        for (std::size_t i = 0; i < total.data.size(); ++i)
            total.data[i] += wk * max_f * ch.grad.data[i];
    }

    // seed_j = p_j * (u_j - sum_i u_i p_i) backpropagates sum_i u_i p_i
    double bar = 0.0;
    for (int i = 0; i < L; ++i) bar += prob_weights[i] * probs.data[i];
    Tensor seed({L});
    for (int j = 0; j < L; ++j) seed.data[j] = probs.data[j] * (prob_weights[j] - bar);
    total += nn::backward_from_logits(*classifier, trace, seed).input_grad;
    return total;
}

// ---------------------------------------------------------------------------
// Composite attacks
// ---------------------------------------------------------------------------

namespace {

int composite_argmax(const std::vector<double>& channels) {
    int best = 0;
    for (std::size_t i = 1; i < channels.size(); ++i)
        if (channels[i] > channels[best]) best = static_cast<int>(i);
    return best;
}

std::vector<double> softmax_of(const std::vector<double>& v) {
    double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        denom += out[i];
    }
    for (double& o : out) o /= denom;
    return out;
}

}  // namespace

attack::AdversarialResult composite_attack(const CompositeClassifier& g, const Tensor& x, int target,
                                           const attack::AttackConfig& cfg, std::mt19937_64& rng) {
    if (target < 0 || target >= g.base_classes)
        throw std::invalid_argument("composite_attack: target must be a base class");
    const int C = g.num_channels();

    auto loss_grad = [&](const Tensor& xi) {
        // cross-entropy toward the target over softmax of the channels
        const std::vector<double> channels = g.forward_channels(xi);
        std::vector<double> weights = softmax_of(channels);
        weights[target] -= 1.0;
        return g.weighted_gradient(xi, weights);
    };

    Tensor best_image = x;
    bool found = false;
    double best_norm = std::numeric_limits<double>::infinity();
    auto note = [&](const Tensor& xi) {
        if (composite_argmax(g.forward_channels(xi)) != target) return;
        const double n = l2_distance(xi, x);
        if (n < best_norm) {
            best_norm = n;
            best_image = xi;
            found = true;
        }
    };

    Tensor x_adv = x;
    switch (cfg.method) {
        case attack::Method::PGD: {
            if (cfg.pgd_random_start && cfg.epsilon > 0.0) {
                std::uniform_real_distribution<double> dist(-cfg.epsilon, cfg.epsilon);
                for (double& v : x_adv.data) v += dist(rng);
                x_adv = attack::project(x_adv, x, attack::Norm::linf, cfg.epsilon);
            }
            for (int it = 0; it < cfg.iterations; ++it) {
                const Tensor grad = loss_grad(x_adv);
                for (std::size_t i = 0; i < x_adv.data.size(); ++i) {
                    const double s = grad.data[i] > 0 ? 1.0 : (grad.data[i] < 0 ? -1.0 : 0.0);
                    x_adv.data[i] -= cfg.step_size * s;  // descend toward the target
                }
                x_adv = attack::project(x_adv, x, attack::Norm::linf, cfg.epsilon);
                note(x_adv);
            }
            break;
        }
        case attack::Method::CW: {
            double c = cfg.cw_initial_const;
            for (int round = 0; round < std::max(1, cfg.cw_const_rounds) && !found;
                 ++round, c *= 10.0) {
                Tensor delta(x.shape);
                for (int it = 0; it < cfg.iterations; ++it) {
                    Tensor xi = x;
                    xi += delta;
                    clip01(xi);
                    const std::vector<double> channels = g.forward_channels(xi);
                    int runner = -1;
                    for (int j = 0; j < C; ++j)
                        if (j != target && (runner < 0 || channels[j] > channels[runner])) runner = j;
                    const double margin = channels[runner] - channels[target];
                    note(xi);
                    Tensor grad(x.shape);
                    if (margin > -cfg.cw_confidence) {
                        std::vector<double> w(C, 0.0);
                        w[runner] = c;
                        w[target] = -c;
                        grad = g.weighted_gradient(xi, w);
                    }
                    for (std::size_t i = 0; i < delta.data.size(); ++i)
                        delta.data[i] -= cfg.cw_lr * (2.0 * delta.data[i] + grad.data[i]);
                }
            }
            break;
        }
        case attack::Method::DDN: {
            double radius = cfg.ddn_init_norm;
            Tensor delta(x.shape);
            for (int it = 0; it < cfg.iterations; ++it) {
                Tensor xi = x;
                xi += delta;
                clip01(xi);
                const bool adv = composite_argmax(g.forward_channels(xi)) == target;
                note(xi);
                Tensor grad = loss_grad(xi);
                double gn = 0.0;
                for (double v : grad.data) gn += v * v;
                gn = std::sqrt(gn);
                if (gn > 0.0)
                    for (std::size_t i = 0; i < delta.data.size(); ++i)
                        delta.data[i] -= cfg.step_size * grad.data[i] / gn;
                radius = adv ? radius * (1.0 - cfg.ddn_adjust) : radius * (1.0 + cfg.ddn_adjust);
                double dn = 0.0;
                for (double v : delta.data) dn += v * v;
                dn = std::sqrt(dn);
                if (dn > 0.0)
                    for (double& v : delta.data) v *= radius / dn;
            }
            break;
        }
        default:
            throw std::invalid_argument("composite_attack: supported methods are PGD, CW, DDN");
    }

    attack::AdversarialResult r;
    r.image = found ? best_image : x_adv;
    clip01(r.image);
    r.success = composite_argmax(g.forward_channels(r.image)) == target;
    r.distance = cfg.norm == attack::Norm::linf ? linf_distance(r.image, x) : l2_distance(r.image, x);
    r.iterations_used = cfg.iterations;
    return r;
}

EvalReport run_white_box(const DefendedModel& model, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const std::vector<NamedAttack>& attacks) {
    EvalReport report;
    report.threat_model = "white_box";
    const CompositeClassifier g = build_composite(model);
    const CleanBaseline base = clean_baseline(model, images, labels);

    for (const NamedAttack& na : attacks) {
        if (!na.config.targeted)
            throw detect::ConfigError("white-box composite attacks are targeted only");
        EvalRow row;
        row.attack = na.tag;
        row.threat_model = report.threat_model;
        row.n_total = static_cast<int>(images.size());
        row.false_positive_rate = base.false_positive_rate;

        std::vector<Tensor> successful;
        std::size_t def_hits = 0, und_hits = 0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            std::mt19937_64 rng(mix_seed(na.config.seed, i));
            std::uniform_int_distribution<int> pick(0, model.classifier.class_count() - 2);
            int target = pick(rng);
            if (target >= labels[i]) ++target;
            const attack::AdversarialResult r = composite_attack(g, images[i], target, na.config, rng);
            if (r.success) successful.push_back(r.image);
            und_hits += nn::predict_class(model.classifier, r.image) == labels[i];
            auto [probs, audit] = classify_defended(model, r.image, i);
            def_hits += audit.label == labels[i];
        }
        row.n_success = static_cast<int>(successful.size());
        row.attack_success_rate =
            images.empty() ? 0.0
                           : static_cast<double>(successful.size()) /
                                 static_cast<double>(images.size());
        const double n = std::max<std::size_t>(images.size(), 1);
        row.undefended_accuracy = und_hits / n;
        row.defended_accuracy = def_hits / n;
        row.detection_auc = successful.empty() ? 0.5 : auc_adv_vs_clean(model, base.scores, successful);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Detector-targeted transferable attacks
// ---------------------------------------------------------------------------

TransferRow run_transfer_attack(const DefendedModel& model, detect::SubKind target_kind,
                                const std::vector<Tensor>& images, const std::vector<int>& labels,
                                const TransferConfig& cfg) {
    if (target_kind == detect::SubKind::LRP)
        throw interpret::UnsupportedArchitectureError(
            "LRP is not second-order differentiable; transferable examples cannot target it");

    const detect::SubDetector& target_sub = model.subs[static_cast<int>(target_kind)];
    interpret::IGConfig attack_ig = model.ig;
    attack_ig.steps = cfg.ig_attack_steps;

    TransferRow row;
    row.targeted = target_kind;
    std::array<int, 5> fooled{};
    int escaped = 0, escaped_and_misled = 0;

    for (std::size_t i = 0; i < images.size(); ++i) {
        const NamedAttack& base = cfg.base_attacks[i % cfg.base_attacks.size()];
        std::mt19937_64 rng(mix_seed(base.config.seed, i));
        const attack::AdversarialResult stage1 =
            attack::run_attack(model.classifier, images[i], labels[i], base.config, rng);
        if (!stage1.success) continue;

        // stage 2: push the targeted sub-detector toward "clean" by gradient
        // ascent on its benign probability, within an l-inf budget of stage 1
        Tensor x_adv = stage1.image;
        for (int it = 0; it < cfg.detector_iterations; ++it) {
            auto [probs, trace] = nn::forward(model.classifier, x_adv);
            const int l = nn::argmax(probs);
            Tensor grad;
            if (target_kind == detect::SubKind::ORG) {
                grad = sub_clean_gradient(target_sub, x_adv).grad;
            } else {
                const Tensor map = interpreter_map_for(target_kind, model.classifier, trace, x_adv,
                                                       l, attack_ig);
                const SubCleanGrad sg = sub_clean_gradient(target_sub, map);
                double un = 0.0;
                for (double v : sg.grad.data) un += v * v;
                un = std::sqrt(un);
                if (un == 0.0) break;
                Tensor xp = x_adv, xm = x_adv;
                for (std::size_t p = 0; p < x_adv.data.size(); ++p) {
                    const double dv = cfg.fd_step * sg.grad.data[p] / un;
                    xp.data[p] += dv;
                    xm.data[p] -= dv;
                }
                auto [pp, tp] = nn::forward(model.classifier, xp);
                auto [pm, tm] = nn::forward(model.classifier, xm);
                const Tensor map_p = interpreter_map_for(target_kind, model.classifier, tp, xp, l, attack_ig);
                const Tensor map_m = interpreter_map_for(target_kind, model.classifier, tm, xm, l, attack_ig);
                grad = Tensor(x_adv.shape);
                const double scale = un / (2.0 * cfg.fd_step);
                for (std::size_t p = 0; p < grad.data.size(); ++p)
                    grad.data[p] = scale * (map_p.data[p] - map_m.data[p]);
            }
            for (std::size_t p = 0; p < x_adv.data.size(); ++p) {
                const double s = grad.data[p] > 0 ? 1.0 : (grad.data[p] < 0 ? -1.0 : 0.0);
                x_adv.data[p] += cfg.detector_step * s;
            }
            x_adv = attack::project(x_adv, stage1.image, attack::Norm::linf, cfg.detector_epsilon);
        }

        ++row.n_examples;
        const detect::Detection det =
            detect::ensemble_detect(model.classifier, model.subs, model.forest, x_adv, model.ig);
        for (int s = 0; s < 5; ++s) {
            const auto& z = det.sub_outputs[s];
            int am = 0;
            for (int c = 1; c < 3; ++c)
                if (z[c] > z[am]) am = c;
            fooled[s] += am == 0;
        }
        if (det.z == 0) {
            ++escaped;
            if (nn::predict_class(model.classifier, x_adv) != labels[i]) ++escaped_and_misled;
        }
    }

    const double n = std::max(1, row.n_examples);
    for (int s = 0; s < 5; ++s) row.sub_fooled_rate[s] = fooled[s] / n;
    row.ensemble_fooled_rate = escaped / n;
    row.escaped_success_rate = escaped == 0 ? 0.0 : static_cast<double>(escaped_and_misled) / escaped;
    return row;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: need both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Mann-Whitney rank sum with average ranks over tie groups
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<ErasureRow> toy_erasure_experiment(const nn::Network& net,
                                               const std::vector<Tensor>& images,
                                               const std::vector<int>& labels,
                                               const std::vector<NamedAttack>& attacks,
                                               double fraction) {
    std::vector<ErasureRow> rows;
    for (const NamedAttack& na : attacks) {
        const attack::BatchResult batch = attack::attack_batch(net, images, labels, na.config);
        ErasureRow row;
        row.attack = na.tag;
        int still_adversarial = 0;
        for (std::size_t i = 0; i < batch.results.size(); ++i) {
            if (!batch.results[i].success) continue;
            ++row.n_successful;
            const Tensor erased = rectify::erase_top_fraction(net, batch.results[i].image, fraction);
            still_adversarial += nn::predict_class(net, erased) != labels[i];
        }
        row.success_before = row.n_successful > 0 ? 1.0 : 0.0;
        row.success_after =
            row.n_successful > 0 ? static_cast<double>(still_adversarial) / row.n_successful : 0.0;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace advdef::pipeline
