#include "advdef/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace advdef::detect {

std::string sub_kind_name(SubKind k) {
    switch (k) {
        case SubKind::ORG: return "ORG";
        case SubKind::VG: return "VG";
        case SubKind::IG: return "IG";
        case SubKind::GBP: return "GBP";
        case SubKind::LRP: return "LRP";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

DetectionSample make_sample(const nn::Network& net, const Tensor& image, TriClass label,
                            const std::string& provenance, const interpret::IGConfig& ig) {
    DetectionSample s;
    s.image = image;
    s.label = label;
    s.provenance = provenance;
    auto [probs, trace] = nn::forward(net, image);
    const int l = nn::argmax(probs);
    s.maps[0] = interpret::vanilla_gradient_at(net, trace, l);
    s.maps[1] = interpret::integrated_gradient_at(net, image, l, ig);
    s.maps[2] = interpret::guided_backprop_at(net, trace, l);
    s.maps[3] = interpret::lrp_at(net, trace, l);
    return s;
}

std::vector<DetectionSample> build_detection_dataset(const nn::Network& net,
                                                     const std::vector<Tensor>& clean_images,
                                                     const std::vector<int>& clean_labels,
                                                     const DetectionBuildConfig& cfg,
                                                     DetectionBuildReport* report) {
    if (cfg.vaccinated && (cfg.l2_attacks.empty() || cfg.linf_attacks.empty()))
        throw ConfigError("vaccinated detector requires at least one attack per norm family");
    if (clean_images.size() != clean_labels.size())
        throw ConfigError("clean image/label count mismatch");

    DetectionBuildReport rep;
    std::vector<DetectionSample> clean, l2, linf;

    for (std::size_t i = 0; i < clean_images.size(); ++i) {
        clean.push_back(make_sample(net, clean_images[i], TriClass::clean, "clean", cfg.ig));
        clean.back().true_label = clean_labels[i];
    }

    // round-robin the attackers of a family over the clean pool so the family
    // size stays comparable to the clean class
    auto build_family = [&](const std::vector<attack::AttackConfig>& attacks, TriClass label,
                            std::vector<DetectionSample>& out) {
        if (attacks.empty()) return;
        for (std::size_t i = 0; i < clean_images.size(); ++i) {
            const attack::AttackConfig& a = attacks[i % attacks.size()];
            std::mt19937_64 rng(mix_seed(a.seed ^ cfg.seed, i));
            ++rep.attacks_attempted;
            attack::AdversarialResult r =
                attack::run_attack(net, clean_images[i], clean_labels[i], a, rng);
            if (!r.success) {
                ++rep.attacks_failed;
                continue;
            }
            out.push_back(make_sample(net, r.image, label, attack::method_name(a.method), cfg.ig));
            out.back().true_label = clean_labels[i];
        }
    };
    build_family(cfg.l2_attacks, TriClass::l2_attacked, l2);
    build_family(cfg.linf_attacks, TriClass::linf_attacked, linf);

    if (cfg.balance) {
        std::size_t m = clean.size();
        if (!cfg.l2_attacks.empty()) m = std::min(m, l2.size());
        if (!cfg.linf_attacks.empty()) m = std::min(m, linf.size());
        auto trim = [&](std::vector<DetectionSample>& v) {
            if (v.size() > m) v.resize(m);
        };
        trim(clean);
        trim(l2);
        trim(linf);
    }

    std::vector<DetectionSample> samples;
    samples.reserve(clean.size() + l2.size() + linf.size());
    rep.class_counts = {static_cast<int>(clean.size()), static_cast<int>(l2.size()),
                        static_cast<int>(linf.size())};
    for (auto* group : {&clean, &l2, &linf})
        for (DetectionSample& s : *group) samples.push_back(std::move(s));
    if (report) *report = rep;
    return samples;
}

std::vector<DetectionSample> build_samples_from_groups(const nn::Network& net,
                                                       const std::vector<Tensor>& clean_images,
                                                       const std::vector<int>& clean_labels,
                                                       const std::vector<AdversarialGroup>& groups,
                                                       const interpret::IGConfig& ig, bool balance,
                                                       DetectionBuildReport* report) {
    if (clean_images.size() != clean_labels.size())
        throw ConfigError("clean image/label count mismatch");
    std::vector<DetectionSample> clean, l2, linf;
    for (std::size_t i = 0; i < clean_images.size(); ++i) {
        clean.push_back(make_sample(net, clean_images[i], TriClass::clean, "clean", ig));
        clean.back().true_label = clean_labels[i];
    }
    // interleave the groups of one family so trimming keeps every attacker
    auto family = [&](TriClass label) -> std::vector<DetectionSample> {
        std::vector<const AdversarialGroup*> mine;
        for (const auto& g : groups)
            if (g.label == label) mine.push_back(&g);
        std::vector<DetectionSample> out;
        for (std::size_t i = 0; !mine.empty(); ++i) {
            bool any = false;
            for (const AdversarialGroup* g : mine) {
                if (i >= g->images.size()) continue;
                any = true;
                out.push_back(make_sample(net, g->images[i], label, g->tag, ig));
                out.back().true_label = g->true_labels[i];
            }
            if (!any) break;
        }
        return out;
    };
    l2 = family(TriClass::l2_attacked);
    linf = family(TriClass::linf_attacked);

    bool have_l2 = false, have_linf = false;
    for (const auto& g : groups) {
        have_l2 |= g.label == TriClass::l2_attacked;
        have_linf |= g.label == TriClass::linf_attacked;
    }
    if (balance) {
        std::size_t m = clean.size();
        if (have_l2) m = std::min(m, l2.size());
        if (have_linf) m = std::min(m, linf.size());
        if (clean.size() > m) clean.resize(m);
        if (l2.size() > m) l2.resize(m);
        if (linf.size() > m) linf.resize(m);
    }
    DetectionBuildReport rep;
    rep.class_counts = {static_cast<int>(clean.size()), static_cast<int>(l2.size()),
                        static_cast<int>(linf.size())};
    std::vector<DetectionSample> samples;
    samples.reserve(clean.size() + l2.size() + linf.size());
    for (auto* group : {&clean, &l2, &linf})
        for (DetectionSample& s : *group) samples.push_back(std::move(s));
    if (report) *report = rep;
    return samples;
}

std::vector<DetectionSample> without_class(const std::vector<DetectionSample>& samples, TriClass c) {
    std::vector<DetectionSample> out;
    for (const DetectionSample& s : samples)
        if (s.label != c) out.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Sub-detectors
// ---------------------------------------------------------------------------

namespace {

const Tensor& sample_input(SubKind kind, const Tensor& image, const std::array<Tensor, 4>& maps) {
    if (kind == SubKind::ORG) return image;
    return maps[static_cast<int>(kind) - 1];
}

/// Small conv net with a 3-class softmax head, input shaped like the maps.
nn::Network make_sub_detector_net(const std::vector<int>& input_shape, std::uint64_t seed) {
    using nn::LayerSpec;
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    const int c1 = 6, c2 = 12;
    const int h1 = h - 2, w1 = w - 2;          // conv 3x3
    const int hp = h1 / 2, wp = w1 / 2;        // pool 2
    const int h2 = hp - 2, w2 = wp - 2;        // conv 3x3
    const int hq = h2 / 2, wq = w2 / 2;        // pool 2
    std::vector<LayerSpec> layers{
        LayerSpec::conv2d(c, c1, 3),  LayerSpec::relu(),   LayerSpec::maxpool(2),
        LayerSpec::conv2d(c1, c2, 3), LayerSpec::relu(),   LayerSpec::maxpool(2),
        LayerSpec::flatten(),         LayerSpec::dense(c2 * hq * wq, 32),
        LayerSpec::relu(),            LayerSpec::dense(32, 3),
        LayerSpec::softmax()};
    return nn::make_network(input_shape, layers, seed);
}

}  // namespace

SubDetector train_sub_detector(SubKind kind, const std::vector<DetectionSample>& samples,
                               const nn::TrainConfig& cfg) {
    if (samples.empty()) throw ConfigError("train_sub_detector: empty dataset");
    SubDetector sub;
    sub.kind = kind;

    // feature-scaling constant from the training set (maps carry tiny scales)
    if (kind == SubKind::ORG) {
        sub.input_scale = 1.0;
    } else {
        double mean_abs = 0.0;
        std::size_t count = 0;
        for (const DetectionSample& s : samples) {
            const Tensor& m = sample_input(kind, s.image, s.maps);
            for (double v : m.data) mean_abs += std::abs(v);
            count += m.data.size();
        }
        mean_abs /= std::max<std::size_t>(count, 1);
        sub.input_scale = mean_abs > 0.0 ? 0.5 / mean_abs : 1.0;
    }

    std::vector<Tensor> xs;
    std::vector<int> ys;
    xs.reserve(samples.size());
    for (const DetectionSample& s : samples) {
        Tensor in = sample_input(kind, s.image, s.maps);
        if (sub.input_scale != 1.0) in *= sub.input_scale;
        xs.push_back(std::move(in));
        ys.push_back(static_cast<int>(s.label));
    }
    sub.net = make_sub_detector_net(xs.front().shape, cfg.seed ^ (0x5157u + static_cast<int>(kind)));
    nn::train(sub.net, xs, ys, cfg);
    return sub;
}

std::array<double, 3> sub_detector_scores_on(const SubDetector& sub, const Tensor& image,
                                             const std::array<Tensor, 4>& maps) {
    Tensor in = sample_input(sub.kind, image, maps);
    if (sub.input_scale != 1.0) in *= sub.input_scale;
    const Tensor probs = nn::forward_probs(sub.net, in);
    return {probs.data[0], probs.data[1], probs.data[2]};
}

std::array<double, 3> sub_detector_scores(const SubDetector& sub, const DetectionSample& sample) {
    return sub_detector_scores_on(sub, sample.image, sample.maps);
}

double detector_scalar_score(const std::array<double, 3>& z) {
    return (z[1] + z[2]) - z[0];
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

int DecisionTree::predict(const FeatureVector& f) const {
    int node = 0;
    while (nodes[node].feature >= 0)
        node = f[nodes[node].feature] <= nodes[node].threshold ? nodes[node].left
                                                               : nodes[node].right;
    const auto& c = nodes[node].class_counts;
    return c[1] > c[0] ? 1 : 0;
}

namespace {

double gini_of(const std::array<int, 2>& c) {
    const double n = c[0] + c[1];
    if (n == 0.0) return 0.0;
    const double p0 = c[0] / n, p1 = c[1] / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

}  // namespace

SplitEval evaluate_best_split(const std::vector<FeatureVector>& features,
                              const std::vector<int>& labels, const std::vector<int>& indices,
                              int feature) {
    std::vector<std::pair<double, int>> vals;
    vals.reserve(indices.size());
    for (int i : indices) vals.push_back({features[i][feature], labels[i]});
    std::sort(vals.begin(), vals.end());

    SplitEval best;
    std::array<int, 2> left{0, 0}, right{0, 0};
    for (const auto& [v, y] : vals) ++right[y];
    const double total = static_cast<double>(vals.size());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        ++left[vals[k].second];
        --right[vals[k].second];
        if (vals[k].first == vals[k + 1].first) continue;  // no boundary here
        const double nl = static_cast<double>(k + 1), nr = total - nl;
        const double g = (nl / total) * gini_of(left) + (nr / total) * gini_of(right);
        if (g < best.gini) {
            best.gini = g;
            best.feature = feature;
            best.threshold = 0.5 * (vals[k].first + vals[k + 1].first);
        }
    }
    return best;
}

namespace {

struct TreeBuilder {
    const std::vector<FeatureVector>& features;
    const std::vector<int>& labels;
    const ForestConfig& cfg;
    std::mt19937_64 rng;
    DecisionTree tree;

    int build(std::vector<int> indices, int depth) {
        std::array<int, 2> counts{0, 0};
        for (int i : indices) ++counts[labels[i]];

        const int node_index = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes[node_index].class_counts = counts;

        const bool pure = counts[0] == 0 || counts[1] == 0;
        if (pure || depth >= cfg.max_depth ||
            static_cast<int>(indices.size()) < 2 * cfg.min_samples_leaf)
            return node_index;

        // per-node feature subsample without replacement
        std::array<int, 15> order;
        std::iota(order.begin(), order.end(), 0);
        for (int k = 0; k < cfg.feature_subsample; ++k) {
            std::uniform_int_distribution<int> pick(k, 14);
            std::swap(order[k], order[pick(rng)]);
        }
        SplitEval best;
        for (int k = 0; k < cfg.feature_subsample; ++k) {
            const SplitEval s = evaluate_best_split(features, labels, indices, order[k]);
            if (s.gini < best.gini) best = s;
        }
        if (best.feature < 0) return node_index;  // no nontrivial split

        std::vector<int> left_idx, right_idx;
        for (int i : indices)
            (features[i][best.feature] <= best.threshold ? left_idx : right_idx).push_back(i);
        if (left_idx.empty() || right_idx.empty() ||
            static_cast<int>(left_idx.size()) < cfg.min_samples_leaf ||
            static_cast<int>(right_idx.size()) < cfg.min_samples_leaf)
            return node_index;

        tree.nodes[node_index].feature = best.feature;
        tree.nodes[node_index].threshold = best.threshold;
        const int l = build(std::move(left_idx), depth + 1);
        tree.nodes[node_index].left = l;
        const int r = build(std::move(right_idx), depth + 1);
        tree.nodes[node_index].right = r;
        return node_index;
    }
};

}  // namespace

Forest rf_train(const std::vector<FeatureVector>& features, const std::vector<int>& labels,
                const ForestConfig& cfg) {
    if (features.size() != labels.size())
        throw std::invalid_argument("rf_train: feature/label count mismatch");
    if (features.empty()) throw DegenerateForestError("rf_train: empty training set");
    bool has0 = false, has1 = false;
    for (int y : labels) {
        if (y == 0) has0 = true;
        else if (y == 1) has1 = true;
        else throw std::invalid_argument("rf_train: labels must be binary");
    }
    if (!has0 || !has1) throw DegenerateForestError("rf_train: single-class training set");
    if (cfg.n_trees < 1) throw std::invalid_argument("rf_train: need at least one tree");

    Forest forest;
    forest.config = cfg;
    forest.trees.reserve(cfg.n_trees);

    const std::size_t n = features.size();
    std::vector<std::vector<int>> oob_votes(n);  // per-sample out-of-bag tree outputs
    for (int t = 0; t < cfg.n_trees; ++t) {
        std::mt19937_64 rng(mix_seed(cfg.seed, t));
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<int> bag(n);
        std::vector<char> in_bag(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            bag[i] = static_cast<int>(pick(rng));
            in_bag[bag[i]] = 1;
        }
        TreeBuilder builder{features, labels, cfg, std::mt19937_64(mix_seed(cfg.seed, 0x10000 + t)), {}};
        builder.build(bag, 0);
        forest.trees.push_back(std::move(builder.tree));
        for (std::size_t i = 0; i < n; ++i)
            if (!in_bag[i]) oob_votes[i].push_back(forest.trees.back().predict(features[i]));
    }

    std::size_t oob_wrong = 0, oob_counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (oob_votes[i].empty()) continue;
        const int ones = static_cast<int>(std::count(oob_votes[i].begin(), oob_votes[i].end(), 1));
        const int pred = 2 * ones > static_cast<int>(oob_votes[i].size()) ? 1 : 0;
        oob_wrong += pred != labels[i];
        ++oob_counted;
    }
    forest.oob_error = oob_counted ? static_cast<double>(oob_wrong) / oob_counted : 0.0;
    return forest;
}

ForestVote rf_predict(const Forest& forest, const FeatureVector& feature) {
    if (forest.trees.empty()) throw DegenerateForestError("rf_predict: forest has no trees");
    int ones = 0;
    for (const DecisionTree& t : forest.trees) ones += t.predict(feature);
    ForestVote v;
    v.vote_fraction = static_cast<double>(ones) / static_cast<double>(forest.trees.size());
    v.z = v.vote_fraction > 0.5 ? 1 : 0;
    return v;
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

FeatureVector to_feature_vector(const std::array<std::array<double, 3>, 5>& sub_outputs) {
    FeatureVector f;
    for (int s = 0; s < 5; ++s)
        for (int i = 0; i < 3; ++i) f[s * 3 + i] = sub_outputs[s][i];
    return f;
}

Detection ensemble_detect(const nn::Network& net, const std::vector<SubDetector>& subs,
                          const Forest& forest, const Tensor& x, const interpret::IGConfig& ig) {
    if (subs.size() != 5) throw ConfigError("ensemble_detect: expected five sub-detectors");
    Detection d;
    auto [probs, trace] = nn::forward(net, x);
    d.predicted_class = nn::argmax(probs);
    d.maps[0] = interpret::vanilla_gradient_at(net, trace, d.predicted_class);
    d.maps[1] = interpret::integrated_gradient_at(net, x, d.predicted_class, ig);
    d.maps[2] = interpret::guided_backprop_at(net, trace, d.predicted_class);
    d.maps[3] = interpret::lrp_at(net, trace, d.predicted_class);
    for (int s = 0; s < 5; ++s) {
        if (static_cast<int>(subs[s].kind) != s)
            throw ConfigError("ensemble_detect: sub-detectors must be ordered ORG,VG,IG,GBP,LRP");
        d.sub_outputs[s] = sub_detector_scores_on(subs[s], x, d.maps);
    }
    const ForestVote vote = rf_predict(forest, to_feature_vector(d.sub_outputs));
    d.z = vote.z;
    d.vote_fraction = vote.vote_fraction;
    return d;
}

}  // namespace advdef::detect
