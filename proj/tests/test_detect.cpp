#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <type_traits>

#include "advdef/data.hpp"
#include "advdef/detect.hpp"
#include "test_support.hpp"

using namespace advdef;

namespace {

struct DetectRig {
    nn::Network net;
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<detect::DetectionSample> samples;

    static const DetectRig& get() {
        static DetectRig rig = [] {
            DetectRig r;
            data::SynthSpec spec;
            spec.kind = data::SynthKind::blobs;
            spec.n = 150;
            spec.rows = spec.cols = 12;
            spec.classes = 3;
            spec.noise = 0.04;
            spec.seed = 5;
            const data::Dataset ds = data::synth_dataset(spec);
            r.images = ds.images;
            for (std::size_t i = 0; i < ds.size(); ++i) r.labels.push_back(ds.label_index(i));
            r.net = test_support::small_conv_net(12, 12, 3, 321);
            nn::TrainConfig cfg;
            cfg.epochs = 10;
            cfg.learning_rate = 0.15;
            cfg.seed = 2;
            nn::train(r.net, r.images, r.labels, cfg);

            detect::DetectionBuildConfig bc;
            bc.ig.steps = 8;
            attack::AttackConfig fgsm;
            fgsm.method = attack::Method::FGSM;
            fgsm.epsilon = 0.08;
            attack::AttackConfig dfool;
            dfool.method = attack::Method::DeepFool;
            dfool.norm = attack::Norm::l2;
            dfool.iterations = 30;
            bc.linf_attacks = {fgsm};
            bc.l2_attacks = {dfool};
            std::vector<Tensor> xs(r.images.begin(), r.images.begin() + 90);
            std::vector<int> ys(r.labels.begin(), r.labels.begin() + 90);
            r.samples = detect::build_detection_dataset(r.net, xs, ys, bc);
            return r;
        }();
        return rig;
    }
};

}  // namespace

TEST_CASE("tri-label encoding is fixed") {
    CHECK(detect::TriLabel::of(detect::TriClass::clean).v == std::array<double, 3>{1, 0, 0});
    CHECK(detect::TriLabel::of(detect::TriClass::l2_attacked).v == std::array<double, 3>{0, 1, 0});
    CHECK(detect::TriLabel::of(detect::TriClass::linf_attacked).v == std::array<double, 3>{0, 0, 1});
}

TEST_CASE("detection dataset construction") {
    const DetectRig& rig = DetectRig::get();

    SUBCASE("clean-only input yields only clean labels") {
        detect::DetectionBuildConfig bc;
        bc.vaccinated = false;
        bc.ig.steps = 4;
        std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 6);
        std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 6);
        const auto samples = detect::build_detection_dataset(rig.net, xs, ys, bc);
        CHECK(samples.size() == 6);
        for (const auto& s : samples) CHECK(s.label == detect::TriClass::clean);
    }
    SUBCASE("a single FGSM family labels its samples linf_attacked") {
        detect::DetectionBuildConfig bc;
        bc.vaccinated = false;
        bc.ig.steps = 4;
        attack::AttackConfig fgsm;
        fgsm.method = attack::Method::FGSM;
        fgsm.epsilon = 0.1;
        bc.linf_attacks = {fgsm};
        std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 8);
        std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 8);
        const auto samples = detect::build_detection_dataset(rig.net, xs, ys, bc);
        int linf = 0;
        for (const auto& s : samples)
            if (s.label == detect::TriClass::linf_attacked) {
                ++linf;
                CHECK(s.provenance == "FGSM");
            }
        CHECK(linf > 0);
    }
    SUBCASE("vaccinated mode requires both families") {
        detect::DetectionBuildConfig bc;
        bc.vaccinated = true;
        attack::AttackConfig fgsm;
        fgsm.method = attack::Method::FGSM;
        bc.linf_attacks = {fgsm};
        CHECK_THROWS_AS(detect::build_detection_dataset(rig.net, rig.images, rig.labels, bc),
                        detect::ConfigError);
    }
    SUBCASE("balancing keeps class counts within 10% of each other") {
        detect::DetectionBuildReport rep;
        detect::DetectionBuildConfig bc;
        bc.ig.steps = 4;
        attack::AttackConfig fgsm;
        fgsm.method = attack::Method::FGSM;
        fgsm.epsilon = 0.1;
        attack::AttackConfig dfool;
        dfool.method = attack::Method::DeepFool;
        dfool.norm = attack::Norm::l2;
        dfool.iterations = 30;
        bc.linf_attacks = {fgsm};
        bc.l2_attacks = {dfool};
        std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 30);
        std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 30);
        detect::build_detection_dataset(rig.net, xs, ys, bc, &rep);
        const auto [lo, hi] =
            std::minmax({rep.class_counts[0], rep.class_counts[1], rep.class_counts[2]});
        CHECK(hi - lo <= std::max(1, hi / 10));
    }
    SUBCASE("every adversarial sample was verified successful") {
        for (const auto& s : DetectRig::get().samples) {
            if (s.label == detect::TriClass::clean) continue;
            CHECK(nn::predict_class(rig.net, s.image) != s.true_label);
        }
    }
}

TEST_CASE("sub-detectors") {
    const DetectRig& rig = DetectRig::get();
    nn::TrainConfig cfg;
    cfg.epochs = 6;
    cfg.learning_rate = 0.1;
    cfg.seed = 77;

    SUBCASE("zero epochs leave the fresh network untrained but wired") {
        nn::TrainConfig zero = cfg;
        zero.epochs = 0;
        const auto sub = detect::train_sub_detector(detect::SubKind::VG, rig.samples, zero);
        CHECK(sub.net.class_count() == 3);
    }
    SUBCASE("scores sum to one, are deterministic, and ORG consumes the raw image") {
        const auto org = detect::train_sub_detector(detect::SubKind::ORG, rig.samples, cfg);
        const auto vg = detect::train_sub_detector(detect::SubKind::VG, rig.samples, cfg);
        for (const auto& s : {rig.samples.front(), rig.samples.back()}) {
            const auto zo = detect::sub_detector_scores(org, s);
            const auto zv = detect::sub_detector_scores(vg, s);
            CHECK(zo[0] + zo[1] + zo[2] == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(zv[0] + zv[1] + zv[2] == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(detect::sub_detector_scores(org, s) == zo);
        }
        // ORG routing: same image with different maps gives identical output
        detect::DetectionSample probe = rig.samples.front();
        for (auto& m : probe.maps)
            for (double& v : m.data) v += 123.0;
        CHECK(detect::sub_detector_scores(org, probe) ==
              detect::sub_detector_scores(org, rig.samples.front()));
        CHECK(detect::sub_detector_scores(vg, probe) !=
              detect::sub_detector_scores(vg, rig.samples.front()));
    }
    SUBCASE("trained sub-detectors beat the 1/3 baseline on held-out samples") {
        nn::TrainConfig strong = cfg;
        strong.epochs = 14;
        strong.learning_rate = 0.2;
        // train on the front 2/3, evaluate on the back 1/3 of each class
        std::vector<detect::DetectionSample> train_set, held;
        std::array<int, 3> seen{0, 0, 0};
        std::array<int, 3> totals{0, 0, 0};
        for (const auto& s : rig.samples) ++totals[static_cast<int>(s.label)];
        for (const auto& s : rig.samples) {
            const int c = static_cast<int>(s.label);
            (seen[c]++ * 3 < totals[c] * 2 ? train_set : held).push_back(s);
        }
        REQUIRE(held.size() >= 9);
        for (detect::SubKind kind : {detect::SubKind::ORG, detect::SubKind::VG}) {
            const auto sub = detect::train_sub_detector(kind, train_set, strong);
            int hits = 0;
            for (const auto& s : held) {
                const auto z = detect::sub_detector_scores(sub, s);
                const int pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
                hits += pred == static_cast<int>(s.label);
            }
            CHECK(static_cast<double>(hits) / held.size() > 1.0 / 3.0);
        }
    }
}

TEST_CASE("detector scalar score") {
    CHECK(detect::detector_scalar_score({1, 0, 0}) == doctest::Approx(-1.0));
    CHECK(detect::detector_scalar_score({0, 0.5, 0.5}) == doctest::Approx(1.0));
    CHECK(detect::detector_scalar_score({1.0 / 3, 1.0 / 3, 1.0 / 3}) ==
          doctest::Approx(1.0 / 3));
}

TEST_CASE("random forest") {
    SUBCASE("perfectly separable single feature: depth-1 trees, perfect accuracy") {
        std::vector<detect::FeatureVector> features;
        std::vector<int> labels;
        for (int i = 0; i < 40; ++i) {
            detect::FeatureVector f{};
            f[0] = i < 20 ? 0.1 + 0.001 * i : 0.9 + 0.001 * i;
            features.push_back(f);
            labels.push_back(i < 20 ? 0 : 1);
        }
        detect::ForestConfig cfg;
        cfg.n_trees = 15;
        cfg.max_depth = 4;
        cfg.feature_subsample = 15;
        cfg.seed = 3;
        const auto forest = detect::rf_train(features, labels, cfg);
        for (const auto& tree : forest.trees) {
            // root split suffices: both children are leaves
            CHECK(tree.nodes[0].feature == 0);
            CHECK(tree.nodes[tree.nodes[0].left].feature == -1);
            CHECK(tree.nodes[tree.nodes[0].right].feature == -1);
        }
        for (std::size_t i = 0; i < features.size(); ++i)
            CHECK(detect::rf_predict(forest, features[i]).z == labels[i]);
        CHECK(forest.oob_error == doctest::Approx(0.0));
    }
    SUBCASE("depth-1 axis-aligned trees cannot solve XOR") {
        std::vector<detect::FeatureVector> features;
        std::vector<int> labels;
        for (int rep = 0; rep < 10; ++rep)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    detect::FeatureVector f{};
                    f[0] = a;
                    f[1] = b;
                    features.push_back(f);
                    labels.push_back(a ^ b);
                }
        detect::ForestConfig cfg;
        cfg.n_trees = 1;
        cfg.max_depth = 1;
        cfg.feature_subsample = 15;
        cfg.seed = 11;
        const auto forest = detect::rf_train(features, labels, cfg);
        int hits = 0;
        for (std::size_t i = 0; i < features.size(); ++i)
            hits += detect::rf_predict(forest, features[i]).z == labels[i];
        CHECK(static_cast<double>(hits) / features.size() <= 0.75);
    }
    SUBCASE("incremental split sweep matches a brute-force Gini recount") {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> val(0.0, 1.0);
        std::bernoulli_distribution lab(0.4);
        for (int rep = 0; rep < 20; ++rep) {
            const int n = 5 + static_cast<int>(rng() % 96);
            std::vector<detect::FeatureVector> features(n);
            std::vector<int> labels(n);
            std::vector<int> indices(n);
            for (int i = 0; i < n; ++i) {
                features[i][2] = std::round(val(rng) * 8) / 8.0;  // force ties
                labels[i] = lab(rng);
                indices[i] = i;
            }
            const auto got = detect::evaluate_best_split(features, labels, indices, 2);

            // brute force: recount both sides at every midpoint between
            // distinct sorted values
            std::vector<double> vals;
            for (int i = 0; i < n; ++i) vals.push_back(features[i][2]);
            std::sort(vals.begin(), vals.end());
            vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
                const double thr = 0.5 * (vals[k] + vals[k + 1]);
                std::array<int, 2> l{0, 0}, r{0, 0};
                for (int i = 0; i < n; ++i) ++(features[i][2] <= thr ? l : r)[labels[i]];
                auto gini = [](const std::array<int, 2>& c) {
                    const double total = c[0] + c[1];
                    if (total == 0) return 0.0;
                    return 1.0 - (c[0] / total) * (c[0] / total) - (c[1] / total) * (c[1] / total);
                };
                const double nl = l[0] + l[1], nr = r[0] + r[1];
                best = std::min(best, (nl / n) * gini(l) + (nr / n) * gini(r));
            }
            if (vals.size() < 2) {
                CHECK(got.feature == -1);
            } else {
                CHECK(got.gini == doctest::Approx(best).epsilon(1e-12));
            }
        }
    }
    SUBCASE("single-class training set raises a degenerate-forest error") {
        std::vector<detect::FeatureVector> features(10);
        std::vector<int> labels(10, 1);
        CHECK_THROWS_AS(detect::rf_train(features, labels, detect::ForestConfig{}),
                        detect::DegenerateForestError);
    }
    SUBCASE("majority vote equals a brute-force recount; ties go benign") {
        std::mt19937_64 rng(23);
        std::uniform_real_distribution<double> val(0.0, 1.0);
        std::vector<detect::FeatureVector> features(60);
        std::vector<int> labels(60);
        for (int i = 0; i < 60; ++i) {
            for (auto& v : features[i]) v = val(rng);
            labels[i] = features[i][4] > 0.5;
        }
        detect::ForestConfig cfg;
        cfg.n_trees = 9;
        cfg.seed = 31;
        const auto forest = detect::rf_train(features, labels, cfg);
        for (int i = 0; i < 10; ++i) {
            detect::FeatureVector probe{};
            for (auto& v : probe) v = val(rng);
            int ones = 0;
            for (const auto& t : forest.trees) ones += t.predict(probe);
            const auto vote = detect::rf_predict(forest, probe);
            CHECK(vote.vote_fraction == doctest::Approx(static_cast<double>(ones) / 9));
            CHECK(vote.z == (2 * ones > 9 ? 1 : 0));
        }
        // an even forest can tie; a tie must stay benign
        detect::ForestConfig even = cfg;
        even.n_trees = 2;
        const auto forest2 = detect::rf_train(features, labels, even);
        for (int i = 0; i < 50; ++i) {
            detect::FeatureVector probe{};
            for (auto& v : probe) v = val(rng);
            const auto vote = detect::rf_predict(forest2, probe);
            if (vote.vote_fraction == 0.5) CHECK(vote.z == 0);
        }
    }
    SUBCASE("identical seeds build bit-identical forests") {
        std::mt19937_64 rng(37);
        std::uniform_real_distribution<double> val(0.0, 1.0);
        std::vector<detect::FeatureVector> features(50);
        std::vector<int> labels(50);
        for (int i = 0; i < 50; ++i) {
            for (auto& v : features[i]) v = val(rng);
            labels[i] = features[i][0] + features[i][1] > 1.0;
        }
        detect::ForestConfig cfg;
        cfg.seed = 41;
        cfg.n_trees = 20;
        const auto f1 = detect::rf_train(features, labels, cfg);
        const auto f2 = detect::rf_train(features, labels, cfg);
        REQUIRE(f1.trees.size() == f2.trees.size());
        for (std::size_t t = 0; t < f1.trees.size(); ++t) {
            REQUIRE(f1.trees[t].nodes.size() == f2.trees[t].nodes.size());
            for (std::size_t k = 0; k < f1.trees[t].nodes.size(); ++k) {
                CHECK(f1.trees[t].nodes[k].feature == f2.trees[t].nodes[k].feature);
                CHECK(f1.trees[t].nodes[k].threshold == f2.trees[t].nodes[k].threshold);
            }
        }
    }
}

// structural non-differentiability: the forest API exposes no gradient hooks
template <typename T, typename = void>
struct has_gradient : std::false_type {};
template <typename T>
struct has_gradient<T, std::void_t<decltype(&T::gradient)>> : std::true_type {};
template <typename T, typename = void>
struct has_backward : std::false_type {};
template <typename T>
struct has_backward<T, std::void_t<decltype(&T::backward)>> : std::true_type {};
template <typename T, typename = void>
struct has_grad : std::false_type {};
template <typename T>
struct has_grad<T, std::void_t<decltype(&T::grad)>> : std::true_type {};

TEST_CASE("forest exposes no gradient operation (API audit)") {
    static_assert(!has_gradient<detect::Forest>::value);
    static_assert(!has_backward<detect::Forest>::value);
    static_assert(!has_grad<detect::Forest>::value);
    static_assert(!has_gradient<detect::DecisionTree>::value);
    static_assert(!has_backward<detect::DecisionTree>::value);
    static_assert(!has_grad<detect::DecisionTree>::value);
    CHECK(true);
}

TEST_CASE("ensemble detection") {
    const DetectRig& rig = DetectRig::get();
    nn::TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 0.1;
    cfg.seed = 13;
    std::vector<detect::SubDetector> subs;
    for (int k = 0; k < 5; ++k)
        subs.push_back(
            detect::train_sub_detector(static_cast<detect::SubKind>(k), rig.samples, cfg));

    std::vector<detect::FeatureVector> features;
    std::vector<int> labels;
    for (const auto& s : rig.samples) {
        std::array<std::array<double, 3>, 5> outs;
        for (int k = 0; k < 5; ++k) outs[k] = detect::sub_detector_scores(subs[k], s);
        features.push_back(detect::to_feature_vector(outs));
        labels.push_back(s.label != detect::TriClass::clean);
    }
    detect::ForestConfig fc;
    fc.n_trees = 30;
    fc.seed = 7;
    const auto forest = detect::rf_train(features, labels, fc);

    SUBCASE("feature blocks sum to one") {
        for (const auto& f : features)
            for (int b = 0; b < 5; ++b)
                CHECK(f[3 * b] + f[3 * b + 1] + f[3 * b + 2] == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("detection returns maps, per-sub outputs and a verdict") {
        interpret::IGConfig ig;
        ig.steps = 8;
        const auto d = detect::ensemble_detect(rig.net, subs, forest, rig.images[0], ig);
        CHECK(d.predicted_class == nn::predict_class(rig.net, rig.images[0]));
        CHECK((d.z == 0 || d.z == 1));
        CHECK(d.z == (d.vote_fraction > 0.5 ? 1 : 0));
        for (const auto& m : d.maps) CHECK(m.shape == rig.images[0].shape);
        for (const auto& z : d.sub_outputs)
            CHECK(z[0] + z[1] + z[2] == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("an empty forest is an error, never a silent benign") {
        detect::Forest empty;
        interpret::IGConfig ig;
        ig.steps = 4;
        CHECK_THROWS_AS(detect::ensemble_detect(rig.net, subs, empty, rig.images[0], ig),
                        detect::DegenerateForestError);
    }
}
