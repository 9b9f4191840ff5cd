#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advdef/data.hpp"
#include "advdef/pipeline.hpp"
#include "test_support.hpp"

using namespace advdef;
using test_support::random_image;

namespace {

/// Sub-detector with constant tri-class output, via a zero-weight head with
/// fixed biases. Lets tests pin D_k exactly.
detect::SubDetector constant_sub(detect::SubKind kind, const std::vector<int>& input_shape,
                                 std::array<double, 3> probs) {
    using nn::LayerSpec;
    const int n = static_cast<int>(Tensor::numel_of(input_shape));
    detect::SubDetector sub;
    sub.kind = kind;
    sub.net = nn::make_network(input_shape,
                               {LayerSpec::flatten(), LayerSpec::dense(n, 3), LayerSpec::softmax()},
                               1);
    for (double& v : sub.net.weights[1].data) v = 0.0;
    for (int i = 0; i < 3; ++i) sub.net.biases[1].data[i] = std::log(std::max(probs[i], 1e-12));
    return sub;
}

/// Forest of one leaf pinned to a fixed verdict.
detect::Forest constant_forest(int verdict) {
    detect::Forest f;
    detect::DecisionTree t;
    detect::TreeNode leaf;
    leaf.class_counts = verdict == 1 ? std::array<int, 2>{0, 1} : std::array<int, 2>{1, 0};
    t.nodes.push_back(leaf);
    f.trees.push_back(t);
    return f;
}

/// Tiny defended model over a trained blobs classifier; sub-detectors are
/// lightly trained, the forest is pinned by the caller.
struct PipeRig {
    pipeline::DefendedModel model;
    std::vector<Tensor> images;
    std::vector<int> labels;

    static const PipeRig& get() {
        static PipeRig rig = [] {
            PipeRig r;
            data::SynthSpec spec;
            spec.kind = data::SynthKind::blobs;
            spec.n = 120;
            spec.rows = spec.cols = 12;
            spec.classes = 3;
            spec.noise = 0.04;
            spec.seed = 41;
            const data::Dataset ds = data::synth_dataset(spec);
            r.images = ds.images;
            for (std::size_t i = 0; i < ds.size(); ++i) r.labels.push_back(ds.label_index(i));
            r.model.classifier = test_support::small_conv_net(12, 12, 3, 77);
            nn::TrainConfig cfg;
            cfg.epochs = 10;
            cfg.learning_rate = 0.15;
            cfg.seed = 3;
            nn::train(r.model.classifier, r.images, r.labels, cfg);
            r.model.rectified_classifier = r.model.classifier;
            r.model.ig.steps = 6;
            r.model.rectify_cfg.seed = 5;
            for (int k = 0; k < 5; ++k)
                r.model.subs.push_back(constant_sub(static_cast<detect::SubKind>(k), {1, 12, 12},
                                                    {0.6, 0.25, 0.15}));
            r.model.forest = constant_forest(0);
            return r;
        }();
        return rig;
    }
};

}  // namespace

TEST_CASE("roc_auc") {
    SUBCASE("perfect separation and inversion") {
        CHECK(pipeline::roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
        CHECK(pipeline::roc_auc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == doctest::Approx(0.0));
    }
    SUBCASE("ties count one half") {
        CHECK(pipeline::roc_auc({0.5, 0.5}, {0, 1}) == doctest::Approx(0.5));
        CHECK(pipeline::roc_auc({0.5, 0.5, 0.7}, {0, 1, 1}) == doctest::Approx(0.75));
    }
    SUBCASE("matches the O(n^2) pairwise oracle exactly on random score sets") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> val(0.0, 1.0);
        std::bernoulli_distribution lab(0.4);
        for (int rep = 0; rep < 50; ++rep) {
            const int n = 200;
            std::vector<double> scores(n);
            std::vector<int> labels(n);
            int pos = 0;
            for (int i = 0; i < n; ++i) {
                scores[i] = std::round(val(rng) * 20) / 20.0;  // force plenty of ties
                labels[i] = lab(rng);
                pos += labels[i];
            }
            if (pos == 0 || pos == n) continue;
            double pairs = 0.0;
            for (int i = 0; i < n; ++i) {
                if (labels[i] != 1) continue;
                for (int j = 0; j < n; ++j) {
                    if (labels[j] != 0) continue;
                    if (scores[i] > scores[j]) pairs += 1.0;
                    else if (scores[i] == scores[j]) pairs += 0.5;
                }
            }
            const double oracle = pairs / (static_cast<double>(pos) * (n - pos));
            CHECK(std::abs(pipeline::roc_auc(scores, labels) - oracle) <= 1e-12);
        }
    }
    SUBCASE("degenerate label sets are rejected") {
        CHECK_THROWS(pipeline::roc_auc({0.1, 0.2}, {1, 1}));
    }
}

TEST_CASE("defended classification routing") {
    const PipeRig& rig = PipeRig::get();

    SUBCASE("benign verdict returns exactly F(x)") {
        pipeline::DefendedModel model = rig.model;
        model.forest = constant_forest(0);
        // a junk rectified classifier proves the benign path never touches it
        model.rectified_classifier = test_support::small_conv_net(12, 12, 3, 999);
        for (int i = 0; i < 5; ++i) {
            auto [probs, audit] = pipeline::classify_defended(model, rig.images[i], i);
            CHECK(audit.verdict == 0);
            CHECK(audit.selected_interpreter == -1);
            CHECK(probs.data == nn::forward_probs(model.classifier, rig.images[i]).data);
        }
    }
    SUBCASE("adversarial verdict with p=0 returns the fine-tuned classifier on x") {
        pipeline::DefendedModel model = rig.model;
        model.forest = constant_forest(1);
        model.rectify_cfg.erase_prob = 0.0;  // degenerate rectification: x^(r) = x
        model.rectified_classifier = test_support::small_conv_net(12, 12, 3, 999);
        for (int i = 0; i < 5; ++i) {
            auto [probs, audit] = pipeline::classify_defended(model, rig.images[i], i);
            CHECK(audit.verdict == 1);
            CHECK(audit.selected_interpreter >= 1);
            CHECK(probs.data == nn::forward_probs(model.rectified_classifier, rig.images[i]).data);
        }
    }
}

TEST_CASE("composite classifier") {
    const PipeRig& rig = PipeRig::get();
    const int L = 3;

    SUBCASE("all detectors maximally clean: detector channels are zero") {
        pipeline::DefendedModel model = rig.model;
        model.subs.clear();
        for (int k = 0; k < 5; ++k)
            model.subs.push_back(constant_sub(static_cast<detect::SubKind>(k), {1, 12, 12},
                                              {1.0, 0.0, 0.0}));  // D = -1
        const auto g = pipeline::build_composite(model);
        const auto channels = g.forward_channels(rig.images[0]);
        REQUIRE(static_cast<int>(channels.size()) == L + 4);
        const Tensor probs = nn::forward_probs(model.classifier, rig.images[0]);
        for (int i = 0; i < L; ++i) CHECK(channels[i] == doctest::Approx(probs.data[i]));
        for (int k = 0; k < 4; ++k) CHECK(channels[L + k] == doctest::Approx(0.0).epsilon(1e-9));
        int am = 0;
        for (int i = 1; i < L + 4; ++i)
            if (channels[i] > channels[am]) am = i;
        CHECK(am < L);
    }
    SUBCASE("a positive detector pushes the argmax into the detector channels") {
        pipeline::DefendedModel model = rig.model;
        model.subs.clear();
        // p_clean = 0.25 -> D = +0.5 -> channel (D+1)*maxF = 1.5*maxF > maxF
        model.subs.push_back(constant_sub(detect::SubKind::ORG, {1, 12, 12}, {0.25, 0.5, 0.25}));
        for (int k = 1; k < 5; ++k)
            model.subs.push_back(constant_sub(static_cast<detect::SubKind>(k), {1, 12, 12},
                                              {1.0, 0.0, 0.0}));
        const auto g = pipeline::build_composite(model);
        const auto channels = g.forward_channels(rig.images[0]);
        const Tensor probs = nn::forward_probs(model.classifier, rig.images[0]);
        const double max_f = probs.data[nn::argmax(probs)];
        CHECK(channels[L] == doctest::Approx(1.5 * max_f));
        int am = 0;
        for (int i = 1; i < L + 4; ++i)
            if (channels[i] > channels[am]) am = i;
        CHECK(am == L);
    }
    SUBCASE("gradient estimates match finite differences on a smooth rig") {
        // linear classifier and linear sub-detectors: every channel is smooth
        // and the curvature probes are exact in the limit
        pipeline::DefendedModel model;
        model.classifier = test_support::linear_net(6, 6, 3, 13);
        model.rectified_classifier = model.classifier;
        model.ig.steps = 8;
        std::mt19937_64 srng(15);
        for (int k = 0; k < 5; ++k) {
            detect::SubDetector sub;
            sub.kind = static_cast<detect::SubKind>(k);
            sub.net = nn::make_network({1, 6, 6},
                                       {nn::LayerSpec::flatten(), nn::LayerSpec::dense(36, 3),
                                        nn::LayerSpec::softmax()},
                                       100 + k);
            sub.input_scale = k == 0 ? 1.0 : 4.0;
            model.subs.push_back(std::move(sub));
        }
        auto g = pipeline::build_composite(model);
        g.fd_step = 1e-4;
        std::mt19937_64 rng(17);
        const Tensor x = random_image({1, 6, 6}, rng);
        const auto base = g.forward_channels(x);

        std::normal_distribution<double> nd(0.0, 1.0);
        for (int c = 0; c < static_cast<int>(base.size()); ++c) {
            std::vector<double> weights(base.size(), 0.0);
            weights[c] = 1.0;
            const Tensor grad = g.weighted_gradient(x, weights);
            for (int rep = 0; rep < 3; ++rep) {
                Tensor dir(x.shape);
                double n2 = 0.0;
                for (double& v : dir.data) {
                    v = nd(rng);
                    n2 += v * v;
                }
                const double n = std::sqrt(n2);
                for (double& v : dir.data) v /= n;
                const double h = 1e-4;
                Tensor xp = x, xm = x;
                for (std::size_t i = 0; i < x.data.size(); ++i) {
                    xp.data[i] += h * dir.data[i];
                    xm.data[i] -= h * dir.data[i];
                }
                const double fd =
                    (g.forward_channels(xp)[c] - g.forward_channels(xm)[c]) / (2 * h);
                double dot = 0.0;
                for (std::size_t i = 0; i < x.data.size(); ++i) dot += grad.data[i] * dir.data[i];
                CHECK(dot == doctest::Approx(fd).epsilon(5e-3));
            }
        }
    }
}

TEST_CASE("grey-box report shape") {
    const PipeRig& rig = PipeRig::get();
    pipeline::DefendedModel model = rig.model;
    model.forest = constant_forest(0);
    std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 10);
    std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 10);
    pipeline::NamedAttack fgsm;
    fgsm.tag = "FGSM-U";
    fgsm.config.method = attack::Method::FGSM;
    fgsm.config.epsilon = 0.08;
    const auto report = pipeline::run_grey_box(model, xs, ys, {fgsm});
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].attack == "clean");
    CHECK(report.rows[1].attack == "FGSM-U");
    CHECK(report.rows[1].n_success >= 0);
    const std::string csv = report.to_csv();
    CHECK(csv.rfind("attack,threat_model,n_total,n_success,attack_success_rate,detection_auc,"
                    "false_positive_rate,undefended_accuracy,defended_accuracy,config_hash\n",
                    0) == 0);
    // benign-path identity: with a forced-benign forest, defended accuracy on
    // clean inputs equals the undefended accuracy
    CHECK(report.rows[0].defended_accuracy == doctest::Approx(report.rows[0].undefended_accuracy));
    CHECK(report.rows[0].false_positive_rate == 0.0);
}

TEST_CASE("black-box balancing fixes undefended accuracy at one half") {
    const PipeRig& rig = PipeRig::get();
    pipeline::DefendedModel model = rig.model;
    model.forest = constant_forest(0);
    nn::Network surrogate = test_support::dense_relu_net(12, 12, 3, 500);
    nn::TrainConfig cfg;
    cfg.epochs = 6;
    cfg.learning_rate = 0.15;
    cfg.seed = 8;
    nn::train(surrogate, rig.images, rig.labels, cfg);

    pipeline::NamedAttack fgsm;
    fgsm.tag = "FGSM-U";
    fgsm.config.method = attack::Method::FGSM;
    fgsm.config.epsilon = 0.06;
    std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 60);
    std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 60);
    const auto report = pipeline::run_black_box(model, surrogate, xs, ys, {fgsm});
    REQUIRE(report.rows.size() == 2);
    const auto& row = report.rows[1];
    if (row.n_total >= 2) {
        CHECK(row.undefended_accuracy == doctest::Approx(0.5));
        CHECK(row.n_total % 2 == 0);
    }
    SUBCASE("the surrogate must differ from the classifier") {
        CHECK_THROWS_AS(pipeline::run_black_box(model, model.classifier, xs, ys, {fgsm}),
                        detect::ConfigError);
    }
}

TEST_CASE("white-box composite attack contract") {
    const PipeRig& rig = PipeRig::get();
    pipeline::DefendedModel model = rig.model;  // constant subs, mildly clean-leaning
    const auto g = pipeline::build_composite(model);
    attack::AttackConfig cfg;
    cfg.method = attack::Method::PGD;
    cfg.targeted = true;
    cfg.epsilon = 0.12;
    cfg.step_size = 0.03;
    cfg.iterations = 15;
    cfg.pgd_random_start = false;
    int successes = 0;
    for (int i = 0; i < 6; ++i) {
        const int target = (rig.labels[i] + 1) % 3;
        std::mt19937_64 rng(mix_seed(7, i));
        const auto r = pipeline::composite_attack(g, rig.images[i], target, cfg, rng);
        if (!r.success) continue;
        ++successes;
        // success requires argmax == target among all channels, which forces
        // every detector score negative and the classifier onto the target
        const auto channels = g.forward_channels(r.image);
        int am = 0;
        for (std::size_t c = 1; c < channels.size(); ++c)
            if (channels[c] > channels[am]) am = static_cast<int>(c);
        CHECK(am == target);
        CHECK(nn::predict_class(model.classifier, r.image) == target);
        const double max_f =
            nn::forward_probs(model.classifier, r.image).data[nn::predict_class(model.classifier, r.image)];
        for (int k = 0; k < 4; ++k) {
            const double dk = channels[3 + k] / max_f - 1.0;
            CHECK(dk < 0.0);
        }
    }
    CHECK(successes > 0);  // constant mildly-clean detectors cannot stop PGD
    SUBCASE("untargeted white-box configs are rejected") {
        pipeline::NamedAttack na;
        na.tag = "PGD-U";
        na.config = cfg;
        na.config.targeted = false;
        CHECK_THROWS_AS(pipeline::run_white_box(model, {rig.images[0]}, {rig.labels[0]}, {na}),
                        detect::ConfigError);
    }
}

TEST_CASE("transfer attacks cannot target LRP") {
    const PipeRig& rig = PipeRig::get();
    pipeline::TransferConfig cfg;
    pipeline::NamedAttack pgd;
    pgd.tag = "PGD-T";
    pgd.config.method = attack::Method::PGD;
    pgd.config.targeted = true;
    cfg.base_attacks = {pgd};
    CHECK_THROWS_AS(
        pipeline::run_transfer_attack(rig.model, detect::SubKind::LRP, rig.images, rig.labels, cfg),
        interpret::UnsupportedArchitectureError);
}

TEST_CASE("toy erasure experiment rows") {
    const PipeRig& rig = PipeRig::get();
    pipeline::NamedAttack dfool;
    dfool.tag = "DFool-U";
    dfool.config.method = attack::Method::DeepFool;
    dfool.config.norm = attack::Norm::l2;
    dfool.config.iterations = 30;
    std::vector<Tensor> xs(rig.images.begin(), rig.images.begin() + 12);
    std::vector<int> ys(rig.labels.begin(), rig.labels.begin() + 12);
    const auto rows = pipeline::toy_erasure_experiment(rig.model.classifier, xs, ys, {dfool}, 0.05);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].attack == "DFool-U");
    if (rows[0].n_successful > 0) {
        CHECK(rows[0].success_before == 1.0);
        CHECK(rows[0].success_after <= 1.0);
        CHECK(rows[0].success_after >= 0.0);
    }
}
