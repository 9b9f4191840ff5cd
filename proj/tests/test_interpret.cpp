#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "advdef/interpret.hpp"
#include "test_support.hpp"

using namespace advdef;
using test_support::random_image;

namespace {

nn::Network bias_free(nn::Network net) {
    for (auto& b : net.biases)
        for (double& v : b.data) v = 0.0;
    return net;
}

}  // namespace

TEST_CASE("vanilla gradient") {
    SUBCASE("slices equal the engine's per-class input gradients exactly") {
        auto net = test_support::small_conv_net(12, 12, 3, 5);
        std::mt19937_64 rng(1);
        const Tensor x = random_image({1, 12, 12}, rng);
        const auto t = interpret::vanilla_gradient(net, x);
        auto [probs, trace] = nn::forward(net, x);
        for (int l = 0; l < 3; ++l) {
            const Tensor g = nn::backward_input(net, trace, l);
            CHECK(t.slice(l).data == g.data);
        }
    }
    SUBCASE("linear single layer: slice(l) is the class-l weight grid") {
        auto net = test_support::linear_net(3, 3, 2, 7);
        std::mt19937_64 rng(2);
        const auto t = interpret::vanilla_gradient(net, random_image({1, 3, 3}, rng));
        for (int l = 0; l < 2; ++l)
            for (int i = 0; i < 9; ++i)
                CHECK(t.slice(l).data[i] == doctest::Approx(net.weights[1].data[l * 9 + i]));
    }
    SUBCASE("zero network gives the all-zero tensor") {
        auto net = test_support::linear_net(3, 3, 2, 7);
        for (auto& w : net.weights)
            for (double& v : w.data) v = 0.0;
        net = bias_free(std::move(net));
        std::mt19937_64 rng(3);
        const auto t = interpret::vanilla_gradient(net, random_image({1, 3, 3}, rng));
        for (int l = 0; l < 2; ++l) CHECK(t.slice(l).max_abs() == 0.0);
    }
    SUBCASE("matches the finite-difference oracle on a random two-layer net") {
        auto net = test_support::dense_relu_net(5, 5, 3, 11);
        std::mt19937_64 rng(4);
        const Tensor x = random_image({1, 5, 5}, rng);
        const auto t = interpret::vanilla_gradient(net, x);
        std::uniform_int_distribution<std::size_t> pix(0, x.data.size() - 1);
        for (int rep = 0; rep < 40; ++rep) {
            const std::size_t i = pix(rng);
            for (int l = 0; l < 3; ++l) {
                const double fd = test_support::fd_logit(net, x, l, i);
                CHECK(std::abs(t.slice(l).data[i] - fd) / (std::abs(fd) + 1e-8) < 1e-3);
            }
        }
    }
}

TEST_CASE("integrated gradient") {
    SUBCASE("baseline equal to the input yields the zero tensor") {
        auto net = test_support::dense_relu_net(4, 4, 2, 13);
        std::mt19937_64 rng(5);
        const Tensor x = random_image({1, 4, 4}, rng);
        interpret::IGConfig cfg;
        cfg.baseline = x;
        const auto t = interpret::integrated_gradient(net, x, cfg);
        for (int l = 0; l < 2; ++l) CHECK(t.slice(l).max_abs() == 0.0);
    }
    SUBCASE("linear net: (x - baseline) * weights for any step count") {
        auto net = bias_free(test_support::linear_net(3, 3, 2, 17));
        std::mt19937_64 rng(6);
        const Tensor x = random_image({1, 3, 3}, rng);
        for (int steps : {1, 7, 50}) {
            interpret::IGConfig cfg;
            cfg.steps = steps;
            const auto t = interpret::integrated_gradient(net, x, cfg);
            for (int l = 0; l < 2; ++l)
                for (int i = 0; i < 9; ++i)
                    CHECK(t.slice(l).data[i] ==
                          doctest::Approx(x.data[i] * net.weights[1].data[l * 9 + i]).epsilon(1e-12));
        }
    }
    SUBCASE("completeness: attributions sum to the logit difference") {
        auto net = test_support::small_conv_net(12, 12, 3, 19);
        std::mt19937_64 rng(7);
        interpret::IGConfig cfg;
        cfg.steps = 300;
        for (int rep = 0; rep < 5; ++rep) {
            const Tensor x = random_image({1, 12, 12}, rng);
            auto [probs, trace] = nn::forward(net, x);
            const int l = nn::argmax(probs);
            const Tensor at_x = trace.logits(net);
            auto [probs0, trace0] = nn::forward(net, Tensor({1, 12, 12}));
            const double want = at_x.data[l] - trace0.logits(net).data[l];
            const double got = interpret::integrated_gradient_at(net, x, l, cfg).sum();
            CHECK(std::abs(got - want) <= 0.01 * std::abs(want));
        }
    }
    SUBCASE("baseline shape mismatch is rejected") {
        auto net = test_support::dense_relu_net(4, 4, 2, 13);
        std::mt19937_64 rng(8);
        interpret::IGConfig cfg;
        cfg.baseline = Tensor({1, 3, 3});
        CHECK_THROWS_AS(interpret::integrated_gradient(net, random_image({1, 4, 4}, rng), cfg),
                        nn::ShapeError);
    }
    SUBCASE("full tensor and single-class slices agree") {
        auto net = test_support::dense_relu_net(4, 4, 3, 23);
        std::mt19937_64 rng(9);
        const Tensor x = random_image({1, 4, 4}, rng);
        const auto t = interpret::integrated_gradient(net, x, {});
        for (int l = 0; l < 3; ++l)
            CHECK(t.slice(l).data == interpret::integrated_gradient_at(net, x, l, {}).data);
    }
}

TEST_CASE("guided backpropagation") {
    SUBCASE("equals VG bit-exactly on a ReLU-free net") {
        auto net = test_support::linear_net(4, 4, 3, 29);
        std::mt19937_64 rng(10);
        const Tensor x = random_image({1, 4, 4}, rng);
        const auto vg = interpret::vanilla_gradient(net, x);
        const auto gbp = interpret::guided_backprop(net, x);
        for (int l = 0; l < 3; ++l) CHECK(gbp.slice(l).data == vg.slice(l).data);
    }
    SUBCASE("equals VG when every gate is open") {
        // all-positive weights, positive input: positive activations and
        // positive backpropagated gradients everywhere
        using nn::LayerSpec;
        auto net = nn::make_network({1, 2, 2},
                                    {LayerSpec::flatten(), LayerSpec::dense(4, 4),
                                     LayerSpec::relu(), LayerSpec::dense(4, 2),
                                     LayerSpec::softmax()},
                                    31);
        for (auto& w : net.weights)
            for (double& v : w.data) v = std::abs(v) + 0.05;
        Tensor x({1, 2, 2}, {0.3, 0.6, 0.2, 0.9});
        const auto vg = interpret::vanilla_gradient(net, x);
        const auto gbp = interpret::guided_backprop(net, x);
        for (int l = 0; l < 2; ++l) CHECK(gbp.slice(l).data == vg.slice(l).data);
    }
    SUBCASE("per-layer rule matches the elementwise oracle on recorded traces") {
        auto net = test_support::small_conv_net(12, 12, 3, 37);
        std::mt19937_64 rng(11);
        const Tensor x = random_image({1, 12, 12}, rng);
        auto [probs, trace] = nn::forward(net, x);
        const int L = net.class_count();
        for (int l = 0; l < L; ++l) {
            Tensor seed({L});
            seed.data[l] = 1.0;
            nn::BackwardOptions opts;
            opts.relu_rule = nn::ReluBackwardRule::guided;
            opts.record_layer_grads = true;
            const auto res = nn::backward_from_logits(net, trace, seed, opts);
            const std::size_t logits_li = net.logits_layer();
            for (std::size_t li = 0; li < logits_li; ++li) {
                if (net.layers[li].kind != nn::LayerKind::relu) continue;
                const Tensor& incoming =
                    li + 1 < logits_li ? res.layer_input_grads[li + 1] : seed;
                const Tensor& outgoing = res.layer_input_grads[li];
                const Tensor& fwd_in = trace.inputs[li];
                for (std::size_t i = 0; i < outgoing.data.size(); ++i) {
                    const double want =
                        (fwd_in.data[i] > 0.0 && incoming.data[i] > 0.0) ? incoming.data[i] : 0.0;
                    CHECK(outgoing.data[i] == want);
                    CHECK(outgoing.data[i] >= 0.0);  // post-ReLU nonnegativity
                }
            }
        }
    }
}

TEST_CASE("layer-wise relevance propagation") {
    SUBCASE("single bias-free linear layer matches the closed form and conserves") {
        auto net = bias_free(test_support::linear_net(3, 3, 2, 41));
        std::mt19937_64 rng(12);
        const Tensor x = random_image({1, 3, 3}, rng);
        const auto t = interpret::lrp(net, x);
        auto [probs, trace] = nn::forward(net, x);
        for (int l = 0; l < 2; ++l) {
            double denom = 0.0;
            for (int i = 0; i < 9; ++i) denom += x.data[i] * net.weights[1].data[l * 9 + i];
            const double fl = trace.logits(net).data[l];
            for (int i = 0; i < 9; ++i) {
                const double want = fl * x.data[i] * net.weights[1].data[l * 9 + i] / denom;
                CHECK(t.slice(l).data[i] == doctest::Approx(want).epsilon(1e-7));
            }
            CHECK(t.slice(l).sum() == doctest::Approx(fl).epsilon(1e-7));
        }
    }
    SUBCASE("all-zero input takes the stabilizer path and yields zeros") {
        auto net = test_support::dense_relu_net(4, 4, 3, 43);
        const Tensor x({1, 4, 4});
        const auto t = interpret::lrp(net, x);
        for (int l = 0; l < 3; ++l) {
            CHECK(t.slice(l).all_finite());
            CHECK(t.slice(l).max_abs() == 0.0);
        }
    }
    SUBCASE("conservation within 5% on bias-free ReLU nets") {
        std::mt19937_64 rng(13);
        auto dense_net = bias_free(test_support::dense_relu_net(6, 6, 3, 47));
        auto conv_net = bias_free(test_support::small_conv_net(12, 12, 3, 53));
        for (int rep = 0; rep < 10; ++rep) {
            for (const nn::Network* net : {&dense_net, &conv_net}) {
                const Tensor x = random_image(net->input_shape, rng);
                auto [probs, trace] = nn::forward(*net, x);
                const int l = nn::argmax(probs);
                const double fl = trace.logits(*net).data[l];
                if (std::abs(fl) < 1e-3) continue;  // relative bound needs signal
                const double got = interpret::lrp_at(*net, trace, l).sum();
                CHECK(std::abs(got - fl) <= 0.05 * std::abs(fl));
            }
        }
    }
    SUBCASE("unsupported layer kinds are rejected") {
        // hand-assembled chain with a softmax below the logits layer
        nn::Network net;
        net.input_shape = {4};
        net.layers = {nn::LayerSpec::softmax(), nn::LayerSpec::dense(4, 2),
                      nn::LayerSpec::softmax()};
        net.weights.resize(3);
        net.biases.resize(3);
        net.weights[1] = Tensor({2, 4});
        net.biases[1] = Tensor({2});
        Tensor x({4}, {0.1, 0.2, 0.3, 0.4});
        auto [probs, trace] = nn::forward(net, x);
        CHECK_THROWS_AS(interpret::lrp_at(net, trace, 0), interpret::UnsupportedArchitectureError);
    }
}

TEST_CASE("slice_for_prediction picks the argmax class and collapses channels") {
    auto net = test_support::small_conv_net(12, 12, 4, 59);
    std::mt19937_64 rng(14);
    const Tensor x = random_image({1, 12, 12}, rng);
    const int l = nn::predict_class(net, x);
    for (const auto& tensor :
         {interpret::vanilla_gradient(net, x), interpret::integrated_gradient(net, x, {}),
          interpret::guided_backprop(net, x), interpret::lrp(net, x)}) {
        const auto ps = interpret::slice_for_prediction(tensor, net, x);
        CHECK(ps.predicted_class == l);
        CHECK(ps.map.shape == std::vector<int>{12, 12});
        CHECK(ps.map.data == interpret::spatial_map(tensor.slice(l)).data);
    }
}

TEST_CASE("spatial_map sums over channels") {
    Tensor slice({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    const Tensor m = interpret::spatial_map(slice);
    CHECK(m.shape == std::vector<int>{2, 2});
    CHECK(m.data == std::vector<double>{11, 22, 33, 44});
}

TEST_CASE("interpreters are deterministic") {
    auto net = test_support::small_conv_net(12, 12, 3, 61);
    std::mt19937_64 rng(15);
    const Tensor x = random_image({1, 12, 12}, rng);
    const auto a1 = interpret::vanilla_gradient(net, x), a2 = interpret::vanilla_gradient(net, x);
    const auto b1 = interpret::integrated_gradient(net, x, {}),
               b2 = interpret::integrated_gradient(net, x, {});
    const auto c1 = interpret::guided_backprop(net, x), c2 = interpret::guided_backprop(net, x);
    const auto d1 = interpret::lrp(net, x), d2 = interpret::lrp(net, x);
    for (int l = 0; l < 3; ++l) {
        CHECK(a1.slice(l).data == a2.slice(l).data);
        CHECK(b1.slice(l).data == b2.slice(l).data);
        CHECK(c1.slice(l).data == c2.slice(l).data);
        CHECK(d1.slice(l).data == d2.slice(l).data);
    }
}

TEST_CASE("attribution map export writes the documented header") {
    Tensor map({2, 2}, {0.5, -0.25, 0.0, 1.0});
    const std::string path = "test_map_export.txt";
    interpret::export_map(path, interpret::Method::VG, 3, map);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "advdef-map v1");
    std::getline(in, line);
    CHECK(line == "method VG");
    std::getline(in, line);
    CHECK(line == "class 3");
    std::getline(in, line);
    CHECK(line == "shape 2 2");
    std::remove(path.c_str());
}
