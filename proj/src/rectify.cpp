#include "advdef/rectify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace advdef::rectify {

int SuspectMask::count() const {
    int n = 0;
    for (std::uint8_t m : mask) n += m != 0;
    return n;
}

SuspectMask suspect_mask(const Tensor& map, double threshold_ratio) {
    if (map.shape.size() != 2) throw nn::ShapeError("suspect_mask: expected a {H,W} map");
    if (!map.all_finite()) throw std::invalid_argument("suspect_mask: non-finite map");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double threshold = threshold_ratio * (hi - lo) + lo;
    SuspectMask m;
    m.rows = map.shape[0];
    m.cols = map.shape[1];
    m.mask.resize(map.data.size());
    for (std::size_t i = 0; i < map.data.size(); ++i) m.mask[i] = map.data[i] > threshold ? 1 : 0;
    return m;
}

Tensor random_erase(const Tensor& image, const SuspectMask& mask, double p, std::mt19937_64& rng) {
    if (image.shape.size() != 3 || image.shape[1] != mask.rows || image.shape[2] != mask.cols)
        throw nn::ShapeError("random_erase: mask does not match image");

    // sigma over all pixels of the input (population)
    const double n = static_cast<double>(image.data.size());
    double mean = 0.0;
    for (double v : image.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : image.data) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / n);

    Tensor out = image;
    std::bernoulli_distribution erase(p);
    std::normal_distribution<double> noise(0.0, sigma);
    const int channels = image.shape[0];
    for (int i = 0; i < mask.rows; ++i)
        for (int j = 0; j < mask.cols; ++j) {
            if (!mask.at(i, j)) continue;
            if (p <= 0.0 || !erase(rng)) continue;
            for (int c = 0; c < channels; ++c)
                out.at3(c, i, j) = std::clamp(out.at3(c, i, j) + noise(rng), 0.0, 1.0);
        }
    return out;
}

double prediction_entropy(const std::array<double, 3>& z) {
    double h = 0.0;
    for (double v : z)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}

InterpreterChoice select_interpreter(const std::array<std::array<double, 3>, 5>& sub_outputs) {
    // candidates: interpreter-kind sub-detectors whose argmax is an
    // adversarial class; ORG has no interpretation map and never qualifies
    InterpreterChoice best;
    bool have = false;
    auto consider = [&](int s, bool require_adversarial) {
        const std::array<double, 3>& z = sub_outputs[s];
        if (require_adversarial) {
            int am = 0;
            for (int i = 1; i < 3; ++i)
                if (z[i] > z[am]) am = i;
            if (am == 0) return;
        }
        const double h = prediction_entropy(z);
        if (!have || h < best.entropy) {  // strict: ties keep the earlier (fixed order)
            best.kind = static_cast<detect::SubKind>(s);
            best.entropy = h;
            have = true;
        }
    };
    for (int s = 1; s <= 4; ++s) consider(s, true);
    if (!have)
        for (int s = 1; s <= 4; ++s) consider(s, false);
    return best;
}

Tensor rectify(const nn::Network& net, const detect::Detection& detection, const Tensor& x,
               const RectifyConfig& cfg, std::mt19937_64& rng) {
    (void)net;
    const InterpreterChoice choice = select_interpreter(detection.sub_outputs);
    const Tensor& slice = detection.maps[static_cast<int>(choice.kind) - 1];
    const Tensor map = interpret::spatial_map(slice);
    const SuspectMask mask = suspect_mask(map, cfg.threshold_ratio);
    return random_erase(x, mask, cfg.erase_prob, rng);
}

FineTuneReport finetune_on_rectified(nn::Network& net,
                                     const std::vector<detect::Detection>& detections,
                                     const std::vector<Tensor>& adversarial_images,
                                     const std::vector<int>& true_labels,
                                     const std::vector<Tensor>& clean_images,
                                     const std::vector<int>& clean_labels,
                                     const RectifyConfig& rcfg, const nn::TrainConfig& tcfg) {
    if (rcfg.duplicates < 1) throw std::invalid_argument("finetune_on_rectified: duplicates >= 1");
    if (detections.size() != adversarial_images.size() ||
        adversarial_images.size() != true_labels.size())
        throw std::invalid_argument("finetune_on_rectified: input size mismatch");

    FineTuneReport report;
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (std::size_t i = 0; i < adversarial_images.size(); ++i) {
        for (int d = 0; d < rcfg.duplicates; ++d) {
            std::mt19937_64 rng(mix_seed(rcfg.seed, i * 131 + d));
            xs.push_back(rectify(net, detections[i], adversarial_images[i], rcfg, rng));
            ys.push_back(true_labels[i]);
            ++report.rectified_count;
        }
    }
    for (std::size_t i = 0; i < clean_images.size(); ++i) {
        xs.push_back(clean_images[i]);
        ys.push_back(clean_labels[i]);
        ++report.clean_count;
    }
    report.train = nn::fine_tune(net, xs, ys, tcfg);
    return report;
}

Tensor erase_top_fraction(const nn::Network& net, const Tensor& x, double fraction) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("erase_top_fraction: fraction in [0,1]");
    const int rows = x.shape[1], cols = x.shape[2], channels = x.shape[0];
    const int k = static_cast<int>(std::ceil(fraction * rows * cols));
    if (k == 0) return x;

    auto [probs, trace] = nn::forward(net, x);
    const Tensor grad = interpret::vanilla_gradient_at(net, trace, nn::argmax(probs));
    const Tensor map = interpret::spatial_map(grad);

    std::vector<int> order(static_cast<std::size_t>(rows) * cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(map.data[a]) > std::abs(map.data[b]);
    });
    Tensor out = x;
    for (int t = 0; t < k && t < static_cast<int>(order.size()); ++t) {
        const int i = order[t] / cols, j = order[t] % cols;
        for (int c = 0; c < channels; ++c) out.at3(c, i, j) = 0.0;
    }
    return out;
}

}  // namespace advdef::rectify
