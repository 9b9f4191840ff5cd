#include "advdef/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace advdef::data {

std::vector<std::size_t> Dataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::pair<std::vector<Tensor>, std::vector<int>> Dataset::split_view(Split s) const {
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (splits[i] == s) {
            xs.push_back(images[i]);
            ys.push_back(labels[i].index());
        }
    return {std::move(xs), std::move(ys)};
}

// ---------------------------------------------------------------------------
// IDX loader
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFileError(what + ": truncated header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw TruncatedFileError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw TruncatedFileError("cannot open " + labels_path);

    if (read_be32(img, images_path) != 0x00000803u)
        throw BadMagicError(images_path + ": bad image-file magic");
    if (read_be32(lab, labels_path) != 0x00000801u)
        throw BadMagicError(labels_path + ": bad label-file magic");

    const std::uint32_t n_images = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    const std::uint32_t n_labels = read_be32(lab, labels_path);
    if (n_images != n_labels)
        throw CountMismatchError("image count " + std::to_string(n_images) + " != label count " +
                                 std::to_string(n_labels));

    Dataset ds;
    ds.name = images_path;
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    std::vector<unsigned char> raw_labels(n_labels);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), n_labels))
        throw TruncatedFileError(labels_path + ": truncated label payload");
    int max_label = 0;
    for (unsigned char l : raw_labels) max_label = std::max(max_label, static_cast<int>(l));
    ds.class_count = max_label + 1;

    ds.images.reserve(n_images);
    ds.labels.reserve(n_images);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size()))
            throw TruncatedFileError(images_path + ": truncated image payload at index " +
                                     std::to_string(i));
        Tensor t({1, static_cast<int>(rows), static_cast<int>(cols)});
        for (std::size_t p = 0; p < buf.size(); ++p) t.data[p] = buf[p] / 255.0;
        ds.images.push_back(std::move(t));
        ds.labels.push_back(nn::OneHotLabel::from_index(raw_labels[i], ds.class_count));
    }
    ds.splits.assign(ds.images.size(), Split::train);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

namespace {

/// Class template composed of a handful of Gaussian bumps and an oriented
/// bar on a dim background, silhouette-style. Values stay inside (0.05, 0.95)
/// so attacks have room on both sides of every pixel.
Tensor make_template(int rows, int cols, int channels, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos_r(0.15, 0.85), weight(0.5, 1.0);
    std::uniform_real_distribution<double> sigma(0.09, 0.2), angle(0.0, 3.14159);
    std::uniform_int_distribution<int> n_bumps(3, 5);
    Tensor t({channels, rows, cols});
    for (int c = 0; c < channels; ++c) {
        struct Bump {
            double ci, cj, s, w;
        };
        std::vector<Bump> bumps;
        const int nb = n_bumps(rng);
        for (int b = 0; b < nb; ++b) bumps.push_back({pos_r(rng), pos_r(rng), sigma(rng), weight(rng)});
        const double bar_angle = angle(rng), bar_off = pos_r(rng), bar_w = weight(rng);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                const double u = (i + 0.5) / rows, v = (j + 0.5) / cols;
                double s = 0.0;
                for (const Bump& b : bumps) {
                    const double d2 = (u - b.ci) * (u - b.ci) + (v - b.cj) * (v - b.cj);
                    s += b.w * std::exp(-d2 / (2 * b.s * b.s));
                }
                const double along = u * std::cos(bar_angle) + v * std::sin(bar_angle);
                const double bar_d = along - bar_off;
                s += bar_w * std::exp(-bar_d * bar_d / (2 * 0.04 * 0.04 * 4));
                t.at3(c, i, j) = 0.1 + 0.8 * std::min(1.0, s);
            }
    }
    return t;
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec) {
    Dataset ds;
    ds.class_count = spec.classes;
    ds.name = "synth";
    if (spec.n == 0) return ds;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise);

    switch (spec.kind) {
        case SynthKind::blobs: {
            ds.name = "synth-blobs";
            // class k lights up a distinct quadrant-ish region
            std::vector<std::pair<int, int>> centers;
            std::uniform_int_distribution<int> ri(spec.rows / 4, 3 * spec.rows / 4),
                ci(spec.cols / 4, 3 * spec.cols / 4);
            for (int k = 0; k < spec.classes; ++k) centers.push_back({ri(rng), ci(rng)});
            for (int i = 0; i < spec.n; ++i) {
                const int k = i % spec.classes;
                Tensor t({spec.channels, spec.rows, spec.cols});
                const double radius = std::min(spec.rows, spec.cols) / 5.0;
                for (int c = 0; c < spec.channels; ++c)
                    for (int r = 0; r < spec.rows; ++r)
                        for (int q = 0; q < spec.cols; ++q) {
                            const double d2 = (r - centers[k].first) * (r - centers[k].first) +
                                              (q - centers[k].second) * (q - centers[k].second);
                            double v = 0.8 * std::exp(-d2 / (2 * radius * radius)) + noise(rng);
                            t.at3(c, r, q) = std::clamp(v, 0.0, 1.0);
                        }
                ds.images.push_back(std::move(t));
                ds.labels.push_back(nn::OneHotLabel::from_index(k, spec.classes));
            }
            break;
        }
        case SynthKind::stripes: {
            ds.name = "synth-stripes";
            // class k = stripes at period 2+k, orientation alternating
            for (int i = 0; i < spec.n; ++i) {
                const int k = i % spec.classes;
                const int period = 2 + k / 2;
                const bool horizontal = k % 2 == 0;
                Tensor t({spec.channels, spec.rows, spec.cols});
                for (int c = 0; c < spec.channels; ++c)
                    for (int r = 0; r < spec.rows; ++r)
                        for (int q = 0; q < spec.cols; ++q) {
                            const int axis = horizontal ? r : q;
                            double v = (axis / period) % 2 == 0 ? 0.85 : 0.15;
                            t.at3(c, r, q) = std::clamp(v + noise(rng), 0.0, 1.0);
                        }
                ds.images.push_back(std::move(t));
                ds.labels.push_back(nn::OneHotLabel::from_index(k, spec.classes));
            }
            break;
        }
        case SynthKind::templates: {
            ds.name = "synth-templates";
            std::vector<Tensor> templates;
            for (int k = 0; k < spec.classes; ++k)
                templates.push_back(make_template(spec.rows, spec.cols, spec.channels, rng));
            std::uniform_int_distribution<int> shift(-spec.max_shift, spec.max_shift);
            std::uniform_real_distribution<double> gain(0.9, 1.1);
            for (int i = 0; i < spec.n; ++i) {
                const int k = i % spec.classes;
                const int di = shift(rng), dj = shift(rng);
                const double g = gain(rng);
                Tensor t({spec.channels, spec.rows, spec.cols});
                for (int c = 0; c < spec.channels; ++c)
                    for (int r = 0; r < spec.rows; ++r)
                        for (int q = 0; q < spec.cols; ++q) {
                            const int sr = std::clamp(r + di, 0, spec.rows - 1);
                            const int sq = std::clamp(q + dj, 0, spec.cols - 1);
                            double v = g * templates[k].at3(c, sr, sq) + noise(rng);
                            t.at3(c, r, q) = std::clamp(v, 0.0, 1.0);
                        }
                ds.images.push_back(std::move(t));
                ds.labels.push_back(nn::OneHotLabel::from_index(k, spec.classes));
            }
            break;
        }
    }
    ds.splits.assign(ds.images.size(), Split::train);
    return ds;
}

void assign_splits(Dataset& ds, double train_frac, double detector_frac, double rf_frac,
                   std::uint64_t seed) {
    if (train_frac + detector_frac + rf_frac > 1.0 + 1e-12)
        throw std::invalid_argument("assign_splits: fractions exceed 1");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = ds.size();
    const std::size_t n_train = static_cast<std::size_t>(train_frac * n);
    const std::size_t n_det = static_cast<std::size_t>(detector_frac * n);
    const std::size_t n_rf = static_cast<std::size_t>(rf_frac * n);
    ds.splits.assign(n, Split::test);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) ds.splits[order[i]] = Split::train;
        else if (i < n_train + n_det) ds.splits[order[i]] = Split::detector_train;
        else if (i < n_train + n_det + n_rf) ds.splits[order[i]] = Split::rf_train;
    }
}

}  // namespace advdef::data
