#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "advdef/data.hpp"
#include "test_support.hpp"

using namespace advdef;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(x >> 24);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

struct IdxFixture {
    std::string images = "fixture_images.idx";
    std::string labels = "fixture_labels.idx";

    IdxFixture(std::uint32_t image_magic = 0x00000803, std::uint32_t label_magic = 0x00000801,
               std::uint32_t n_images = 2, std::uint32_t n_labels = 2, bool truncate = false) {
        std::vector<unsigned char> img;
        push_be32(img, image_magic);
        push_be32(img, n_images);
        push_be32(img, 2);
        push_be32(img, 2);
        const std::vector<unsigned char> pixels{0, 128, 255, 64, 10, 20, 30, 40};
        for (std::size_t i = 0; i < pixels.size() && i < n_images * 4; ++i) img.push_back(pixels[i]);
        if (truncate) img.resize(img.size() - 3);
        write_bytes(images, img);

        std::vector<unsigned char> lab;
        push_be32(lab, label_magic);
        push_be32(lab, n_labels);
        for (std::uint32_t i = 0; i < n_labels; ++i) lab.push_back(i % 2);
        write_bytes(labels, lab);
    }
    ~IdxFixture() {
        std::remove(images.c_str());
        std::remove(labels.c_str());
    }
};

}  // namespace

TEST_CASE("idx loader") {
    SUBCASE("hand-built two-image fixture decodes exact pixel values") {
        IdxFixture fx;
        const data::Dataset ds = data::load_idx(fx.images, fx.labels);
        REQUIRE(ds.size() == 2);
        CHECK(ds.images[0].shape == std::vector<int>{1, 2, 2});
        CHECK(ds.images[0].data[0] == 0.0);
        CHECK(ds.images[0].data[1] == doctest::Approx(128.0 / 255.0));
        CHECK(ds.images[0].data[2] == 1.0);
        CHECK(ds.images[0].data[3] == doctest::Approx(64.0 / 255.0));
        CHECK(ds.label_index(0) == 0);
        CHECK(ds.label_index(1) == 1);
        for (const auto& img : ds.images)
            for (double v : img.data) CHECK((v >= 0.0 && v <= 1.0));
    }
    SUBCASE("wrong image magic") {
        IdxFixture fx(0x00000801);
        CHECK_THROWS_AS(data::load_idx(fx.images, fx.labels), data::BadMagicError);
    }
    SUBCASE("wrong label magic") {
        IdxFixture fx(0x00000803, 0x00000803);
        CHECK_THROWS_AS(data::load_idx(fx.images, fx.labels), data::BadMagicError);
    }
    SUBCASE("label count mismatch") {
        IdxFixture fx(0x00000803, 0x00000801, 2, 3);
        CHECK_THROWS_AS(data::load_idx(fx.images, fx.labels), data::CountMismatchError);
    }
    SUBCASE("truncated image payload") {
        IdxFixture fx(0x00000803, 0x00000801, 2, 2, /*truncate=*/true);
        CHECK_THROWS_AS(data::load_idx(fx.images, fx.labels), data::TruncatedFileError);
    }
}

TEST_CASE("synthetic datasets") {
    SUBCASE("n = 0 gives an empty dataset") {
        data::SynthSpec spec;
        spec.n = 0;
        CHECK(data::synth_dataset(spec).size() == 0);
    }
    SUBCASE("same seed, same dataset; different seed, different dataset") {
        data::SynthSpec spec;
        spec.n = 24;
        spec.rows = spec.cols = 10;
        spec.classes = 4;
        const auto a = data::synth_dataset(spec);
        const auto b = data::synth_dataset(spec);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
        data::SynthSpec other = spec;
        other.seed = spec.seed + 1;
        const auto c = data::synth_dataset(other);
        CHECK(a.images[0].data != c.images[0].data);
    }
    SUBCASE("pixels stay in range for every kind") {
        for (auto kind : {data::SynthKind::blobs, data::SynthKind::stripes,
                          data::SynthKind::templates}) {
            data::SynthSpec spec;
            spec.kind = kind;
            spec.n = 20;
            spec.rows = spec.cols = 12;
            spec.classes = 4;
            spec.noise = 0.3;
            const auto ds = data::synth_dataset(spec);
            for (const auto& img : ds.images)
                for (double v : img.data) CHECK((v >= 0.0 && v <= 1.0));
        }
    }
    SUBCASE("class structure is separable by construction") {
        data::SynthSpec spec;
        spec.kind = data::SynthKind::templates;
        spec.n = 160;
        spec.rows = spec.cols = 12;
        spec.classes = 4;
        spec.noise = 0.08;
        spec.seed = 12;
        const auto ds = data::synth_dataset(spec);
        std::vector<int> ys(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) ys[i] = ds.label_index(i);
        auto net = test_support::dense_relu_net(12, 12, 4, 6);
        nn::TrainConfig cfg;
        cfg.epochs = 15;
        cfg.learning_rate = 0.2;
        cfg.seed = 2;
        const auto rep = nn::train(net, ds.images, ys, cfg);
        CHECK(rep.final_train_accuracy >= 0.95);
    }
}

TEST_CASE("split assignment partitions the dataset") {
    data::SynthSpec spec;
    spec.n = 100;
    spec.rows = spec.cols = 8;
    spec.classes = 4;
    auto ds = data::synth_dataset(spec);
    data::assign_splits(ds, 0.5, 0.2, 0.1, 9);
    CHECK(ds.indices_of(data::Split::train).size() == 50);
    CHECK(ds.indices_of(data::Split::detector_train).size() == 20);
    CHECK(ds.indices_of(data::Split::rf_train).size() == 10);
    CHECK(ds.indices_of(data::Split::test).size() == 20);
    auto [xs, ys] = ds.split_view(data::Split::rf_train);
    CHECK(xs.size() == 10);
    CHECK(ys.size() == 10);
    CHECK_THROWS(data::assign_splits(ds, 0.8, 0.3, 0.2, 9));
}
