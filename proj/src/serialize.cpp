#include "advdef/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace advdef::serialize {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ArtifactFormatError("artifact truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw ArtifactFormatError("artifact truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), s.size());
}

std::string get_string(std::istream& in) {
    const std::uint32_t n = get_u32(in);
    if (n > 1u << 20) throw ArtifactFormatError("implausible string length");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw ArtifactFormatError("artifact truncated");
    return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f64(out, v);
}

Tensor get_tensor(std::istream& in) {
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) throw ArtifactFormatError("implausible tensor rank");
    if (rank == 0) return Tensor();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(in));
    Tensor t(shape);
    for (double& v : t.data) v = get_f64(in);
    return t;
}

constexpr std::uint32_t kArtifactVersion = 1;

void write_header(std::ostream& out, std::uint32_t magic, const std::string& config_hash) {
    put_u32(out, magic);
    put_u32(out, kArtifactVersion);
    put_string(out, config_hash);
}

void read_header(std::istream& in, std::uint32_t magic, const std::string& expected_hash,
                 const std::string& what) {
    if (get_u32(in) != magic) throw ArtifactFormatError("bad magic in " + what);
    const std::uint32_t version = get_u32(in);
    if (version != kArtifactVersion)
        throw ArtifactVersionError(what + ": unsupported version " + std::to_string(version));
    const std::string hash = get_string(in);
    if (!expected_hash.empty() && hash != expected_hash)
        throw ConfigHashMismatchError(what + ": artifact was built under config " + hash +
                                      ", current config is " + expected_hash);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArtifactFormatError("cannot open " + path + " for writing");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactFormatError("cannot open " + path);
    return in;
}

constexpr std::uint32_t kForestMagic = 0x46524441u;   // "ADRF"
constexpr std::uint32_t kSubMagic = 0x44534441u;      // "ADSD"
constexpr std::uint32_t kAdvSetMagic = 0x53564441u;   // "ADVS"
constexpr std::uint32_t kDefendedMagic = 0x4D444441u; // "ADDM"

}  // namespace

void save_forest(const detect::Forest& forest, const std::string& path,
                 const std::string& config_hash) {
    auto out = open_out(path);
    write_header(out, kForestMagic, config_hash);
    put_u32(out, static_cast<std::uint32_t>(forest.config.n_trees));
    put_u32(out, static_cast<std::uint32_t>(forest.config.max_depth));
    put_u32(out, static_cast<std::uint32_t>(forest.config.feature_subsample));
    put_u32(out, static_cast<std::uint32_t>(forest.config.min_samples_leaf));
    put_f64(out, static_cast<double>(forest.config.seed));
    put_f64(out, forest.oob_error);
    put_u32(out, static_cast<std::uint32_t>(forest.trees.size()));
    for (const auto& tree : forest.trees) {
        put_u32(out, static_cast<std::uint32_t>(tree.nodes.size()));
        for (const auto& n : tree.nodes) {
            put_u32(out, static_cast<std::uint32_t>(n.feature + 1));
            put_f64(out, n.threshold);
            put_u32(out, static_cast<std::uint32_t>(n.left + 1));
            put_u32(out, static_cast<std::uint32_t>(n.right + 1));
            put_u32(out, static_cast<std::uint32_t>(n.class_counts[0]));
            put_u32(out, static_cast<std::uint32_t>(n.class_counts[1]));
        }
    }
}

detect::Forest load_forest(const std::string& path, const std::string& expected_hash) {
    auto in = open_in(path);
    read_header(in, kForestMagic, expected_hash, path);
    detect::Forest forest;
    forest.config.n_trees = static_cast<int>(get_u32(in));
    forest.config.max_depth = static_cast<int>(get_u32(in));
    forest.config.feature_subsample = static_cast<int>(get_u32(in));
    forest.config.min_samples_leaf = static_cast<int>(get_u32(in));
    forest.config.seed = static_cast<std::uint64_t>(get_f64(in));
    forest.oob_error = get_f64(in);
    const std::uint32_t n_trees = get_u32(in);
    if (n_trees > 1u << 20) throw ArtifactFormatError("implausible tree count");
    forest.trees.resize(n_trees);
    for (auto& tree : forest.trees) {
        const std::uint32_t n_nodes = get_u32(in);
        if (n_nodes == 0 || n_nodes > 1u << 24) throw ArtifactFormatError("implausible node count");
        tree.nodes.resize(n_nodes);
        for (auto& n : tree.nodes) {
            n.feature = static_cast<int>(get_u32(in)) - 1;
            n.threshold = get_f64(in);
            n.left = static_cast<int>(get_u32(in)) - 1;
            n.right = static_cast<int>(get_u32(in)) - 1;
            n.class_counts[0] = static_cast<int>(get_u32(in));
            n.class_counts[1] = static_cast<int>(get_u32(in));
            if (n.feature >= 15 || n.left >= static_cast<int>(n_nodes) ||
                n.right >= static_cast<int>(n_nodes))
                throw ArtifactFormatError("corrupt tree node");
        }
    }
    return forest;
}

void save_sub_detector(const detect::SubDetector& sub, const std::string& path,
                       const std::string& config_hash) {
    auto out = open_out(path);
    write_header(out, kSubMagic, config_hash);
    put_u32(out, static_cast<std::uint32_t>(sub.kind));
    put_f64(out, sub.input_scale);
    nn::write_model(sub.net, out);
}

detect::SubDetector load_sub_detector(const std::string& path, const std::string& expected_hash) {
    auto in = open_in(path);
    read_header(in, kSubMagic, expected_hash, path);
    detect::SubDetector sub;
    const std::uint32_t kind = get_u32(in);
    if (kind > 4) throw ArtifactFormatError("unknown sub-detector kind");
    sub.kind = static_cast<detect::SubKind>(kind);
    sub.input_scale = get_f64(in);
    sub.net = nn::read_model(in);
    return sub;
}

void save_adversarial_set(const AdversarialSet& set, const std::string& path,
                          const std::string& config_hash) {
    if (set.source_indices.size() != set.results.size() ||
        set.true_labels.size() != set.results.size())
        throw std::invalid_argument("adversarial set: ragged columns");
    auto out = open_out(path);
    write_header(out, kAdvSetMagic, config_hash);
    put_string(out, set.attack_tag);
    put_u32(out, static_cast<std::uint32_t>(set.results.size()));
    for (std::size_t i = 0; i < set.results.size(); ++i) {
        put_u32(out, set.source_indices[i]);
        put_u32(out, static_cast<std::uint32_t>(set.true_labels[i]));
        put_u32(out, set.results[i].success ? 1 : 0);
        put_f64(out, set.results[i].distance);
        put_u32(out, static_cast<std::uint32_t>(set.results[i].iterations_used));
        put_tensor(out, set.results[i].image);
    }
}

AdversarialSet load_adversarial_set(const std::string& path, const std::string& expected_hash) {
    auto in = open_in(path);
    read_header(in, kAdvSetMagic, expected_hash, path);
    AdversarialSet set;
    set.attack_tag = get_string(in);
    const std::uint32_t n = get_u32(in);
    if (n > 1u << 24) throw ArtifactFormatError("implausible example count");
    set.source_indices.resize(n);
    set.true_labels.resize(n);
    set.results.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        set.source_indices[i] = get_u32(in);
        set.true_labels[i] = static_cast<int>(get_u32(in));
        set.results[i].success = get_u32(in) != 0;
        set.results[i].distance = get_f64(in);
        set.results[i].iterations_used = static_cast<int>(get_u32(in));
        set.results[i].image = get_tensor(in);
    }
    return set;
}

void save_defended_model(const pipeline::DefendedModel& model, const std::string& path,
                         const std::string& config_hash) {
    if (model.subs.size() != 5)
        throw std::invalid_argument("defended model requires five sub-detectors");
    auto out = open_out(path);
    write_header(out, kDefendedMagic, config_hash);
    nn::write_model(model.classifier, out);
    nn::write_model(model.rectified_classifier, out);
    for (const auto& sub : model.subs) {
        put_u32(out, static_cast<std::uint32_t>(sub.kind));
        put_f64(out, sub.input_scale);
        nn::write_model(sub.net, out);
    }
    put_u32(out, static_cast<std::uint32_t>(model.forest.trees.size()));
    for (const auto& tree : model.forest.trees) {
        put_u32(out, static_cast<std::uint32_t>(tree.nodes.size()));
        for (const auto& n : tree.nodes) {
            put_u32(out, static_cast<std::uint32_t>(n.feature + 1));
            put_f64(out, n.threshold);
            put_u32(out, static_cast<std::uint32_t>(n.left + 1));
            put_u32(out, static_cast<std::uint32_t>(n.right + 1));
            put_u32(out, static_cast<std::uint32_t>(n.class_counts[0]));
            put_u32(out, static_cast<std::uint32_t>(n.class_counts[1]));
        }
    }
    put_f64(out, model.rectify_cfg.threshold_ratio);
    put_f64(out, model.rectify_cfg.erase_prob);
    put_u32(out, static_cast<std::uint32_t>(model.rectify_cfg.duplicates));
    put_f64(out, static_cast<double>(model.rectify_cfg.seed));
    put_u32(out, static_cast<std::uint32_t>(model.ig.steps));
}

pipeline::DefendedModel load_defended_model(const std::string& path,
                                            const std::string& expected_hash) {
    auto in = open_in(path);
    read_header(in, kDefendedMagic, expected_hash, path);
    pipeline::DefendedModel model;
    model.classifier = nn::read_model(in);
    model.rectified_classifier = nn::read_model(in);
    for (int k = 0; k < 5; ++k) {
        detect::SubDetector sub;
        const std::uint32_t kind = get_u32(in);
        if (kind > 4) throw ArtifactFormatError("unknown sub-detector kind");
        sub.kind = static_cast<detect::SubKind>(kind);
        sub.input_scale = get_f64(in);
        sub.net = nn::read_model(in);
        model.subs.push_back(std::move(sub));
    }
    const std::uint32_t n_trees = get_u32(in);
    if (n_trees == 0 || n_trees > 1u << 20) throw ArtifactFormatError("implausible tree count");
    model.forest.trees.resize(n_trees);
    for (auto& tree : model.forest.trees) {
        const std::uint32_t n_nodes = get_u32(in);
        if (n_nodes == 0 || n_nodes > 1u << 24) throw ArtifactFormatError("implausible node count");
        tree.nodes.resize(n_nodes);
        for (auto& n : tree.nodes) {
            n.feature = static_cast<int>(get_u32(in)) - 1;
            n.threshold = get_f64(in);
            n.left = static_cast<int>(get_u32(in)) - 1;
            n.right = static_cast<int>(get_u32(in)) - 1;
            n.class_counts[0] = static_cast<int>(get_u32(in));
            n.class_counts[1] = static_cast<int>(get_u32(in));
        }
    }
    model.rectify_cfg.threshold_ratio = get_f64(in);
    model.rectify_cfg.erase_prob = get_f64(in);
    model.rectify_cfg.duplicates = static_cast<int>(get_u32(in));
    model.rectify_cfg.seed = static_cast<std::uint64_t>(get_f64(in));
    model.ig.steps = static_cast<int>(get_u32(in));
    return model;
}

}  // namespace advdef::serialize
