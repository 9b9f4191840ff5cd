#include "advdef/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace advdef::config {

using nlohmann::json;

ArchPreset arch_preset_from_name(const std::string& name) {
    if (name == "desk_small") return ArchPreset::desk_small;
    if (name == "desk_alt") return ArchPreset::desk_alt;
    if (name == "desk_tiny") return ArchPreset::desk_tiny;
    throw ValidationError("unknown architecture preset: " + name);
}

nn::Network make_classifier(ArchPreset preset, const std::vector<int>& input_shape, int classes,
                            std::uint64_t seed) {
    using nn::LayerSpec;
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    switch (preset) {
        case ArchPreset::desk_small: {
            const int c1 = 6, c2 = 12;
            const int hq = ((h - 2) / 2 - 2) / 2, wq = ((w - 2) / 2 - 2) / 2;
            return nn::make_network(
                input_shape,
                {LayerSpec::conv2d(c, c1, 3), LayerSpec::relu(), LayerSpec::maxpool(2),
                 LayerSpec::conv2d(c1, c2, 3), LayerSpec::relu(), LayerSpec::maxpool(2),
                 LayerSpec::flatten(), LayerSpec::dense(c2 * hq * wq, 64), LayerSpec::relu(),
                 LayerSpec::dense(64, classes), LayerSpec::softmax()},
                seed);
        }
        case ArchPreset::desk_alt: {
            // surrogate family: wider 5x5 stem, single pool, different head
            const int c1 = 8;
            const int hq = (h - 4) / 2, wq = (w - 4) / 2;
            return nn::make_network(
                input_shape,
                {LayerSpec::conv2d(c, c1, 5), LayerSpec::relu(), LayerSpec::maxpool(2),
                 LayerSpec::flatten(), LayerSpec::dense(c1 * hq * wq, 48), LayerSpec::relu(),
                 LayerSpec::dense(48, classes), LayerSpec::softmax()},
                seed);
        }
        case ArchPreset::desk_tiny: {
            return nn::make_network(input_shape,
                                    {LayerSpec::flatten(),
                                     LayerSpec::dense(c * h * w, 32), LayerSpec::relu(),
                                     LayerSpec::dense(32, classes), LayerSpec::softmax()},
                                    seed);
        }
    }
    throw ValidationError("unknown architecture preset");
}

// ---------------------------------------------------------------------------
// JSON parsing with unknown-key rejection
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ValidationError("unknown config key: " + path + key);
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

nn::TrainConfig parse_train(const json& j, const std::string& path) {
    reject_unknown(j, {"learning_rate", "batch_size", "epochs", "seed"}, path);
    nn::TrainConfig t;
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.epochs = j.value("epochs", t.epochs);
    t.seed = j.value("seed", t.seed);
    require(t.learning_rate > 0.0, path + "learning_rate must be positive");
    require(t.epochs >= 1, path + "epochs must be >= 1");
    require(t.batch_size >= 1, path + "batch_size must be >= 1");
    return t;
}

attack::Method attack_method_from(const std::string& name) {
    if (name == "FGSM") return attack::Method::FGSM;
    if (name == "PGD") return attack::Method::PGD;
    if (name == "DeepFool") return attack::Method::DeepFool;
    if (name == "CW") return attack::Method::CW;
    if (name == "DDN") return attack::Method::DDN;
    if (name == "OnePixel") return attack::Method::OnePixel;
    throw ValidationError("unknown attack method: " + name);
}

attack::Norm norm_from(const std::string& name) {
    if (name == "l0") return attack::Norm::l0;
    if (name == "l2") return attack::Norm::l2;
    if (name == "linf") return attack::Norm::linf;
    throw ValidationError("unknown norm: " + name);
}

pipeline::NamedAttack parse_attack(const json& j, const std::string& path) {
    reject_unknown(j,
                   {"tag", "method", "norm", "epsilon", "step_size", "iterations", "targeted",
                    "target_class", "seed", "pgd_random_start", "deepfool_overshoot",
                    "cw_confidence", "cw_lr", "cw_initial_const", "cw_const_rounds",
                    "ddn_init_norm", "ddn_adjust", "pixel_budget", "population"},
                   path);
    pipeline::NamedAttack na;
    require(j.contains("method"), path + "method is required");
    na.config.method = attack_method_from(j.at("method").get<std::string>());
    if (j.contains("norm")) na.config.norm = norm_from(j.at("norm").get<std::string>());
    na.config.epsilon = j.value("epsilon", na.config.epsilon);
    na.config.step_size = j.value("step_size", na.config.step_size);
    na.config.iterations = j.value("iterations", na.config.iterations);
    na.config.targeted = j.value("targeted", na.config.targeted);
    na.config.target_class = j.value("target_class", na.config.target_class);
    na.config.seed = j.value("seed", na.config.seed);
    na.config.pgd_random_start = j.value("pgd_random_start", na.config.pgd_random_start);
    na.config.deepfool_overshoot = j.value("deepfool_overshoot", na.config.deepfool_overshoot);
    na.config.cw_confidence = j.value("cw_confidence", na.config.cw_confidence);
    na.config.cw_lr = j.value("cw_lr", na.config.cw_lr);
    na.config.cw_initial_const = j.value("cw_initial_const", na.config.cw_initial_const);
    na.config.cw_const_rounds = j.value("cw_const_rounds", na.config.cw_const_rounds);
    na.config.ddn_init_norm = j.value("ddn_init_norm", na.config.ddn_init_norm);
    na.config.ddn_adjust = j.value("ddn_adjust", na.config.ddn_adjust);
    na.config.pixel_budget = j.value("pixel_budget", na.config.pixel_budget);
    na.config.population = j.value("population", na.config.population);
    require(na.config.epsilon >= 0.0, path + "epsilon must be nonnegative");
    require(na.config.step_size >= 0.0, path + "step_size must be nonnegative");
    require(na.config.iterations >= 1, path + "iterations must be >= 1");
    na.tag = j.value("tag", std::string(attack::method_name(na.config.method)) +
                                (na.config.targeted ? "-T" : "-U"));
    return na;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"dataset", "architecture", "train", "attacks", "vaccinated", "detector",
                    "rectify", "finetune", "threat_model", "surrogate", "ig_steps",
                    "erasure_fraction", "seed", "output_dir"},
                   "");
    RunConfig cfg;
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d,
                       {"kind", "images_path", "labels_path", "n", "rows", "cols", "channels",
                        "classes", "noise", "max_shift", "seed", "train_frac", "detector_frac",
                        "rf_frac", "split_seed"},
                       "dataset.");
        cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
        cfg.dataset.images_path = d.value("images_path", std::string());
        cfg.dataset.labels_path = d.value("labels_path", std::string());
        cfg.dataset.synth.n = d.value("n", cfg.dataset.synth.n);
        cfg.dataset.synth.rows = d.value("rows", cfg.dataset.synth.rows);
        cfg.dataset.synth.cols = d.value("cols", cfg.dataset.synth.cols);
        cfg.dataset.synth.channels = d.value("channels", cfg.dataset.synth.channels);
        cfg.dataset.synth.classes = d.value("classes", cfg.dataset.synth.classes);
        cfg.dataset.synth.noise = d.value("noise", cfg.dataset.synth.noise);
        cfg.dataset.synth.max_shift = d.value("max_shift", cfg.dataset.synth.max_shift);
        cfg.dataset.synth.seed = d.value("seed", cfg.dataset.synth.seed);
        cfg.dataset.train_frac = d.value("train_frac", cfg.dataset.train_frac);
        cfg.dataset.detector_frac = d.value("detector_frac", cfg.dataset.detector_frac);
        cfg.dataset.rf_frac = d.value("rf_frac", cfg.dataset.rf_frac);
        cfg.dataset.split_seed = d.value("split_seed", cfg.dataset.split_seed);
        if (cfg.dataset.kind == "synth-blobs") cfg.dataset.synth.kind = data::SynthKind::blobs;
        else if (cfg.dataset.kind == "synth-stripes") cfg.dataset.synth.kind = data::SynthKind::stripes;
        else if (cfg.dataset.kind == "synth-templates") cfg.dataset.synth.kind = data::SynthKind::templates;
        else if (cfg.dataset.kind == "idx") {
            require(!cfg.dataset.images_path.empty(), "dataset.images_path is required for idx");
            require(!cfg.dataset.labels_path.empty(), "dataset.labels_path is required for idx");
        } else {
            throw ValidationError("unknown dataset.kind: " + cfg.dataset.kind);
        }
    }
    cfg.architecture = j.value("architecture", cfg.architecture);
    arch_preset_from_name(cfg.architecture);  // validate
    if (j.contains("train")) cfg.train = parse_train(j.at("train"), "train.");
    if (j.contains("attacks")) {
        const json& a = j.at("attacks");
        reject_unknown(a, {"linf", "l2"}, "attacks.");
        if (a.contains("linf")) {
            int i = 0;
            for (const json& e : a.at("linf"))
                cfg.linf_attacks.push_back(
                    parse_attack(e, "attacks.linf[" + std::to_string(i++) + "]."));
        }
        if (a.contains("l2")) {
            int i = 0;
            for (const json& e : a.at("l2"))
                cfg.l2_attacks.push_back(parse_attack(e, "attacks.l2[" + std::to_string(i++) + "]."));
        }
    }
    cfg.vaccinated = j.value("vaccinated", cfg.vaccinated);
    if (j.contains("detector")) {
        const json& d = j.at("detector");
        reject_unknown(d, {"trees", "max_depth", "feature_subsample", "min_samples_leaf", "seed",
                           "subdetector_train"},
                       "detector.");
        cfg.forest.n_trees = d.value("trees", cfg.forest.n_trees);
        cfg.forest.max_depth = d.value("max_depth", cfg.forest.max_depth);
        cfg.forest.feature_subsample = d.value("feature_subsample", cfg.forest.feature_subsample);
        cfg.forest.min_samples_leaf = d.value("min_samples_leaf", cfg.forest.min_samples_leaf);
        cfg.forest.seed = d.value("seed", cfg.forest.seed);
        require(cfg.forest.n_trees >= 1, "detector.trees must be >= 1");
        require(cfg.forest.feature_subsample >= 1 && cfg.forest.feature_subsample <= 15,
                "detector.feature_subsample must be in [1,15]");
        if (d.contains("subdetector_train"))
            cfg.sub_detector_train = parse_train(d.at("subdetector_train"), "detector.subdetector_train.");
    }
    if (j.contains("rectify")) {
        const json& r = j.at("rectify");
        reject_unknown(r, {"threshold_ratio", "erase_prob", "duplicates", "seed"}, "rectify.");
        cfg.rectify.threshold_ratio = r.value("threshold_ratio", cfg.rectify.threshold_ratio);
        cfg.rectify.erase_prob = r.value("erase_prob", cfg.rectify.erase_prob);
        cfg.rectify.duplicates = r.value("duplicates", cfg.rectify.duplicates);
        cfg.rectify.seed = r.value("seed", cfg.rectify.seed);
        require(cfg.rectify.threshold_ratio > 0.0 && cfg.rectify.threshold_ratio < 1.0,
                "rectify.threshold_ratio must lie in (0,1)");
        require(cfg.rectify.erase_prob >= 0.0 && cfg.rectify.erase_prob <= 1.0,
                "rectify.erase_prob must lie in [0,1]");
        require(cfg.rectify.duplicates >= 1, "rectify.duplicates must be >= 1");
    }
    if (j.contains("finetune")) cfg.finetune = parse_train(j.at("finetune"), "finetune.");
    cfg.threat_model = j.value("threat_model", cfg.threat_model);
    require(cfg.threat_model == "grey_box" || cfg.threat_model == "black_box" ||
                cfg.threat_model == "white_box",
            "threat_model must be grey_box, black_box or white_box");
    if (j.contains("surrogate")) {
        const json& s = j.at("surrogate");
        reject_unknown(s, {"architecture", "seed"}, "surrogate.");
        cfg.surrogate_architecture = s.value("architecture", cfg.surrogate_architecture);
        arch_preset_from_name(cfg.surrogate_architecture);
        cfg.surrogate_seed = s.value("seed", cfg.surrogate_seed);
    }
    cfg.ig_steps = j.value("ig_steps", cfg.ig_steps);
    require(cfg.ig_steps >= 1, "ig_steps must be >= 1");
    cfg.erasure_fraction = j.value("erasure_fraction", cfg.erasure_fraction);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

// ---------------------------------------------------------------------------
// Canonical serialization and hashing
// ---------------------------------------------------------------------------

namespace {

json attack_to_json(const pipeline::NamedAttack& na) {
    return json{{"tag", na.tag},
                {"method", attack::method_name(na.config.method)},
                {"norm", attack::norm_name(na.config.norm)},
                {"epsilon", na.config.epsilon},
                {"step_size", na.config.step_size},
                {"iterations", na.config.iterations},
                {"targeted", na.config.targeted},
                {"target_class", na.config.target_class},
                {"seed", na.config.seed},
                {"pgd_random_start", na.config.pgd_random_start},
                {"deepfool_overshoot", na.config.deepfool_overshoot},
                {"cw_confidence", na.config.cw_confidence},
                {"cw_lr", na.config.cw_lr},
                {"cw_initial_const", na.config.cw_initial_const},
                {"cw_const_rounds", na.config.cw_const_rounds},
                {"ddn_init_norm", na.config.ddn_init_norm},
                {"ddn_adjust", na.config.ddn_adjust},
                {"pixel_budget", na.config.pixel_budget},
                {"population", na.config.population}};
}

json train_to_json(const nn::TrainConfig& t) {
    return json{{"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"seed", t.seed}};
}

}  // namespace

std::string canonical_json(const RunConfig& cfg) {
    json j;
    j["dataset"] = {{"kind", cfg.dataset.kind},
                    {"images_path", cfg.dataset.images_path},
                    {"labels_path", cfg.dataset.labels_path},
                    {"n", cfg.dataset.synth.n},
                    {"rows", cfg.dataset.synth.rows},
                    {"cols", cfg.dataset.synth.cols},
                    {"channels", cfg.dataset.synth.channels},
                    {"classes", cfg.dataset.synth.classes},
                    {"noise", cfg.dataset.synth.noise},
                    {"max_shift", cfg.dataset.synth.max_shift},
                    {"seed", cfg.dataset.synth.seed},
                    {"train_frac", cfg.dataset.train_frac},
                    {"detector_frac", cfg.dataset.detector_frac},
                    {"rf_frac", cfg.dataset.rf_frac},
                    {"split_seed", cfg.dataset.split_seed}};
    j["architecture"] = cfg.architecture;
    j["train"] = train_to_json(cfg.train);
    json linf = json::array(), l2 = json::array();
    for (const auto& a : cfg.linf_attacks) linf.push_back(attack_to_json(a));
    for (const auto& a : cfg.l2_attacks) l2.push_back(attack_to_json(a));
    j["attacks"] = {{"linf", linf}, {"l2", l2}};
    j["vaccinated"] = cfg.vaccinated;
    j["detector"] = {{"trees", cfg.forest.n_trees},
                     {"max_depth", cfg.forest.max_depth},
                     {"feature_subsample", cfg.forest.feature_subsample},
                     {"min_samples_leaf", cfg.forest.min_samples_leaf},
                     {"seed", cfg.forest.seed},
                     {"subdetector_train", train_to_json(cfg.sub_detector_train)}};
    j["rectify"] = {{"threshold_ratio", cfg.rectify.threshold_ratio},
                    {"erase_prob", cfg.rectify.erase_prob},
                    {"duplicates", cfg.rectify.duplicates},
                    {"seed", cfg.rectify.seed}};
    j["finetune"] = train_to_json(cfg.finetune);
    j["threat_model"] = cfg.threat_model;
    j["surrogate"] = {{"architecture", cfg.surrogate_architecture}, {"seed", cfg.surrogate_seed}};
    j["ig_steps"] = cfg.ig_steps;
    j["erasure_fraction"] = cfg.erasure_fraction;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    return j.dump();  // nlohmann::json orders object keys, so this is canonical
}

std::string config_hash(const RunConfig& cfg) {
    const std::string s = canonical_json(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

data::Dataset load_dataset(const DatasetConfig& cfg) {
    data::Dataset ds;
    if (cfg.kind == "idx") ds = data::load_idx(cfg.images_path, cfg.labels_path);
    else ds = data::synth_dataset(cfg.synth);
    data::assign_splits(ds, cfg.train_frac, cfg.detector_frac, cfg.rf_frac, cfg.split_seed);
    return ds;
}

}  // namespace advdef::config
