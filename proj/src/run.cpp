#include "advdef/run.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace advdef::run {

namespace {

namespace fs = std::filesystem;

std::string out_path(const config::RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.output_dir);
    return (fs::path(cfg.output_dir) / name).string();
}

std::string classifier_path(const config::RunConfig& cfg) { return out_path(cfg, "classifier.bin"); }
std::string surrogate_path(const config::RunConfig& cfg) { return out_path(cfg, "surrogate.bin"); }
std::string defended_path(const config::RunConfig& cfg) { return out_path(cfg, "defended.bin"); }

std::string advset_path(const config::RunConfig& cfg, const std::string& split,
                        const std::string& tag) {
    return out_path(cfg, "advset_" + split + "_" + tag + ".bin");
}

std::string split_name(data::Split s) {
    switch (s) {
        case data::Split::train: return "train";
        case data::Split::detector_train: return "detector_train";
        case data::Split::rf_train: return "rf_train";
        case data::Split::test: return "test";
    }
    return "?";
}

/// Model files carry no hash header of their own; a sibling stamp file pins
/// the config they belong to.
void write_stamp(const std::string& model_path, const std::string& hash) {
    std::ofstream out(model_path + ".hash");
    out << hash << "\n";
}

void check_stamp(const std::string& model_path, const std::string& hash) {
    std::ifstream in(model_path + ".hash");
    std::string stored;
    if (!(in >> stored))
        throw serialize::ConfigHashMismatchError(model_path + ": missing hash stamp");
    if (stored != hash)
        throw serialize::ConfigHashMismatchError(model_path + ": artifact was built under config " +
                                                 stored + ", current config is " + hash);
}

interpret::IGConfig ig_of(const config::RunConfig& cfg) {
    interpret::IGConfig ig;
    ig.steps = static_cast<int>(cfg.ig_steps);
    return ig;
}

std::vector<pipeline::NamedAttack> all_attacks(const config::RunConfig& cfg) {
    std::vector<pipeline::NamedAttack> all = cfg.linf_attacks;
    all.insert(all.end(), cfg.l2_attacks.begin(), cfg.l2_attacks.end());
    return all;
}

/// Successful examples of one persisted set, as a detection group.
detect::AdversarialGroup group_of(const serialize::AdversarialSet& set, detect::TriClass label) {
    detect::AdversarialGroup g;
    g.tag = set.attack_tag;
    g.label = label;
    for (std::size_t i = 0; i < set.results.size(); ++i) {
        if (!set.results[i].success) continue;
        g.images.push_back(set.results[i].image);
        g.true_labels.push_back(set.true_labels[i]);
    }
    return g;
}

std::vector<detect::AdversarialGroup> load_groups(const config::RunConfig& cfg,
                                                  const std::string& hash, data::Split split) {
    std::vector<detect::AdversarialGroup> groups;
    for (const auto& na : cfg.l2_attacks)
        groups.push_back(group_of(
            serialize::load_adversarial_set(advset_path(cfg, split_name(split), na.tag), hash),
            detect::TriClass::l2_attacked));
    for (const auto& na : cfg.linf_attacks)
        groups.push_back(group_of(
            serialize::load_adversarial_set(advset_path(cfg, split_name(split), na.tag), hash),
            detect::TriClass::linf_attacked));
    return groups;
}

}  // namespace

ClassifierReport train_classifier(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [train_x, train_y] = ds.split_view(data::Split::train);
    auto [test_x, test_y] = ds.split_view(data::Split::test);

    nn::Network net = config::make_classifier(config::arch_preset_from_name(cfg.architecture),
                                              ds.images.front().shape, ds.class_count, cfg.seed);
    nn::train(net, train_x, train_y, cfg.train);

    ClassifierReport report;
    report.train_accuracy = nn::accuracy(net, train_x, train_y);
    report.test_accuracy = nn::accuracy(net, test_x, test_y);
    report.model_path = classifier_path(cfg);
    nn::save_model(net, report.model_path);
    write_stamp(report.model_path, hash);

    if (cfg.threat_model == "black_box") {
        nn::Network surrogate =
            config::make_classifier(config::arch_preset_from_name(cfg.surrogate_architecture),
                                    ds.images.front().shape, ds.class_count, cfg.surrogate_seed);
        nn::TrainConfig scfg = cfg.train;
        scfg.seed = cfg.surrogate_seed;
        nn::train(surrogate, train_x, train_y, scfg);
        nn::save_model(surrogate, surrogate_path(cfg));
        write_stamp(surrogate_path(cfg), hash);
    }
    return report;
}

AttackGenReport gen_attacks(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    check_stamp(classifier_path(cfg), hash);
    const nn::Network net = nn::load_model(classifier_path(cfg));
    const data::Dataset ds = config::load_dataset(cfg.dataset);

    AttackGenReport report;
    for (data::Split split : {data::Split::detector_train, data::Split::rf_train, data::Split::test}) {
        const auto indices = ds.indices_of(split);
        std::vector<Tensor> xs;
        std::vector<int> ys;
        for (std::size_t idx : indices) {
            xs.push_back(ds.images[idx]);
            ys.push_back(ds.label_index(idx));
        }
        for (const auto& na : all_attacks(cfg)) {
            const attack::BatchResult batch = attack::attack_batch(net, xs, ys, na.config);
            serialize::AdversarialSet set;
            set.attack_tag = na.tag;
            for (std::size_t i = 0; i < batch.results.size(); ++i) {
                set.source_indices.push_back(static_cast<std::uint32_t>(indices[i]));
                set.true_labels.push_back(ys[i]);
                set.results.push_back(batch.results[i]);
            }
            const std::string path = advset_path(cfg, split_name(split), na.tag);
            serialize::save_adversarial_set(set, path, hash);
            report.entries.push_back({split_name(split), na.tag, path,
                                      static_cast<int>(batch.results.size()), batch.success_rate});
        }
    }
    return report;
}

DetectorReport build_detector(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    check_stamp(classifier_path(cfg), hash);
    const nn::Network net = nn::load_model(classifier_path(cfg));
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    const interpret::IGConfig ig = ig_of(cfg);

    if (cfg.vaccinated && (cfg.l2_attacks.empty() || cfg.linf_attacks.empty()))
        throw detect::ConfigError("vaccinated detector requires attacks in both norm families");

    DetectorReport report;
    auto [det_x, det_y] = ds.split_view(data::Split::detector_train);
    detect::DetectionBuildReport brep;
    const auto det_samples = detect::build_samples_from_groups(
        net, det_x, det_y, load_groups(cfg, hash, data::Split::detector_train), ig, true, &brep);
    report.sub_train_counts = brep.class_counts;

    std::vector<detect::SubDetector> subs;
    for (int k = 0; k < 5; ++k) {
        subs.push_back(detect::train_sub_detector(static_cast<detect::SubKind>(k), det_samples,
                                                  cfg.sub_detector_train));
        const std::string path =
            out_path(cfg, "sub_" + detect::sub_kind_name(subs.back().kind) + ".bin");
        serialize::save_sub_detector(subs.back(), path, hash);
        report.paths.push_back(path);
    }

    auto [rf_x, rf_y] = ds.split_view(data::Split::rf_train);
    const auto rf_samples = detect::build_samples_from_groups(
        net, rf_x, rf_y, load_groups(cfg, hash, data::Split::rf_train), ig, true, nullptr);
    std::vector<detect::FeatureVector> features;
    std::vector<int> labels;
    for (const auto& s : rf_samples) {
        std::array<std::array<double, 3>, 5> outs;
        for (int k = 0; k < 5; ++k) outs[k] = detect::sub_detector_scores(subs[k], s);
        features.push_back(detect::to_feature_vector(outs));
        labels.push_back(s.label != detect::TriClass::clean);
    }
    const detect::Forest forest = detect::rf_train(features, labels, cfg.forest);
    report.forest_oob_error = forest.oob_error;
    const std::string fpath = out_path(cfg, "forest.bin");
    serialize::save_forest(forest, fpath, hash);
    report.paths.push_back(fpath);
    return report;
}

RectifierReport train_rectifier(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    check_stamp(classifier_path(cfg), hash);
    pipeline::DefendedModel model;
    model.classifier = nn::load_model(classifier_path(cfg));
    model.ig = ig_of(cfg);
    model.rectify_cfg = cfg.rectify;
    for (int k = 0; k < 5; ++k)
        model.subs.push_back(serialize::load_sub_detector(
            out_path(cfg, "sub_" + detect::sub_kind_name(static_cast<detect::SubKind>(k)) + ".bin"),
            hash));
    model.forest = serialize::load_forest(out_path(cfg, "forest.bin"), hash);

    // fine-tuning source: a targeted DDN set when configured, else the first
    // l2 attack, else the first configured attack
    const pipeline::NamedAttack* source = nullptr;
    for (const auto& na : cfg.l2_attacks)
        if (na.config.method == attack::Method::DDN && na.config.targeted) source = &na;
    if (!source && !cfg.l2_attacks.empty()) source = &cfg.l2_attacks.front();
    if (!source && !cfg.linf_attacks.empty()) source = &cfg.linf_attacks.front();
    if (!source) throw detect::ConfigError("train-rectifier requires at least one attack");

    const auto set = serialize::load_adversarial_set(
        advset_path(cfg, "detector_train", source->tag), hash);

    std::vector<Tensor> adv_images;
    std::vector<int> adv_labels;
    std::vector<detect::Detection> detections;
    for (std::size_t i = 0; i < set.results.size(); ++i) {
        if (!set.results[i].success) continue;
        adv_images.push_back(set.results[i].image);
        adv_labels.push_back(set.true_labels[i]);
        detections.push_back(detect::ensemble_detect(model.classifier, model.subs, model.forest,
                                                     set.results[i].image, model.ig));
    }

    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [train_x, train_y] = ds.split_view(data::Split::train);

    model.rectified_classifier = model.classifier;
    const auto ft = rectify::finetune_on_rectified(model.rectified_classifier, detections,
                                                   adv_images, adv_labels, train_x, train_y,
                                                   cfg.rectify, cfg.finetune);

    RectifierReport report;
    report.rectified_count = ft.rectified_count;
    report.clean_count = ft.clean_count;
    report.defended_model_path = defended_path(cfg);
    serialize::save_defended_model(model, report.defended_model_path, hash);
    return report;
}

namespace {

pipeline::DefendedModel load_defended(const config::RunConfig& cfg, const std::string& hash) {
    return serialize::load_defended_model(defended_path(cfg), hash);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

EvaluateReport evaluate(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    const pipeline::DefendedModel model = load_defended(cfg, hash);
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [test_x, test_y] = ds.split_view(data::Split::test);

    EvaluateReport out;
    if (cfg.threat_model == "black_box") {
        check_stamp(surrogate_path(cfg), hash);
        const nn::Network surrogate = nn::load_model(surrogate_path(cfg));
        out.report = pipeline::run_black_box(model, surrogate, test_x, test_y, all_attacks(cfg));
    } else if (cfg.threat_model == "grey_box") {
        out.report = pipeline::run_grey_box(model, test_x, test_y, all_attacks(cfg));
    } else {
        throw detect::ConfigError("evaluate supports grey_box and black_box; use the whitebox stage");
    }
    out.report.config_hash = hash;
    out.csv_path = out_path(cfg, "report.csv");
    write_text(out.csv_path, out.report.to_csv());

    // per-example audit records over the clean test set
    std::ostringstream audit;
    for (std::size_t i = 0; i < test_x.size(); ++i) {
        auto [probs, rec] = pipeline::classify_defended(model, test_x[i], i);
        audit << "{\"id\":" << i << ",\"verdict\":" << rec.verdict << ",\"vote_fraction\":"
              << rec.vote_fraction << ",\"interpreter\":" << rec.selected_interpreter
              << ",\"label\":" << rec.label << ",\"config\":\"" << hash << "\"}\n";
    }
    out.audit_path = out_path(cfg, "audit.jsonl");
    write_text(out.audit_path, audit.str());
    return out;
}

ErasureReport toy_erasure(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    check_stamp(classifier_path(cfg), hash);
    const nn::Network net = nn::load_model(classifier_path(cfg));
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [test_x, test_y] = ds.split_view(data::Split::test);

    ErasureReport report;
    report.rows = pipeline::toy_erasure_experiment(net, test_x, test_y, cfg.l2_attacks,
                                                   cfg.erasure_fraction);
    std::ostringstream csv;
    csv << "attack,n_successful,success_before,success_after,config_hash\n";
    for (const auto& r : report.rows)
        csv << r.attack << ',' << r.n_successful << ',' << r.success_before << ','
            << r.success_after << ',' << hash << "\n";
    report.csv_path = out_path(cfg, "erasure.csv");
    write_text(report.csv_path, csv.str());
    return report;
}

EvaluateReport whitebox(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    const pipeline::DefendedModel model = load_defended(cfg, hash);
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [test_x, test_y] = ds.split_view(data::Split::test);

    std::vector<pipeline::NamedAttack> targeted;
    for (const auto& na : all_attacks(cfg))
        if (na.config.targeted) targeted.push_back(na);
    if (targeted.empty())
        throw detect::ConfigError("whitebox requires at least one targeted attack in the config");

    EvaluateReport out;
    out.report = pipeline::run_white_box(model, test_x, test_y, targeted);
    out.report.config_hash = hash;
    out.csv_path = out_path(cfg, "whitebox.csv");
    write_text(out.csv_path, out.report.to_csv());
    return out;
}

TransferReport transfer(const config::RunConfig& cfg) {
    const std::string hash = config::config_hash(cfg);
    const pipeline::DefendedModel model = load_defended(cfg, hash);
    const data::Dataset ds = config::load_dataset(cfg.dataset);
    auto [test_x, test_y] = ds.split_view(data::Split::test);

    pipeline::TransferConfig tc;
    for (const auto& na : all_attacks(cfg))
        if (na.config.targeted) tc.base_attacks.push_back(na);
    if (tc.base_attacks.empty())
        throw detect::ConfigError("transfer requires at least one targeted attack in the config");
    tc.ig_attack_steps = std::min(8, static_cast<int>(cfg.ig_steps));

    TransferReport report;
    std::ostringstream csv;
    csv << "targeted,fooled_ORG,fooled_VG,fooled_IG,fooled_GBP,fooled_LRP,fooled_ensemble,"
           "escaped_success_rate,n,config_hash\n";
    for (detect::SubKind kind : {detect::SubKind::ORG, detect::SubKind::VG, detect::SubKind::IG,
                                 detect::SubKind::GBP}) {
        report.rows.push_back(pipeline::run_transfer_attack(model, kind, test_x, test_y, tc));
        const auto& r = report.rows.back();
        csv << "to" << detect::sub_kind_name(kind);
        for (double f : r.sub_fooled_rate) csv << ',' << f;
        csv << ',' << r.ensemble_fooled_rate << ',' << r.escaped_success_rate << ','
            << r.n_examples << ',' << hash << "\n";
    }
    report.csv_path = out_path(cfg, "transfer.csv");
    write_text(report.csv_path, csv.str());
    return report;
}

EvaluateReport full_pipeline(const config::RunConfig& cfg) {
    train_classifier(cfg);
    gen_attacks(cfg);
    build_detector(cfg);
    train_rectifier(cfg);
    return evaluate(cfg);
}

}  // namespace advdef::run
