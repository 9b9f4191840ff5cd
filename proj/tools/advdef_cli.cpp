// Command-line surface over the defense pipeline stages. Every subcommand
// reads one JSON run configuration and writes its artifacts under the
// configured output directory, stamped with the config hash.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "advdef/config.hpp"
#include "advdef/run.hpp"

namespace {

using advdef::config::RunConfig;

struct StageError {
    std::string type;
    std::string message;
};

int fail(const StageError& e) {
    // machine-readable error record on stderr
    std::cerr << "{\"error\":\"" << e.type << "\",\"message\":\"";
    for (char c : e.message) {
        if (c == '"' || c == '\\') std::cerr << '\\';
        if (c == '\n') {
            std::cerr << "\\n";
            continue;
        }
        std::cerr << c;
    }
    std::cerr << "\"}\n";
    return 1;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return 0;
    } catch (const advdef::config::ValidationError& e) {
        return fail({"config_validation", e.what()});
    } catch (const advdef::serialize::ConfigHashMismatchError& e) {
        return fail({"config_hash_mismatch", e.what()});
    } catch (const advdef::serialize::ArtifactFormatError& e) {
        return fail({"artifact_format", e.what()});
    } catch (const std::exception& e) {
        return fail({"runtime", e.what()});
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpreter-ensemble adversarial example defense toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("-c,--config", config_path, "JSON run configuration")->required();

    auto* cmd_train = app.add_subcommand("train-classifier", "Train the target classifier");
    auto* cmd_attacks = app.add_subcommand("gen-attacks", "Generate adversarial sets per split");
    auto* cmd_detector = app.add_subcommand("build-detector",
                                            "Train sub-detectors and the forest ensemble");
    auto* cmd_rectifier = app.add_subcommand(
        "train-rectifier", "Fine-tune the classifier on rectified duplicates");
    auto* cmd_eval = app.add_subcommand("evaluate", "Grey/black-box end-to-end evaluation");
    auto* cmd_erasure = app.add_subcommand("toy-erasure", "Top-|gradient| pixel erasure experiment");
    auto* cmd_whitebox = app.add_subcommand("whitebox", "White-box composite-target evaluation");
    auto* cmd_transfer = app.add_subcommand("transfer", "Detector-targeted transferable attacks");

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    const int config_status = guarded([&] { cfg = advdef::config::load_run_config(config_path); });
    if (config_status != 0) return config_status;
    const std::string hash = advdef::config::config_hash(cfg);

    if (cmd_train->parsed())
        return guarded([&] {
            const auto r = advdef::run::train_classifier(cfg);
            std::printf("trained classifier: train_acc=%.4f test_acc=%.4f -> %s (config %s)\n",
                        r.train_accuracy, r.test_accuracy, r.model_path.c_str(), hash.c_str());
        });
    if (cmd_attacks->parsed())
        return guarded([&] {
            const auto r = advdef::run::gen_attacks(cfg);
            for (const auto& e : r.entries)
                std::printf("%s %s: n=%d success_rate=%.3f -> %s\n", e.split.c_str(), e.tag.c_str(),
                            e.n, e.success_rate, e.path.c_str());
        });
    if (cmd_detector->parsed())
        return guarded([&] {
            const auto r = advdef::run::build_detector(cfg);
            std::printf("detector built: counts clean=%d l2=%d linf=%d forest_oob=%.4f\n",
                        r.sub_train_counts[0], r.sub_train_counts[1], r.sub_train_counts[2],
                        r.forest_oob_error);
        });
    if (cmd_rectifier->parsed())
        return guarded([&] {
            const auto r = advdef::run::train_rectifier(cfg);
            std::printf("rectifier tuned: rectified=%d clean=%d -> %s\n", r.rectified_count,
                        r.clean_count, r.defended_model_path.c_str());
        });
    if (cmd_eval->parsed())
        return guarded([&] {
            const auto r = advdef::run::evaluate(cfg);
            std::printf("%s", r.report.to_csv().c_str());
            std::printf("report -> %s\naudit -> %s\n", r.csv_path.c_str(), r.audit_path.c_str());
        });
    if (cmd_erasure->parsed())
        return guarded([&] {
            const auto r = advdef::run::toy_erasure(cfg);
            for (const auto& row : r.rows)
                std::printf("%s: n=%d before=%.3f after=%.3f\n", row.attack.c_str(),
                            row.n_successful, row.success_before, row.success_after);
            std::printf("erasure -> %s\n", r.csv_path.c_str());
        });
    if (cmd_whitebox->parsed())
        return guarded([&] {
            const auto r = advdef::run::whitebox(cfg);
            std::printf("%s", r.report.to_csv().c_str());
            std::printf("whitebox -> %s\n", r.csv_path.c_str());
        });
    if (cmd_transfer->parsed())
        return guarded([&] {
            const auto r = advdef::run::transfer(cfg);
            for (const auto& row : r.rows)
                std::printf("to%s: ensemble_fooled=%.3f escaped_success=%.3f n=%d\n",
                            advdef::detect::sub_kind_name(row.targeted).c_str(),
                            row.ensemble_fooled_rate, row.escaped_success_rate, row.n_examples);
            std::printf("transfer -> %s\n", r.csv_path.c_str());
        });
    return 1;
}
