#pragma once

#include <string>
#include <vector>

#include "advdef/config.hpp"
#include "advdef/pipeline.hpp"
#include "advdef/serialize.hpp"

namespace advdef::run {

/// Stage outputs land under cfg.output_dir, every artifact stamped with the
/// config hash; reusing an artifact under a different config is a hard error.

struct ClassifierReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::string model_path;
};
ClassifierReport train_classifier(const config::RunConfig& cfg);

struct AttackGenReport {
    struct Entry {
        std::string split, tag, path;
        int n = 0;
        double success_rate = 0.0;
    };
    std::vector<Entry> entries;
};
AttackGenReport gen_attacks(const config::RunConfig& cfg);

struct DetectorReport {
    std::array<int, 3> sub_train_counts{};
    double forest_oob_error = 0.0;
    std::vector<std::string> paths;
};
DetectorReport build_detector(const config::RunConfig& cfg);

struct RectifierReport {
    int rectified_count = 0;
    int clean_count = 0;
    std::string defended_model_path;
};
RectifierReport train_rectifier(const config::RunConfig& cfg);

struct EvaluateReport {
    pipeline::EvalReport report;
    std::string csv_path;
    std::string audit_path;
};
EvaluateReport evaluate(const config::RunConfig& cfg);

struct ErasureReport {
    std::vector<pipeline::ErasureRow> rows;
    std::string csv_path;
};
ErasureReport toy_erasure(const config::RunConfig& cfg);

EvaluateReport whitebox(const config::RunConfig& cfg);

struct TransferReport {
    std::vector<pipeline::TransferRow> rows;
    std::string csv_path;
};
TransferReport transfer(const config::RunConfig& cfg);

/// Runs train-classifier, gen-attacks, build-detector, train-rectifier and
/// evaluate in order; returns the evaluation stage's outputs.
EvaluateReport full_pipeline(const config::RunConfig& cfg);

}  // namespace advdef::run
