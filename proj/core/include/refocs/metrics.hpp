#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace refocs {

// Mann-Whitney AUROC of `scores` against binary `labels` (1 = positive);
// tied scores count half. Single-class label sets have no defined AUROC and
// yield nullopt.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// 1 - sqrt(2 * n_train / (n_test + n_target)).
double openness(int n_train_classes, int n_test_classes, int n_target_classes);

struct ConfidenceInterval {
    double mean = 0.0;
    double half_width = 0.0;  // 1.96 * sample std / sqrt(count)
    int count = 0;
};

// 95% normal-approximation interval, Bessel-corrected std. Throws DataError
// for fewer than two values.
ConfidenceInterval confidence_interval(const std::vector<double>& values);

// Macro-averaged F1 over classes 0..n_classes-1. Classes absent from both
// predictions and labels are excluded from the average; a class appearing on
// either side always counts (F1 = 0 when it is never matched).
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& actual, int n_classes);

struct OpennessPoint {
    int n_target = 0;             // open classes in the per-episode pool
    double openness_value = 0.0;  // in percent
    double f1_mean = 0.0;
    double f1_ci = 0.0;
};

// All rates in percent (accuracy and AUROC alike), matching the table
// convention downstream writers expect.
struct EvalReport {
    int episodes = 0;
    ConfidenceInterval accuracy;  // closed-set, over in-distribution queries
    ConfidenceInterval auroc_ci;  // open-set detection
    std::vector<double> per_episode_accuracy;
    std::vector<double> per_episode_auroc;
    std::vector<OpennessPoint> openness_sweep;  // optional
    std::uint64_t config_hash = 0;
};

void write_eval_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace refocs
