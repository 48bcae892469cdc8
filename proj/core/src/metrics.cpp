#include "refocs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "refocs/errors.hpp"

namespace refocs {

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DataError("auroc: scores/labels size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw DataError("auroc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank sum of the positive class with average ranks over ties.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u =
        rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double openness(int n_train_classes, int n_test_classes, int n_target_classes) {
    if (n_train_classes < 1 || n_test_classes < 1 || n_target_classes < 1)
        throw DataError("openness needs positive class counts");
    return 1.0 - std::sqrt(2.0 * n_train_classes /
                           static_cast<double>(n_test_classes + n_target_classes));
}

ConfidenceInterval confidence_interval(const std::vector<double>& values) {
    if (values.size() < 2)
        throw DataError("confidence interval needs at least two values, got " +
                        std::to_string(values.size()));
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, 1.96 * sd / std::sqrt(n), static_cast<int>(values.size())};
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& actual, int n_classes) {
    if (predicted.size() != actual.size()) throw DataError("macro_f1: size mismatch");
    if (n_classes < 1) throw DataError("macro_f1: need at least one class");
    std::vector<long> tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long> fn(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i], a = actual[i];
        if (p < 0 || p >= n_classes || a < 0 || a >= n_classes)
            throw DataError("macro_f1: class index out of range");
        if (p == a) {
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(a)];
        }
    }
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        const double denom = 2.0 * tp[i] + fp[i] + fn[i];
        if (denom == 0.0) continue;  // class occurs nowhere; not scored
        sum += 2.0 * tp[i] / denom;
        ++counted;
    }
    if (counted == 0) throw DataError("macro_f1: no class occurs in predictions or labels");
    return sum / counted;
}

namespace {

char hex_digit(std::uint64_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hash_hex(std::uint64_t h) {
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = hex_digit(h);
    return s;
}

}  // namespace

void write_eval_report_json(const EvalReport& report, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["episodes"] = report.episodes;
    j["accuracy_mean"] = report.accuracy.mean;
    j["accuracy_ci95"] = report.accuracy.half_width;
    j["auroc_mean"] = report.auroc_ci.mean;
    j["auroc_ci95"] = report.auroc_ci.half_width;
    j["per_episode_accuracy"] = report.per_episode_accuracy;
    j["per_episode_auroc"] = report.per_episode_auroc;
    if (!report.openness_sweep.empty()) {
        nlohmann::ordered_json sweep = nlohmann::ordered_json::object();
        for (const auto& p : report.openness_sweep) {
            char key[32];
            std::snprintf(key, sizeof key, "%.1f", p.openness_value);
            sweep[key] = p.f1_mean;
        }
        j["openness_sweep"] = sweep;
    }
    j["config_hash"] = hash_hex(report.config_hash);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "# config_hash=" << hash_hex(report.config_hash) << "\n";
    out << "metric,mean,ci95\n";
    char buf[128];
    std::snprintf(buf, sizeof buf, "accuracy,%.4f,%.4f\n", report.accuracy.mean,
                  report.accuracy.half_width);
    out << buf;
    std::snprintf(buf, sizeof buf, "auroc,%.4f,%.4f\n", report.auroc_ci.mean,
                  report.auroc_ci.half_width);
    out << buf;
}

}  // namespace refocs
