#include "refocs/openness_sweep.hpp"

#include <cstdio>
#include <fstream>

#include "refocs/errors.hpp"
#include "refocs/metrics.hpp"

namespace refocs {

std::vector<OpennessPoint> f1_openness_sweep(const Model& model, const RunConfig& config,
                                             const DatasetManifest& test_data,
                                             const std::vector<int>& n_target_values,
                                             int episodes) {
    if (n_target_values.empty()) throw ConfigError("openness sweep needs at least one point");
    const int count = episodes > 0 ? episodes : config.plan.episodes_test;
    const int n = config.plan.n_way;
    const bool need_exemplars = config.exemplar_mode != ExemplarMode::estimated;

    std::vector<std::pair<ad::Var, bool>> saved;
    visit_params(model, [&](const std::string&, const ad::Var& p) {
        saved.emplace_back(p, p->requires_grad);
        p->requires_grad = false;
    });

    std::vector<OpennessPoint> points;
    try {
        for (int n_target : n_target_values) {
            if (n_target < 1) throw ConfigError("openness sweep pool sizes must be >= 1");
            SamplingPlan plan = config.plan;
            plan.n_open_classes = n_target;

            std::vector<double> f1s;
            for (int i = 0; i < count; ++i) {
                Episode ep = eval_episode_at(config, test_data, i, &plan, need_exemplars);
                EpisodeEval ev = eval_episode(model, config, ep);

                std::vector<int> predicted, actual;
                const int scored = ev.q_in + ev.q_out;
                for (int q = 0; q < scored; ++q) {
                    const bool reject = ev.open_scores[static_cast<std::size_t>(q)] >= 0.5;
                    int pred = n;  // the unknown bucket
                    if (!reject) {
                        pred = 0;
                        for (int j = 1; j < n; ++j)
                            if (ev.class_probs.at(q, j) > ev.class_probs.at(q, pred)) pred = j;
                    }
                    predicted.push_back(pred);
                    actual.push_back(q < ev.q_in ? ev.labels_in[static_cast<std::size_t>(q)] : n);
                }
                f1s.push_back(100.0 * macro_f1(predicted, actual, n + 1));
            }
            ConfidenceInterval ci = confidence_interval(f1s);
            points.push_back(
                {n_target, 100.0 * openness(n, n, n_target), ci.mean, ci.half_width});
        }
    } catch (...) {
        for (auto& [p, rg] : saved) p->requires_grad = rg;
        throw;
    }
    for (auto& [p, rg] : saved) p->requires_grad = rg;
    return points;
}

void write_openness_csv(const std::vector<OpennessPoint>& points,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "n_target,openness_pct,f1_mean,f1_ci95\n";
    char buf[128];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", p.n_target, p.openness_value,
                      p.f1_mean, p.f1_ci);
        out << buf;
    }
}

}  // namespace refocs
