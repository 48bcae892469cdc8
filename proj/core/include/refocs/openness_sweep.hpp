#pragma once

#include <filesystem>
#include <vector>

#include "refocs/engine.hpp"

namespace refocs {

// Macro-F1 of the (N+1)-way decision (argmax class when the open score stays
// below 0.5, else "unknown") as the per-episode open-class pool size varies.
// Each point draws the out-queries from exactly n_target open classes;
// openness follows from (N, N, n_target). Episodes per point come from the
// config's test count unless `episodes` is positive.
std::vector<OpennessPoint> f1_openness_sweep(const Model& model, const RunConfig& config,
                                             const DatasetManifest& test_data,
                                             const std::vector<int>& n_target_values,
                                             int episodes = 0);

void write_openness_csv(const std::vector<OpennessPoint>& points,
                        const std::filesystem::path& path);

}  // namespace refocs
