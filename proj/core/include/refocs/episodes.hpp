#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "refocs/dataset.hpp"
#include "refocs/rng.hpp"

namespace refocs {

// Per-episode sampling counts. Field names map 1:1 to config keys.
struct SamplingPlan {
    int n_way = 5;                // N
    int k_shot = 5;               // K
    int k_query_in_per_class = 10;  // per support class
    int k_query_out_total = 50;
    int episodes_train = 20000;
    int episodes_test = 800;
    // Restricts the open-class pool per episode to this many classes
    // (0 = all non-support classes); drives the openness sweep.
    int n_open_classes = 0;

    int episode_size() const {
        return n_way * k_shot + n_way * k_query_in_per_class + k_query_out_total;
    }
    void validate() const;  // throws ConfigError
};

// One FSOSR task. Images are pointers into the (immutable) source manifest.
struct Episode {
    int n_way = 0;
    int k_shot = 0;
    std::vector<int> support_class_ids;                        // slot -> dataset class id
    std::vector<std::vector<const LabeledImage*>> support;     // [N][K]
    std::vector<const ExemplarImage*> exemplars;               // slot -> exemplar (may be null)
    std::vector<std::pair<const LabeledImage*, int>> queries_in;  // (image, slot)
    std::vector<const LabeledImage*> queries_out;
    std::vector<int> openness_labels;  // queries_in order then queries_out: 0 then 1
};

// Samples one episode. Support classes are drawn without replacement from
// classes holding at least K + K_Qin^c samples; open queries are drawn
// uniformly over (class, sample) pairs of non-support classes, all without
// replacement within the episode. Deterministic for a fixed rng state.
// require_exemplars=false lets the caller substitute support-derived
// exemplars afterwards.
Episode sample_episode(const DatasetManifest& manifest, const SamplingPlan& plan, Rng& rng,
                       bool require_exemplars = true);

// Episode i of a stream is a pure function of (seed, i): resumable and
// skippable.
Episode episode_at(const DatasetManifest& manifest, const SamplingPlan& plan, std::uint64_t seed,
                   int index, bool require_exemplars = true);

std::vector<Episode> episode_stream(const DatasetManifest& manifest, const SamplingPlan& plan,
                                    int count, std::uint64_t seed, bool require_exemplars = true);

}  // namespace refocs
