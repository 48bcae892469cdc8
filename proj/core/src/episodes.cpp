#include "refocs/episodes.hpp"

#include <algorithm>
#include <string>

#include "refocs/errors.hpp"
#include "refocs/rng.hpp"

namespace refocs {

void SamplingPlan::validate() const {
    if (n_way < 1 || k_shot < 1 || k_query_in_per_class < 1 || k_query_out_total < 1 ||
        episodes_train < 1 || episodes_test < 1) {
        throw ConfigError("sampling plan counts must all be at least 1");
    }
    if (n_open_classes < 0) throw ConfigError("n_open_classes must be >= 0");
}

Episode sample_episode(const DatasetManifest& manifest, const SamplingPlan& plan, Rng& rng,
                       bool require_exemplars) {
    plan.validate();
    const int need_per_support = plan.k_shot + plan.k_query_in_per_class;

    // Classes too small for support duty stay eligible as open classes.
    std::vector<int> eligible;
    for (int cid : manifest.class_ids()) {
        if (static_cast<int>(manifest.samples_of(cid).size()) >= need_per_support) {
            eligible.push_back(cid);
        }
    }
    if (static_cast<int>(eligible.size()) < plan.n_way) {
        throw DataError("only " + std::to_string(eligible.size()) + " classes hold the " +
                        std::to_string(need_per_support) + " samples a support class needs; " +
                        std::to_string(plan.n_way) + " required");
    }
    if (manifest.class_count() < plan.n_way + 1) {
        throw DataError("no disjoint open classes: dataset has " +
                        std::to_string(manifest.class_count()) + " classes for a " +
                        std::to_string(plan.n_way) + "-way episode");
    }

    Episode ep;
    ep.n_way = plan.n_way;
    ep.k_shot = plan.k_shot;

    rng.shuffle(eligible);
    ep.support_class_ids.assign(eligible.begin(), eligible.begin() + plan.n_way);

    for (int cid : ep.support_class_ids) {
        std::vector<std::int64_t> ids = manifest.samples_of(cid);
        rng.shuffle(ids);
        std::vector<const LabeledImage*> shots;
        for (int k = 0; k < plan.k_shot; ++k) {
            shots.push_back(&manifest.image(ids[static_cast<std::size_t>(k)]));
        }
        ep.support.push_back(std::move(shots));
        const int slot = static_cast<int>(ep.support.size()) - 1;
        for (int q = 0; q < plan.k_query_in_per_class; ++q) {
            ep.queries_in.emplace_back(
                &manifest.image(ids[static_cast<std::size_t>(plan.k_shot + q)]), slot);
        }
        const ExemplarImage* ex = manifest.exemplar(cid);
        if (!ex && require_exemplars) {
            throw DataError("class " + std::to_string(cid) +
                            " has no exemplar; attach canonical or estimated exemplars first");
        }
        ep.exemplars.push_back(ex);
    }

    std::vector<int> open_classes;
    for (int cid : manifest.class_ids()) {
        if (std::find(ep.support_class_ids.begin(), ep.support_class_ids.end(), cid) ==
            ep.support_class_ids.end()) {
            open_classes.push_back(cid);
        }
    }
    if (plan.n_open_classes > 0) {
        if (static_cast<int>(open_classes.size()) < plan.n_open_classes) {
            throw DataError("open-class pool holds " + std::to_string(open_classes.size()) +
                            " classes, " + std::to_string(plan.n_open_classes) + " requested");
        }
        rng.shuffle(open_classes);
        open_classes.resize(static_cast<std::size_t>(plan.n_open_classes));
        std::sort(open_classes.begin(), open_classes.end());
    }

    std::vector<std::int64_t> open_pool;
    for (int cid : open_classes) {
        for (std::int64_t sid : manifest.samples_of(cid)) open_pool.push_back(sid);
    }
    if (static_cast<int>(open_pool.size()) < plan.k_query_out_total) {
        throw DataError("open-class pool holds " + std::to_string(open_pool.size()) +
                        " samples, " + std::to_string(plan.k_query_out_total) + " needed");
    }
    rng.shuffle(open_pool);
    for (int q = 0; q < plan.k_query_out_total; ++q) {
        ep.queries_out.push_back(&manifest.image(open_pool[static_cast<std::size_t>(q)]));
    }

    ep.openness_labels.assign(ep.queries_in.size(), 0);
    ep.openness_labels.insert(ep.openness_labels.end(), ep.queries_out.size(), 1);
    return ep;
}

Episode episode_at(const DatasetManifest& manifest, const SamplingPlan& plan, std::uint64_t seed,
                   int index, bool require_exemplars) {
    Rng rng(mix_keys(seed, 0xe7150de5ULL, static_cast<std::uint64_t>(index)));
    return sample_episode(manifest, plan, rng, require_exemplars);
}

std::vector<Episode> episode_stream(const DatasetManifest& manifest, const SamplingPlan& plan,
                                    int count, std::uint64_t seed, bool require_exemplars) {
    if (count < 1) throw ConfigError("episode stream needs count >= 1");
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(episode_at(manifest, plan, seed, i, require_exemplars));
    }
    return out;
}

}  // namespace refocs
