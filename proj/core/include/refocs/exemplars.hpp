#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "refocs/dataset.hpp"
#include "refocs/nets.hpp"

namespace refocs {

enum class ExemplarDistance { l2, cosine };

struct PretrainOptions {
    int epochs = 5;
    int batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// Trains the encoder as a plain classifier over every class in the manifest:
// penultimate features feed a temporary linear head that is discarded
// afterwards. Returns the mean training cross-entropy per epoch. epochs = 0
// leaves the model untouched. Requires at least two classes.
std::vector<double> pretrain_encoder_nonepisodic(Model& model, const DatasetManifest& manifest,
                                                 const PretrainOptions& opt);

// Per class: embed every sample (penultimate features), take the centroid,
// and pick the sample nearest to it; ties break toward the smallest
// sample_id. The chosen images are attached to the manifest as estimated
// exemplars.
std::map<int, std::int64_t> estimate_exemplars(Model& model, DatasetManifest& manifest,
                                               ExemplarDistance distance = ExemplarDistance::l2);

// Same selection rule restricted to one episode slot's support set; used at
// test time when no exemplar exists for novel classes. Returns the index into
// `support`. K = 1 trivially returns 0.
int select_support_exemplar(const Model& model, const std::vector<const LabeledImage*>& support,
                            ExemplarDistance distance = ExemplarDistance::l2);

}  // namespace refocs
