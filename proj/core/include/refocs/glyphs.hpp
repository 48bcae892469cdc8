#pragma once

#include <cstdint>
#include <utility>

#include "refocs/dataset.hpp"

namespace refocs {

// Procedural symbolic dataset: each class is a distinct glyph (outer shape x
// inner mark from an 8x8 vocabulary, 64 classes total) rendered clean as the
// canonical exemplar. Samples are the exemplar under seeded rotation (+-15
// degrees), translation (+-10% of width), brightness/contrast jitter,
// background color shift, and additive noise. Pure function of (args, seed).
inline constexpr int kGlyphVocabularySize = 64;

DatasetManifest generate_glyph_dataset(int num_classes, int samples_per_class,
                                       std::pair<int, int> image_size, std::uint64_t seed);

}  // namespace refocs
