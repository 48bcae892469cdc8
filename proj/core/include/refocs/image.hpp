#pragma once

#include <cstdint>

#include "refocs/tensor.hpp"

namespace refocs {

// Pixels are CHW, 3 channels, doubles in [0,1]. Everything downstream (BCE
// reconstruction targets included) assumes this domain.

enum class Provenance { canonical, estimated };

struct LabeledImage {
    Tensor pixels;  // [3, H, W]
    int class_id = -1;
    std::int64_t sample_id = -1;
};

struct ExemplarImage {
    Tensor pixels;  // [3, H, W]
    int class_id = -1;
    Provenance provenance = Provenance::canonical;
};

}  // namespace refocs
