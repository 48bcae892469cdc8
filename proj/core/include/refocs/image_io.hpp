#pragma once

#include <filesystem>
#include <optional>

#include "refocs/tensor.hpp"

namespace refocs {

// Decodes an image file, resizes to (height, width) with bilinear
// interpolation on the 8-bit data, and returns CHW RGB doubles in [0,1].
// Undecodable files yield nullopt.
std::optional<Tensor> load_image_rgb(const std::filesystem::path& file, int height, int width);

// Writes CHW RGB [0,1] pixels as an 8-bit PNG (values clamped and rounded).
void save_image_rgb(const std::filesystem::path& file, const Tensor& pixels);

}  // namespace refocs
