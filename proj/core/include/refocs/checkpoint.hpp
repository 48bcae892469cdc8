#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "refocs/nets.hpp"
#include "refocs/rng.hpp"

namespace refocs {

// Versioned binary snapshot: config JSON, episode counter, every parameter
// tensor in visit_params order, optional optimizer moments, rng states.
// Round-trips bit-exactly (raw little-endian doubles).
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_json;  // resolved config, compact dump
    std::int64_t episodes_done = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_adam = false;
    std::int64_t adam_t = 0;
    std::vector<Tensor> adam_m, adam_v;  // parameter order
    std::vector<Rng::State> rng_states;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // throws DataError

// Copies every parameter out of / into a model. Loading checks names and
// shapes against visit_params order.
std::vector<std::pair<std::string, Tensor>> snapshot_params(const Model& model);
void restore_params(Model& model, const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace refocs
