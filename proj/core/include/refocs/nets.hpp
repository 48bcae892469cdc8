#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "refocs/autodiff.hpp"
#include "refocs/rng.hpp"
#include "refocs/tensor.hpp"

namespace refocs {

// Architecture knobs. Channel counts are config-driven; each conv block
// halves the spatial size, so image dims must be divisible by 2^blocks.
struct ModelConfig {
    int image_h = 32;
    int image_w = 32;
    int in_channels = 3;
    std::vector<int> conv_channels{8, 16, 32};
    int d_z = 32;
    std::vector<int> detector_hidden{200, 100};
    int detector_input_dim = 0;  // N + d_z + N minus ablated blocks; set by caller
    double tau_init = 10.0;
};

// Parameters live as autodiff leaves so graphs reference them directly.
struct EncoderNet {
    int image_h = 0, image_w = 0, in_channels = 0, d_z = 0;
    std::vector<int> channels;
    std::vector<ad::Var> conv_w, conv_b, gamma, beta;
    ad::Var mu_w, mu_b, ls_w, ls_b;  // heads: mu and log-sigma

    int blocks() const { return static_cast<int>(channels.size()); }
    int feature_dim() const;
};

struct DecoderNet {
    int image_h = 0, image_w = 0, out_channels = 0, d_z = 0;
    std::vector<int> channels;  // encoder channel list, mirrored at build time
    ad::Var fc_w, fc_b;
    std::vector<ad::Var> deconv_w, deconv_b;  // last entry maps to out_channels
    std::vector<ad::Var> gamma, beta;         // for all but the final deconv
};

struct DetectorNet {
    int input_dim = 0;
    std::vector<ad::Var> w, b;  // hidden layers then the final 1-unit layer
};

struct Model {
    ModelConfig config;
    EncoderNet encoder;
    DecoderNet decoder;
    DetectorNet detector;
    ad::Var tau_rho;  // temperature is softplus(tau_rho) > 0
};

Model make_model(const ModelConfig& config, std::uint64_t seed);

// Stable, architecture-determined enumeration order; the serialization and
// optimizer contracts depend on it.
void visit_params(const Model& model,
                  const std::function<void(const std::string&, const ad::Var&)>& fn);

// Graph builders. images are [B,C,H,W]; z is [B,d_z].
ad::Var encoder_features(const EncoderNet& enc, const ad::Var& images);  // [B, feature_dim]
// Returns (mu, log_sigma), each [B, d_z]; sigma = exp(log_sigma) > 0.
std::pair<ad::Var, ad::Var> encode_heads(const EncoderNet& enc, const ad::Var& features);
ad::Var decode_logits(const DecoderNet& dec, const ad::Var& z);  // [B,C,H,W] pre-sigmoid
ad::Var detector_logits(const DetectorNet& det, const ad::Var& features);  // [B,1]
ad::Var tau_graph(const Model& model);  // scalar softplus(tau_rho)

// Value-level wrappers used by tests and non-training callers.
std::pair<Tensor, Tensor> encode(const Model& model, const Tensor& images);  // (mu, sigma)
Tensor encode_features_value(const Model& model, const Tensor& images);
Tensor decode(const Model& model, const Tensor& z);            // sigmoid output in (0,1)
Tensor detector_forward(const Model& model, const Tensor& x);  // p in (0,1), [B,1]

struct LatentCode {
    Tensor mu, sigma, z, epsilon;
};

// z = mu + sigma (.) epsilon with epsilon ~ N(0,I); deterministic mode sets
// epsilon = 0 so z = mu.
LatentCode reparameterize(const Tensor& mu, const Tensor& sigma, Rng& rng,
                          bool deterministic = false);

double tau_value(const Model& model);

}  // namespace refocs
