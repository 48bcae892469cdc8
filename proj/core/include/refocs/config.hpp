#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refocs/episode_forward.hpp"
#include "refocs/episodes.hpp"
#include "refocs/exemplars.hpp"
#include "refocs/nets.hpp"

namespace refocs {

using ojson = nlohmann::ordered_json;

enum class ExemplarMode { canonical, estimated, self_reconstruction };
enum class TrainingRegime { joint, two_stage };
enum class OpenScore { detector, max_prob };

// Fully resolved run settings. Everything is also representable as JSON; the
// schema is exactly default_config() and unknown keys anywhere are fatal.
struct RunConfig {
    std::string run_name = "run";
    std::uint64_t seed = 1234;

    // data
    std::string data_source = "glyphs";  // "glyphs" or "folder"
    std::string data_root;               // folder mode
    std::string data_name = "glyphs";
    int image_size = 32;
    int num_classes = 30;
    int samples_per_class = 120;
    double train_fraction = 2.0 / 3.0;
    std::uint64_t glyph_seed = 77;

    SamplingPlan plan;

    std::vector<int> conv_channels{8, 16, 32};
    int d_z = 32;
    std::vector<int> detector_hidden{200, 100};
    double tau_init = 10.0;

    double lambda1 = 1e-4, lambda2 = 10.0, lambda3 = 10.0;
    ReconKind recon_kind = ReconKind::bce;

    bool encoder_vae = true;  // false = plain autoencoder (z = mu, no KL)
    bool weighted_prototypes = true;
    bool modulation = true;
    KappaDistance kappa_distance = KappaDistance::l1;
    ClassifierMetric classifier_metric = ClassifierMetric::cosine;
    DetectorInputFlags detector_flags;

    ExemplarMode exemplar_mode = ExemplarMode::canonical;
    ExemplarDistance exemplar_distance = ExemplarDistance::l2;
    int pretrain_epochs = 3;
    int pretrain_batch = 64;
    double pretrain_lr = 1e-3;

    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    int lr_drop_every = 0;  // episodes; 0 = never
    TrainingRegime regime = TrainingRegime::joint;
    double stage1_fraction = 0.5;  // two_stage: share of episodes in stage 1

    int checkpoint_every = 1000;
    OpenScore open_score = OpenScore::detector;

    ModelConfig model_config() const;
    ForwardOptions forward_options(bool training) const;
};

// The schema and its defaults; parse/serialize round-trips through it.
ojson default_config();

// Merges `given` over the defaults, rejecting keys the schema does not have
// and type mismatches. Throws ConfigError.
ojson resolve_config(const ojson& given);

// "a.b.c=value" applied onto a resolved tree; value parses as JSON when it
// can, else a string. Unknown paths are fatal.
void apply_override(ojson& config, const std::string& assignment);

RunConfig config_from_json(const ojson& resolved);
ojson config_to_json(const RunConfig& config);

ojson load_config_file(const std::filesystem::path& path);
void write_resolved_config(const ojson& resolved, const std::filesystem::path& path);

// FNV-1a over the compact dump; stable across runs for identical settings.
std::uint64_t config_hash(const ojson& resolved);

// Named ablation presets; applies the axis flips onto a resolved tree.
// Knows: full, ae, mean_prototype, no_modulation, protoC_nd, no_embedding,
// no_clf, self_reconstruction.
void apply_variant(ojson& config, const std::string& variant);
const std::vector<std::string>& ablation_variants();

}  // namespace refocs
