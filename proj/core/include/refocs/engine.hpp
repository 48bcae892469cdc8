#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refocs/checkpoint.hpp"
#include "refocs/config.hpp"
#include "refocs/metrics.hpp"
#include "refocs/optimizer.hpp"

namespace refocs {

// Builds the dataset a config names: procedural glyphs in memory, or a folder
// on disk.
DatasetManifest build_dataset(const RunConfig& config);

// Class-disjoint train/test split per the config. In estimated-exemplar mode
// the caller is expected to pretrain and attach exemplars to the train side
// before training (prepare_training does).
std::pair<DatasetManifest, DatasetManifest> split_dataset(const RunConfig& config,
                                                          const DatasetManifest& full);

struct TrainState {
    RunConfig config;
    ojson resolved;  // the exact JSON the config came from
    Model model;
    std::vector<ad::Var> params;  // visit_params order
    std::unique_ptr<Adam> adam;
    int episodes_done = 0;
    bool encoder_frozen = false;
};

// Fresh state: model from the config seed, optimizer at step 0. In estimated
// mode this also pretrains the encoder and attaches exemplars to `train_data`
// (deterministically, so a later resume can rebuild the same starting point).
TrainState prepare_training(const RunConfig& config, const ojson& resolved,
                            DatasetManifest& train_data);

// Restores parameters, optimizer state and the episode counter. The stored
// config must match the state's resolved config exactly.
void restore_training(TrainState& state, const Checkpoint& ckpt);

Checkpoint make_training_checkpoint(const TrainState& state);

struct EpisodeLossRecord {
    int episode = 0;  // 0-based
    double l_vae = 0.0, l_ce = 0.0, l_bce = 0.0, total = 0.0, lr = 0.0;
};

// One optimization step on episode `index` of the training stream. Applies
// the lr schedule and the two-stage freeze before stepping. Non-finite loss
// terms abort with NumericError after writing `abort_checkpoint` (when set).
EpisodeLossRecord train_one_episode(TrainState& state, const DatasetManifest& data, int index,
                                    const std::filesystem::path* abort_checkpoint = nullptr);

struct TrainResult {
    int episodes_done = 0;
    std::filesystem::path last_checkpoint;  // empty when checkpointing is off
};

// Runs episodes episodes_done..episodes_train-1: appends one JSON line per
// episode to out_dir/metrics.jsonl, checkpoints every checkpoint.every
// episodes into out_dir/checkpoints/, and always checkpoints at the end.
// Any abort writes checkpoints/abort.ckpt first. With a validation manifest,
// a short held-out evaluation runs every 1000 episodes into
// out_dir/validation.jsonl.
TrainResult run_training(TrainState& state, const DatasetManifest& data,
                         const std::filesystem::path& out_dir,
                         const std::function<void(const EpisodeLossRecord&)>& on_episode = {},
                         const DatasetManifest* validation = nullptr);

// Raw per-episode evaluation outputs (deterministic: z = mu).
struct EpisodeEval {
    Tensor class_probs;        // [Q, N]
    std::vector<double> open_scores;  // per query, higher = more likely out
    std::vector<int> labels_in;       // slot per in-distribution query
    int n_way = 0, q_in = 0, q_out = 0;
};

EpisodeEval eval_episode(const Model& model, const RunConfig& config, const Episode& episode);

// Episode `index` of the evaluation stream (the stream evaluate() walks),
// optionally under a plan that differs from the config's.
Episode eval_episode_at(const RunConfig& config, const DatasetManifest& test_data, int index,
                        const SamplingPlan* plan_override = nullptr,
                        bool require_exemplars = true);

// Episodic test protocol: accuracy over in-distribution queries, AUROC of the
// open score over a per-episode class-balanced query set (equal in/out counts
// via truncation to the smaller side).
EvalReport evaluate(const Model& model, const RunConfig& config, const DatasetManifest& test_data,
                    int episodes = 0 /* 0 = plan.episodes_test */);

struct AblationRow {
    std::string variant;
    double accuracy_mean = 0.0, accuracy_ci = 0.0;
    double auroc_mean = 0.0, auroc_ci = 0.0;
    double final_loss = 0.0;
};

// Trains and evaluates every named variant from the same base config and
// seeds. Writes out_dir/tables/ablation.csv.
std::vector<AblationRow> run_ablation_matrix(const ojson& base_resolved,
                                             const std::filesystem::path& out_dir);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace refocs
