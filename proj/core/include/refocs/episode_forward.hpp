#pragma once

#include <vector>

#include "refocs/core_math.hpp"
#include "refocs/episodes.hpp"
#include "refocs/nets.hpp"

namespace refocs {

// Per-forward switches. Ablation axes map onto these; the engine sets
// build_vae/build_detector from the loss weights and training regime.
struct ForwardOptions {
    bool training = true;     // sampled z; false uses z = mu
    bool ae_mode = false;     // z = mu always and the KL term is dropped
    bool weighted_prototypes = true;
    bool modulation = true;
    bool self_reconstruction = false;  // reconstruction target = input image
    bool build_vae = true;
    bool build_detector = true;
    ReconKind recon_kind = ReconKind::bce;
    ClassifierMetric classifier_metric = ClassifierMetric::cosine;
    KappaDistance kappa_distance = KappaDistance::l1;
    DetectorInputFlags detector_flags;
};

// Episode flattened to batch tensors. Row order everywhere: support samples
// slot-major (slot 0's K shots first), then in-distribution queries, then
// out-of-distribution queries.
struct EpisodeTensors {
    Tensor images;     // [B, C, H, W]
    Tensor exemplars;  // [N, C, H, W]
    std::vector<int> labels_in;  // slot per in-distribution query
    std::vector<int> openness;   // one per query: 0 in, 1 out
    int n_way = 0, k_shot = 0, q_in = 0, q_out = 0;

    int support_rows() const { return n_way * k_shot; }
    int query_rows() const { return q_in + q_out; }
    int rows() const { return support_rows() + query_rows(); }
};

// exemplar_override (per slot) substitutes the manifest exemplars, e.g. with
// test-time support-selected ones.
EpisodeTensors pack_episode(const Episode& ep,
                            const std::vector<Tensor>* exemplar_override = nullptr);

struct EpisodeGraph {
    // Loss nodes; null when the corresponding part was not built.
    ad::Var l_vae, l_ce, l_bce, total;
    // Evaluation outputs (values copied out of the graph).
    Tensor class_probs;   // [Q, N], rows sum to 1
    Tensor p_eta;         // [Q, 1], empty when the detector is not built
    Tensor kappa;         // [Q, 1], zeros when modulation is off
    Tensor modulated;     // [Q, d_z]
    Tensor recon_errors;  // [Q, N], empty when the decoder never ran on queries
};

// Builds the whole per-episode computation: encoder on all rows plus the
// exemplars, prototypes, classifier, decoder, modulation, detector, and the
// weighted total loss. noise_rng supplies the reparameterization draws and is
// only consumed when training without ae_mode.
EpisodeGraph episode_forward(const Model& model, const EpisodeTensors& ep,
                             const ForwardOptions& opt, double lambda1, double lambda2,
                             double lambda3, Rng* noise_rng);

}  // namespace refocs
