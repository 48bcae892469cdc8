#pragma once

#include <utility>
#include <vector>

#include "refocs/tensor.hpp"

namespace refocs {

enum class ReconKind { bce, l2 };
enum class ClassifierMetric { cosine, euclidean };
enum class KappaDistance { l1, cosine };

// Which blocks feed the out-of-distribution detector. The full model uses
// [class_probs, modulated_embedding, recon_errors] in that order.
struct DetectorInputFlags {
    bool use_clf = true;
    bool use_embedding = true;
    bool use_recon_errors = true;

    int dim(int n_way, int d_z) const {
        return (use_clf ? n_way : 0) + (use_embedding ? d_z : 0) + (use_recon_errors ? n_way : 0);
    }
};

// Guarded cosine similarity between vectors; norms floored at 1e-12.
double cosine_similarity(const Tensor& a, const Tensor& b);

// 0.5 * sum_i (mu_i^2 + sigma_i^2 - 1 - ln sigma_i^2); nonnegative.
double kl_divergence(const Tensor& mu, const Tensor& sigma);

// that strictly inside (0,1) for bce; both images on the same grid.
double reconstruction_loss(const Tensor& that, const Tensor& target, ReconKind kind);

struct VaeSample {
    Tensor recon;    // decoded image, values in (0,1)
    Tensor target;   // exemplar (or self) image in [0,1]
    Tensor mu;       // latent mean, [d_z]
    Tensor sigma;    // latent stddev, > 0
    bool is_out_query = false;
};

// Mean over samples of (reconstruction + KL). The sample set is the support
// plus in-distribution queries; any out-of-distribution member is a contract
// violation and throws.
double vae_loss(const std::vector<VaeSample>& samples, ReconKind kind);

struct PrototypeSet {
    std::vector<Tensor> omega;                // per class slot, [d_z]
    std::vector<Tensor> weights;              // per class slot, [K], sums to 1
    std::vector<Tensor> exemplar_embeddings;  // per class slot, [d_z]
};

// weighted=true: w_k = softmax_k cos(z_k^c, z_t^c) and Omega_c = sum w_k z_k^c.
// weighted=false: plain mean (ablation).
PrototypeSet compute_prototypes(const std::vector<std::vector<Tensor>>& support_codes,
                                const std::vector<Tensor>& exemplar_codes, bool weighted = true);

// softmax over classes of tau * cos(z_q, Omega_c); euclidean metric swaps the
// logit for -tau * ||z_q - Omega_c||^2.
Tensor classify(const Tensor& z_q, const PrototypeSet& prototypes, double tau,
                ClassifierMetric metric = ClassifierMetric::cosine);

// Mean over queries of -ln p(true class); probabilities floored at 1e-12.
double cross_entropy_loss(const std::vector<Tensor>& class_probs,
                          const std::vector<int>& true_slots);

// kappa = min_c distance(z_q, Omega_c); zhat = z_q / max(kappa, 1e-6).
// cosine distance is 1 - cos, in [0,2].
std::pair<Tensor, double> modulate(const Tensor& z_q, const PrototypeSet& prototypes,
                                   KappaDistance distance = KappaDistance::l1);

// D_c = squared Frobenius distance between the reconstruction and exemplar c.
Tensor recon_error_vector(const Tensor& that, const std::vector<Tensor>& support_exemplars);

Tensor assemble_detector_input(const Tensor& class_probs, const Tensor& modulated,
                               const Tensor& recon_errors, const DetectorInputFlags& flags);

// Mean binary cross-entropy over all queries; y=0 in-distribution, y=1 out;
// p is P(out), clamped to [1e-12, 1-1e-12].
double bce_openness_loss(const std::vector<double>& p_eta, const std::vector<int>& y_eta);

double aggregate_loss(double l_vae, double l_ce, double l_bce, double lambda1, double lambda2,
                      double lambda3);

}  // namespace refocs
