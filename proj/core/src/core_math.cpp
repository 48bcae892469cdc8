#include "refocs/core_math.hpp"

#include <algorithm>
#include <cmath>

#include "refocs/autodiff.hpp"
#include "refocs/errors.hpp"

namespace refocs {

namespace {
constexpr double kCosEps = 1e-12;
constexpr double kProbFloor = 1e-12;
constexpr double kKappaFloor = 1e-6;
}  // namespace

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DataError("cosine_similarity: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), kCosEps) * std::max(std::sqrt(nb), kCosEps));
}

double kl_divergence(const Tensor& mu, const Tensor& sigma) {
    if (!mu.same_shape(sigma)) throw DataError("kl_divergence: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double s2 = sigma[i] * sigma[i];
        acc += mu[i] * mu[i] + s2 - 1.0 - std::log(s2);
    }
    return 0.5 * acc;
}

double reconstruction_loss(const Tensor& that, const Tensor& target, ReconKind kind) {
    if (!that.same_shape(target)) throw DataError("reconstruction_loss: shape mismatch");
    double acc = 0.0;
    if (kind == ReconKind::bce) {
        for (std::size_t i = 0; i < that.size(); ++i) {
            const double p = std::clamp(that[i], kProbFloor, 1.0 - kProbFloor);
            acc -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
        }
    } else {
        for (std::size_t i = 0; i < that.size(); ++i) {
            const double d = that[i] - target[i];
            acc += d * d;
        }
    }
    return acc;
}

double vae_loss(const std::vector<VaeSample>& samples, ReconKind kind) {
    if (samples.empty()) throw DataError("vae_loss: no samples");
    double acc = 0.0;
    for (const auto& s : samples) {
        if (s.is_out_query) {
            throw DataError("vae_loss: out-of-distribution query present; the loss runs over "
                            "support and in-distribution queries only");
        }
        acc += reconstruction_loss(s.recon, s.target, kind) + kl_divergence(s.mu, s.sigma);
    }
    return acc / static_cast<double>(samples.size());
}

PrototypeSet compute_prototypes(const std::vector<std::vector<Tensor>>& support_codes,
                                const std::vector<Tensor>& exemplar_codes, bool weighted) {
    if (support_codes.empty() || support_codes.size() != exemplar_codes.size()) {
        throw DataError("compute_prototypes: class count mismatch");
    }
    PrototypeSet out;
    for (std::size_t c = 0; c < support_codes.size(); ++c) {
        const auto& codes = support_codes[c];
        if (codes.empty()) throw DataError("compute_prototypes: class with no support codes");
        const std::size_t k = codes.size();
        const std::size_t d = codes[0].size();
        Tensor w({static_cast<int>(k)});
        if (weighted) {
            double mx = -1e300;
            for (std::size_t i = 0; i < k; ++i) {
                w[i] = cosine_similarity(codes[i], exemplar_codes[c]);
                mx = std::max(mx, w[i]);
            }
            double z = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                w[i] = std::exp(w[i] - mx);
                z += w[i];
            }
            for (std::size_t i = 0; i < k; ++i) w[i] /= z;
        } else {
            w.fill(1.0 / static_cast<double>(k));
        }
        Tensor omega({static_cast<int>(d)});
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < d; ++j) omega[j] += w[i] * codes[i][j];
        }
        out.weights.push_back(std::move(w));
        out.omega.push_back(std::move(omega));
        out.exemplar_embeddings.push_back(exemplar_codes[c]);
    }
    return out;
}

Tensor classify(const Tensor& z_q, const PrototypeSet& prototypes, double tau,
                ClassifierMetric metric) {
    const std::size_t n = prototypes.omega.size();
    if (n == 0) throw DataError("classify: empty prototypes");
    Tensor logits({static_cast<int>(n)});
    for (std::size_t c = 0; c < n; ++c) {
        if (metric == ClassifierMetric::cosine) {
            logits[c] = tau * cosine_similarity(z_q, prototypes.omega[c]);
        } else {
            double acc = 0.0;
            for (std::size_t j = 0; j < z_q.size(); ++j) {
                const double diff = z_q[j] - prototypes.omega[c][j];
                acc += diff * diff;
            }
            logits[c] = -tau * acc;
        }
    }
    double mx = logits[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, logits[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        logits[c] = std::exp(logits[c] - mx);
        z += logits[c];
    }
    for (std::size_t c = 0; c < n; ++c) logits[c] /= z;
    return logits;
}

double cross_entropy_loss(const std::vector<Tensor>& class_probs,
                          const std::vector<int>& true_slots) {
    if (class_probs.empty() || class_probs.size() != true_slots.size()) {
        throw DataError("cross_entropy_loss: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < class_probs.size(); ++i) {
        const int slot = true_slots[i];
        if (slot < 0 || slot >= static_cast<int>(class_probs[i].size())) {
            throw DataError("cross_entropy_loss: slot out of range");
        }
        acc -= std::log(std::max(class_probs[i][static_cast<std::size_t>(slot)], kProbFloor));
    }
    return acc / static_cast<double>(class_probs.size());
}

std::pair<Tensor, double> modulate(const Tensor& z_q, const PrototypeSet& prototypes,
                                   KappaDistance distance) {
    if (prototypes.omega.empty()) throw DataError("modulate: empty prototypes");
    double kappa = 1e300;
    for (const auto& omega : prototypes.omega) {
        double d;
        if (distance == KappaDistance::l1) {
            d = 0.0;
            for (std::size_t j = 0; j < z_q.size(); ++j) d += std::abs(z_q[j] - omega[j]);
        } else {
            d = 1.0 - cosine_similarity(z_q, omega);
        }
        kappa = std::min(kappa, d);
    }
    Tensor zhat(z_q.shape());
    const double denom = std::max(kappa, kKappaFloor);
    for (std::size_t j = 0; j < z_q.size(); ++j) zhat[j] = z_q[j] / denom;
    return {std::move(zhat), kappa};
}

Tensor recon_error_vector(const Tensor& that, const std::vector<Tensor>& support_exemplars) {
    if (support_exemplars.empty()) throw DataError("recon_error_vector: no exemplars");
    Tensor d({static_cast<int>(support_exemplars.size())});
    for (std::size_t c = 0; c < support_exemplars.size(); ++c) {
        if (!that.same_shape(support_exemplars[c])) {
            throw DataError("recon_error_vector: shape mismatch");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < that.size(); ++i) {
            const double diff = that[i] - support_exemplars[c][i];
            acc += diff * diff;
        }
        d[c] = acc;
    }
    return d;
}

Tensor assemble_detector_input(const Tensor& class_probs, const Tensor& modulated,
                               const Tensor& recon_errors, const DetectorInputFlags& flags) {
    std::vector<double> out;
    if (flags.use_clf) out.insert(out.end(), class_probs.raw().begin(), class_probs.raw().end());
    if (flags.use_embedding) out.insert(out.end(), modulated.raw().begin(), modulated.raw().end());
    if (flags.use_recon_errors) {
        out.insert(out.end(), recon_errors.raw().begin(), recon_errors.raw().end());
    }
    if (out.empty()) throw DataError("assemble_detector_input: every block ablated");
    const int dim = static_cast<int>(out.size());
    return Tensor({dim}, std::move(out));
}

double bce_openness_loss(const std::vector<double>& p_eta, const std::vector<int>& y_eta) {
    if (p_eta.empty() || p_eta.size() != y_eta.size()) {
        throw DataError("bce_openness_loss: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p_eta.size(); ++i) {
        const double p = std::clamp(p_eta[i], kProbFloor, 1.0 - kProbFloor);
        acc -= y_eta[i] ? std::log(p) : std::log(1.0 - p);
    }
    return acc / static_cast<double>(p_eta.size());
}

double aggregate_loss(double l_vae, double l_ce, double l_bce, double lambda1, double lambda2,
                      double lambda3) {
    return lambda1 * l_vae + lambda2 * l_ce + lambda3 * l_bce;
}

}  // namespace refocs
