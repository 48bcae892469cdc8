#include "refocs/episode_forward.hpp"

#include <cstring>

#include "refocs/errors.hpp"

namespace refocs {

namespace {

void copy_image_row(Tensor& batch, int row, const Tensor& img, std::size_t plane) {
    if (img.size() != plane)
        throw DataError("episode image size mismatch: got " + img.shape_str());
    std::memcpy(batch.data() + static_cast<std::size_t>(row) * plane, img.data(),
                plane * sizeof(double));
}

}  // namespace

EpisodeTensors pack_episode(const Episode& ep, const std::vector<Tensor>* exemplar_override) {
    EpisodeTensors out;
    out.n_way = ep.n_way;
    out.k_shot = ep.k_shot;
    out.q_in = static_cast<int>(ep.queries_in.size());
    out.q_out = static_cast<int>(ep.queries_out.size());

    const Tensor& probe = ep.support.at(0).at(0)->pixels;
    if (probe.ndim() != 3) throw DataError("expected [C,H,W] pixels");
    const int c = probe.dim(0), h = probe.dim(1), w = probe.dim(2);
    const std::size_t plane = probe.size();

    out.images = Tensor::zeros({out.rows(), c, h, w});
    int row = 0;
    for (int slot = 0; slot < ep.n_way; ++slot)
        for (int k = 0; k < ep.k_shot; ++k)
            copy_image_row(out.images, row++, ep.support[slot][k]->pixels, plane);
    for (const auto& q : ep.queries_in) copy_image_row(out.images, row++, q.first->pixels, plane);
    for (const auto* q : ep.queries_out) copy_image_row(out.images, row++, q->pixels, plane);

    out.exemplars = Tensor::zeros({ep.n_way, c, h, w});
    for (int slot = 0; slot < ep.n_way; ++slot) {
        if (exemplar_override) {
            copy_image_row(out.exemplars, slot, exemplar_override->at(slot), plane);
        } else {
            if (!ep.exemplars[slot]) throw DataError("episode slot lacks an exemplar image");
            copy_image_row(out.exemplars, slot, ep.exemplars[slot]->pixels, plane);
        }
    }

    out.labels_in.reserve(ep.queries_in.size());
    for (const auto& q : ep.queries_in) out.labels_in.push_back(q.second);
    out.openness = ep.openness_labels;
    return out;
}

EpisodeGraph episode_forward(const Model& model, const EpisodeTensors& ep,
                             const ForwardOptions& opt, double lambda1, double lambda2,
                             double lambda3, Rng* noise_rng) {
    using ad::Var;
    const int n = ep.n_way;
    const int k = ep.k_shot;
    const int b = ep.rows();
    const int q = ep.query_rows();
    const int ke = ep.support_rows() + ep.q_in;  // rows the reconstruction loss covers
    const int d_z = model.config.d_z;
    const std::size_t plane = ep.images.size() / static_cast<std::size_t>(b);
    const int pix = static_cast<int>(plane);

    auto images = ad::constant(ep.images);
    auto feats = encoder_features(model.encoder, images);
    auto [mu, log_sigma] = encode_heads(model.encoder, feats);

    Var z;
    if (opt.training && !opt.ae_mode) {
        if (!noise_rng) throw NumericError("sampling requested without an rng");
        Tensor eps = Tensor::zeros({b, d_z});
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise_rng->normal();
        z = ad::add(mu, ad::mul(ad::exp_op(log_sigma), ad::constant(eps)));
    } else {
        z = mu;
    }

    // Exemplar codes use the mean head only; gradients reach the encoder
    // through this branch as well.
    auto ex_feats = encoder_features(model.encoder, ad::constant(ep.exemplars));
    auto ex_mu = encode_heads(model.encoder, ex_feats).first;

    // Prototypes, one row per slot.
    std::vector<Var> omega_rows;
    omega_rows.reserve(static_cast<std::size_t>(n));
    for (int slot = 0; slot < n; ++slot) {
        auto codes = ad::slice_rows(z, slot * k, k);  // [K, d_z]
        Var weights;
        if (opt.weighted_prototypes) {
            auto cosv = ad::cosine_matrix(ad::slice_rows(ex_mu, slot, 1), codes);  // [1, K]
            weights = ad::softmax_rows(cosv);
        } else {
            weights = ad::constant(Tensor::full({1, k}, 1.0 / k));
        }
        omega_rows.push_back(ad::matmul(weights, codes));
    }
    auto omega = ad::concat_rows(omega_rows);  // [N, d_z]

    auto z_q = ad::slice_rows(z, n * k, q);  // [Q, d_z]
    auto tau = tau_graph(model);

    Var sim = opt.classifier_metric == ClassifierMetric::cosine
                  ? ad::cosine_matrix(z_q, omega)
                  : ad::neg(ad::pairwise_sqdist(z_q, omega));
    auto clf_logits = ad::mul_scalarvar(sim, tau);  // [Q, N]
    auto clf_probs = ad::softmax_rows(clf_logits);

    EpisodeGraph out;
    out.class_probs = clf_probs->val;

    if (lambda2 != 0.0 && ep.q_in > 0) {
        auto lp = ad::log_softmax_rows(ad::slice_rows(clf_logits, 0, ep.q_in));
        out.l_ce = ad::neg(ad::mean_all(ad::gather_cols(lp, ep.labels_in)));
    }

    const bool need_d = opt.build_detector && opt.detector_flags.use_recon_errors;
    int dec_row0 = 0, dec_count = 0;
    if (opt.build_vae && need_d) {
        dec_count = b;
    } else if (opt.build_vae) {
        dec_count = ke;
    } else if (need_d) {
        dec_row0 = n * k;
        dec_count = q;
    }

    Var dec_logits;  // [dec_count, C, H, W]
    if (dec_count > 0)
        dec_logits = decode_logits(model.decoder, ad::slice_rows(z, dec_row0, dec_count));

    Tensor ex_flat = ep.exemplars.reshaped({n, pix});

    if (opt.build_vae) {
        // Reconstruction targets for support and in-distribution query rows.
        // Out-of-distribution queries have no target class and never enter
        // this term.
        Tensor targets = Tensor::zeros({ke, pix});
        for (int r = 0; r < ke; ++r) {
            const double* src;
            if (opt.self_reconstruction) {
                src = ep.images.data() + static_cast<std::size_t>(r) * plane;
            } else {
                const int slot = r < n * k ? r / k : ep.labels_in[static_cast<std::size_t>(r - n * k)];
                src = ex_flat.data() + static_cast<std::size_t>(slot) * plane;
            }
            std::memcpy(targets.data() + static_cast<std::size_t>(r) * plane, src,
                        plane * sizeof(double));
        }
        auto rec_flat = ad::reshape(ad::slice_rows(dec_logits, 0, ke), {ke, pix});
        Var rec;  // [K_e, 1] per-sample reconstruction term
        if (opt.recon_kind == ReconKind::bce) {
            rec = ad::bce_sum_rows_logits(rec_flat, targets);
        } else {
            auto diff = ad::sub(ad::sigmoid(rec_flat), ad::constant(targets));
            rec = ad::rowwise_sum(ad::square(diff));
        }
        if (opt.ae_mode) {
            out.l_vae = ad::mean_all(rec);
        } else {
            auto klr = ad::kl_rows(ad::slice_rows(mu, 0, ke), ad::slice_rows(log_sigma, 0, ke));
            out.l_vae = ad::mean_all(ad::add(rec, klr));
        }
    }

    Var recon_errs;  // [Q, N]
    if (need_d) {
        auto that = ad::sigmoid(ad::slice_rows(dec_logits, n * k - dec_row0, q));
        recon_errs = ad::pairwise_sqdist(ad::reshape(that, {q, pix}), ad::constant(ex_flat));
        out.recon_errors = recon_errs->val;
    }

    Var z_hat, kap;
    if (opt.modulation) {
        Var dist = opt.kappa_distance == KappaDistance::l1
                       ? ad::pairwise_l1(z_q, omega)
                       : ad::add_scalar(ad::neg(ad::cosine_matrix(z_q, omega)), 1.0);
        kap = ad::rowwise_min(dist);
        z_hat = ad::rowwise_div(z_q, ad::clamp_min(kap, 1e-6));
        out.kappa = kap->val;
    } else {
        z_hat = z_q;
        out.kappa = Tensor::zeros({q, 1});
    }
    out.modulated = z_hat->val;

    if (opt.build_detector) {
        std::vector<Var> blocks;
        if (opt.detector_flags.use_clf) blocks.push_back(clf_probs);
        if (opt.detector_flags.use_embedding) blocks.push_back(z_hat);
        if (opt.detector_flags.use_recon_errors) blocks.push_back(recon_errs);
        if (blocks.empty()) throw ConfigError("detector enabled with every input block ablated");
        auto det_in = blocks.size() == 1 ? blocks[0] : ad::concat_cols(blocks);
        auto det_logit = detector_logits(model.detector, det_in);  // [Q, 1]
        Tensor y = Tensor::zeros({q, 1});
        for (int i = 0; i < q; ++i) y[static_cast<std::size_t>(i)] = ep.openness[static_cast<std::size_t>(i)];
        out.l_bce = ad::bce_mean_logits(det_logit, y);
        out.p_eta = ad::sigmoid(det_logit)->val;
    }

    std::vector<Var> terms;
    if (out.l_vae && lambda1 != 0.0) terms.push_back(ad::scale(out.l_vae, lambda1));
    if (out.l_ce && lambda2 != 0.0) terms.push_back(ad::scale(out.l_ce, lambda2));
    if (out.l_bce && lambda3 != 0.0) terms.push_back(ad::scale(out.l_bce, lambda3));
    if (!terms.empty()) {
        out.total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
    }
    return out;
}

}  // namespace refocs
