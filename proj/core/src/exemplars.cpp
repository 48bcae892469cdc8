#include "refocs/exemplars.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "refocs/errors.hpp"
#include "refocs/optimizer.hpp"

namespace refocs {

namespace {

constexpr std::uint64_t kPretrainStream = 0x9e3e7a11ULL;

Tensor stack_images(const std::vector<const Tensor*>& imgs) {
    const Tensor& probe = *imgs.at(0);
    Tensor out = Tensor::zeros({static_cast<int>(imgs.size()), probe.dim(0), probe.dim(1),
                                probe.dim(2)});
    const std::size_t plane = probe.size();
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        if (imgs[i]->size() != plane) throw DataError("mixed image sizes in one batch");
        std::memcpy(out.data() + i * plane, imgs[i]->data(), plane * sizeof(double));
    }
    return out;
}

double row_distance(const Tensor& feats, int row, const std::vector<double>& centroid,
                    ExemplarDistance distance) {
    const int d = feats.cols();
    const double* f = feats.data() + static_cast<std::size_t>(row) * d;
    if (distance == ExemplarDistance::l2) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diff = f[j] - centroid[static_cast<std::size_t>(j)];
            s += diff * diff;
        }
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < d; ++j) {
        dot += f[j] * centroid[static_cast<std::size_t>(j)];
        na += f[j] * f[j];
        nb += centroid[static_cast<std::size_t>(j)] * centroid[static_cast<std::size_t>(j)];
    }
    const double denom = std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12);
    return 1.0 - dot / denom;
}

std::vector<double> feature_centroid(const Tensor& feats) {
    const int m = feats.rows(), d = feats.cols();
    std::vector<double> c(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) c[static_cast<std::size_t>(j)] += feats.at(i, j);
    for (auto& v : c) v /= m;
    return c;
}

}  // namespace

std::vector<double> pretrain_encoder_nonepisodic(Model& model, const DatasetManifest& manifest,
                                                 const PretrainOptions& opt) {
    if (opt.epochs == 0) return {};
    if (opt.epochs < 0 || opt.batch_size < 1) throw ConfigError("bad pretraining options");
    const auto& class_ids = manifest.class_ids();
    if (class_ids.size() < 2)
        throw DataError("pretraining needs at least two classes, got " +
                        std::to_string(class_ids.size()));

    struct Item {
        const Tensor* pixels;
        int label;
    };
    std::vector<Item> items;
    for (std::size_t ci = 0; ci < class_ids.size(); ++ci)
        for (std::int64_t sid : manifest.samples_of(class_ids[ci]))
            items.push_back({&manifest.image(sid).pixels, static_cast<int>(ci)});

    Rng rng(mix_keys(opt.seed, kPretrainStream));
    const int n_classes = static_cast<int>(class_ids.size());
    const int fd = model.encoder.feature_dim();
    const double head_scale = std::sqrt(1.0 / fd);
    Tensor hw = Tensor::zeros({n_classes, fd});
    for (std::size_t i = 0; i < hw.size(); ++i) hw[i] = rng.normal() * head_scale;
    auto head_w = ad::leaf(hw, true);
    auto head_b = ad::leaf(Tensor::zeros({n_classes}), true);

    std::vector<ad::Var> params;
    visit_params(model, [&](const std::string& name, const ad::Var& p) {
        if (name.rfind("enc.", 0) == 0) params.push_back(p);
    });
    params.push_back(head_w);
    params.push_back(head_b);
    Adam adam(params, AdamOptions{opt.lr, 0.9, 0.999, 1e-8});

    std::vector<int> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    std::vector<double> epoch_ce;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        double ce_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
            std::vector<const Tensor*> imgs;
            std::vector<int> labels;
            for (std::size_t i = at; i < end; ++i) {
                imgs.push_back(items[static_cast<std::size_t>(order[i])].pixels);
                labels.push_back(items[static_cast<std::size_t>(order[i])].label);
            }
            auto feats = encoder_features(model.encoder, ad::constant(stack_images(imgs)));
            auto logits = ad::linear(feats, head_w, head_b);
            auto loss = ad::neg(ad::mean_all(ad::gather_cols(ad::log_softmax_rows(logits), labels)));
            if (!loss->val.all_finite()) throw NumericError("non-finite pretraining loss");
            ce_sum += loss->val[0];
            ++batches;
            adam.zero_grad();
            ad::backward(loss);
            adam.step();
        }
        epoch_ce.push_back(ce_sum / static_cast<double>(batches));
    }
    return epoch_ce;
}

std::map<int, std::int64_t> estimate_exemplars(Model& model, DatasetManifest& manifest,
                                               ExemplarDistance distance) {
    std::map<int, std::int64_t> chosen;
    for (int class_id : manifest.class_ids()) {
        std::vector<std::int64_t> sids = manifest.samples_of(class_id);
        std::sort(sids.begin(), sids.end());
        std::vector<const Tensor*> imgs;
        imgs.reserve(sids.size());
        for (std::int64_t sid : sids) imgs.push_back(&manifest.image(sid).pixels);
        Tensor feats = encode_features_value(model, stack_images(imgs));
        const auto centroid = feature_centroid(feats);
        int best = 0;
        double best_d = row_distance(feats, 0, centroid, distance);
        for (int i = 1; i < feats.rows(); ++i) {
            const double d = row_distance(feats, i, centroid, distance);
            if (d < best_d) {  // ties keep the smaller sample_id
                best_d = d;
                best = i;
            }
        }
        const std::int64_t sid = sids[static_cast<std::size_t>(best)];
        manifest.attach_exemplar(
            ExemplarImage{manifest.image(sid).pixels, class_id, Provenance::estimated});
        chosen[class_id] = sid;
    }
    return chosen;
}

int select_support_exemplar(const Model& model, const std::vector<const LabeledImage*>& support,
                            ExemplarDistance distance) {
    if (support.empty()) throw DataError("empty support set");
    if (support.size() == 1) return 0;
    std::vector<std::size_t> order(support.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return support[a]->sample_id < support[b]->sample_id;
    });
    std::vector<const Tensor*> imgs;
    for (const auto* s : support) imgs.push_back(&s->pixels);
    Tensor feats = encode_features_value(model, stack_images(imgs));
    const auto centroid = feature_centroid(feats);
    std::size_t best = order[0];
    double best_d = row_distance(feats, static_cast<int>(order[0]), centroid, distance);
    for (std::size_t oi = 1; oi < order.size(); ++oi) {
        const double d = row_distance(feats, static_cast<int>(order[oi]), centroid, distance);
        if (d < best_d) {
            best_d = d;
            best = order[oi];
        }
    }
    return static_cast<int>(best);
}

}  // namespace refocs
