#include "refocs/nets.hpp"

#include <cmath>

#include "refocs/errors.hpp"

namespace refocs {

namespace {

Tensor init_normal(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * stddev;
    return t;
}

ad::Var param(Tensor t) { return ad::leaf(std::move(t), true); }

}  // namespace

int EncoderNet::feature_dim() const {
    const int n = blocks();
    return channels.back() * (image_h >> n) * (image_w >> n);
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
    if (config.conv_channels.empty()) throw ConfigError("model needs at least one conv block");
    if (config.d_z < 1) throw ConfigError("latent dimension must be positive");
    if (config.detector_input_dim < 1) throw ConfigError("detector input dimension unset");
    const int n = static_cast<int>(config.conv_channels.size());
    if ((config.image_h % (1 << n)) != 0 || (config.image_w % (1 << n)) != 0) {
        throw ConfigError("image size must be divisible by 2^blocks");
    }

    Rng rng(mix_keys(seed, 0x1127e75ULL));
    Model m;
    m.config = config;

    EncoderNet& e = m.encoder;
    e.image_h = config.image_h;
    e.image_w = config.image_w;
    e.in_channels = config.in_channels;
    e.d_z = config.d_z;
    e.channels = config.conv_channels;
    int cin = config.in_channels;
    for (int c : e.channels) {
        e.conv_w.push_back(param(init_normal({c, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9)))));
        e.conv_b.push_back(param(Tensor::zeros({c})));
        e.gamma.push_back(param(Tensor::full({c}, 1.0)));
        e.beta.push_back(param(Tensor::zeros({c})));
        cin = c;
    }
    const int fd = e.feature_dim();
    e.mu_w = param(init_normal({config.d_z, fd}, rng, std::sqrt(1.0 / fd)));
    e.mu_b = param(Tensor::zeros({config.d_z}));
    e.ls_w = param(init_normal({config.d_z, fd}, rng, std::sqrt(1.0 / fd)));
    e.ls_b = param(Tensor::zeros({config.d_z}));

    DecoderNet& d = m.decoder;
    d.image_h = config.image_h;
    d.image_w = config.image_w;
    d.out_channels = config.in_channels;
    d.d_z = config.d_z;
    d.channels = config.conv_channels;
    const int c_top = d.channels.back();
    const int h0 = config.image_h >> n, w0 = config.image_w >> n;
    d.fc_w = param(init_normal({c_top * h0 * w0, config.d_z}, rng, std::sqrt(2.0 / config.d_z)));
    d.fc_b = param(Tensor::zeros({c_top * h0 * w0}));
    for (int i = n - 1; i >= 0; --i) {
        const int from = d.channels[static_cast<std::size_t>(i)];
        const int to = i > 0 ? d.channels[static_cast<std::size_t>(i - 1)] : d.out_channels;
        const double stddev = i > 0 ? std::sqrt(2.0 / (from * 9)) : std::sqrt(1.0 / (from * 9));
        d.deconv_w.push_back(param(init_normal({from, to, 3, 3}, rng, stddev)));
        d.deconv_b.push_back(param(Tensor::zeros({to})));
        if (i > 0) {
            d.gamma.push_back(param(Tensor::full({to}, 1.0)));
            d.beta.push_back(param(Tensor::zeros({to})));
        }
    }

    DetectorNet& det = m.detector;
    det.input_dim = config.detector_input_dim;
    int prev = config.detector_input_dim;
    for (int width : config.detector_hidden) {
        det.w.push_back(param(init_normal({width, prev}, rng, std::sqrt(2.0 / prev))));
        det.b.push_back(param(Tensor::zeros({width})));
        prev = width;
    }
    det.w.push_back(param(init_normal({1, prev}, rng, std::sqrt(1.0 / prev))));
    det.b.push_back(param(Tensor::zeros({1})));

    // softplus(rho) = tau_init
    const double rho = std::log(std::expm1(config.tau_init));
    m.tau_rho = param(Tensor::scalar(rho));
    return m;
}

void visit_params(const Model& model,
                  const std::function<void(const std::string&, const ad::Var&)>& fn) {
    const EncoderNet& e = model.encoder;
    for (int i = 0; i < e.blocks(); ++i) {
        const std::string p = "enc.conv" + std::to_string(i) + ".";
        fn(p + "w", e.conv_w[static_cast<std::size_t>(i)]);
        fn(p + "b", e.conv_b[static_cast<std::size_t>(i)]);
        fn(p + "gamma", e.gamma[static_cast<std::size_t>(i)]);
        fn(p + "beta", e.beta[static_cast<std::size_t>(i)]);
    }
    fn("enc.mu.w", e.mu_w);
    fn("enc.mu.b", e.mu_b);
    fn("enc.ls.w", e.ls_w);
    fn("enc.ls.b", e.ls_b);

    const DecoderNet& d = model.decoder;
    fn("dec.fc.w", d.fc_w);
    fn("dec.fc.b", d.fc_b);
    for (std::size_t i = 0; i < d.deconv_w.size(); ++i) {
        const std::string p = "dec.deconv" + std::to_string(i) + ".";
        fn(p + "w", d.deconv_w[i]);
        fn(p + "b", d.deconv_b[i]);
    }
    for (std::size_t i = 0; i < d.gamma.size(); ++i) {
        const std::string p = "dec.norm" + std::to_string(i) + ".";
        fn(p + "gamma", d.gamma[i]);
        fn(p + "beta", d.beta[i]);
    }
    const DetectorNet& det = model.detector;
    for (std::size_t i = 0; i < det.w.size(); ++i) {
        const std::string p = "det.fc" + std::to_string(i) + ".";
        fn(p + "w", det.w[i]);
        fn(p + "b", det.b[i]);
    }
    fn("tau_rho", model.tau_rho);
}

ad::Var encoder_features(const EncoderNet& enc, const ad::Var& images) {
    if (images->val.ndim() != 4 || images->val.dim(1) != enc.in_channels ||
        images->val.dim(2) != enc.image_h || images->val.dim(3) != enc.image_w) {
        throw DataError("encoder input grid mismatch: got " + images->val.shape_str());
    }
    ad::Var h = images;
    for (int i = 0; i < enc.blocks(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        h = ad::conv2d(h, enc.conv_w[idx], enc.conv_b[idx], 1, 1);
        h = ad::instance_norm(h, enc.gamma[idx], enc.beta[idx]);
        h = ad::relu(h);
        h = ad::maxpool2d(h);
    }
    return ad::reshape(h, {images->val.dim(0), enc.feature_dim()});
}

std::pair<ad::Var, ad::Var> encode_heads(const EncoderNet& enc, const ad::Var& features) {
    return {ad::linear(features, enc.mu_w, enc.mu_b), ad::linear(features, enc.ls_w, enc.ls_b)};
}

ad::Var decode_logits(const DecoderNet& dec, const ad::Var& z) {
    if (z->val.ndim() != 2 || z->val.dim(1) != dec.d_z) {
        throw DataError("decoder input dimension mismatch: got " + z->val.shape_str());
    }
    const int b = z->val.dim(0);
    const int n = static_cast<int>(dec.channels.size());
    int h = dec.image_h >> n, w = dec.image_w >> n;
    ad::Var x = ad::relu(ad::linear(z, dec.fc_w, dec.fc_b));
    x = ad::reshape(x, {b, dec.channels.back(), h, w});
    for (std::size_t i = 0; i < dec.deconv_w.size(); ++i) {
        h *= 2;
        w *= 2;
        x = ad::conv2d_transpose(x, dec.deconv_w[i], dec.deconv_b[i], 2, 1, h, w);
        if (i + 1 < dec.deconv_w.size()) {
            x = ad::instance_norm(x, dec.gamma[i], dec.beta[i]);
            x = ad::relu(x);
        }
    }
    return x;
}

ad::Var detector_logits(const DetectorNet& det, const ad::Var& features) {
    if (features->val.ndim() != 2 || features->val.dim(1) != det.input_dim) {
        throw DataError("detector input dimension mismatch: got " + features->val.shape_str());
    }
    ad::Var h = features;
    for (std::size_t i = 0; i < det.w.size(); ++i) {
        h = ad::linear(h, det.w[i], det.b[i]);
        if (i + 1 < det.w.size()) h = ad::relu(h);
    }
    return h;
}

ad::Var tau_graph(const Model& model) { return ad::softplus(model.tau_rho); }

double tau_value(const Model& model) {
    return model.tau_rho->val[0] > 0.0
               ? model.tau_rho->val[0] + std::log1p(std::exp(-model.tau_rho->val[0]))
               : std::log1p(std::exp(model.tau_rho->val[0]));
}

std::pair<Tensor, Tensor> encode(const Model& model, const Tensor& images) {
    auto x = ad::constant(images);
    auto [mu, ls] = encode_heads(model.encoder, encoder_features(model.encoder, x));
    Tensor sigma(ls->val.shape());
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::exp(ls->val[i]);
    return {mu->val, std::move(sigma)};
}

Tensor encode_features_value(const Model& model, const Tensor& images) {
    return encoder_features(model.encoder, ad::constant(images))->val;
}

Tensor decode(const Model& model, const Tensor& z) {
    auto out = ad::sigmoid(decode_logits(model.decoder, ad::constant(z)));
    return out->val;
}

Tensor detector_forward(const Model& model, const Tensor& x) {
    auto out = ad::sigmoid(detector_logits(model.detector, ad::constant(x)));
    return out->val;
}

LatentCode reparameterize(const Tensor& mu, const Tensor& sigma, Rng& rng, bool deterministic) {
    if (!mu.same_shape(sigma)) throw DataError("reparameterize: mu/sigma shape mismatch");
    LatentCode code;
    code.mu = mu;
    code.sigma = sigma;
    code.epsilon = Tensor::zeros(mu.shape());
    code.z = mu;
    if (!deterministic) {
        for (std::size_t i = 0; i < mu.size(); ++i) {
            code.epsilon[i] = rng.normal();
            code.z[i] = mu[i] + sigma[i] * code.epsilon[i];
        }
    }
    return code;
}

}  // namespace refocs
