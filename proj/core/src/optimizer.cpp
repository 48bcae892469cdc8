#include "refocs/optimizer.hpp"

#include <cmath>

#include "refocs/errors.hpp"

namespace refocs {

Adam::Adam(std::vector<ad::Var> params, AdamOptions opt)
    : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p->val.shape()));
        v_.push_back(Tensor::zeros(p->val.shape()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        double* w = p.val.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < p.val.size(); ++j) {
            m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
            v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
            w[j] -= opt_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p->ensure_grad();
        p->grad.fill(0.0);
    }
}

void Adam::restore(long t, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw NumericError("optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!m[i].same_shape(params_[i]->val) || !v[i].same_shape(params_[i]->val))
            throw NumericError("optimizer moment shape mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace refocs
