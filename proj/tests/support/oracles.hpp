#pragma once

// Shared test oracles. Gradients are always validated against central finite
// differences computed on an independent re-evaluation of the graph builder,
// never against the tape itself.

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "refocs/autodiff.hpp"
#include "refocs/rng.hpp"

namespace testsup {

using refocs::Rng;
using refocs::Tensor;
namespace ad = refocs::ad;

inline Tensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0, double offset = 0.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale + offset;
    return t;
}

inline Tensor rand_uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Keeps every entry at least `margin` away from zero, for ops with a kink
// there (relu, l1 distances).
inline Tensor randn_away_from_zero(std::vector<int> shape, Rng& rng, double margin = 0.05) {
    Tensor t = randn(std::move(shape), rng);
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (std::abs(t[i]) < margin) t[i] = t[i] < 0.0 ? t[i] - margin : t[i] + margin;
    }
    return t;
}

using GraphBuilder = std::function<ad::Var(const std::vector<ad::Var>&)>;

inline double eval_scalar(const GraphBuilder& f, const std::vector<Tensor>& vals) {
    std::vector<ad::Var> leaves;
    leaves.reserve(vals.size());
    for (const auto& t : vals) leaves.push_back(ad::leaf(t, false));
    ad::Var out = f(leaves);
    REQUIRE(out->val.size() == 1);
    return out->val[0];
}

// Central-difference gradient check for a scalar-valued builder over all
// elements of all inputs. rel_tol is measured against max(|fd|, |an|, floor).
inline void gradcheck(const GraphBuilder& f, const std::vector<Tensor>& vals,
                      double eps = 1e-5, double rel_tol = 1e-6, double floor = 1.0) {
    std::vector<ad::Var> leaves;
    leaves.reserve(vals.size());
    for (const auto& t : vals) leaves.push_back(ad::leaf(t, true));
    ad::Var loss = f(leaves);
    REQUIRE(loss->val.size() == 1);
    ad::backward(loss);
    for (std::size_t li = 0; li < vals.size(); ++li) {
        leaves[li]->ensure_grad();
        for (std::size_t i = 0; i < vals[li].size(); ++i) {
            std::vector<Tensor> vp = vals;
            std::vector<Tensor> vm = vals;
            vp[li][i] += eps;
            vm[li][i] -= eps;
            const double fd = (eval_scalar(f, vp) - eval_scalar(f, vm)) / (2.0 * eps);
            const double an = leaves[li]->grad[i];
            const double denom = std::max({std::abs(fd), std::abs(an), floor});
            INFO("input ", li, " element ", i, " fd=", fd, " analytic=", an);
            CHECK(std::abs(fd - an) / denom <= rel_tol);
        }
    }
}

// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
// every output element influences the loss with a distinct coefficient.
inline ad::Var weighted_sum(const ad::Var& v, const Tensor& w) {
    return ad::sum_all(ad::mul(v, ad::constant(w)));
}

inline Tensor weights_for(const std::vector<int>& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w(shape);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(0.25, 1.75);
    return w;
}

}  // namespace testsup
