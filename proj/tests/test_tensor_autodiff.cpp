#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "refocs/autodiff.hpp"
#include "refocs/rng.hpp"
#include "refocs/tensor.hpp"

using namespace refocs;
using testsup::gradcheck;
using testsup::randn;
using testsup::randn_away_from_zero;
using testsup::weighted_sum;
using testsup::weights_for;

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 5.0);
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(Tensor::full({2}, 3.0)[1] == 3.0);
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("rng is serializable and bit stable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    a.normal();  // leaves a cached second variate
    auto st = a.state();
    std::vector<double> ahead;
    for (int i = 0; i < 10; ++i) ahead.push_back(a.normal());
    Rng c;
    c.restore(st);
    for (int i = 0; i < 10; ++i) CHECK(c.normal() == ahead[static_cast<std::size_t>(i)]);
}

TEST_CASE("rng normal moments") {
    Rng rng(7);
    const int n = 20000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng below covers range uniformly") {
    Rng rng(3);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) counts[static_cast<std::size_t>(rng.index(7))]++;
    for (int c : counts) CHECK(std::abs(c - 1000) < 150);
}

TEST_CASE("mix_keys derives distinct streams") {
    CHECK(mix_keys(1, 2, 3) != mix_keys(1, 3, 2));
    CHECK(mix_keys(1, 0) != mix_keys(1, 1));
    CHECK(mix_keys(1, 5) == mix_keys(1, 5));
}

TEST_CASE("backward accumulates through fan-out") {
    // z = x*y + x, so dz/dx = y + 1 and dz/dy = x.
    auto x = ad::leaf(Tensor::scalar(3.0), true);
    auto y = ad::leaf(Tensor::scalar(4.0), true);
    auto z = ad::add(ad::mul(x, y), x);
    CHECK(z->val[0] == doctest::Approx(15.0));
    ad::backward(z);
    CHECK(x->grad[0] == doctest::Approx(5.0));
    CHECK(y->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("graphs without grad carry no parents") {
    auto x = ad::constant(Tensor::scalar(2.0));
    auto y = ad::relu(ad::scale(x, 3.0));
    CHECK(y->parents.empty());
    CHECK(!y->requires_grad);
    CHECK(!y->backward_fn);
}

TEST_CASE("elementwise op gradients") {
    Rng rng(11);
    Tensor a = randn({3, 4}, rng);
    Tensor b = randn({3, 4}, rng);
    Tensor w = weights_for({3, 4}, 99);

    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::add(v[0], v[1]), w); },
              {a, b});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::sub(v[0], v[1]), w); },
              {a, b});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::mul(v[0], v[1]), w); },
              {a, b});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::scale(v[0], -1.7), w); },
              {a});
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::add_scalar(v[0], 2.5), w); },
        {a});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::neg(v[0]), w); }, {a});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::square(v[0]), w); }, {a});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::sigmoid(v[0]), w); },
              {a});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::exp_op(v[0]), w); }, {a});
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::softplus(v[0]), w); },
              {a});
}

TEST_CASE("relu and clamp gradients away from the kink") {
    Rng rng(12);
    Tensor a = randn_away_from_zero({4, 5}, rng);
    Tensor w = weights_for({4, 5}, 98);
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::relu(v[0]), w); }, {a});

    Tensor c = randn({4, 5}, rng, 1.0, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (std::abs(c[i] - 0.3) < 0.05) c[i] += 0.2;
    }
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::clamp_min(v[0], 0.3), w); },
        {c});
}

TEST_CASE("log gradient on positive inputs") {
    Rng rng(13);
    Tensor a = testsup::rand_uniform({3, 3}, rng, 0.5, 3.0);
    Tensor w = weights_for({3, 3}, 97);
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::log_op(v[0]), w); }, {a});
}

TEST_CASE("scalar broadcast multiply") {
    Rng rng(14);
    Tensor a = randn({3, 4}, rng);
    Tensor s = Tensor::scalar(1.3);
    Tensor w = weights_for({3, 4}, 96);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::mul_scalarvar(v[0], v[1]), w); },
        {a, s});
}

TEST_CASE("reductions") {
    Rng rng(15);
    Tensor a = randn({4, 3}, rng);
    gradcheck([](const std::vector<ad::Var>& v) { return ad::sum_all(v[0]); }, {a});
    gradcheck([](const std::vector<ad::Var>& v) { return ad::mean_all(v[0]); }, {a});
    Tensor w = weights_for({4, 1}, 95);
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::rowwise_sum(v[0]), w); },
              {a});
}

TEST_CASE("shape ops") {
    Rng rng(16);
    Tensor a = randn({4, 6}, rng);
    Tensor w = weights_for({2, 12}, 94);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::reshape(v[0], {2, 12}), w); },
        {a});

    Tensor ws = weights_for({2, 6}, 93);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::slice_rows(v[0], 1, 2), ws); },
        {a});

    Tensor b = randn({2, 6}, rng);
    Tensor c = randn({3, 6}, rng);
    Tensor wc = weights_for({9, 6}, 92);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::concat_rows({v[0], v[1], v[2]}), wc);
        },
        {a, b, c});

    Tensor d = randn({4, 2}, rng);
    Tensor wcc = weights_for({4, 8}, 91);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::concat_cols({v[0], v[1]}), wcc); },
        {a, d});
}

TEST_CASE("slice of 4-D tensors walks whole samples") {
    Rng rng(17);
    Tensor a = randn({4, 2, 3, 3}, rng);
    auto v = ad::constant(a);
    auto s = ad::slice_rows(v, 2, 2);
    CHECK(s->val.shape() == std::vector<int>{2, 2, 3, 3});
    for (std::size_t i = 0; i < s->val.size(); ++i) {
        CHECK(s->val[i] == a[2 * 2 * 3 * 3 + i]);
    }
}

TEST_CASE("matmul and linear") {
    Rng rng(18);
    Tensor a = randn({3, 4}, rng);
    Tensor b = randn({4, 5}, rng);
    Tensor w = weights_for({3, 5}, 90);
    gradcheck([&](const std::vector<ad::Var>& v) { return weighted_sum(ad::matmul(v[0], v[1]), w); },
              {a, b});

    Tensor x = randn({3, 4}, rng);
    Tensor wt = randn({5, 4}, rng);
    Tensor bias = randn({5}, rng);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::linear(v[0], v[1], v[2]), w);
        },
        {x, wt, bias});

    // value oracle vs naive loops
    auto y = ad::linear(ad::constant(x), ad::constant(wt), ad::constant(bias));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 5; ++j) {
            double acc = bias[static_cast<std::size_t>(j)];
            for (int k = 0; k < 4; ++k) acc += x.at(i, k) * wt.at(j, k);
            CHECK(y->val.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax values") {
    auto a = ad::constant(Tensor({1, 2}, {0.0, std::log(2.0)}));
    auto s = ad::softmax_rows(a);
    CHECK(s->val[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s->val[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // large logits stay finite
    auto big = ad::softmax_rows(ad::constant(Tensor({1, 3}, {1000.0, 999.0, -1000.0})));
    CHECK(big->val.all_finite());
    CHECK(big->val[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("softmax and log_softmax gradients") {
    Rng rng(19);
    Tensor a = randn({4, 5}, rng, 2.0);
    Tensor w = weights_for({4, 5}, 89);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::softmax_rows(v[0]), w); }, {a});
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::log_softmax_rows(v[0]), w); },
        {a});
}

TEST_CASE("rowwise_div and gather_cols") {
    Rng rng(20);
    Tensor a = randn({3, 4}, rng);
    Tensor d = testsup::rand_uniform({3}, rng, 0.5, 2.0);
    Tensor w = weights_for({3, 4}, 88);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::rowwise_div(v[0], v[1]), w); },
        {a, d});

    std::vector<int> cols{2, 0, 3};
    Tensor wg = weights_for({3}, 87);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::gather_cols(v[0], cols), wg); },
        {a});
}

TEST_CASE("cosine_matrix values") {
    // unit x axis vs (1,1)/sqrt2 and y axis
    Tensor a({1, 2}, {2.0, 0.0});
    Tensor b({3, 2}, {1.0, 1.0, 0.0, 5.0, -3.0, 0.0});
    auto c = ad::cosine_matrix(ad::constant(a), ad::constant(b));
    CHECK(c->val.at(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(c->val.at(0, 1) == doctest::Approx(0.0));
    CHECK(c->val.at(0, 2) == doctest::Approx(-1.0).epsilon(1e-12));
    // zero vector does not produce NaN
    Tensor z({1, 2}, {0.0, 0.0});
    auto cz = ad::cosine_matrix(ad::constant(z), ad::constant(b));
    CHECK(cz->val.all_finite());
}

TEST_CASE("cosine_matrix gradient") {
    Rng rng(21);
    Tensor a = randn({3, 4}, rng);
    Tensor b = randn({2, 4}, rng);
    Tensor w = weights_for({3, 2}, 86);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::cosine_matrix(v[0], v[1]), w); },
        {a, b}, 1e-6, 1e-5);
}

TEST_CASE("pairwise distances") {
    Rng rng(22);
    Tensor a = randn({3, 4}, rng);
    Tensor b = randn({2, 4}, rng, 1.0, 3.0);  // offset keeps |a-b| off the kink
    Tensor w = weights_for({3, 2}, 85);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::pairwise_l1(v[0], v[1]), w); },
        {a, b});
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::pairwise_sqdist(v[0], v[1]), w);
        },
        {a, b});

    // value oracles
    Tensor p({1, 2}, {1.0, 2.0});
    Tensor q({1, 2}, {4.0, -2.0});
    auto l1 = ad::pairwise_l1(ad::constant(p), ad::constant(q));
    CHECK(l1->val[0] == doctest::Approx(7.0));
    auto sq = ad::pairwise_sqdist(ad::constant(p), ad::constant(q));
    CHECK(sq->val[0] == doctest::Approx(25.0));
}

TEST_CASE("rowwise_min picks first minimum") {
    Tensor a({2, 3}, {3.0, 1.0, 1.0, -2.0, 0.0, -2.0});
    std::vector<int> arg;
    auto m = ad::rowwise_min(ad::constant(a), &arg);
    CHECK(m->val[0] == 1.0);
    CHECK(m->val[1] == -2.0);
    CHECK(arg == std::vector<int>{1, 0});

    Rng rng(23);
    Tensor r = randn({4, 5}, rng, 3.0);  // distinct values w.p. 1
    Tensor w = weights_for({4, 1}, 84);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::rowwise_min(v[0]), w); }, {r});
}

TEST_CASE("kl_rows matches the closed form and is zero at the prior") {
    auto z = ad::kl_rows(ad::constant(Tensor::zeros({2, 3})), ad::constant(Tensor::zeros({2, 3})));
    CHECK(z->val[0] == doctest::Approx(0.0));
    CHECK(z->val[1] == doctest::Approx(0.0));

    // independent recomputation: 0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)
    Rng rng(24);
    Tensor mu = randn({3, 4}, rng);
    Tensor h = randn({3, 4}, rng, 0.3);
    auto kl = ad::kl_rows(ad::constant(mu), ad::constant(h));
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 4; ++c) {
            const double sigma = std::exp(h.at(r, c));
            acc += mu.at(r, c) * mu.at(r, c) + sigma * sigma - 1.0 - std::log(sigma * sigma);
        }
        CHECK(kl->val[static_cast<std::size_t>(r)] == doctest::Approx(0.5 * acc).epsilon(1e-12));
    }

    Tensor w = weights_for({3, 1}, 83);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::kl_rows(v[0], v[1]), w); },
        {mu, h});
}

TEST_CASE("bce from logits matches the probability form and stays stable") {
    Rng rng(25);
    Tensor logits = randn({3, 4}, rng, 2.0);
    Tensor targets = testsup::rand_uniform({3, 4}, rng, 0.0, 1.0);
    auto rows = ad::bce_sum_rows_logits(ad::constant(logits), targets);
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 4; ++c) {
            const double p = 1.0 / (1.0 + std::exp(-logits.at(r, c)));
            const double t = targets.at(r, c);
            acc += -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
        }
        CHECK(rows->val[static_cast<std::size_t>(r)] == doctest::Approx(acc).epsilon(1e-9));
    }

    // extreme logits are finite
    Tensor ext({1, 4}, {500.0, -500.0, 40.0, -40.0});
    Tensor t1({1, 4}, {1.0, 0.0, 0.0, 1.0});
    // confident-correct entries contribute ~0, confident-wrong contribute |logit|
    auto e = ad::bce_sum_rows_logits(ad::constant(ext), t1);
    CHECK(e->val.all_finite());
    CHECK(e->val[0] == doctest::Approx(80.0).epsilon(1e-9));

    Tensor w = weights_for({3, 1}, 82);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::bce_sum_rows_logits(v[0], targets), w);
        },
        {logits});
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return ad::bce_mean_logits(v[0], targets); },
        {logits});

    auto m = ad::bce_mean_logits(ad::constant(logits), targets);
    double total = 0.0;
    for (int r = 0; r < 3; ++r) total += rows->val[static_cast<std::size_t>(r)];
    CHECK(m->val[0] == doctest::Approx(total / 12.0).epsilon(1e-12));
}

TEST_CASE("conv2d value oracle on an identity kernel") {
    // 1x1 kernel with weight 1 reproduces the input shifted by bias.
    Rng rng(26);
    Tensor x = randn({2, 3, 4, 4}, rng);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w[static_cast<std::size_t>(c * 3 + c)] = 1.0;
    Tensor b = Tensor::zeros({3});
    auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 1, 0);
    CHECK(y->val.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y->val[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d matches direct convolution loops") {
    Rng rng(27);
    const int n = 2, cin = 2, cout = 3, h = 5, wd = 6, k = 3, stride = 2, pad = 1;
    Tensor x = randn({n, cin, h, wd}, rng);
    Tensor w = randn({cout, cin, k, k}, rng);
    Tensor b = randn({cout}, rng);
    auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), stride, pad);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wd + 2 * pad - k) / stride + 1;
    REQUIRE(y->val.shape() == std::vector<int>{n, cout, oh, ow});
    for (int s = 0; s < n; ++s) {
        for (int co = 0; co < cout; ++co) {
            for (int oi = 0; oi < oh; ++oi) {
                for (int oj = 0; oj < ow; ++oj) {
                    double acc = b[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int ki = 0; ki < k; ++ki) {
                            for (int kj = 0; kj < k; ++kj) {
                                const int ii = oi * stride - pad + ki;
                                const int jj = oj * stride - pad + kj;
                                if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
                                acc += x[((static_cast<std::size_t>(s) * cin + ci) * h + ii) * wd + jj] *
                                       w[((static_cast<std::size_t>(co) * cin + ci) * k + ki) * k + kj];
                            }
                        }
                    }
                    const std::size_t oidx =
                        ((static_cast<std::size_t>(s) * cout + co) * oh + oi) * ow + oj;
                    CHECK(y->val[oidx] == doctest::Approx(acc).epsilon(1e-10));
                }
            }
        }
    }
}

TEST_CASE("conv2d gradients") {
    Rng rng(28);
    Tensor x = randn({2, 2, 5, 5}, rng);
    Tensor w = randn({3, 2, 3, 3}, rng, 0.5);
    Tensor b = randn({3}, rng);
    Tensor ws = weights_for({2, 3, 5, 5}, 81);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::conv2d(v[0], v[1], v[2], 1, 1), ws);
        },
        {x, w, b}, 1e-5, 1e-5);

    Tensor ws2 = weights_for({2, 3, 3, 3}, 80);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::conv2d(v[0], v[1], v[2], 2, 1), ws2);
        },
        {x, w, b}, 1e-5, 1e-5);
}

TEST_CASE("conv2d_transpose is the exact adjoint of conv2d") {
    Rng rng(29);
    const int c1 = 2, c2 = 3, h = 6, wd = 6, k = 3, stride = 2, pad = 1;
    Tensor W = randn({c2, c1, k, k}, rng);
    Tensor zero2 = Tensor::zeros({c2});
    Tensor zero1 = Tensor::zeros({c1});
    Tensor x = randn({1, c1, h, wd}, rng);
    auto y = ad::conv2d(ad::constant(x), ad::constant(W), ad::constant(zero2), stride, pad);
    const int oh = y->val.dim(2), ow = y->val.dim(3);
    Tensor u = randn({1, c2, oh, ow}, rng);
    auto v = ad::conv2d_transpose(ad::constant(u), ad::constant(W), ad::constant(zero1), stride,
                                  pad, h, wd);
    double yu = 0.0, xv = 0.0;
    for (std::size_t i = 0; i < y->val.size(); ++i) yu += y->val[i] * u[i];
    for (std::size_t i = 0; i < x.size(); ++i) xv += x[i] * v->val[i];
    CHECK(yu == doctest::Approx(xv).epsilon(1e-10));
}

TEST_CASE("conv2d_transpose gradients and shape checks") {
    Rng rng(30);
    Tensor x = randn({2, 3, 3, 3}, rng);
    Tensor w = randn({3, 2, 3, 3}, rng, 0.5);
    Tensor b = randn({2}, rng);
    Tensor ws = weights_for({2, 2, 6, 6}, 79);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::conv2d_transpose(v[0], v[1], v[2], 2, 1, 6, 6), ws);
        },
        {x, w, b}, 1e-5, 1e-5);

    CHECK_THROWS(ad::conv2d_transpose(ad::constant(x), ad::constant(w), ad::constant(b), 2, 1, 9, 9));
}

TEST_CASE("maxpool2d value and routing") {
    Tensor x({1, 1, 4, 4}, {1, 2, 5, 3,
                            4, 0, 1, 1,
                            7, 7, 2, 2,
                            0, 1, 2, 9});
    auto xv = ad::leaf(x, true);
    auto y = ad::maxpool2d(xv);
    CHECK(y->val.shape() == std::vector<int>{1, 1, 2, 2});
    CHECK(y->val[0] == 4.0);
    CHECK(y->val[1] == 5.0);
    CHECK(y->val[2] == 7.0);
    CHECK(y->val[3] == 9.0);
    ad::backward(ad::sum_all(y));
    // ties route to the first element in scan order (row 2 col 0 for the 7s)
    CHECK(xv->grad[8] == 1.0);
    CHECK(xv->grad[9] == 0.0);

    Rng rng(31);
    Tensor r = randn({2, 3, 4, 4}, rng, 3.0);
    Tensor ws = weights_for({2, 3, 2, 2}, 78);
    gradcheck(
        [&](const std::vector<ad::Var>& v) { return weighted_sum(ad::maxpool2d(v[0]), ws); }, {r});
}

TEST_CASE("instance_norm standardizes each sample plane") {
    Rng rng(32);
    Tensor x = randn({2, 3, 4, 4}, rng, 2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    auto y = ad::instance_norm(ad::constant(x), ad::constant(gamma), ad::constant(beta));
    for (int s = 0; s < 2; ++s) {
        for (int c = 0; c < 3; ++c) {
            double m = 0.0, v = 0.0;
            for (int i = 0; i < 16; ++i) m += y->val[(static_cast<std::size_t>(s) * 3 + c) * 16 + i];
            m /= 16.0;
            for (int i = 0; i < 16; ++i) {
                const double d = y->val[(static_cast<std::size_t>(s) * 3 + c) * 16 + i] - m;
                v += d * d;
            }
            v /= 16.0;
            CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
            CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks variance slightly
        }
    }
}

TEST_CASE("instance_norm gradients") {
    Rng rng(33);
    Tensor x = randn({2, 2, 3, 3}, rng);
    Tensor gamma = testsup::rand_uniform({2}, rng, 0.5, 1.5);
    Tensor beta = randn({2}, rng, 0.2);
    Tensor ws = weights_for({2, 2, 3, 3}, 77);
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            return weighted_sum(ad::instance_norm(v[0], v[1], v[2]), ws);
        },
        {x, gamma, beta}, 1e-5, 1e-5);
}

TEST_CASE("composite graph gradient through a small episode-like pipeline") {
    // conv -> norm -> relu -> pool -> flatten -> linear -> softmax CE, all in one graph
    Rng rng(34);
    Tensor x = randn({3, 1, 6, 6}, rng);
    Tensor wc = randn({2, 1, 3, 3}, rng, 0.5);
    Tensor bc = randn({2}, rng, 0.1);
    Tensor g = testsup::rand_uniform({2}, rng, 0.8, 1.2);
    Tensor be = randn({2}, rng, 0.1);
    Tensor wl = randn({4, 18}, rng, 0.3);
    Tensor bl = randn({4}, rng, 0.1);
    std::vector<int> labels{1, 3, 0};
    gradcheck(
        [&](const std::vector<ad::Var>& v) {
            auto h = ad::conv2d(v[0], v[1], v[2], 1, 1);
            h = ad::instance_norm(h, v[3], v[4]);
            h = ad::relu(h);
            h = ad::maxpool2d(h);
            h = ad::reshape(h, {3, 18});
            auto logits = ad::linear(h, v[5], v[6]);
            auto lp = ad::log_softmax_rows(logits);
            return ad::neg(ad::mean_all(ad::gather_cols(lp, labels)));
        },
        {x, wc, bc, g, be, wl, bl}, 1e-5, 1e-4);
}
