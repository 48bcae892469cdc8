#include <benchmark/benchmark.h>

#include "refocs/autodiff.hpp"
#include "refocs/episode_forward.hpp"
#include "refocs/episodes.hpp"
#include "refocs/glyphs.hpp"
#include "refocs/metrics.hpp"
#include "refocs/nets.hpp"
#include "refocs/rng.hpp"

namespace {

using namespace refocs;

Tensor randn(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

void bm_conv2d_forward(benchmark::State& state) {
    Rng rng(1);
    auto x = ad::constant(randn({8, 16, 16, 16}, rng));
    auto w = ad::constant(randn({32, 16, 3, 3}, rng));
    auto b = ad::constant(randn({32}, rng));
    for (auto _ : state) {
        auto y = ad::conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y->val.data());
    }
}
BENCHMARK(bm_conv2d_forward);

void bm_conv2d_backward(benchmark::State& state) {
    Rng rng(1);
    auto x = ad::leaf(randn({8, 16, 16, 16}, rng), true);
    auto w = ad::leaf(randn({32, 16, 3, 3}, rng), true);
    auto b = ad::leaf(randn({32}, rng), true);
    for (auto _ : state) {
        auto loss = ad::mean_all(ad::conv2d(x, w, b, 1, 1));
        ad::backward(loss);
        benchmark::DoNotOptimize(w->grad.data());
    }
}
BENCHMARK(bm_conv2d_backward);

struct EpisodeBench {
    DatasetManifest data;
    EpisodeTensors et;
    Model model;

    static ModelConfig mc() {
        ModelConfig m;
        m.image_h = 16;
        m.image_w = 16;
        m.conv_channels = {8, 16};
        m.d_z = 16;
        m.detector_hidden = {32, 16};
        m.detector_input_dim = 5 + 16 + 5;
        return m;
    }

    EpisodeBench() : data(generate_glyph_dataset(12, 12, {16, 16}, 3)), model(make_model(mc(), 5)) {
        SamplingPlan plan;
        plan.n_way = 5;
        plan.k_shot = 1;
        plan.k_query_in_per_class = 5;
        plan.k_query_out_total = 25;
        et = pack_episode(episode_at(data, plan, 11, 0));
    }
};

void bm_episode_forward(benchmark::State& state) {
    EpisodeBench fx;
    ForwardOptions opt;
    for (auto _ : state) {
        Rng noise(7);
        EpisodeGraph g = episode_forward(fx.model, fx.et, opt, 1e-4, 10.0, 10.0, &noise);
        benchmark::DoNotOptimize(g.total->val.data());
    }
}
BENCHMARK(bm_episode_forward);

void bm_episode_train_step(benchmark::State& state) {
    EpisodeBench fx;
    ForwardOptions opt;
    for (auto _ : state) {
        Rng noise(7);
        EpisodeGraph g = episode_forward(fx.model, fx.et, opt, 1e-4, 10.0, 10.0, &noise);
        ad::backward(g.total);
        benchmark::DoNotOptimize(g.total->val.data());
    }
}
BENCHMARK(bm_episode_train_step);

void bm_auroc_10k(benchmark::State& state) {
    Rng rng(17);
    std::vector<double> scores(10000);
    std::vector<int> labels(10000);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform();
        labels[i] = static_cast<int>(rng.below(2));
    }
    for (auto _ : state) {
        auto a = auroc(scores, labels);
        benchmark::DoNotOptimize(a);
    }
}
BENCHMARK(bm_auroc_10k);

void bm_glyph_dataset(benchmark::State& state) {
    std::uint64_t seed = 0;
    for (auto _ : state) {
        DatasetManifest m = generate_glyph_dataset(10, 10, {32, 32}, ++seed);
        benchmark::DoNotOptimize(m.sample_count());
    }
}
BENCHMARK(bm_glyph_dataset);

}  // namespace

BENCHMARK_MAIN();
