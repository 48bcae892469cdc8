// Acceptance gate for the whole pipeline. Runs seven independent criteria,
// prints exactly one PASS/FAIL line per criterion, and exits with the number
// of failures. Criteria 5 and 7 train full benchmark runs and dominate the
// runtime (around half an hour total on one CPU core).
//
// Usage: acceptance [criterion-number ...]   (default: all seven)

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "refocs/config.hpp"
#include "refocs/core_math.hpp"
#include "refocs/engine.hpp"
#include "refocs/episode_forward.hpp"
#include "refocs/episodes.hpp"
#include "refocs/exemplars.hpp"
#include "refocs/glyphs.hpp"
#include "refocs/metrics.hpp"
#include "refocs/nets.hpp"
#include "refocs/rng.hpp"

namespace fs = std::filesystem;
using namespace refocs;

namespace {

struct Outcome {
    bool pass = false;
    double seconds = 0.0;
    std::string detail;
};

class Timer {
  public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

fs::path work_root() {
    static const fs::path root = fs::temp_directory_path() / "refocs_acceptance";
    return root;
}

// ---------------------------------------------------------------- criterion 1

int run_binary(const std::string& path) {
    const int raw = std::system((path + " >/dev/null 2>&1").c_str());
    if (raw == -1 || !WIFEXITED(raw)) return -1;
    return WEXITSTATUS(raw);
}

// The closed-form and loop-oracle example checks live in two unit binaries;
// this criterion runs both end to end under the 10 s budget.
Outcome formula_suite() {
    Timer t;
    const int a = run_binary(ACCEPT_FORMULA_BIN);
    const int b = run_binary(ACCEPT_METRICS_BIN);
    Outcome o;
    o.seconds = t.elapsed();
    o.pass = a == 0 && b == 0 && o.seconds < 10.0;
    o.detail = fmt("core-math exit %d, metrics exit %d", a, b);
    return o;
}

// ---------------------------------------------------------------- criterion 2

constexpr std::uint64_t kNoiseSeed = 4242;

struct GradFixture {
    DatasetManifest data;
    EpisodeTensors et;
    Model model;

    static ModelConfig tiny_mc() {
        ModelConfig mc;
        mc.image_h = 8;
        mc.image_w = 8;
        mc.conv_channels = {4, 8};
        mc.d_z = 8;
        mc.detector_hidden = {16, 8};
        mc.detector_input_dim = 3 + 8 + 3;
        return mc;
    }

    GradFixture() : data(generate_glyph_dataset(8, 10, {8, 8}, 99)), model(make_model(tiny_mc(), 31)) {
        SamplingPlan plan;
        plan.n_way = 3;
        plan.k_shot = 2;
        plan.k_query_in_per_class = 2;
        plan.k_query_out_total = 4;
        et = pack_episode(episode_at(data, plan, 7, 0));
    }
};

// Every loss value from one forward with the pinned noise stream.
std::array<double, 4> forward_losses(const GradFixture& fx, const ForwardOptions& opt) {
    Rng noise(kNoiseSeed);
    EpisodeGraph g = episode_forward(fx.model, fx.et, opt, 1e-4, 10.0, 10.0, &noise);
    return {g.l_vae->val[0], g.l_ce->val[0], g.l_bce->val[0], g.total->val[0]};
}

// Full-element central-difference sweep of all four losses over every
// parameter tensor and the temperature. Each perturbed forward yields all
// four loss values, so the sweep costs two forwards per element.
Outcome gradient_suite() {
    Timer t;
    GradFixture fx;
    ForwardOptions opt;  // defaults: training, vae, detector, modulation on

    std::vector<std::pair<std::string, ad::Var>> params;
    visit_params(fx.model, [&](const std::string& n, const ad::Var& p) { params.emplace_back(n, p); });

    // Analytic gradients, one fresh graph per loss root.
    std::array<std::vector<std::vector<double>>, 4> analytic;
    for (int root = 0; root < 4; ++root) {
        for (auto& [n, p] : params) {
            (void)n;
            p->ensure_grad();
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] = 0.0;
        }
        Rng noise(kNoiseSeed);
        EpisodeGraph g = episode_forward(fx.model, fx.et, opt, 1e-4, 10.0, 10.0, &noise);
        const ad::Var roots[4] = {g.l_vae, g.l_ce, g.l_bce, g.total};
        ad::backward(roots[root]);
        analytic[static_cast<std::size_t>(root)].reserve(params.size());
        for (auto& [n, p] : params) {
            (void)n;
            std::vector<double> g(p->grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = p->grad[i];
            analytic[static_cast<std::size_t>(root)].push_back(std::move(g));
        }
    }

    const double h = 1e-5;
    std::size_t elements = 0, bad = 0;
    double worst = 0.0;
    std::string worst_at = "-";
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ad::Var p = params[pi].second;
        for (std::size_t i = 0; i < p->val.size(); ++i) {
            const double saved = p->val[i];
            p->val[i] = saved + h;
            const auto fp = forward_losses(fx, opt);
            p->val[i] = saved - h;
            const auto fm = forward_losses(fx, opt);
            p->val[i] = saved;
            ++elements;
            for (int root = 0; root < 4; ++root) {
                const double fd = (fp[static_cast<std::size_t>(root)] -
                                   fm[static_cast<std::size_t>(root)]) /
                                  (2.0 * h);
                const double an = analytic[static_cast<std::size_t>(root)][pi][i];
                const double rel =
                    std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
                if (rel > worst) {
                    worst = rel;
                    worst_at = params[pi].first + fmt("[%zu] root %d", i, root);
                }
                if (rel > 1e-3) ++bad;
            }
        }
    }

    Outcome o;
    o.seconds = t.elapsed();
    o.pass = bad == 0 && o.seconds < 60.0;
    o.detail = fmt("%zu tensors, %zu elements x 4 losses, %zu over tolerance, worst rel %.2e at %s",
                   params.size(), elements, bad, worst, worst_at.c_str());
    return o;
}

// ---------------------------------------------------------------- criterion 3

double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double hits = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        ++pos;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] == 1) continue;
            if (s[i] > s[j])
                hits += 1.0;
            else if (s[i] == s[j])
                hits += 0.5;
        }
    }
    for (int v : y) neg += v == 0;
    return hits / (static_cast<double>(pos) * static_cast<double>(neg));
}

double exemplar_distance(const Tensor& a, const Tensor& b, ExemplarDistance kind) {
    if (kind == ExemplarDistance::l2) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return 1.0 - dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

std::map<int, std::int64_t> brute_force_exemplars(const Model& model, const DatasetManifest& m,
                                                  ExemplarDistance kind) {
    std::map<int, std::int64_t> out;
    for (int cid : m.class_ids()) {
        std::vector<std::int64_t> sids = m.samples_of(cid);
        std::sort(sids.begin(), sids.end());
        std::vector<Tensor> feats;
        for (std::int64_t sid : sids) {
            Tensor batch({1, 3, m.height(), m.width()});
            const Tensor& px = m.image(sid).pixels;
            for (std::size_t i = 0; i < px.size(); ++i) batch[i] = px[i];
            feats.push_back(encode_features_value(model, batch));
        }
        Tensor centroid = Tensor::zeros(feats[0].shape());
        for (const Tensor& f : feats)
            for (std::size_t i = 0; i < f.size(); ++i) centroid[i] += f[i];
        for (std::size_t i = 0; i < centroid.size(); ++i)
            centroid[i] /= static_cast<double>(feats.size());
        std::size_t best = 0;
        double best_d = exemplar_distance(feats[0], centroid, kind);
        for (std::size_t k = 1; k < feats.size(); ++k) {
            const double d = exemplar_distance(feats[k], centroid, kind);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        out[cid] = sids[best];
    }
    return out;
}

Outcome oracle_suite() {
    Timer t;
    Outcome o;

    // AUROC against quadratic pair counting; the coarse score grid forces
    // plenty of ties.
    Rng rng(20240817);
    double max_auroc_err = 0.0;
    std::size_t auroc_bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n_pos = 1 + static_cast<int>(rng.below(40));
        const int n_neg = 1 + static_cast<int>(rng.below(40));
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < n_pos + n_neg; ++i) {
            scores.push_back(static_cast<double>(rng.below(9)) / 8.0);
            labels.push_back(i < n_pos ? 1 : 0);
        }
        const auto got = auroc(scores, labels);
        if (!got) {
            ++auroc_bad;
            continue;
        }
        const double err = std::abs(*got - auroc_pairs(scores, labels));
        max_auroc_err = std::max(max_auroc_err, err);
        if (err > 1e-12) ++auroc_bad;
    }

    // Estimated exemplars against exhaustive argmin.
    std::size_t exemplar_bad = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int classes = 3 + trial % 4;
        const int samples = 3 + trial % 5;
        DatasetManifest m = generate_glyph_dataset(classes, samples, {16, 16}, 500 + trial);
        ModelConfig mc;
        mc.image_h = 16;
        mc.image_w = 16;
        mc.conv_channels = {4, 8};
        mc.d_z = 8;
        mc.detector_hidden = {8};
        mc.detector_input_dim = mc.d_z + 2 * classes;
        Model model = make_model(mc, 900 + static_cast<std::uint64_t>(trial));
        const ExemplarDistance kind =
            trial % 2 == 0 ? ExemplarDistance::l2 : ExemplarDistance::cosine;
        const auto want = brute_force_exemplars(model, m, kind);
        const auto got = estimate_exemplars(model, m, kind);
        if (got != want) ++exemplar_bad;
    }

    // Prototype weights are a softmax over each class's support; every slot
    // must sum to one no matter the shapes.
    double max_weight_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(5));
        const int k = 1 + static_cast<int>(rng.below(8));
        const int d = 4 + static_cast<int>(rng.below(13));
        std::vector<std::vector<Tensor>> support(static_cast<std::size_t>(n));
        std::vector<Tensor> exemplars;
        for (int c = 0; c < n; ++c) {
            for (int s = 0; s < k; ++s) {
                Tensor z({d});
                for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal() * 3.0;
                support[static_cast<std::size_t>(c)].push_back(z);
            }
            Tensor e({d});
            for (std::size_t i = 0; i < e.size(); ++i) e[i] = rng.normal() * 3.0;
            exemplars.push_back(e);
        }
        const PrototypeSet ps = compute_prototypes(support, exemplars, true);
        for (const Tensor& w : ps.weights) {
            double sum = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) sum += w[i];
            max_weight_err = std::max(max_weight_err, std::abs(sum - 1.0));
        }
    }

    o.seconds = t.elapsed();
    o.pass = auroc_bad == 0 && exemplar_bad == 0 && max_weight_err <= 1e-12 && o.seconds < 30.0;
    o.detail = fmt("auroc err %.1e (%zu bad), exemplar mismatches %zu, weight-sum err %.1e",
                   max_auroc_err, auroc_bad, exemplar_bad, max_weight_err);
    return o;
}

// ---------------------------------------------------------------- criterion 4

Outcome openness_table() {
    Timer t;
    const int targets[5] = {5, 7, 10, 12, 15};
    const double want[5] = {0.0, 8.7, 18.4, 23.3, 29.3};
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double got = 100.0 * openness(5, 5, targets[i]);
        worst = std::max(worst, std::abs(got - want[i]));
    }
    Outcome o;
    o.seconds = t.elapsed();
    o.pass = worst <= 0.05;
    o.detail = fmt("max deviation %.4f pp", worst);
    return o;
}

// ------------------------------------------------------- criteria 5, 6 and 7

ojson benchmark_config() {
    ojson r = resolve_config(ojson::object());
    apply_override(r, "episodes.k_shot=1");
    apply_override(r, "episodes.episodes_train=3000");
    apply_override(r, "episodes.episodes_test=200");
    apply_override(r, "checkpoint.every=0");
    return r;
}

EvalReport train_and_eval(const ojson& resolved, const fs::path& out) {
    fs::remove_all(out);
    fs::create_directories(out);
    RunConfig config = config_from_json(resolved);
    DatasetManifest full = build_dataset(config);
    auto [train_data, test_data] = split_dataset(config, full);
    TrainState state = prepare_training(config, resolved, train_data);
    run_training(state, train_data, out);
    return evaluate(state.model, config, test_data, 0);
}

Outcome benchmark_suite() {
    Timer t;
    const fs::path root = work_root();

    const ojson base = benchmark_config();
    const EvalReport full = train_and_eval(base, root / "bench_full");

    ojson no_detector = base;
    apply_override(no_detector, "loss.lambda3=0");
    apply_override(no_detector, "eval.open_score=max_prob");
    const EvalReport baseline = train_and_eval(no_detector, root / "bench_baseline");

    ojson self_recon = base;
    apply_override(self_recon, "exemplars.mode=self_reconstruction");
    const EvalReport self = train_and_eval(self_recon, root / "bench_self");

    const double gap = full.auroc_ci.mean - baseline.auroc_ci.mean;
    const bool a = full.accuracy.mean >= 80.0;
    const bool b = gap >= 3.0;
    const bool c = self.auroc_ci.mean < full.auroc_ci.mean;

    Outcome o;
    o.seconds = t.elapsed();
    o.pass = a && b && c && o.seconds <= 1800.0;
    o.detail = fmt("acc %.2f%% (>=80 %s), auroc %.2f vs baseline %.2f gap %.2f pp (>=3 %s), "
                   "self-recon %.2f (< full %s)",
                   full.accuracy.mean, a ? "ok" : "FAIL", full.auroc_ci.mean,
                   baseline.auroc_ci.mean, gap, b ? "ok" : "FAIL", self.auroc_ci.mean,
                   c ? "ok" : "FAIL");
    return o;
}

Outcome ablation_suite() {
    Timer t;
    ojson micro = resolve_config(ojson::object());
    apply_override(micro, "data.num_classes=12");
    apply_override(micro, "data.samples_per_class=24");
    apply_override(micro, "data.image_size=16");
    apply_override(micro, "episodes.n_way=3");
    apply_override(micro, "episodes.k_shot=2");
    apply_override(micro, "episodes.k_query_in_per_class=3");
    apply_override(micro, "episodes.k_query_out_total=9");
    apply_override(micro, "episodes.episodes_train=300");
    apply_override(micro, "episodes.episodes_test=40");
    apply_override(micro, "model.conv_channels=[4,8]");
    apply_override(micro, "model.d_z=8");
    apply_override(micro, "model.detector_hidden=[16,8]");
    apply_override(micro, "checkpoint.every=0");

    const fs::path out = work_root() / "ablation";
    fs::remove_all(out);
    fs::create_directories(out);
    const auto rows = run_ablation_matrix(micro, out);

    bool finite = true;
    for (const auto& r : rows)
        finite = finite && std::isfinite(r.accuracy_mean) && std::isfinite(r.auroc_mean) &&
                 std::isfinite(r.final_loss);

    std::size_t csv_rows = 0;
    std::ifstream csv(out / "tables" / "ablation.csv");
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty() && line[0] != '#' && line.rfind("variant,", 0) != 0) ++csv_rows;

    Outcome o;
    o.seconds = t.elapsed();
    o.pass = rows.size() == 8 && finite && csv_rows == 8 && o.seconds <= 600.0;
    o.detail = fmt("%zu variants, losses %s, %zu csv rows", rows.size(),
                   finite ? "finite" : "NON-FINITE", csv_rows);
    return o;
}

Outcome determinism_suite() {
    Timer t;
    const fs::path root = work_root();
    const ojson base = benchmark_config();

    const fs::path first = root / "bench_full" / "metrics.jsonl";
    if (!fs::exists(first)) train_and_eval(base, root / "bench_full");
    train_and_eval(base, root / "bench_repeat");

    std::ifstream fa(first, std::ios::binary);
    std::ifstream fb(root / "bench_repeat" / "metrics.jsonl", std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    const bool same = fa.good() && fb.good() && sa.str() == sb.str() && !sa.str().empty();

    Outcome o;
    o.seconds = t.elapsed();
    o.pass = same;
    o.detail = same ? fmt("metrics byte-identical (%zu bytes)", sa.str().size())
                    : "metrics differ between identical runs";
    return o;
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "formula unit suite", formula_suite},
    {2, "gradient finite-difference sweep", gradient_suite},
    {3, "metric and exemplar oracles", oracle_suite},
    {4, "openness table", openness_table},
    {5, "end-to-end benchmark", benchmark_suite},
    {6, "ablation matrix smoke", ablation_suite},
    {7, "training determinism", determinism_suite},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : kCriteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const Outcome o = c.run();
        std::printf("criterion %d  %-34s  %s  %8.1fs  %s\n", c.id, c.name,
                    o.pass ? "PASS" : "FAIL", o.seconds, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    if (failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria failed\n", failures);
    return failures;
}
