#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refocs/checkpoint.hpp"
#include "refocs/config.hpp"
#include "refocs/dataset.hpp"
#include "refocs/engine.hpp"
#include "refocs/errors.hpp"
#include "refocs/exemplars.hpp"
#include "refocs/metrics.hpp"
#include "refocs/nets.hpp"
#include "refocs/openness_sweep.hpp"

namespace fs = std::filesystem;
using refocs::ojson;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out = "out";
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("-c,--config", a.config_file, "JSON config file (defaults fill the rest)");
    cmd->add_option("-s,--set", a.sets, "override, dotted.key=value (repeatable)");
    cmd->add_option("-o,--out", a.out, "output directory")->capture_default_str();
}

// Defaults, then the file, then --set overrides; unknown keys are fatal.
ojson resolve_from_args(const CommonArgs& a) {
    ojson given = ojson::object();
    if (!a.config_file.empty()) given = refocs::load_config_file(a.config_file);
    ojson resolved = refocs::resolve_config(given);
    for (const std::string& s : a.sets) refocs::apply_override(resolved, s);
    return resolved;
}

fs::path prepare_out(const CommonArgs& a, const ojson& resolved) {
    fs::path out(a.out);
    fs::create_directories(out);
    refocs::write_resolved_config(resolved, out / "resolved-config.json");
    return out;
}

struct LoadedRun {
    refocs::RunConfig config;
    ojson resolved;
    refocs::Model model;
};

// Rebuilds a trained model from a checkpoint; the stored config is the base
// and --set may adjust evaluation-side settings.
LoadedRun load_run(const CommonArgs& a, const std::string& ckpt_arg) {
    if (!a.config_file.empty())
        throw refocs::ConfigError(
            "this command reads its config from the checkpoint; use --set for overrides");
    fs::path path = ckpt_arg.empty() ? fs::path(a.out) / "checkpoints" / "last.ckpt"
                                     : fs::path(ckpt_arg);
    refocs::Checkpoint ckpt = refocs::load_checkpoint(path);
    ojson resolved = refocs::resolve_config(ojson::parse(ckpt.config_json));
    for (const std::string& s : a.sets) refocs::apply_override(resolved, s);
    LoadedRun run{refocs::config_from_json(resolved), resolved, {}};
    run.model = refocs::make_model(run.config.model_config(), run.config.seed);
    refocs::restore_params(run.model, ckpt.tensors);
    return run;
}

int cmd_generate_data(const CommonArgs& a) {
    ojson resolved = resolve_from_args(a);
    refocs::RunConfig config = refocs::config_from_json(resolved);
    fs::path out = prepare_out(a, resolved);
    refocs::DatasetManifest data = refocs::build_dataset(config);
    refocs::save_dataset(data, out / "dataset");
    std::printf("wrote %s: %d classes, %zu samples\n", (out / "dataset").string().c_str(),
                data.class_count(), data.sample_count());
    return 0;
}

int cmd_estimate_exemplars(const CommonArgs& a) {
    ojson resolved = resolve_from_args(a);
    refocs::RunConfig config = refocs::config_from_json(resolved);
    fs::path out = prepare_out(a, resolved);

    refocs::DatasetManifest full = refocs::build_dataset(config);
    auto [train_data, test_data] = refocs::split_dataset(config, full);
    (void)test_data;

    // Same seeds and order as the training path, so exemplars match a run
    // that estimates inline.
    refocs::Model model = refocs::make_model(config.model_config(), config.seed);
    refocs::PretrainOptions popt;
    popt.epochs = config.pretrain_epochs;
    popt.batch_size = config.pretrain_batch;
    popt.lr = config.pretrain_lr;
    popt.seed = config.seed;
    refocs::pretrain_encoder_nonepisodic(model, train_data, popt);
    auto chosen = refocs::estimate_exemplars(model, train_data, config.exemplar_distance);

    refocs::save_dataset(train_data, out / "dataset");
    ojson index = ojson::object();
    for (const auto& [class_id, sample_id] : chosen)
        index[std::to_string(class_id)] = sample_id;
    std::ofstream f(out / "exemplar-index.json");
    f << index.dump(2) << "\n";
    std::printf("estimated exemplars for %zu classes into %s\n", chosen.size(),
                (out / "dataset").string().c_str());
    return 0;
}

int cmd_train(const CommonArgs& a, bool resume, const std::string& resume_from) {
    ojson resolved = resolve_from_args(a);
    refocs::RunConfig config = refocs::config_from_json(resolved);
    fs::path out = prepare_out(a, resolved);

    refocs::DatasetManifest full = refocs::build_dataset(config);
    auto [train_data, test_data] = refocs::split_dataset(config, full);
    (void)test_data;

    refocs::TrainState state = refocs::prepare_training(config, resolved, train_data);
    if (resume || !resume_from.empty()) {
        fs::path path = resume_from.empty() ? out / "checkpoints" / "last.ckpt"
                                            : fs::path(resume_from);
        refocs::restore_training(state, refocs::load_checkpoint(path));
        std::printf("resuming at episode %d\n", state.episodes_done);
    }

    refocs::TrainResult result = refocs::run_training(state, train_data, out);
    std::printf("trained %d episodes; last checkpoint %s\n", result.episodes_done,
                result.last_checkpoint.string().c_str());
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& ckpt_arg, int episodes) {
    LoadedRun run = load_run(a, ckpt_arg);
    fs::path out = prepare_out(a, run.resolved);

    refocs::DatasetManifest full = refocs::build_dataset(run.config);
    auto [train_data, test_data] = refocs::split_dataset(run.config, full);
    (void)train_data;

    refocs::EvalReport report = refocs::evaluate(run.model, run.config, test_data, episodes);
    refocs::write_eval_report_json(report, out / "eval-report.json");
    fs::create_directories(out / "tables");
    refocs::write_eval_csv(report, out / "tables" / "eval.csv");
    std::printf("episodes %d: accuracy %.2f%% +/- %.2f, auroc %.2f%% +/- %.2f\n",
                report.episodes, report.accuracy.mean, report.accuracy.half_width,
                report.auroc_ci.mean, report.auroc_ci.half_width);
    return 0;
}

int cmd_ablate(const CommonArgs& a) {
    ojson resolved = resolve_from_args(a);
    fs::path out = prepare_out(a, resolved);
    auto rows = refocs::run_ablation_matrix(resolved, out);
    for (const auto& r : rows)
        std::printf("%-20s accuracy %.2f%%  auroc %.2f%%  final loss %.4f\n", r.variant.c_str(),
                    r.accuracy_mean, r.auroc_mean, r.final_loss);
    std::printf("wrote %s\n", (out / "tables" / "ablation.csv").string().c_str());
    return 0;
}

int cmd_sweep_openness(const CommonArgs& a, const std::string& ckpt_arg,
                       std::vector<int> targets, int episodes) {
    LoadedRun run = load_run(a, ckpt_arg);
    fs::path out = prepare_out(a, run.resolved);

    refocs::DatasetManifest full = refocs::build_dataset(run.config);
    auto [train_data, test_data] = refocs::split_dataset(run.config, full);
    (void)train_data;

    auto points = refocs::f1_openness_sweep(run.model, run.config, test_data, targets, episodes);
    fs::create_directories(out / "tables");
    refocs::write_openness_csv(points, out / "tables" / "openness.csv");
    for (const auto& p : points)
        std::printf("n_target %2d  openness %5.1f%%  macro-F1 %.2f%% +/- %.2f\n", p.n_target,
                    p.openness_value, p.f1_mean, p.f1_ci);
    return 0;
}

// Trains and evaluates one run per grid point; each axis holds the other
// loss weights at their reference values.
int cmd_sweep_lambda(const CommonArgs& a, std::vector<double> l1_grid,
                     std::vector<double> l3_grid) {
    ojson base = resolve_from_args(a);
    fs::path out = prepare_out(a, base);
    fs::create_directories(out / "tables");

    struct Point {
        double value;
        refocs::EvalReport report;
    };
    auto run_point = [&](ojson resolved, const std::string& tag, double value) {
        refocs::RunConfig config = refocs::config_from_json(resolved);
        fs::path run_dir = out / (tag + "_" + std::to_string(value));
        fs::create_directories(run_dir);
        refocs::write_resolved_config(resolved, run_dir / "resolved-config.json");
        refocs::DatasetManifest full = refocs::build_dataset(config);
        auto [train_data, test_data] = refocs::split_dataset(config, full);
        refocs::TrainState state = refocs::prepare_training(config, resolved, train_data);
        refocs::run_training(state, train_data, run_dir);
        return Point{value, refocs::evaluate(state.model, config, test_data)};
    };
    auto write_axis = [&](const std::string& name, const std::vector<Point>& pts) {
        std::ofstream f(out / "tables" / (name + "_sweep.csv"));
        if (!f) throw refocs::DataError("cannot write " + name + "_sweep.csv");
        f << name << ",auroc_mean,auroc_ci95,accuracy_mean\n";
        char buf[160];
        for (const auto& p : pts) {
            std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f,%.6f\n", p.value, p.report.auroc_ci.mean,
                          p.report.auroc_ci.half_width, p.report.accuracy.mean);
            f << buf;
        }
    };

    std::vector<Point> axis1;
    for (double v : l1_grid) {
        ojson resolved = base;
        resolved["loss"]["lambda1"] = v;
        resolved["loss"]["lambda2"] = 10.0;
        resolved["loss"]["lambda3"] = 10.0;
        std::printf("lambda1 = %g\n", v);
        axis1.push_back(run_point(resolved, "lambda1", v));
    }
    write_axis("lambda1", axis1);

    std::vector<Point> axis3;
    for (double v : l3_grid) {
        ojson resolved = base;
        resolved["loss"]["lambda1"] = 1e-4;
        resolved["loss"]["lambda2"] = 10.0;
        resolved["loss"]["lambda3"] = v;
        std::printf("lambda3 = %g\n", v);
        axis3.push_back(run_point(resolved, "lambda3", v));
    }
    write_axis("lambda3", axis3);

    for (const auto& p : axis1)
        std::printf("lambda1 %-8g auroc %.2f%%\n", p.value, p.report.auroc_ci.mean);
    for (const auto& p : axis3)
        std::printf("lambda3 %-8g auroc %.2f%%\n", p.value, p.report.auroc_ci.mean);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot open-set recognition with reconstruction-guided detection"};
    app.require_subcommand(1);

    CommonArgs gen_a, est_a, train_a, eval_a, abl_a, swo_a, swl_a;

    auto* gen = app.add_subcommand("generate-data", "render the synthetic glyph dataset");
    add_common(gen, gen_a);

    auto* est = app.add_subcommand("estimate-exemplars",
                                   "pretrain an encoder and pick one exemplar per train class");
    add_common(est, est_a);

    auto* train = app.add_subcommand("train", "meta-train on episodes from the train split");
    add_common(train, train_a);
    bool resume = false;
    std::string resume_from;
    train->add_flag("--resume", resume, "continue from <out>/checkpoints/last.ckpt");
    train->add_option("--resume-from", resume_from, "continue from a specific checkpoint");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on test-split episodes");
    add_common(ev, eval_a);
    std::string eval_ckpt;
    int eval_episodes = 0;
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint path (default <out>/checkpoints/last.ckpt)");
    ev->add_option("--episodes", eval_episodes, "episode count (default: config episodes_test)");

    auto* abl = app.add_subcommand("ablate", "train and evaluate every ablation variant");
    add_common(abl, abl_a);

    auto* swo = app.add_subcommand("sweep-openness",
                                   "macro-F1 as the per-episode open-class pool grows");
    add_common(swo, swo_a);
    std::string swo_ckpt;
    std::vector<int> swo_targets{5, 7, 10, 12, 15};
    int swo_episodes = 0;
    swo->add_option("--checkpoint", swo_ckpt, "checkpoint path (default <out>/checkpoints/last.ckpt)");
    swo->add_option("--targets", swo_targets, "open-class pool sizes")->capture_default_str();
    swo->add_option("--episodes", swo_episodes, "episode count (default: config episodes_test)");

    auto* swl = app.add_subcommand("sweep-lambda", "AUROC across loss-weight grids");
    add_common(swl, swl_a);
    std::vector<double> l1_grid{1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
    std::vector<double> l3_grid{0.1, 1.0, 10.0, 100.0};
    swl->add_option("--lambda1-grid", l1_grid, "reconstruction weight grid")->capture_default_str();
    swl->add_option("--lambda3-grid", l3_grid, "detector weight grid")->capture_default_str();

    gen->callback([&] { cmd_generate_data(gen_a); });
    est->callback([&] { cmd_estimate_exemplars(est_a); });
    train->callback([&] { cmd_train(train_a, resume, resume_from); });
    ev->callback([&] { cmd_eval(eval_a, eval_ckpt, eval_episodes); });
    abl->callback([&] { cmd_ablate(abl_a); });
    swo->callback([&] { cmd_sweep_openness(swo_a, swo_ckpt, swo_targets, swo_episodes); });
    swl->callback([&] { cmd_sweep_lambda(swl_a, l1_grid, l3_grid); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const refocs::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const refocs::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const refocs::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
