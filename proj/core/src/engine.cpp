#include "refocs/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "refocs/episode_forward.hpp"
#include "refocs/errors.hpp"
#include "refocs/exemplars.hpp"
#include "refocs/glyphs.hpp"

namespace refocs {

namespace {

// Seed stream tags for the independent random processes of one run.
constexpr std::uint64_t kTrainStream = 0x7e151bb2ULL;
constexpr std::uint64_t kEvalStream = 0xeba17a3fULL;
constexpr std::uint64_t kNoiseStream = 0x303b5e0dULL;

double scalar_of(const ad::Var& v) { return v ? v->val[0] : 0.0; }

void set_requires_grad(const Model& model, bool enc, bool dec, bool det, bool tau) {
    visit_params(model, [&](const std::string& name, const ad::Var& p) {
        if (name.rfind("enc.", 0) == 0)
            p->requires_grad = enc;
        else if (name.rfind("dec.", 0) == 0)
            p->requires_grad = dec;
        else if (name.rfind("det.", 0) == 0)
            p->requires_grad = det;
        else
            p->requires_grad = tau;
    });
}

double scheduled_lr(const RunConfig& c, int episode) {
    if (c.lr_drop_every <= 0) return c.lr;
    return c.lr / std::pow(10.0, episode / c.lr_drop_every);
}

int stage1_episodes(const RunConfig& c) {
    return static_cast<int>(std::floor(c.stage1_fraction * c.plan.episodes_train));
}

}  // namespace

DatasetManifest build_dataset(const RunConfig& config) {
    if (config.data_source == "glyphs") {
        DatasetManifest m = generate_glyph_dataset(config.num_classes, config.samples_per_class,
                                                   {config.image_size, config.image_size},
                                                   config.glyph_seed);
        m.set_name(config.data_name);
        return m;
    }
    if (config.data_root.empty()) throw ConfigError("'data.root' is required for folder datasets");
    return load_dataset(config.data_root, {config.image_size, config.image_size});
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const RunConfig& config,
                                                          const DatasetManifest& full) {
    return split_classes(full, config.train_fraction, config.seed, config.plan.n_way);
}

TrainState prepare_training(const RunConfig& config, const ojson& resolved,
                            DatasetManifest& train_data) {
    if (config.lambda1 == 0.0 && config.lambda2 == 0.0 && config.lambda3 == 0.0)
        throw ConfigError("every loss weight is zero; nothing to train");
    TrainState state;
    state.config = config;
    state.resolved = resolved;
    state.model = make_model(config.model_config(), config.seed);
    if (config.exemplar_mode == ExemplarMode::estimated) {
        PretrainOptions popt;
        popt.epochs = config.pretrain_epochs;
        popt.batch_size = config.pretrain_batch;
        popt.lr = config.pretrain_lr;
        popt.seed = config.seed;
        pretrain_encoder_nonepisodic(state.model, train_data, popt);
        estimate_exemplars(state.model, train_data, config.exemplar_distance);
    }
    visit_params(state.model,
                 [&](const std::string&, const ad::Var& p) { state.params.push_back(p); });
    state.adam = std::make_unique<Adam>(state.params,
                                        AdamOptions{config.lr, config.beta1, config.beta2, 1e-8});
    return state;
}

void restore_training(TrainState& state, const Checkpoint& ckpt) {
    if (ckpt.config_json != state.resolved.dump())
        throw ConfigError("checkpoint was written under a different config; refusing to resume");
    restore_params(state.model, ckpt.tensors);
    if (ckpt.has_adam) {
        state.adam->restore(ckpt.adam_t, ckpt.adam_m, ckpt.adam_v);
    }
    state.episodes_done = static_cast<int>(ckpt.episodes_done);
}

Checkpoint make_training_checkpoint(const TrainState& state) {
    Checkpoint ckpt;
    ckpt.config_json = state.resolved.dump();
    ckpt.episodes_done = state.episodes_done;
    ckpt.tensors = snapshot_params(state.model);
    ckpt.has_adam = true;
    ckpt.adam_t = state.adam->step_count();
    ckpt.adam_m = state.adam->m();
    ckpt.adam_v = state.adam->v();
    return ckpt;
}

EpisodeLossRecord train_one_episode(TrainState& state, const DatasetManifest& data, int index,
                                    const std::filesystem::path* abort_checkpoint) {
    const RunConfig& c = state.config;
    const bool two_stage = c.regime == TrainingRegime::two_stage;
    const bool in_stage2 = two_stage && index >= stage1_episodes(c);

    if (two_stage && in_stage2 != state.encoder_frozen) {
        // Stage 2 trains the decoder and detector against a frozen embedding.
        set_requires_grad(state.model, !in_stage2, true, true, !in_stage2);
        state.encoder_frozen = in_stage2;
    }
    state.adam->set_lr(scheduled_lr(c, index));

    double l1 = c.lambda1, l2 = c.lambda2, l3 = c.lambda3;
    ForwardOptions opt = c.forward_options(true);
    if (two_stage) {
        if (in_stage2) {
            l2 = 0.0;
        } else {
            l1 = 0.0;
            l3 = 0.0;
            opt.build_vae = false;
            opt.build_detector = false;
        }
    }

    Episode ep = episode_at(data, c.plan, mix_keys(c.seed, kTrainStream), index);
    EpisodeTensors packed = pack_episode(ep);
    Rng noise(mix_keys(c.seed, kNoiseStream, static_cast<std::uint64_t>(index)));
    EpisodeGraph g = episode_forward(state.model, packed, opt, l1, l2, l3, &noise);
    if (!g.total) throw ConfigError("episode graph built no trainable loss");

    EpisodeLossRecord rec;
    rec.episode = index;
    rec.l_vae = scalar_of(g.l_vae);
    rec.l_ce = scalar_of(g.l_ce);
    rec.l_bce = scalar_of(g.l_bce);
    rec.total = scalar_of(g.total);
    rec.lr = state.adam->lr();

    const bool finite = std::isfinite(rec.l_vae) && std::isfinite(rec.l_ce) &&
                        std::isfinite(rec.l_bce) && std::isfinite(rec.total);
    if (!finite) {
        if (abort_checkpoint) save_checkpoint(make_training_checkpoint(state), *abort_checkpoint);
        std::ostringstream msg;
        msg << "non-finite loss at episode " << index << ": vae=" << rec.l_vae
            << " ce=" << rec.l_ce << " bce=" << rec.l_bce << " total=" << rec.total;
        if (abort_checkpoint) msg << " (state dumped to " << abort_checkpoint->string() << ")";
        throw NumericError(msg.str());
    }

    state.adam->zero_grad();
    ad::backward(g.total);
    state.adam->step();
    state.episodes_done = index + 1;
    return rec;
}

TrainResult run_training(TrainState& state, const DatasetManifest& data,
                         const std::filesystem::path& out_dir,
                         const std::function<void(const EpisodeLossRecord&)>& on_episode,
                         const DatasetManifest* validation) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path ckpt_dir = out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    const std::filesystem::path abort_path = ckpt_dir / "abort.ckpt";

    const bool resuming = state.episodes_done > 0;
    std::ofstream metrics(out_dir / "metrics.jsonl",
                          resuming ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot write metrics.jsonl under '" + out_dir.string() + "'");
    std::ofstream val_log;
    if (validation) {
        val_log.open(out_dir / "validation.jsonl", resuming ? std::ios::app : std::ios::trunc);
        if (!val_log) throw DataError("cannot write validation.jsonl");
    }

    TrainResult result;
    const int total = state.config.plan.episodes_train;
    constexpr int kValidateEvery = 1000;
    for (int i = state.episodes_done; i < total; ++i) {
        EpisodeLossRecord rec;
        try {
            rec = train_one_episode(state, data, i, &abort_path);
        } catch (const NumericError&) {
            throw;  // already checkpointed
        } catch (...) {
            save_checkpoint(make_training_checkpoint(state), abort_path);
            throw;
        }
        ojson line;
        line["episode"] = rec.episode;
        line["L_VAE"] = rec.l_vae;
        line["L_CE"] = rec.l_ce;
        line["L_BCE"] = rec.l_bce;
        line["L"] = rec.total;
        line["lr"] = rec.lr;
        metrics << line.dump() << "\n";
        if (on_episode) on_episode(rec);

        if (validation && (i + 1) % kValidateEvery == 0 && i + 1 < total) {
            const int val_episodes = std::max(2, std::min(state.config.plan.episodes_test, 50));
            EvalReport vr = evaluate(state.model, state.config, *validation, val_episodes);
            ojson vline;
            vline["episode"] = i + 1;
            vline["accuracy"] = vr.accuracy.mean;
            vline["auroc"] = vr.auroc_ci.mean;
            val_log << vline.dump() << "\n";
        }

        const int every = state.config.checkpoint_every;
        if ((every > 0 && (i + 1) % every == 0) || i + 1 == total) {
            char name[32];
            std::snprintf(name, sizeof name, "episode_%07d.ckpt", i + 1);
            const auto path = ckpt_dir / name;
            save_checkpoint(make_training_checkpoint(state), path);
            save_checkpoint(make_training_checkpoint(state), ckpt_dir / "last.ckpt");
            result.last_checkpoint = path;
        }
    }
    metrics.flush();
    result.episodes_done = state.episodes_done;
    return result;
}

EpisodeEval eval_episode(const Model& model, const RunConfig& config, const Episode& episode) {
    std::vector<Tensor> override_pixels;
    const std::vector<Tensor>* override_ptr = nullptr;
    if (config.exemplar_mode == ExemplarMode::estimated) {
        // Novel classes carry no stored exemplar; stand in the support sample
        // nearest its class centroid.
        override_pixels.reserve(static_cast<std::size_t>(episode.n_way));
        for (int slot = 0; slot < episode.n_way; ++slot) {
            const auto& sup = episode.support[static_cast<std::size_t>(slot)];
            const int pick = select_support_exemplar(model, sup, config.exemplar_distance);
            override_pixels.push_back(sup[static_cast<std::size_t>(pick)]->pixels);
        }
        override_ptr = &override_pixels;
    }
    EpisodeTensors packed = pack_episode(episode, override_ptr);

    ForwardOptions opt = config.forward_options(false);
    opt.build_vae = false;
    opt.build_detector = config.open_score == OpenScore::detector;

    EpisodeGraph g = episode_forward(model, packed, opt, 0.0, 0.0, 0.0, nullptr);

    EpisodeEval out;
    out.class_probs = g.class_probs;
    out.labels_in = packed.labels_in;
    out.n_way = packed.n_way;
    out.q_in = packed.q_in;
    out.q_out = packed.q_out;
    const int q = packed.query_rows();
    out.open_scores.resize(static_cast<std::size_t>(q));
    for (int i = 0; i < q; ++i) {
        if (config.open_score == OpenScore::detector) {
            out.open_scores[static_cast<std::size_t>(i)] = g.p_eta[static_cast<std::size_t>(i)];
        } else {
            double best = 0.0;
            for (int j = 0; j < packed.n_way; ++j)
                best = std::max(best, g.class_probs.at(i, j));
            out.open_scores[static_cast<std::size_t>(i)] = 1.0 - best;
        }
    }
    return out;
}

Episode eval_episode_at(const RunConfig& config, const DatasetManifest& test_data, int index,
                        const SamplingPlan* plan_override, bool require_exemplars) {
    const SamplingPlan& plan = plan_override ? *plan_override : config.plan;
    return episode_at(test_data, plan, mix_keys(config.seed, kEvalStream), index,
                      require_exemplars);
}

EvalReport evaluate(const Model& model, const RunConfig& config,
                    const DatasetManifest& test_data, int episodes) {
    const int count = episodes > 0 ? episodes : config.plan.episodes_test;
    // Parameters act as constants during evaluation so graphs stay leaf-only.
    std::vector<std::pair<ad::Var, bool>> saved;
    visit_params(model, [&](const std::string&, const ad::Var& p) {
        saved.emplace_back(p, p->requires_grad);
        p->requires_grad = false;
    });

    EvalReport report;
    report.episodes = count;
    const bool need_exemplars = config.exemplar_mode != ExemplarMode::estimated;
    try {
        for (int i = 0; i < count; ++i) {
            Episode ep = eval_episode_at(config, test_data, i, nullptr, need_exemplars);
            EpisodeEval ev = eval_episode(model, config, ep);

            int correct = 0;
            for (int qi = 0; qi < ev.q_in; ++qi) {
                int arg = 0;
                for (int j = 1; j < ev.n_way; ++j)
                    if (ev.class_probs.at(qi, j) > ev.class_probs.at(qi, arg)) arg = j;
                if (arg == ev.labels_in[static_cast<std::size_t>(qi)]) ++correct;
            }
            report.per_episode_accuracy.push_back(
                ev.q_in > 0 ? 100.0 * correct / ev.q_in : 0.0);

            // Balanced open-set scoring: the larger query side is truncated so
            // in and out counts match.
            const int m = std::min(ev.q_in, ev.q_out);
            std::vector<double> scores;
            std::vector<int> labels;
            for (int qi = 0; qi < m; ++qi) {
                scores.push_back(ev.open_scores[static_cast<std::size_t>(qi)]);
                labels.push_back(0);
            }
            for (int qi = 0; qi < m; ++qi) {
                scores.push_back(ev.open_scores[static_cast<std::size_t>(ev.q_in + qi)]);
                labels.push_back(1);
            }
            const auto a = auroc(scores, labels);
            if (!a) throw DataError("evaluation episode lacks both query kinds");
            report.per_episode_auroc.push_back(100.0 * *a);
        }
    } catch (...) {
        for (auto& [p, rg] : saved) p->requires_grad = rg;
        throw;
    }
    for (auto& [p, rg] : saved) p->requires_grad = rg;

    report.accuracy = confidence_interval(report.per_episode_accuracy);
    report.auroc_ci = confidence_interval(report.per_episode_auroc);
    report.config_hash = config_hash(config_to_json(config));
    return report;
}

std::vector<AblationRow> run_ablation_matrix(const ojson& base_resolved,
                                             const std::filesystem::path& out_dir) {
    std::vector<AblationRow> rows;
    for (const std::string& variant : ablation_variants()) {
        ojson resolved = base_resolved;
        apply_variant(resolved, variant);
        RunConfig config = config_from_json(resolved);

        DatasetManifest full = build_dataset(config);
        auto [train_data, test_data] = split_dataset(config, full);

        TrainState state = prepare_training(config, resolved, train_data);
        const std::filesystem::path run_dir = out_dir / ("variant_" + variant);
        TrainResult tr = run_training(state, train_data, run_dir);
        (void)tr;

        double final_loss = 0.0;
        {
            std::ifstream metrics(run_dir / "metrics.jsonl");
            std::string line, last;
            while (std::getline(metrics, line))
                if (!line.empty()) last = line;
            if (!last.empty()) final_loss = ojson::parse(last)["L"].get<double>();
        }

        EvalReport report = evaluate(state.model, config, test_data);
        AblationRow row;
        row.variant = variant;
        row.accuracy_mean = report.accuracy.mean;
        row.accuracy_ci = report.accuracy.half_width;
        row.auroc_mean = report.auroc_ci.mean;
        row.auroc_ci = report.auroc_ci.half_width;
        row.final_loss = final_loss;
        rows.push_back(row);
    }
    std::filesystem::create_directories(out_dir / "tables");
    write_ablation_csv(rows, out_dir / "tables" / "ablation.csv");
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "variant,accuracy_mean,accuracy_ci95,auroc_mean,auroc_ci95,final_loss\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.variant.c_str(),
                      r.accuracy_mean, r.accuracy_ci, r.auroc_mean, r.auroc_ci, r.final_loss);
        out << buf;
    }
}

}  // namespace refocs
