#include "refocs/config.hpp"

#include <cmath>
#include <fstream>

#include "refocs/errors.hpp"

namespace refocs {

namespace {

void merge_checked(ojson& base, const ojson& given, const std::string& prefix) {
    if (!given.is_object())
        throw ConfigError("expected an object at '" + (prefix.empty() ? "<root>" : prefix) + "'");
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        ojson& slot = base[it.key()];
        const ojson& val = it.value();
        if (slot.is_object()) {
            merge_checked(slot, val, path);
        } else if (slot.is_number() && val.is_number()) {
            slot = val;
        } else if (slot.type() == val.type()) {
            slot = val;
        } else {
            throw ConfigError("config key '" + path + "' has the wrong type (expected " +
                              std::string(slot.type_name()) + ")");
        }
    }
}

const ojson& dig(const ojson& j, const std::string& dotted) {
    const ojson* cur = &j;
    std::size_t at = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', at);
        const std::string key = dotted.substr(at, dot == std::string::npos ? dot : dot - at);
        if (!cur->contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
        cur = &(*cur)[key];
        if (dot == std::string::npos) return *cur;
        at = dot + 1;
    }
}

double need_double(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
    return v.get<double>();
}

int need_int(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_number_integer())
        throw ConfigError("'" + key + "' must be an integer");
    return v.get<int>();
}

std::uint64_t need_u64(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        throw ConfigError("'" + key + "' must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

bool need_bool(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
    return v.get<bool>();
}

std::string need_string(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_string()) throw ConfigError("'" + key + "' must be a string");
    return v.get<std::string>();
}

std::vector<int> need_int_list(const ojson& j, const std::string& key) {
    const ojson& v = dig(j, key);
    if (!v.is_array() || v.empty()) throw ConfigError("'" + key + "' must be a nonempty array");
    std::vector<int> out;
    for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<int>() < 1)
            throw ConfigError("'" + key + "' entries must be positive integers");
        out.push_back(e.get<int>());
    }
    return out;
}

template <typename E>
E pick(const std::string& key, const std::string& got,
       std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, value] : table)
        if (got == name) return value;
    std::string allowed;
    for (const auto& [name, value] : table) {
        if (!allowed.empty()) allowed += ", ";
        allowed += name;
    }
    throw ConfigError("'" + key + "' must be one of {" + allowed + "}, got '" + got + "'");
}

}  // namespace

ojson default_config() {
    ojson j;
    j["run"] = {{"name", "run"}, {"seed", 1234}};
    j["data"] = {{"source", "glyphs"}, {"root", ""},    {"name", "glyphs"},
                 {"image_size", 32},   {"num_classes", 30}, {"samples_per_class", 120},
                 {"train_fraction", 2.0 / 3.0}, {"glyph_seed", 77}};
    j["episodes"] = {{"n_way", 5},
                     {"k_shot", 5},
                     {"k_query_in_per_class", 10},
                     {"k_query_out_total", 50},
                     {"episodes_train", 20000},
                     {"episodes_test", 800},
                     {"n_open_classes", 0}};
    j["model"] = {{"conv_channels", {8, 16, 32}},
                  {"d_z", 32},
                  {"detector_hidden", {200, 100}},
                  {"tau_init", 10.0}};
    j["loss"] = {{"lambda1", 1e-4}, {"lambda2", 10.0}, {"lambda3", 10.0}, {"reconstruction", "bce"}};
    j["variant"] = {{"encoder", "vae"},
                    {"prototypes", "weighted"},
                    {"modulation", true},
                    {"kappa_distance", "l1"},
                    {"classifier_metric", "cosine"},
                    {"detector",
                     {{"use_clf", true}, {"use_embedding", true}, {"use_recon_errors", true}}}};
    j["exemplars"] = {{"mode", "canonical"},
                      {"distance", "l2"},
                      {"pretrain_epochs", 3},
                      {"pretrain_batch", 64},
                      {"pretrain_lr", 1e-3}};
    j["optim"] = {{"lr", 1e-3},    {"beta1", 0.9},          {"beta2", 0.999},
                  {"lr_drop_every", 0}, {"regime", "joint"}, {"stage1_fraction", 0.5}};
    j["checkpoint"] = {{"every", 1000}};
    j["eval"] = {{"open_score", "detector"}};
    return j;
}

ojson resolve_config(const ojson& given) {
    ojson base = default_config();
    merge_checked(base, given, "");
    return base;
}

void apply_override(ojson& config, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    ojson* cur = &config;
    std::size_t at = 0;
    while (true) {
        const std::size_t dot = path.find('.', at);
        const std::string key = path.substr(at, dot == std::string::npos ? dot : dot - at);
        if (!cur->contains(key)) throw ConfigError("unknown config key '" + path + "'");
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        at = dot + 1;
    }
    if (cur->is_object()) throw ConfigError("'" + path + "' is a section, not a setting");

    ojson parsed = ojson::parse(raw, nullptr, false);
    if (parsed.is_discarded()) parsed = raw;  // bare strings need no quotes
    if (cur->is_number() && parsed.is_number()) {
        *cur = parsed;
    } else if (cur->type() == parsed.type()) {
        *cur = parsed;
    } else if (cur->is_string()) {
        *cur = parsed.is_string() ? parsed : ojson(raw);
    } else {
        throw ConfigError("override for '" + path + "' has the wrong type (expected " +
                          std::string(cur->type_name()) + ")");
    }
}

RunConfig config_from_json(const ojson& j) {
    RunConfig c;
    c.run_name = need_string(j, "run.name");
    c.seed = need_u64(j, "run.seed");

    c.data_source = need_string(j, "data.source");
    if (c.data_source != "glyphs" && c.data_source != "folder")
        throw ConfigError("'data.source' must be one of {glyphs, folder}, got '" + c.data_source + "'");
    c.data_root = need_string(j, "data.root");
    c.data_name = need_string(j, "data.name");
    c.image_size = need_int(j, "data.image_size");
    c.num_classes = need_int(j, "data.num_classes");
    c.samples_per_class = need_int(j, "data.samples_per_class");
    c.train_fraction = need_double(j, "data.train_fraction");
    c.glyph_seed = need_u64(j, "data.glyph_seed");
    if (c.image_size < 8) throw ConfigError("'data.image_size' must be at least 8");
    if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0))
        throw ConfigError("'data.train_fraction' must be in (0, 1]");

    c.plan.n_way = need_int(j, "episodes.n_way");
    c.plan.k_shot = need_int(j, "episodes.k_shot");
    c.plan.k_query_in_per_class = need_int(j, "episodes.k_query_in_per_class");
    c.plan.k_query_out_total = need_int(j, "episodes.k_query_out_total");
    c.plan.episodes_train = need_int(j, "episodes.episodes_train");
    c.plan.episodes_test = need_int(j, "episodes.episodes_test");
    c.plan.n_open_classes = need_int(j, "episodes.n_open_classes");
    c.plan.validate();

    c.conv_channels = need_int_list(j, "model.conv_channels");
    c.d_z = need_int(j, "model.d_z");
    c.detector_hidden = need_int_list(j, "model.detector_hidden");
    c.tau_init = need_double(j, "model.tau_init");
    if (c.d_z < 1) throw ConfigError("'model.d_z' must be positive");
    if (!(c.tau_init > 0.0)) throw ConfigError("'model.tau_init' must be positive");

    c.lambda1 = need_double(j, "loss.lambda1");
    c.lambda2 = need_double(j, "loss.lambda2");
    c.lambda3 = need_double(j, "loss.lambda3");
    for (double l : {c.lambda1, c.lambda2, c.lambda3})
        if (!(l >= 0.0) || !std::isfinite(l))
            throw ConfigError("loss weights must be finite and nonnegative");
    c.recon_kind = pick<ReconKind>("loss.reconstruction", need_string(j, "loss.reconstruction"),
                                   {{"bce", ReconKind::bce}, {"l2", ReconKind::l2}});

    c.encoder_vae = pick<bool>("variant.encoder", need_string(j, "variant.encoder"),
                               {{"vae", true}, {"ae", false}});
    c.weighted_prototypes = pick<bool>("variant.prototypes", need_string(j, "variant.prototypes"),
                                       {{"weighted", true}, {"mean", false}});
    c.modulation = need_bool(j, "variant.modulation");
    c.kappa_distance =
        pick<KappaDistance>("variant.kappa_distance", need_string(j, "variant.kappa_distance"),
                            {{"l1", KappaDistance::l1}, {"cosine", KappaDistance::cosine}});
    c.classifier_metric = pick<ClassifierMetric>(
        "variant.classifier_metric", need_string(j, "variant.classifier_metric"),
        {{"cosine", ClassifierMetric::cosine}, {"euclidean", ClassifierMetric::euclidean}});
    c.detector_flags.use_clf = need_bool(j, "variant.detector.use_clf");
    c.detector_flags.use_embedding = need_bool(j, "variant.detector.use_embedding");
    c.detector_flags.use_recon_errors = need_bool(j, "variant.detector.use_recon_errors");
    if (!c.detector_flags.use_clf && !c.detector_flags.use_embedding &&
        !c.detector_flags.use_recon_errors)
        throw ConfigError("every detector input block is ablated");

    c.exemplar_mode = pick<ExemplarMode>(
        "exemplars.mode", need_string(j, "exemplars.mode"),
        {{"canonical", ExemplarMode::canonical},
         {"estimated", ExemplarMode::estimated},
         {"self_reconstruction", ExemplarMode::self_reconstruction}});
    c.exemplar_distance = pick<ExemplarDistance>(
        "exemplars.distance", need_string(j, "exemplars.distance"),
        {{"l2", ExemplarDistance::l2}, {"cosine", ExemplarDistance::cosine}});
    c.pretrain_epochs = need_int(j, "exemplars.pretrain_epochs");
    c.pretrain_batch = need_int(j, "exemplars.pretrain_batch");
    c.pretrain_lr = need_double(j, "exemplars.pretrain_lr");
    if (c.pretrain_epochs < 0) throw ConfigError("'exemplars.pretrain_epochs' must be >= 0");

    c.lr = need_double(j, "optim.lr");
    c.beta1 = need_double(j, "optim.beta1");
    c.beta2 = need_double(j, "optim.beta2");
    c.lr_drop_every = need_int(j, "optim.lr_drop_every");
    if (!(c.lr > 0.0)) throw ConfigError("'optim.lr' must be positive");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw ConfigError("optimizer betas must be in [0, 1)");
    if (c.lr_drop_every < 0) throw ConfigError("'optim.lr_drop_every' must be >= 0");
    c.regime = pick<TrainingRegime>("optim.regime", need_string(j, "optim.regime"),
                                    {{"joint", TrainingRegime::joint},
                                     {"two_stage", TrainingRegime::two_stage}});
    c.stage1_fraction = need_double(j, "optim.stage1_fraction");
    if (!(c.stage1_fraction > 0.0 && c.stage1_fraction < 1.0))
        throw ConfigError("'optim.stage1_fraction' must be in (0, 1)");

    c.checkpoint_every = need_int(j, "checkpoint.every");
    if (c.checkpoint_every < 0) throw ConfigError("'checkpoint.every' must be >= 0");
    c.open_score = pick<OpenScore>("eval.open_score", need_string(j, "eval.open_score"),
                                   {{"detector", OpenScore::detector},
                                    {"max_prob", OpenScore::max_prob}});
    return c;
}

ojson config_to_json(const RunConfig& c) {
    ojson j = default_config();
    j["run"]["name"] = c.run_name;
    j["run"]["seed"] = c.seed;
    j["data"]["source"] = c.data_source;
    j["data"]["root"] = c.data_root;
    j["data"]["name"] = c.data_name;
    j["data"]["image_size"] = c.image_size;
    j["data"]["num_classes"] = c.num_classes;
    j["data"]["samples_per_class"] = c.samples_per_class;
    j["data"]["train_fraction"] = c.train_fraction;
    j["data"]["glyph_seed"] = c.glyph_seed;
    j["episodes"]["n_way"] = c.plan.n_way;
    j["episodes"]["k_shot"] = c.plan.k_shot;
    j["episodes"]["k_query_in_per_class"] = c.plan.k_query_in_per_class;
    j["episodes"]["k_query_out_total"] = c.plan.k_query_out_total;
    j["episodes"]["episodes_train"] = c.plan.episodes_train;
    j["episodes"]["episodes_test"] = c.plan.episodes_test;
    j["episodes"]["n_open_classes"] = c.plan.n_open_classes;
    j["model"]["conv_channels"] = c.conv_channels;
    j["model"]["d_z"] = c.d_z;
    j["model"]["detector_hidden"] = c.detector_hidden;
    j["model"]["tau_init"] = c.tau_init;
    j["loss"]["lambda1"] = c.lambda1;
    j["loss"]["lambda2"] = c.lambda2;
    j["loss"]["lambda3"] = c.lambda3;
    j["loss"]["reconstruction"] = c.recon_kind == ReconKind::bce ? "bce" : "l2";
    j["variant"]["encoder"] = c.encoder_vae ? "vae" : "ae";
    j["variant"]["prototypes"] = c.weighted_prototypes ? "weighted" : "mean";
    j["variant"]["modulation"] = c.modulation;
    j["variant"]["kappa_distance"] = c.kappa_distance == KappaDistance::l1 ? "l1" : "cosine";
    j["variant"]["classifier_metric"] =
        c.classifier_metric == ClassifierMetric::cosine ? "cosine" : "euclidean";
    j["variant"]["detector"]["use_clf"] = c.detector_flags.use_clf;
    j["variant"]["detector"]["use_embedding"] = c.detector_flags.use_embedding;
    j["variant"]["detector"]["use_recon_errors"] = c.detector_flags.use_recon_errors;
    j["exemplars"]["mode"] = c.exemplar_mode == ExemplarMode::canonical    ? "canonical"
                             : c.exemplar_mode == ExemplarMode::estimated ? "estimated"
                                                                          : "self_reconstruction";
    j["exemplars"]["distance"] = c.exemplar_distance == ExemplarDistance::l2 ? "l2" : "cosine";
    j["exemplars"]["pretrain_epochs"] = c.pretrain_epochs;
    j["exemplars"]["pretrain_batch"] = c.pretrain_batch;
    j["exemplars"]["pretrain_lr"] = c.pretrain_lr;
    j["optim"]["lr"] = c.lr;
    j["optim"]["beta1"] = c.beta1;
    j["optim"]["beta2"] = c.beta2;
    j["optim"]["lr_drop_every"] = c.lr_drop_every;
    j["optim"]["regime"] = c.regime == TrainingRegime::joint ? "joint" : "two_stage";
    j["optim"]["stage1_fraction"] = c.stage1_fraction;
    j["checkpoint"]["every"] = c.checkpoint_every;
    j["eval"]["open_score"] = c.open_score == OpenScore::detector ? "detector" : "max_prob";
    return j;
}

ojson load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    ojson j = ojson::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
    return j;
}

void write_resolved_config(const ojson& resolved, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << resolved.dump(2) << "\n";
}

std::uint64_t config_hash(const ojson& resolved) {
    const std::string s = resolved.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.image_h = image_size;
    m.image_w = image_size;
    m.in_channels = 3;
    m.conv_channels = conv_channels;
    m.d_z = d_z;
    m.detector_hidden = detector_hidden;
    m.detector_input_dim = detector_flags.dim(plan.n_way, d_z);
    m.tau_init = tau_init;
    return m;
}

ForwardOptions RunConfig::forward_options(bool training) const {
    ForwardOptions o;
    o.training = training;
    o.ae_mode = !encoder_vae;
    o.weighted_prototypes = weighted_prototypes;
    o.modulation = modulation;
    o.self_reconstruction = exemplar_mode == ExemplarMode::self_reconstruction;
    o.build_vae = lambda1 != 0.0;
    o.build_detector = lambda3 != 0.0;
    o.recon_kind = recon_kind;
    o.classifier_metric = classifier_metric;
    o.kappa_distance = kappa_distance;
    o.detector_flags = detector_flags;
    return o;
}

void apply_variant(ojson& config, const std::string& variant) {
    if (variant == "full") return;
    if (variant == "ae") {
        config["variant"]["encoder"] = "ae";
    } else if (variant == "mean_prototype") {
        config["variant"]["prototypes"] = "mean";
    } else if (variant == "no_modulation") {
        config["variant"]["modulation"] = false;
    } else if (variant == "protoC_nd") {
        config["variant"]["prototypes"] = "mean";
        config["variant"]["modulation"] = false;
        config["variant"]["detector"]["use_recon_errors"] = false;
        config["loss"]["lambda1"] = 0.0;
    } else if (variant == "no_embedding") {
        config["variant"]["detector"]["use_embedding"] = false;
    } else if (variant == "no_clf") {
        config["variant"]["detector"]["use_clf"] = false;
    } else if (variant == "self_reconstruction") {
        config["exemplars"]["mode"] = "self_reconstruction";
    } else {
        throw ConfigError("unknown ablation variant '" + variant + "'");
    }
}

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> names{"full",       "ae",           "mean_prototype",
                                                "no_modulation", "protoC_nd", "no_embedding",
                                                "no_clf",     "self_reconstruction"};
    return names;
}

}  // namespace refocs
