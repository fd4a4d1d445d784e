#include "advsr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "advsr/adaptive.hpp"
#include "advsr/attacks.hpp"
#include "advsr/dataset.hpp"
#include "advsr/metrics.hpp"
#include "advsr/model.hpp"
#include "advsr/transforms.hpp"

namespace advsr::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- strict config parsing ----

void require_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw std::invalid_argument("config: section '" + section + "' must be an object");
    for (const auto& [key, val] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&key](const char* a) { return key == a; }) == allowed.end())
            throw std::invalid_argument("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

struct AdaptiveWrapper {
    std::string kind;  // "eot" | "bpda" | "nes"
    int r = 50;
    int m = 100;
    double sigma = 1e-3;
};

struct ParsedConfig {
    uint64_t seed = 1234;
    fs::path base_dir;

    // dataset
    fs::path data_dir = "data";
    std::optional<SyntheticSpeakerSpec> synthetic;

    // model
    fs::path checkpoint = "out/model.json";
    FeatureConfig features;
    AudioNetConfig net;
    Task task = Task::CSI_NE;

    // training
    bool adversarial = false;
    bool resume = false;
    TrainConfig training;
    AdvTrainConfig adv_training;
    json advt_defense;  // optional transform layer for AdvT+X

    // experiment grid
    std::vector<json> defenses;
    std::vector<json> attacks;
    bool adaptive_enabled = false;
    std::vector<AdaptiveWrapper> wrappers;

    // sweep / gap
    json sweep;
    json gap;

    // output
    fs::path out_dir = "out";
    bool store_wavs = true;
    bool loss_traces = false;
    int trials = 10;

    fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

FeatureConfig parse_features(const json& j) {
    require_keys(j, "model.features",
                 {"frame_len_ms", "hop_ms", "n_fft", "n_mels", "n_ceps", "log_floor", "power_eta",
                  "delta_orders", "apply_cmvn", "apply_vad", "vad_threshold_db", "preemphasis",
                  "cmvn_var_floor"});
    FeatureConfig c;
    c.frame_len_ms = get_or(j, "frame_len_ms", c.frame_len_ms);
    c.hop_ms = get_or(j, "hop_ms", c.hop_ms);
    c.n_fft = get_or(j, "n_fft", c.n_fft);
    c.n_mels = get_or(j, "n_mels", c.n_mels);
    c.n_ceps = get_or(j, "n_ceps", c.n_ceps);
    c.log_floor = get_or(j, "log_floor", c.log_floor);
    c.power_eta = get_or(j, "power_eta", c.power_eta);
    c.delta_orders = get_or(j, "delta_orders", c.delta_orders);
    c.apply_cmvn = get_or(j, "apply_cmvn", c.apply_cmvn);
    c.apply_vad = get_or(j, "apply_vad", c.apply_vad);
    c.vad_threshold_db = get_or(j, "vad_threshold_db", c.vad_threshold_db);
    c.preemphasis = get_or(j, "preemphasis", c.preemphasis);
    c.cmvn_var_floor = get_or(j, "cmvn_var_floor", c.cmvn_var_floor);
    return c;
}

ParsedConfig parse_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path.string());
    json doc = json::parse(f);
    require_keys(doc, "<root>",
                 {"seed", "dataset", "model", "training", "defense", "attacks", "adaptive", "sweep",
                  "gap", "output"});

    ParsedConfig c;
    c.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    c.seed = get_or<uint64_t>(doc, "seed", c.seed);

    if (doc.contains("dataset")) {
        const auto& d = doc.at("dataset");
        require_keys(d, "dataset", {"dir", "synthetic"});
        c.data_dir = fs::path(get_or<std::string>(d, "dir", c.data_dir.string()));
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            require_keys(s, "dataset.synthetic",
                         {"n_speakers", "voices_per_speaker", "duration_s", "sample_rate", "seed"});
            SyntheticSpeakerSpec spec;
            spec.n_speakers = get_or(s, "n_speakers", spec.n_speakers);
            spec.voices_per_speaker = get_or(s, "voices_per_speaker", spec.voices_per_speaker);
            spec.duration_s = get_or(s, "duration_s", spec.duration_s);
            spec.sample_rate = get_or(s, "sample_rate", spec.sample_rate);
            spec.seed = get_or<uint64_t>(s, "seed", spec.seed);
            c.synthetic = spec;
        }
    }

    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        require_keys(m, "model", {"checkpoint", "task", "features", "net"});
        c.checkpoint = fs::path(get_or<std::string>(m, "checkpoint", c.checkpoint.string()));
        c.task = task_from_name(get_or<std::string>(m, "task", "csi-ne"));
        if (m.contains("features")) c.features = parse_features(m.at("features"));
        if (m.contains("net")) {
            const auto& n = m.at("net");
            require_keys(n, "model.net", {"conv_channels", "kernel", "stride", "embedding_dim"});
            c.net.conv_channels = get_or(n, "conv_channels", c.net.conv_channels);
            c.net.kernel = get_or(n, "kernel", c.net.kernel);
            c.net.stride = get_or(n, "stride", c.net.stride);
            c.net.embedding_dim = get_or(n, "embedding_dim", c.net.embedding_dim);
        }
    }

    if (doc.contains("training")) {
        const auto& t = doc.at("training");
        require_keys(t, "training",
                     {"mode", "epochs", "batch", "lr", "noise_budget", "crop_s", "optimizer", "resume",
                      "adversarial"});
        const std::string mode = get_or<std::string>(t, "mode", "standard");
        if (mode != "standard" && mode != "adversarial")
            throw std::invalid_argument("config: training.mode must be standard or adversarial");
        c.adversarial = mode == "adversarial";
        c.training.epochs = get_or(t, "epochs", c.training.epochs);
        c.training.batch = get_or(t, "batch", c.training.batch);
        c.training.lr = get_or(t, "lr", c.training.lr);
        c.training.noise_budget = get_or(t, "noise_budget", c.training.noise_budget);
        c.training.crop_s = get_or(t, "crop_s", c.training.crop_s);
        const std::string opt = get_or<std::string>(t, "optimizer", "adam");
        if (opt != "adam" && opt != "sgd") throw std::invalid_argument("config: optimizer must be adam or sgd");
        c.training.adam = opt == "adam";
        c.resume = get_or(t, "resume", false);
        if (t.contains("adversarial")) {
            const auto& a = t.at("adversarial");
            require_keys(a, "training.adversarial",
                         {"ratio", "steps", "epsilon", "alpha", "eot_r", "defense"});
            c.adv_training.ratio = get_or(a, "ratio", c.adv_training.ratio);
            c.adv_training.steps = get_or(a, "steps", c.adv_training.steps);
            c.adv_training.epsilon = get_or(a, "epsilon", c.adv_training.epsilon);
            c.adv_training.alpha = get_or(a, "alpha", c.adv_training.alpha);
            c.adv_training.eot_r = get_or(a, "eot_r", c.adv_training.eot_r);
            if (a.contains("defense")) c.advt_defense = a.at("defense");
        }
    }

    if (doc.contains("defense")) {
        if (!doc.at("defense").is_array()) throw std::invalid_argument("config: defense must be a list");
        for (const auto& d : doc.at("defense")) c.defenses.push_back(d);
    }
    if (doc.contains("attacks")) {
        if (!doc.at("attacks").is_array()) throw std::invalid_argument("config: attacks must be a list");
        for (const auto& a : doc.at("attacks")) c.attacks.push_back(a);
    }

    if (doc.contains("adaptive")) {
        const auto& a = doc.at("adaptive");
        require_keys(a, "adaptive", {"enabled", "wrappers"});
        c.adaptive_enabled = get_or(a, "enabled", false);
        if (a.contains("wrappers")) {
            for (const auto& w : a.at("wrappers")) {
                require_keys(w, "adaptive.wrappers[]", {"kind", "r", "m", "sigma"});
                AdaptiveWrapper aw;
                aw.kind = w.at("kind").get<std::string>();
                if (aw.kind != "eot" && aw.kind != "bpda" && aw.kind != "nes")
                    throw std::invalid_argument("config: unknown adaptive wrapper '" + aw.kind + "'");
                aw.r = get_or(w, "r", aw.r);
                aw.m = get_or(w, "m", aw.m);
                aw.sigma = get_or(w, "sigma", aw.sigma);
                c.wrappers.push_back(aw);
            }
        }
    }

    if (doc.contains("sweep")) c.sweep = doc.at("sweep");
    if (doc.contains("gap")) c.gap = doc.at("gap");

    if (doc.contains("output")) {
        const auto& o = doc.at("output");
        require_keys(o, "output", {"dir", "store_wavs", "loss_traces", "trials"});
        c.out_dir = fs::path(get_or<std::string>(o, "dir", c.out_dir.string()));
        c.store_wavs = get_or(o, "store_wavs", c.store_wavs);
        c.loss_traces = get_or(o, "loss_traces", c.loss_traces);
        c.trials = get_or(o, "trials", c.trials);
    }
    return c;
}

// ---- defense construction ----

std::shared_ptr<const WaveMap> build_wave_map(const json& d, uint64_t seed) {
    const std::string name = d.at("name").get<std::string>();
    if (name == "identity") {
        require_keys(d, "defense", {"name"});
        return std::make_shared<IdentityMap>();
    }
    if (name == "qt") {
        require_keys(d, "defense.qt", {"name", "q"});
        return std::make_shared<QuantizeMap>(get_or(d, "q", defaults::kQtFactor));
    }
    if (name == "at") {
        require_keys(d, "defense.at", {"name", "snr_db"});
        return std::make_shared<TurbulenceMap>(get_or(d, "snr_db", defaults::kAtSnrDb), seed);
    }
    if (name == "as") {
        require_keys(d, "defense.as", {"name", "k"});
        return std::make_shared<MeanSmoothMap>(get_or(d, "k", defaults::kAsKernel));
    }
    if (name == "ms") {
        require_keys(d, "defense.ms", {"name", "k"});
        return std::make_shared<MedianSmoothMap>(get_or(d, "k", defaults::kMsKernel));
    }
    if (name == "ds") {
        require_keys(d, "defense.ds", {"name", "tau"});
        return std::make_shared<DownsampleMap>(get_or(d, "tau", defaults::kDsRatio));
    }
    if (name == "lpf") {
        require_keys(d, "defense.lpf", {"name", "f_p", "f_s"});
        return std::make_shared<LowPassMap>(get_or(d, "f_p", defaults::kLpfPassHz),
                                            get_or(d, "f_s", defaults::kLpfStopHz));
    }
    if (name == "bpf") {
        require_keys(d, "defense.bpf", {"name", "f_sl", "f_pl", "f_pu", "f_su"});
        return std::make_shared<BandPassMap>(
            get_or(d, "f_sl", defaults::kBpfStopLowHz), get_or(d, "f_pl", defaults::kBpfPassLowHz),
            get_or(d, "f_pu", defaults::kBpfPassHighHz), get_or(d, "f_su", defaults::kBpfStopHighHz));
    }
    if (name == "codec") {
        require_keys(d, "defense.codec", {"name", "command"});
        return std::make_shared<ExternalCodecMap>(d.at("command").get<std::string>());
    }
    throw std::invalid_argument("config: unknown waveform defense '" + name + "'");
}

DefenseStack build_defense(const json& spec, uint64_t seed) {
    DefenseStack stack;
    const auto add_one = [&stack, seed](const json& d) {
        const std::string name = d.at("name").get<std::string>();
        if (name == "fc") {
            require_keys(d, "defense.fc", {"name", "stage", "cl_m", "cl_r"});
            if (stack.tap) throw std::invalid_argument("config: at most one feature tap per defense");
            FeatureTap tap;
            tap.stage = stage_from_name(get_or<std::string>(d, "stage", "origin"));
            const auto method = cluster_method_from_name(get_or<std::string>(d, "cl_m", "kmeans"));
            const double def_r = tap.stage == Stage::Origin
                                     ? (method == ClusterMethod::KMeans ? defaults::kFcOriginKmeansRatio
                                                                        : defaults::kFcOriginWarpedRatio)
                                     : defaults::kFcDeepStageRatio;
            tap.map = std::make_shared<FeatCompressMap>(method, get_or(d, "cl_r", def_r), seed);
            stack.tap = tap;
        } else {
            DefenseLayer layer;
            layer.map = build_wave_map(d, seed);
            stack.wave.push_back(layer);
        }
    };
    if (spec.is_array())
        for (const auto& d : spec) add_one(d);
    else
        add_one(spec);
    return stack;
}

bool stack_is_identity(const json& spec) {
    if (spec.is_object()) return spec.at("name").get<std::string>() == "identity";
    return false;
}

// ---- attack construction ----

AttackConfig parse_attack(const json& a) {
    require_keys(a, "attacks[]",
                 {"kind", "epsilon", "alpha", "steps", "kappa", "targeted", "c_init",
                  "binary_search_steps", "max_iters", "lr", "m", "sigma", "iter_limit", "max_queries",
                  "swarm", "iters"});
    AttackConfig cfg;
    cfg.kind = attack_kind_from_name(a.at("kind").get<std::string>());
    cfg.epsilon = get_or(a, "epsilon", cfg.epsilon);
    cfg.alpha = get_or(a, "alpha", cfg.epsilon / 5.0);
    cfg.steps = get_or(a, "steps", cfg.steps);
    cfg.kappa = get_or(a, "kappa", cfg.kind == AttackKind::FAKEBOB ? 0.5 : 0.0);
    cfg.targeted = get_or(a, "targeted", false);
    cfg.c_init = get_or(a, "c_init", cfg.c_init);
    cfg.binary_search_steps = get_or(a, "binary_search_steps", cfg.binary_search_steps);
    cfg.max_iters = get_or(a, "max_iters", cfg.max_iters);
    cfg.cw_lr = get_or(a, "lr", cfg.cw_lr);
    cfg.nes_samples = get_or(a, "m", cfg.nes_samples);
    cfg.nes_sigma = get_or(a, "sigma", cfg.nes_sigma);
    cfg.iter_limit = get_or(a, "iter_limit", cfg.iter_limit);
    cfg.max_queries = get_or(a, "max_queries", cfg.max_queries);
    cfg.swarm = get_or(a, "swarm", cfg.swarm);
    cfg.pso_iters = get_or(a, "iters", cfg.pso_iters);
    return cfg;
}

// ---- runtime pieces ----

struct Example {
    Waveform voice;
    int label;
    std::string id;
};

std::vector<Example> load_labeled(const DatasetManifest& set, const std::vector<std::string>& class_ids) {
    std::vector<Example> out;
    for (const auto& [speaker, paths] : set.entries) {
        const auto it = std::find(class_ids.begin(), class_ids.end(), speaker);
        if (it == class_ids.end())
            throw std::invalid_argument("manifest speaker '" + speaker + "' unknown to the model");
        const int label = static_cast<int>(it - class_ids.begin());
        for (const auto& p : paths) out.push_back({read_wav(p), label, p.stem().string()});
    }
    return out;
}

struct Runtime {
    ParsedConfig cfg;
    Model model;
    std::optional<EnrollmentDB> db;
    std::vector<Example> test_set;

    // classifies into the model's class index space; -1 = reject
    int predict(const Waveform& w, const DefenseStack* stack, Rng* rng) const {
        if (cfg.task == Task::CSI_NE) return predict_class(model, w, stack, rng);
        const Decision d = decide(cfg.task, model, db ? &*db : nullptr, w, stack, rng);
        if (!d.accepted) return -1;
        const auto it = std::find(model.class_ids.begin(), model.class_ids.end(), d.speaker_id);
        return it == model.class_ids.end() ? -1 : static_cast<int>(it - model.class_ids.begin());
    }
};

Runtime make_runtime(const ParsedConfig& cfg, bool need_model = true) {
    Runtime rt{cfg, {}, {}, {}};
    if (need_model) {
        const fs::path ckpt = cfg.resolve(cfg.checkpoint);
        if (!fs::exists(ckpt))
            throw std::runtime_error("checkpoint not found (run `advsr train` first): " + ckpt.string());
        rt.model = load_checkpoint(ckpt);

        const fs::path data = cfg.resolve(cfg.data_dir);
        rt.test_set = load_labeled(load_manifest(data / "test.json"), rt.model.class_ids);
        if (cfg.task != Task::CSI_NE) {
            const fs::path enroll_path = data / "enroll.json";
            rt.db = enroll(rt.model, load_manifest(enroll_path));
        }
    }
    return rt;
}

struct CellScores {
    double mean = 0.0;
    double stddev = 0.0;
};

CellScores trial_mean(const std::function<double(Rng&)>& eval_once, bool randomized, int trials,
                      uint64_t seed) {
    const int n = randomized ? trials : 1;
    std::vector<double> vals(n);
    for (int t = 0; t < n; ++t) {
        Rng rng(Rng::mix(seed, 0x771a1ULL + t));
        vals[t] = eval_once(rng);
    }
    CellScores s;
    for (double v : vals) s.mean += v;
    s.mean /= n;
    for (double v : vals) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = n > 1 ? std::sqrt(s.stddev / n) : 0.0;
    return s;
}

double benign_accuracy_once(const Runtime& rt, const DefenseStack* stack, Rng& rng) {
    int hits = 0;
    for (const auto& ex : rt.test_set)
        if (rt.predict(ex.voice, stack, &rng) == ex.label) ++hits;
    return static_cast<double>(hits) / rt.test_set.size();
}

struct AdvExample {
    Waveform quantized;  // stored form
    int label;
    int target;  // -1 if untargeted
    std::string id;
    bool success_flag;  // attack's own judgement
};

struct ResultRow {
    std::string defense;
    std::string attack;
    double a_b = 0.0, a_a = 0.0, a_a_std = 0.0, asr = 0.0, l2 = 0.0, snr = 0.0;
    uint64_t seed = 0;
    std::string error;
};

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void write_results_csv(const std::vector<ResultRow>& rows, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "defense,attack,a_b,a_a,a_a_std,asr,l2,snr,seed,error\n";
    for (const auto& r : rows)
        f << r.defense << "," << r.attack << "," << fmt(r.a_b) << "," << fmt(r.a_a) << ","
          << fmt(r.a_a_std) << "," << fmt(r.asr) << "," << fmt(r.l2) << "," << fmt(r.snr) << "," << r.seed
          << "," << r.error << "\n";
}

void write_summary_json(const json& extra, const std::vector<ResultRow>& rows, const fs::path& path) {
    json jr = json::array();
    for (const auto& r : rows)
        jr.push_back({{"defense", r.defense},
                      {"attack", r.attack},
                      {"a_b", r.a_b},
                      {"a_a", r.a_a},
                      {"a_a_std", r.a_a_std},
                      {"asr", r.asr},
                      {"l2", r.l2},
                      {"snr", r.snr},
                      {"seed", r.seed},
                      {"error", r.error}});
    json doc = extra;
    doc["rows"] = jr;
    std::ofstream f(path, std::ios::trunc);
    f << doc.dump(2) << "\n";
}

// Builds the provider the attack optimizes against.
std::shared_ptr<const GradProvider> build_provider(const Runtime& rt, const DefenseStack* defended,
                                                   const std::vector<AdaptiveWrapper>& wrappers,
                                                   uint64_t seed) {
    DefenseStack stack;
    if (defended) stack = *defended;

    const bool use_bpda = std::any_of(wrappers.begin(), wrappers.end(),
                                      [](const AdaptiveWrapper& w) { return w.kind == "bpda"; });
    if (use_bpda) {
        for (auto& layer : stack.wave)
            if (!layer.map->differentiable()) layer.grad = GradThrough::Identity;
        if (stack.tap && !stack.tap->map->differentiable()) stack.tap->grad = GradThrough::Identity;
    }

    std::shared_ptr<const GradProvider> provider =
        make_exact_provider(rt.model, std::move(stack), Rng::mix(seed, 0xe8ac7ULL));
    // wrappers listed outermost-first
    for (auto it = wrappers.rbegin(); it != wrappers.rend(); ++it) {
        if (it->kind == "eot") provider = eot_wrap(provider, it->r);
        if (it->kind == "nes")
            provider = make_nes_provider(provider, it->m, it->sigma, Rng::mix(seed, 0x9e5ULL));
    }
    return provider;
}

int pick_target(int label, int n_classes, uint64_t seed, int example_idx) {
    Rng rng(Rng::mix(Rng::mix(seed, 0x7a96e7ULL), static_cast<uint64_t>(example_idx)));
    int t = rng.uniform_int(0, n_classes - 2);
    if (t >= label) ++t;
    return t;
}

std::vector<AttackResult> craft_adversarial(const Runtime& rt, const AttackConfig& base_cfg,
                                            const GradProvider& provider, const DefenseStack* eval_stack,
                                            uint64_t cell_seed, std::vector<int>* targets_out) {
    std::vector<AttackResult> results;
    results.reserve(rt.test_set.size());
    if (targets_out) targets_out->assign(rt.test_set.size(), -1);

    for (size_t i = 0; i < rt.test_set.size(); ++i) {
        const auto& ex = rt.test_set[i];
        AttackConfig cfg = base_cfg;
        cfg.seed = Rng::mix(cell_seed, static_cast<uint64_t>(i));
        if (cfg.targeted && cfg.target_label < 0) {
            cfg.target_label = pick_target(ex.label, rt.model.n_classes, rt.cfg.seed, static_cast<int>(i));
            if (targets_out) (*targets_out)[i] = cfg.target_label;
        }
        Rng eval_rng(Rng::mix(cell_seed, 0xe0a1ULL + i));
        PredictFn predict = [&](const Waveform& w) { return rt.predict(w, eval_stack, &eval_rng); };
        results.push_back(run_attack(cfg, provider, predict, ex.voice, ex.label));
    }
    return results;
}

ResultRow evaluate_cell(const Runtime& rt, const std::string& defense_name, const DefenseStack* stack,
                        const std::string& attack_label, const std::vector<AttackResult>& advs,
                        const std::vector<int>& targets, bool targeted, uint64_t cell_seed) {
    ResultRow row;
    row.defense = defense_name;
    row.attack = attack_label;
    row.seed = cell_seed;

    const bool randomized = stack && stack->randomized();
    row.a_b = trial_mean([&](Rng& rng) { return benign_accuracy_once(rt, stack, rng); }, randomized,
                         rt.cfg.trials, Rng::mix(cell_seed, 1))
                  .mean;

    std::vector<Waveform> stored;
    stored.reserve(advs.size());
    for (const auto& a : advs) stored.push_back(quantize_pcm16(a.adv));

    const auto acc_eval = [&](Rng& rng) {
        int hits = 0;
        for (size_t i = 0; i < stored.size(); ++i)
            if (rt.predict(stored[i], stack, &rng) == rt.test_set[i].label) ++hits;
        return static_cast<double>(hits) / stored.size();
    };
    const CellScores acc = trial_mean(acc_eval, randomized, rt.cfg.trials, Rng::mix(cell_seed, 2));
    row.a_a = acc.mean;
    row.a_a_std = acc.stddev;

    const auto asr_eval = [&](Rng& rng) {
        int hits = 0;
        for (size_t i = 0; i < stored.size(); ++i) {
            const int pred = rt.predict(stored[i], stack, &rng);
            const bool ok = targeted ? pred == targets[i] : pred != rt.test_set[i].label;
            if (ok) ++hits;
        }
        return static_cast<double>(hits) / stored.size();
    };
    row.asr = trial_mean(asr_eval, randomized, rt.cfg.trials, Rng::mix(cell_seed, 3)).mean;

    double l2 = 0.0, snr = 0.0;
    int snr_count = 0;
    for (size_t i = 0; i < stored.size(); ++i) {
        const Distortion d = distortion(rt.test_set[i].voice, stored[i]);
        l2 += d.l2;
        if (std::isfinite(d.snr_db)) {
            snr += d.snr_db;
            ++snr_count;
        }
    }
    row.l2 = l2 / stored.size();
    row.snr = snr_count ? snr / snr_count : std::numeric_limits<double>::infinity();
    return row;
}

void store_adv_wavs(const ParsedConfig& cfg, const std::string& attack_label,
                    const std::vector<AttackResult>& advs, const std::vector<Example>& examples) {
    const fs::path dir = cfg.resolve(cfg.out_dir) / "adv" / attack_label;
    fs::create_directories(dir);
    for (size_t i = 0; i < advs.size(); ++i)
        write_wav(advs[i].adv, dir / (examples[i].id + ".wav"));
}

void store_loss_traces(const ParsedConfig& cfg, const std::string& attack_label,
                       const std::vector<AttackResult>& advs, const std::vector<Example>& examples) {
    const fs::path dir = cfg.resolve(cfg.out_dir) / "traces" / attack_label;
    fs::create_directories(dir);
    for (size_t i = 0; i < advs.size(); ++i) {
        std::ofstream f(dir / (examples[i].id + ".csv"), std::ios::trunc);
        f << "iteration,loss\n";
        for (size_t k = 0; k < advs[i].loss_trace.size(); ++k) f << k << "," << fmt(advs[i].loss_trace[k]) << "\n";
    }
}

// ---- commands ----

int cmd_synth_data(const ParsedConfig& cfg) {
    if (!cfg.synthetic) throw std::invalid_argument("synth-data: config needs dataset.synthetic");
    const fs::path dir = cfg.resolve(cfg.data_dir);
    fs::create_directories(dir);
    const auto manifests = synth_corpus(*cfg.synthetic, dir);
    std::cout << "synth-data: wrote " << manifests.train.voice_count() << " train / "
              << manifests.test.voice_count() << " test / " << manifests.imposter.voice_count()
              << " imposter voices under " << dir << "\n";
    return 0;
}

int cmd_train(const ParsedConfig& cfg) {
    const fs::path data = cfg.resolve(cfg.data_dir);
    const DatasetManifest train_set = load_manifest(data / "train.json");
    const DatasetManifest eval_set = load_manifest(data / "train-test.json");

    TrainConfig tc = cfg.training;
    tc.seed = Rng::mix(cfg.seed, 0x7123aULL);

    Model init;
    const fs::path ckpt = cfg.resolve(cfg.checkpoint);
    if (cfg.resume && fs::exists(ckpt)) {
        init = load_checkpoint(ckpt);
    } else {
        FeatureConfig fc = cfg.features;
        init = make_model(fc, cfg.net, static_cast<int>(train_set.entries.size()),
                          Rng::mix(cfg.seed, 0x1417ULL));
        init.class_ids = train_set.speaker_ids();
    }

    TrainResult res;
    if (cfg.adversarial) {
        DefenseStack stack;
        const bool has_layer = !cfg.advt_defense.is_null() && !cfg.advt_defense.empty();
        if (has_layer) stack = build_defense(cfg.advt_defense, Rng::mix(cfg.seed, 0xdefULL));
        res = adv_train(init, train_set, &eval_set, tc, cfg.adv_training, has_layer ? &stack : nullptr);
    } else {
        res = train(init, train_set, &eval_set, tc);
    }

    fs::create_directories(ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path());
    save_checkpoint(res.model, ckpt);

    const fs::path out = cfg.resolve(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream log(out / "train_log.csv", std::ios::trunc);
    log << "epoch,train_loss,train_acc,eval_acc\n";
    for (const auto& e : res.log)
        log << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.train_acc) << "," << fmt(e.eval_acc)
            << "\n";
    std::cout << "train: " << res.log.size() << " epochs, final eval accuracy "
              << fmt(res.log.empty() ? 0.0 : res.log.back().eval_acc) << ", checkpoint " << ckpt << "\n";
    return 0;
}

int cmd_attack(const ParsedConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    if (cfg.attacks.empty()) throw std::invalid_argument("attack: config needs a non-empty attacks list");

    const fs::path out = cfg.resolve(cfg.out_dir);
    fs::create_directories(out);

    std::vector<ResultRow> rows;
    bool any_error = false;
    for (size_t ai = 0; ai < cfg.attacks.size(); ++ai) {
        const uint64_t cell_seed = Rng::mix(cfg.seed, 0xa77ac4ULL + ai);
        std::string label = "attack[" + std::to_string(ai) + "]";
        try {
            const AttackConfig acfg = parse_attack(cfg.attacks[ai]);
            label = attack_name(acfg);
            const auto provider = build_provider(rt, nullptr, {}, cell_seed);
            std::vector<int> targets;
            const auto advs = craft_adversarial(rt, acfg, *provider, nullptr, cell_seed, &targets);
            ResultRow row = evaluate_cell(rt, "none", nullptr, label, advs, targets, acfg.targeted, cell_seed);
            rows.push_back(row);
            if (cfg.store_wavs) store_adv_wavs(cfg, label, advs, rt.test_set);
            if (cfg.loss_traces) store_loss_traces(cfg, label, advs, rt.test_set);
        } catch (const std::exception& e) {
            ResultRow row;
            row.defense = "none";
            row.attack = label;
            row.seed = cell_seed;
            row.error = e.what();
            rows.push_back(row);
            any_error = true;
        }
    }

    write_results_csv(rows, out / "results.csv");
    write_summary_json(json{{"command", "attack"}, {"seed", cfg.seed}}, rows, out / "summary.json");
    std::cout << "attack: " << rows.size() << " rows -> " << (out / "results.csv") << "\n";
    return any_error ? 2 : 0;
}

int cmd_defend_eval(const ParsedConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    if (cfg.attacks.empty()) throw std::invalid_argument("defend-eval: config needs attacks");
    if (cfg.defenses.empty()) throw std::invalid_argument("defend-eval: config needs defenses");

    const fs::path out = cfg.resolve(cfg.out_dir);
    fs::create_directories(out);

    std::vector<ResultRow> rows;
    bool any_error = false;

    // non-adaptive: adversarial examples are crafted once on the undefended
    // model and shared across defense rows
    std::map<size_t, std::vector<AttackResult>> non_adaptive_cache;
    std::map<size_t, std::vector<int>> target_cache;

    for (size_t di = 0; di < cfg.defenses.size(); ++di) {
        DefenseStack stack;
        std::string defense_name = "defense[" + std::to_string(di) + "]";
        bool identity = false;
        try {
            identity = stack_is_identity(cfg.defenses[di]);
            stack = build_defense(cfg.defenses[di], Rng::mix(cfg.seed, 0xd0 + di));
            defense_name = stack.describe();
        } catch (const std::exception& e) {
            ResultRow row;
            row.defense = defense_name;
            row.error = e.what();
            rows.push_back(row);
            any_error = true;
            continue;
        }
        const DefenseStack* eval_stack = identity ? nullptr : &stack;

        for (size_t ai = 0; ai < cfg.attacks.size(); ++ai) {
            const uint64_t cell_seed = Rng::mix(cfg.seed, 0xce11ULL + di * 1000 + ai);
            std::string attack_label = "attack[" + std::to_string(ai) + "]";
            try {
                const AttackConfig acfg = parse_attack(cfg.attacks[ai]);
                attack_label = attack_name(acfg);

                std::vector<AttackResult> advs;
                std::vector<int> targets;
                if (cfg.adaptive_enabled) {
                    const auto provider = build_provider(rt, eval_stack, cfg.wrappers, cell_seed);
                    advs = craft_adversarial(rt, acfg, *provider, eval_stack, cell_seed, &targets);
                } else if (non_adaptive_cache.count(ai)) {
                    advs = non_adaptive_cache[ai];
                    targets = target_cache[ai];
                } else {
                    const uint64_t craft_seed = Rng::mix(cfg.seed, 0xc4af7ULL + ai);
                    const auto provider = build_provider(rt, nullptr, {}, craft_seed);
                    advs = craft_adversarial(rt, acfg, *provider, nullptr, craft_seed, &targets);
                    non_adaptive_cache[ai] = advs;
                    target_cache[ai] = targets;
                }
                rows.push_back(evaluate_cell(rt, defense_name, eval_stack, attack_label, advs, targets,
                                             acfg.targeted, cell_seed));
            } catch (const std::exception& e) {
                ResultRow row;
                row.defense = defense_name;
                row.attack = attack_label;
                row.seed = cell_seed;
                row.error = e.what();
                rows.push_back(row);
                any_error = true;
            }
        }
    }

    write_results_csv(rows, out / "results.csv");
    write_summary_json(json{{"command", "defend-eval"},
                            {"seed", cfg.seed},
                            {"adaptive", cfg.adaptive_enabled}},
                       rows, out / "summary.json");
    std::cout << "defend-eval: " << rows.size() << " rows -> " << (out / "results.csv") << "\n";
    return any_error ? 2 : 0;
}

json table8_defaults(const std::string& name) {
    if (name == "qt") return json::array({128, 256, 512, 1024});
    if (name == "at") {
        json v = json::array();
        for (int s = 2; s <= 20; s += 2) v.push_back(s);
        return v;
    }
    if (name == "as" || name == "ms") {
        json v = json::array();
        for (int k = 3; k <= 21; k += 2) v.push_back(k);
        return v;
    }
    if (name == "ds") {
        json v = json::array();
        for (int i = 1; i <= 19; ++i) v.push_back(i * 0.05);
        return v;
    }
    if (name == "lpf") {
        json v = json::array();
        for (int f = 4500; f <= 8000; f += 500) v.push_back(f);
        return v;
    }
    if (name == "bpf") {
        json v = json::array();
        for (int f = 5000; f <= 8000; f += 500) v.push_back(f);
        return v;
    }
    if (name == "fc") {
        json v = json::array();
        for (int i = 1; i <= 19; ++i) v.push_back(i * 0.05);
        return v;
    }
    throw std::invalid_argument("sweep: no default range for defense '" + name + "'");
}

json override_param(const json& base, const std::string& name, const json& value) {
    json d = base;
    if (name == "qt") d["q"] = value;
    else if (name == "at") d["snr_db"] = value;
    else if (name == "as" || name == "ms") d["k"] = value;
    else if (name == "ds") d["tau"] = value;
    else if (name == "lpf") d["f_s"] = value;
    else if (name == "bpf") d["f_su"] = value;
    else if (name == "fc") d["cl_r"] = value;
    else throw std::invalid_argument("sweep: unsupported defense '" + name + "'");
    return d;
}

int cmd_sweep(const ParsedConfig& cfg) {
    if (cfg.sweep.is_null()) throw std::invalid_argument("sweep: config needs a sweep section");
    require_keys(cfg.sweep, "sweep", {"defense", "values", "attack"});
    const json base_defense = cfg.sweep.at("defense");
    const std::string name = base_defense.at("name").get<std::string>();
    const json values = cfg.sweep.contains("values") ? cfg.sweep.at("values") : table8_defaults(name);
    if (!values.is_array() || values.empty()) throw std::invalid_argument("sweep: empty value range");

    Runtime rt = make_runtime(cfg);
    const fs::path out = cfg.resolve(cfg.out_dir);
    fs::create_directories(out);

    // adversarial corpus: FGSM (the weakest attack) on the undefended model
    AttackConfig fgsm_cfg;
    fgsm_cfg.kind = AttackKind::FGSM;
    if (!cfg.sweep.contains("attack") || cfg.sweep.at("attack").is_null()) {
    } else {
        fgsm_cfg = parse_attack(cfg.sweep.at("attack"));
    }
    const uint64_t craft_seed = Rng::mix(cfg.seed, 0x5feebULL);
    const auto provider = build_provider(rt, nullptr, {}, craft_seed);
    std::vector<int> targets;
    const auto advs = craft_adversarial(rt, fgsm_cfg, *provider, nullptr, craft_seed, &targets);

    struct SweepRow {
        std::string value;
        double a_b, a_a, a_a_std, r1;
    };
    std::vector<SweepRow> rows;
    int best_idx = 0;
    for (size_t vi = 0; vi < values.size(); ++vi) {
        const json dspec = override_param(base_defense, name, values[vi]);
        DefenseStack stack = build_defense(dspec, Rng::mix(cfg.seed, 0xd0 + vi));
        const uint64_t cell_seed = Rng::mix(cfg.seed, 0x51eebULL + vi);
        const ResultRow cell = evaluate_cell(rt, stack.describe(), &stack, attack_name(fgsm_cfg), advs,
                                             targets, fgsm_cfg.targeted, cell_seed);
        SweepRow r;
        r.value = values[vi].dump();
        r.a_b = cell.a_b;
        r.a_a = cell.a_a;
        r.a_a_std = cell.a_a_std;
        r.r1 = r1_score(cell.a_b, cell.a_a);
        rows.push_back(r);
        if (r.r1 > rows[best_idx].r1) best_idx = static_cast<int>(vi);
    }

    std::ofstream f(out / "sweep.csv", std::ios::trunc);
    f << "defense,value,a_b,a_a,a_a_std,r1,optimal\n";
    for (size_t i = 0; i < rows.size(); ++i)
        f << name << "," << rows[i].value << "," << fmt(rows[i].a_b) << "," << fmt(rows[i].a_a) << ","
          << fmt(rows[i].a_a_std) << "," << fmt(rows[i].r1) << ","
          << (static_cast<int>(i) == best_idx ? 1 : 0) << "\n";
    std::cout << "sweep: optimal " << name << " value " << rows[best_idx].value << " (r1 "
              << fmt(rows[best_idx].r1) << ") -> " << (out / "sweep.csv") << "\n";
    return 0;
}

int cmd_gap(const ParsedConfig& cfg) {
    if (cfg.gap.is_null()) throw std::invalid_argument("gap: config needs a gap section");
    require_keys(cfg.gap, "gap", {"transforms"});
    const json& list = cfg.gap.at("transforms");
    if (!list.is_array() || list.empty()) throw std::invalid_argument("gap: empty transform list");

    Runtime rt = make_runtime(cfg);
    std::vector<Waveform> corpus;
    for (const auto& ex : rt.test_set) corpus.push_back(ex.voice);

    struct GapRow {
        std::string name;
        double gap;
    };
    std::vector<GapRow> rows;
    for (size_t i = 0; i < list.size(); ++i) {
        const auto map = build_wave_map(list[i], Rng::mix(cfg.seed, 0x6a9ULL + i));
        Rng rng(Rng::mix(cfg.seed, 0x96a9ULL + i));
        rows.push_back({map->name(), identity_gap(*map, corpus, &rng)});
    }
    std::sort(rows.begin(), rows.end(), [](const GapRow& a, const GapRow& b) { return a.gap < b.gap; });

    const fs::path out = cfg.resolve(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream f(out / "gap.csv", std::ios::trunc);
    f << "transform,avg_l2\n";
    for (const auto& r : rows) f << r.name << "," << fmt(r.gap) << "\n";
    std::cout << "gap: " << rows.size() << " transforms -> " << (out / "gap.csv") << "\n";
    return 0;
}

}  // namespace

std::vector<std::string> command_names() {
    return {"synth-data", "train", "attack", "defend-eval", "sweep", "gap"};
}

int run(const std::string& command, const Options& opts) {
    ParsedConfig cfg = parse_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;

    if (command == "synth-data") return cmd_synth_data(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "attack") return cmd_attack(cfg);
    if (command == "defend-eval") return cmd_defend_eval(cfg);
    if (command == "sweep") return cmd_sweep(cfg);
    if (command == "gap") return cmd_gap(cfg);
    throw std::invalid_argument("unknown command: " + command);
}

}  // namespace advsr::harness
