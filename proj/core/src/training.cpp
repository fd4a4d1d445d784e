#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "advsr/model.hpp"
#include "advsr/rng.hpp"
#include "net_internal.hpp"

namespace advsr {

namespace {

using detail::ParamGrads;

// Adam (or plain SGD) over the flattened parameter set.
struct Optimizer {
    bool adam;
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    ParamGrads m1, m2;

    Optimizer(const Model& model, bool use_adam, double learning_rate) : adam(use_adam), lr(learning_rate) {
        m1.init_like(model);
        m2.init_like(model);
    }

    void update_tensor(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                       std::vector<double>& v) {
        if (!adam) {
            for (size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
            return;
        }
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }

    void step(Model& model, ParamGrads& g) {
        ++t;
        for (size_t li = 0; li < model.convs.size(); ++li) {
            update_tensor(model.convs[li].w.d, g.conv_w[li].d, m1.conv_w[li].d, m2.conv_w[li].d);
            update_tensor(model.convs[li].b, g.conv_b[li], m1.conv_b[li], m2.conv_b[li]);
        }
        update_tensor(model.emb_w.d, g.emb_w.d, m1.emb_w.d, m2.emb_w.d);
        update_tensor(model.emb_b, g.emb_b, m1.emb_b, m2.emb_b);
        update_tensor(model.cls_w.d, g.cls_w.d, m1.cls_w.d, m2.cls_w.d);
        update_tensor(model.cls_b, g.cls_b, m1.cls_b, m2.cls_b);
    }
};

struct Example {
    Waveform voice;
    int label;
};

std::vector<Example> load_examples(const DatasetManifest& set, const std::vector<std::string>& class_ids) {
    std::vector<Example> out;
    for (const auto& [speaker, paths] : set.entries) {
        const auto it = std::find(class_ids.begin(), class_ids.end(), speaker);
        if (it == class_ids.end())
            throw std::invalid_argument("training: speaker '" + speaker + "' not in class list");
        const int label = static_cast<int>(it - class_ids.begin());
        for (const auto& p : paths) out.push_back({read_wav(p), label});
    }
    return out;
}

Waveform crop_or_pad(const Waveform& w, int target_len, Rng& rng) {
    if (static_cast<int>(w.samples.size()) == target_len) return w;
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(target_len);
    if (static_cast<int>(w.samples.size()) > target_len) {
        const int off = rng.uniform_int(0, static_cast<int>(w.samples.size()) - target_len);
        std::copy_n(w.samples.begin() + off, target_len, out.samples.begin());
    } else {
        // tile short voices instead of padding silence
        for (int i = 0; i < target_len; ++i) out.samples[i] = w.samples[i % w.samples.size()];
    }
    return out;
}

Waveform pgd_example(const Model& m, const Waveform& clean, int label, const AdvTrainConfig& adv,
                     const DefenseStack* stack, Rng& rng) {
    const int eot_r = stack && stack->randomized() ? std::max(1, adv.eot_r) : 1;
    LossSpec spec;
    spec.kind = LossKind::CrossEntropy;
    spec.label = label;

    Waveform x = clean;
    for (auto& s : x.samples)
        s = std::clamp(s + rng.uniform(-adv.epsilon, adv.epsilon), -1.0, 1.0);
    for (int it = 0; it < adv.steps; ++it) {
        std::vector<double> g(x.samples.size(), 0.0);
        for (int r = 0; r < eot_r; ++r) {
            const auto lg = loss_and_input_grad(m, x, spec, stack, &rng);
            for (size_t i = 0; i < g.size(); ++i) g[i] += lg.grad[i];
        }
        for (size_t i = 0; i < x.samples.size(); ++i) {
            const double step = g[i] > 0.0 ? adv.alpha : (g[i] < 0.0 ? -adv.alpha : 0.0);
            double v = x.samples[i] + step;
            v = std::clamp(v, clean.samples[i] - adv.epsilon, clean.samples[i] + adv.epsilon);
            x.samples[i] = std::clamp(v, -1.0, 1.0);
        }
    }
    return x;
}

double eval_accuracy(const Model& m, const std::vector<Example>& set, const DefenseStack* stack, Rng* rng) {
    if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
    int hits = 0;
    for (const auto& ex : set)
        if (predict_class(m, ex.voice, stack, rng) == ex.label) ++hits;
    return static_cast<double>(hits) / set.size();
}

TrainResult train_impl(const Model& init, const DatasetManifest& train_set, const DatasetManifest* eval_set,
                       const TrainConfig& cfg, const AdvTrainConfig* adv, const DefenseStack* defense) {
    if (train_set.entries.size() < 2) throw std::invalid_argument("train: need at least 2 classes");
    if (train_set.voice_count() == 0) throw std::invalid_argument("train: empty manifest");

    TrainResult res;
    res.model = init;
    if (res.model.class_ids.empty()) res.model.class_ids = train_set.speaker_ids();
    if (static_cast<int>(res.model.class_ids.size()) != res.model.n_classes)
        throw std::invalid_argument("train: manifest classes do not match model output size");

    const auto examples = load_examples(train_set, res.model.class_ids);
    std::vector<Example> eval_examples;
    if (eval_set) eval_examples = load_examples(*eval_set, res.model.class_ids);

    const int crop_len = std::max(1, static_cast<int>(std::llround(cfg.crop_s * examples[0].voice.sample_rate)));
    const int n = static_cast<int>(examples.size());
    const int n_adv_per_batch =
        adv ? static_cast<int>(std::llround(adv->ratio * cfg.batch)) : 0;

    Rng rng(Rng::mix(cfg.seed, 0x7ea1aULL));
    Optimizer opt(res.model, cfg.adam, cfg.lr);

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

        double epoch_loss = 0.0;
        int epoch_hits = 0, seen = 0;
        for (int start = 0; start < n; start += cfg.batch) {
            const int bsz = std::min(cfg.batch, n - start);
            ParamGrads grads;
            grads.init_like(res.model);

            for (int bi = 0; bi < bsz; ++bi) {
                const Example& ex = examples[order[start + bi]];
                Waveform crop = crop_or_pad(ex.voice, crop_len, rng);
                const int adv_count = static_cast<int>(std::llround(
                    static_cast<double>(n_adv_per_batch) * bsz / cfg.batch));
                if (bi < adv_count) {
                    crop = pgd_example(res.model, crop, ex.label, *adv, defense, rng);
                } else if (cfg.noise_budget > 0.0) {
                    for (auto& s : crop.samples)
                        s = std::clamp(s + rng.uniform(-cfg.noise_budget, cfg.noise_budget), -1.0, 1.0);
                }

                detail::ChainContext ctx = detail::chain_forward(res.model, crop, defense, &rng, true);
                std::vector<double> grad_logits;
                const double loss = cross_entropy_from_logits(ctx.logits, ex.label, &grad_logits);
                for (auto& g : grad_logits) g /= bsz;
                detail::net_backward(res.model, ctx.net, grad_logits, &grads);

                epoch_loss += loss;
                const int pred = static_cast<int>(
                    std::max_element(ctx.logits.begin(), ctx.logits.end()) - ctx.logits.begin());
                if (pred == ex.label) ++epoch_hits;
                ++seen;
            }
            opt.step(res.model, grads);
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / seen;
        log.train_acc = static_cast<double>(epoch_hits) / seen;
        Rng eval_rng(Rng::mix(cfg.seed, 0xe7a1ULL + epoch));
        log.eval_acc = eval_accuracy(res.model, eval_examples, defense, &eval_rng);
        res.log.push_back(log);
    }
    return res;
}

}  // namespace

TrainResult train(const Model& init, const DatasetManifest& train_set, const DatasetManifest* eval_set,
                  const TrainConfig& cfg) {
    return train_impl(init, train_set, eval_set, cfg, nullptr, nullptr);
}

TrainResult adv_train(const Model& init, const DatasetManifest& train_set, const DatasetManifest* eval_set,
                      const TrainConfig& cfg, const AdvTrainConfig& adv, const DefenseStack* defense) {
    if (adv.ratio < 0.0 || adv.ratio > 1.0) throw std::invalid_argument("adv_train: ratio must be in [0, 1]");
    if (adv.ratio == 0.0 && !defense) return train_impl(init, train_set, eval_set, cfg, nullptr, nullptr);
    return train_impl(init, train_set, eval_set, cfg, &adv, defense);
}

}  // namespace advsr
