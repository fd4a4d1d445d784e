#include "advsr/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "advsr/rng.hpp"

namespace advsr {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int attack_label(const AttackConfig& cfg, int label) {
    if (!cfg.targeted) return label;
    if (cfg.target_label < 0) throw std::invalid_argument("attack: targeted mode needs target_label");
    return cfg.target_label;
}

LossSpec make_spec(const AttackConfig& cfg, LossKind kind, int label) {
    LossSpec spec;
    spec.kind = kind;
    spec.label = attack_label(cfg, label);
    spec.targeted = cfg.targeted;
    spec.kappa = cfg.kappa;
    return spec;
}

bool judge(const PredictFn& predict, const Waveform& adv, const AttackConfig& cfg, int label) {
    const int pred = predict(quantize_pcm16(adv));
    return cfg.targeted ? pred == cfg.target_label : pred != label;
}

bool judge_prequant(const PredictFn& predict, const Waveform& adv, const AttackConfig& cfg, int label) {
    const int pred = predict(adv);
    return cfg.targeted ? pred == cfg.target_label : pred != label;
}

void finish(AttackResult& res, const PredictFn& predict, const Waveform& x, const AttackConfig& cfg,
            int label) {
    res.success = judge(predict, res.adv, cfg, label);
    res.success_prequant = judge_prequant(predict, res.adv, cfg, label);
    res.dist = distortion(x, quantize_pcm16(res.adv));
}

void clip_to_budget(std::vector<double>& x, const std::vector<double>& ref, double eps) {
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = std::clamp(x[i], ref[i] - eps, ref[i] + eps);
        x[i] = std::clamp(x[i], -1.0, 1.0);
    }
}

// Shared PGD-style loop; dir = +1 ascends the loss, -1 descends.
AttackResult iterative_sign_attack(const GradProvider& target, const PredictFn& predict, const Waveform& x,
                                   int label, const AttackConfig& cfg, LossKind kind, double dir) {
    cfg.validate();
    Rng rng(Rng::mix(cfg.seed, 0x96dULL));
    const LossSpec spec = make_spec(cfg, kind, label);

    AttackResult res;
    res.adv = x;
    for (auto& s : res.adv.samples) s += rng.uniform(-cfg.epsilon, cfg.epsilon);
    clip_to_budget(res.adv.samples, x.samples, cfg.epsilon);

    for (int it = 0; it < cfg.steps; ++it) {
        const LossGradResult lg = target.loss_and_grad(res.adv, spec);
        res.loss_trace.push_back(lg.loss);
        for (size_t i = 0; i < res.adv.samples.size(); ++i)
            res.adv.samples[i] += dir * cfg.alpha * sign0(lg.grad[i]);
        clip_to_budget(res.adv.samples, x.samples, cfg.epsilon);
        ++res.iterations;
    }
    res.loss_trace.push_back(target.loss(res.adv, spec));
    finish(res, predict, x, cfg, label);
    return res;
}

}  // namespace

AttackKind attack_kind_from_name(const std::string& name) {
    if (name == "fgsm") return AttackKind::FGSM;
    if (name == "pgd") return AttackKind::PGD;
    if (name == "cw-inf" || name == "cwinf") return AttackKind::CWInf;
    if (name == "cw2") return AttackKind::CW2;
    if (name == "fakebob") return AttackKind::FAKEBOB;
    if (name == "siren") return AttackKind::Siren;
    throw std::invalid_argument("unknown attack kind: " + name);
}

void AttackConfig::validate() const {
    if (kind != AttackKind::CW2 && !(epsilon > 0.0))
        throw std::invalid_argument("attack: epsilon must be positive for bounded attacks");
    if (kind == AttackKind::PGD || kind == AttackKind::CWInf || kind == AttackKind::FAKEBOB) {
        if (!(alpha > 0.0) || alpha > epsilon)
            throw std::invalid_argument("attack: need 0 < alpha <= epsilon");
    }
    if (kappa < 0.0) throw std::invalid_argument("attack: kappa must be >= 0");
    if (kind == AttackKind::CW2 && binary_search_steps < 1)
        throw std::invalid_argument("attack: binary_search_steps must be >= 1");
}

std::string attack_name(const AttackConfig& cfg) {
    char buf[64];
    switch (cfg.kind) {
        case AttackKind::FGSM: return "fgsm";
        case AttackKind::PGD:
            std::snprintf(buf, sizeof(buf), "pgd-%d", cfg.steps);
            return buf;
        case AttackKind::CWInf:
            std::snprintf(buf, sizeof(buf), "cw-inf-%g", cfg.kappa);
            return buf;
        case AttackKind::CW2:
            std::snprintf(buf, sizeof(buf), "cw2-%g", cfg.kappa);
            return buf;
        case AttackKind::FAKEBOB:
            std::snprintf(buf, sizeof(buf), "fakebob-%d", cfg.iter_limit);
            return buf;
        case AttackKind::Siren: return "siren";
    }
    return "unknown";
}

AttackResult fgsm(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                  const AttackConfig& cfg) {
    cfg.validate();
    const LossSpec spec = make_spec(cfg, LossKind::CrossEntropy, label);
    const double dir = cfg.targeted ? -1.0 : 1.0;

    AttackResult res;
    res.adv = x;
    const LossGradResult lg = target.loss_and_grad(x, spec);
    res.loss_trace.push_back(lg.loss);
    for (size_t i = 0; i < res.adv.samples.size(); ++i) {
        res.adv.samples[i] += dir * cfg.epsilon * sign0(lg.grad[i]);
        res.adv.samples[i] = std::clamp(res.adv.samples[i], -1.0, 1.0);
    }
    res.iterations = 1;
    res.loss_trace.push_back(target.loss(res.adv, spec));
    finish(res, predict, x, cfg, label);
    return res;
}

AttackResult pgd(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                 const AttackConfig& cfg) {
    const double dir = cfg.targeted ? -1.0 : 1.0;
    return iterative_sign_attack(target, predict, x, label, cfg, LossKind::CrossEntropy, dir);
}

AttackResult cw_inf(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                    const AttackConfig& cfg) {
    // the CW margin is minimized for both targeted and untargeted goals
    return iterative_sign_attack(target, predict, x, label, cfg, LossKind::CwMargin, -1.0);
}

AttackResult cw2(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                 const AttackConfig& cfg) {
    cfg.validate();
    const LossSpec spec = make_spec(cfg, LossKind::CwMargin, label);
    const int goal_label = attack_label(cfg, label);

    AttackResult res;
    res.adv = x;

    // already confidently adversarial: zero-cost optimum
    if (target.margin(x, goal_label, cfg.targeted) <= -cfg.kappa) {
        finish(res, predict, x, cfg, label);
        res.success_prequant = true;
        return res;
    }

    const size_t n = x.samples.size();
    const double bound = 1.0 - 1e-6;
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = std::atanh(std::clamp(x.samples[i], -bound, bound));

    const int iters_per_c = std::max(1, cfg.max_iters / cfg.binary_search_steps);
    double c = cfg.c_init;
    double best_l2 = std::numeric_limits<double>::infinity();
    std::vector<double> best_adv;

    std::vector<double> xv(n), m1(n, 0.0), m2(n, 0.0);
    Waveform cand = x;

    for (int bs = 0; bs < cfg.binary_search_steps; ++bs) {
        std::fill(m1.begin(), m1.end(), 0.0);
        std::fill(m2.begin(), m2.end(), 0.0);
        bool found_this_c = false;
        long long t = 0;

        for (int it = 0; it < iters_per_c; ++it) {
            for (size_t i = 0; i < n; ++i) xv[i] = std::tanh(v[i]);
            cand.samples = xv;
            const LossGradResult lg = target.loss_and_grad(cand, spec);

            double l2sq = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const double d = xv[i] - x.samples[i];
                l2sq += d * d;
            }
            res.loss_trace.push_back(l2sq + c * lg.loss);
            ++res.iterations;

            if (lg.loss <= -cfg.kappa) {  // margin at the floor: goal met
                const double l2 = std::sqrt(l2sq);
                found_this_c = true;
                if (l2 < best_l2) {
                    best_l2 = l2;
                    best_adv = xv;
                }
            }

            // d/dv [ ||x(v)-x0||^2 + c f(x(v)) ], with dx/dv = 1 - x^2
            ++t;
            const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
            for (size_t i = 0; i < n; ++i) {
                const double gx = 2.0 * (xv[i] - x.samples[i]) + c * lg.grad[i];
                const double gv = gx * (1.0 - xv[i] * xv[i]);
                m1[i] = 0.9 * m1[i] + 0.1 * gv;
                m2[i] = 0.999 * m2[i] + 0.001 * gv * gv;
                v[i] -= cfg.cw_lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + 1e-8);
            }
        }

        c = found_this_c ? c / 2.0 : std::min(c * 10.0, 1e10);
    }

    if (!best_adv.empty()) {
        res.adv.samples = best_adv;
        res.success_prequant = true;
    } else {
        for (size_t i = 0; i < n; ++i) res.adv.samples[i] = std::tanh(v[i]);
    }
    finish(res, predict, x, cfg, label);
    return res;
}

AttackResult fakebob(const GradProvider& oracle, const PredictFn& predict, const Waveform& x, int label,
                     const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.nes_samples < 2 || cfg.nes_samples % 2 != 0)
        throw std::invalid_argument("fakebob: nes_samples must be even");
    Rng rng(Rng::mix(cfg.seed, 0xfa6eULL));
    const LossSpec spec = make_spec(cfg, LossKind::CwMargin, label);
    const int goal_label = attack_label(cfg, label);

    AttackResult res;
    res.adv = x;  // starts from the original voice, no random init

    // free pre-check: an attacker can observe the current decision once
    if (oracle.margin(x, goal_label, cfg.targeted) <= -cfg.kappa) {
        finish(res, predict, x, cfg, label);
        return res;
    }

    Waveform probe = x;
    bool reached = false;
    for (int it = 0; it < cfg.iter_limit; ++it) {
        if (res.queries + cfg.nes_samples + 1 > cfg.max_queries) break;
        const auto g = nes_grad(
            [&](const std::vector<double>& s) {
                probe.samples = s;
                return oracle.loss(probe, spec);
            },
            res.adv.samples, cfg.nes_samples, cfg.nes_sigma, rng);
        res.queries += cfg.nes_samples;
        for (size_t i = 0; i < res.adv.samples.size(); ++i)
            res.adv.samples[i] -= cfg.alpha * sign0(g[i]);
        clip_to_budget(res.adv.samples, x.samples, cfg.epsilon);
        ++res.iterations;

        const double m = oracle.margin(res.adv, goal_label, cfg.targeted);
        ++res.queries;
        res.loss_trace.push_back(m);
        if (m <= -cfg.kappa) {  // early stop
            reached = true;
            break;
        }
    }

    finish(res, predict, x, cfg, label);
    if (!reached && !res.success) res.success = false;  // budget exhausted
    return res;
}

PsoResult pso_minimize(int dim, double lo, double hi,
                       const std::function<double(const std::vector<double>&)>& f, const PsoConfig& cfg) {
    if (cfg.swarm < 1 || cfg.iters < 0) throw std::invalid_argument("pso: bad swarm/iteration counts");
    Rng rng(Rng::mix(cfg.seed, 0x9507ULL));

    std::vector<std::vector<double>> pos(cfg.swarm, std::vector<double>(dim));
    std::vector<std::vector<double>> vel(cfg.swarm, std::vector<double>(dim, 0.0));
    std::vector<std::vector<double>> pbest(cfg.swarm);
    std::vector<double> pbest_val(cfg.swarm);

    PsoResult res;
    res.best_value = std::numeric_limits<double>::infinity();
    const double vmax = (hi - lo) / 2.0;

    for (int p = 0; p < cfg.swarm; ++p) {
        for (int i = 0; i < dim; ++i) pos[p][i] = rng.uniform(lo, hi);
        pbest[p] = pos[p];
        pbest_val[p] = f(pos[p]);
        ++res.evals;
        if (pbest_val[p] < res.best_value) {
            res.best_value = pbest_val[p];
            res.best = pos[p];
        }
    }
    res.trace.push_back(res.best_value);
    if (cfg.has_target && res.best_value <= cfg.target) return res;

    for (int it = 0; it < cfg.iters; ++it) {
        const double w = cfg.iters <= 1
                             ? cfg.inertia_hi
                             : cfg.inertia_hi - (cfg.inertia_hi - cfg.inertia_lo) * it / (cfg.iters - 1);
        for (int p = 0; p < cfg.swarm; ++p) {
            for (int i = 0; i < dim; ++i) {
                const double r1 = rng.uniform(), r2 = rng.uniform();
                vel[p][i] = w * vel[p][i] + cfg.c1 * r1 * (pbest[p][i] - pos[p][i]) +
                            cfg.c2 * r2 * (res.best[i] - pos[p][i]);
                vel[p][i] = std::clamp(vel[p][i], -vmax, vmax);
                pos[p][i] = std::clamp(pos[p][i] + vel[p][i], lo, hi);
            }
            const double val = f(pos[p]);
            ++res.evals;
            if (val < pbest_val[p]) {
                pbest_val[p] = val;
                pbest[p] = pos[p];
            }
            if (val < res.best_value) {
                res.best_value = val;
                res.best = pos[p];
            }
        }
        ++res.iterations;
        res.trace.push_back(res.best_value);
        if (cfg.has_target && res.best_value <= cfg.target) break;
    }
    return res;
}

AttackResult siren_pso(const GradProvider& oracle, const PredictFn& predict, const Waveform& x, int label,
                       const AttackConfig& cfg) {
    cfg.validate();
    const int goal_label = attack_label(cfg, label);
    const int dim = static_cast<int>(x.samples.size());

    Waveform cand = x;
    auto objective = [&](const std::vector<double>& delta) {
        for (int i = 0; i < dim; ++i) cand.samples[i] = std::clamp(x.samples[i] + delta[i], -1.0, 1.0);
        return oracle.margin(cand, goal_label, cfg.targeted);
    };

    PsoConfig pso;
    pso.swarm = cfg.swarm;
    pso.iters = cfg.pso_iters;
    pso.inertia_hi = cfg.inertia_hi;
    pso.inertia_lo = cfg.inertia_lo;
    pso.c1 = cfg.c1;
    pso.c2 = cfg.c2;
    pso.seed = cfg.seed;
    pso.has_target = true;
    pso.target = -cfg.kappa;

    const PsoResult out = pso_minimize(dim, -cfg.epsilon, cfg.epsilon, objective, pso);

    AttackResult res;
    res.adv = x;
    for (int i = 0; i < dim; ++i)
        res.adv.samples[i] = std::clamp(x.samples[i] + out.best[i], -1.0, 1.0);
    res.iterations = out.iterations;
    res.queries = out.evals;
    res.loss_trace = out.trace;
    finish(res, predict, x, cfg, label);
    return res;
}

AttackResult run_attack(const AttackConfig& cfg, const GradProvider& target, const PredictFn& predict,
                        const Waveform& x, int label) {
    switch (cfg.kind) {
        case AttackKind::FGSM: return fgsm(target, predict, x, label, cfg);
        case AttackKind::PGD: return pgd(target, predict, x, label, cfg);
        case AttackKind::CWInf: return cw_inf(target, predict, x, label, cfg);
        case AttackKind::CW2: return cw2(target, predict, x, label, cfg);
        case AttackKind::FAKEBOB: return fakebob(target, predict, x, label, cfg);
        case AttackKind::Siren: return siren_pso(target, predict, x, label, cfg);
    }
    throw std::logic_error("unknown attack kind");
}

}  // namespace advsr
