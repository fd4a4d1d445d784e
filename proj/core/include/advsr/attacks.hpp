#pragma once

#include <functional>
#include <string>
#include <vector>

#include "advsr/adaptive.hpp"
#include "advsr/audio.hpp"
#include "advsr/metrics.hpp"

namespace advsr {

enum class AttackKind { FGSM, PGD, CWInf, CW2, FAKEBOB, Siren };

AttackKind attack_kind_from_name(const std::string& name);

struct AttackConfig {
    AttackKind kind = AttackKind::PGD;
    double epsilon = 0.002;
    double alpha = 0.0004;  // epsilon / 5
    int steps = 10;
    double kappa = 0.0;
    bool targeted = false;
    int target_label = -1;
    uint64_t seed = 0;

    // CW2
    double c_init = 1e-2;
    int binary_search_steps = 9;
    int max_iters = 900;
    double cw_lr = 5e-4;

    // FAKEBOB / NES
    int nes_samples = 50;      // samples_per_draw m
    double nes_sigma = 1e-3;
    int iter_limit = 1000;
    long long max_queries = 1LL << 40;

    // SirenAttack PSO
    int swarm = 30;
    int pso_iters = 300;
    double inertia_hi = 0.9, inertia_lo = 0.4;
    double c1 = 2.0, c2 = 2.0;

    void validate() const;
};

std::string attack_name(const AttackConfig& cfg);

struct AttackResult {
    Waveform adv;                  // pre-quantization; L-inf budget holds here
    bool success = false;          // judged on quantize_pcm16(adv)
    bool success_prequant = false;
    int iterations = 0;
    long long queries = 0;
    std::vector<double> loss_trace;
    Distortion dist{};  // quantized adv vs original
};

// Classifies a stored voice; used for success evaluation on quantized audio.
using PredictFn = std::function<int(const Waveform&)>;

AttackResult fgsm(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                  const AttackConfig& cfg);
AttackResult pgd(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                 const AttackConfig& cfg);
AttackResult cw_inf(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                    const AttackConfig& cfg);
AttackResult cw2(const GradProvider& target, const PredictFn& predict, const Waveform& x, int label,
                 const AttackConfig& cfg);
AttackResult fakebob(const GradProvider& oracle, const PredictFn& predict, const Waveform& x, int label,
                     const AttackConfig& cfg);
AttackResult siren_pso(const GradProvider& oracle, const PredictFn& predict, const Waveform& x, int label,
                       const AttackConfig& cfg);

AttackResult run_attack(const AttackConfig& cfg, const GradProvider& target, const PredictFn& predict,
                        const Waveform& x, int label);

// Generic particle swarm over a box, minimizing f.
struct PsoConfig {
    int swarm = 30;
    int iters = 300;
    double inertia_hi = 0.9, inertia_lo = 0.4;
    double c1 = 2.0, c2 = 2.0;
    uint64_t seed = 0;
    bool has_target = false;
    double target = 0.0;  // early stop once gbest <= target
};

struct PsoResult {
    std::vector<double> best;
    double best_value = 0.0;
    std::vector<double> trace;  // gbest per iteration
    long long evals = 0;
    int iterations = 0;
};

PsoResult pso_minimize(int dim, double lo, double hi,
                       const std::function<double(const std::vector<double>&)>& f, const PsoConfig& cfg);

}  // namespace advsr
