#pragma once

#include <map>
#include <string>
#include <vector>

#include "advsr/audio.hpp"

namespace advsr {

struct Distortion {
    long long l0 = 0;  // changed samples
    double l1 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    double snr_db = 0.0;  // +inf sentinel for a zero perturbation
};

// Norms of adv - x plus SNR = 10 log10(P_x / P_delta).
Distortion distortion(const Waveform& x, const Waveform& adv);

// Proportion of results flagged successful.
double attack_success_rate(const std::vector<bool>& successes);

// Harmonic mean of benign and adversarial accuracy; (0,0) -> 0.
double r1_score(double a_b, double a_a);

struct EvalReport {
    double a_b = 0.0;
    std::map<std::string, double> a_a;   // per attack
    std::map<std::string, double> asr;   // per attack
    double r1 = 0.0;                     // from a_b and the mean of a_a

    void finalize();  // recomputes r1 from the stored fields
};

}  // namespace advsr
