#include "advsr/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace advsr {

Distortion distortion(const Waveform& x, const Waveform& adv) {
    if (x.samples.size() != adv.samples.size())
        throw std::invalid_argument("distortion: length mismatch");
    Distortion d;
    double p_signal = 0.0, p_delta = 0.0;
    for (size_t i = 0; i < x.samples.size(); ++i) {
        const double delta = adv.samples[i] - x.samples[i];
        if (delta != 0.0) ++d.l0;
        d.l1 += std::abs(delta);
        p_delta += delta * delta;
        d.linf = std::max(d.linf, std::abs(delta));
        p_signal += x.samples[i] * x.samples[i];
    }
    d.l2 = std::sqrt(p_delta);
    d.snr_db = p_delta == 0.0 ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(p_signal / p_delta);
    return d;
}

double attack_success_rate(const std::vector<bool>& successes) {
    if (successes.empty()) throw std::invalid_argument("attack_success_rate: empty result list");
    size_t hits = 0;
    for (bool s : successes) hits += s ? 1 : 0;
    return static_cast<double>(hits) / successes.size();
}

double r1_score(double a_b, double a_a) {
    if (a_b < 0.0 || a_b > 1.0 || a_a < 0.0 || a_a > 1.0)
        throw std::invalid_argument("r1_score: accuracies must be in [0, 1]");
    if (a_b + a_a == 0.0) return 0.0;
    return 2.0 * a_b * a_a / (a_b + a_a);
}

void EvalReport::finalize() {
    double mean = 0.0;
    for (const auto& [name, acc] : a_a) mean += acc;
    if (!a_a.empty()) mean /= static_cast<double>(a_a.size());
    r1 = r1_score(a_b, mean);
}

}  // namespace advsr
