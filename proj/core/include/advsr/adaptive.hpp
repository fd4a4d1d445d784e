#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "advsr/map.hpp"
#include "advsr/model.hpp"
#include "advsr/rng.hpp"

namespace advsr {

// Loss/gradient source an attack works against. The forward pass (loss,
// margin) is always the defended model's true forward pass; wrappers only
// change how gradients are produced.
class GradProvider {
public:
    virtual ~GradProvider() = default;
    virtual LossGradResult loss_and_grad(const Waveform& w, const LossSpec& spec) const = 0;
    virtual double loss(const Waveform& w, const LossSpec& spec) const = 0;
    // Un-floored decision margin; negative once the attack goal is met.
    virtual double margin(const Waveform& w, int label, bool targeted) const = 0;
    virtual std::string describe() const = 0;
};

// Exact backprop through the (optionally defended) model. Randomized defense
// layers draw fresh noise per call from the provider's own stream.
std::unique_ptr<GradProvider> make_exact_provider(const Model& m, DefenseStack stack = {},
                                                  uint64_t seed = 0);

// BPDA: forward applies `t` exactly; the backward pass differentiates
// `surrogate` in its place (identity when null).
std::unique_ptr<GradProvider> bpda_wrap(std::shared_ptr<const GradProvider> inner,
                                        std::shared_ptr<const WaveMap> t,
                                        std::shared_ptr<const WaveMap> surrogate = nullptr);

// EOT: loss and gradient averaged over r independent draws of the inner
// provider (which re-samples its randomized transforms per call).
std::unique_ptr<GradProvider> eot_wrap(std::shared_ptr<const GradProvider> inner, int r);

// NES gradient estimate with antithetic Gaussian probes; exactly m oracle
// queries: g = 1/(m s) * sum_j [f(w + s u_j) - f(w - s u_j)] u_j.
std::vector<double> nes_grad(const std::function<double(const std::vector<double>&)>& loss_oracle,
                             const std::vector<double>& w, int m, double sigma, Rng& rng);

// Black-box provider: gradients come from nes_grad over the defended model's
// loss; every loss_and_grad call consumes exactly m queries.
std::unique_ptr<GradProvider> make_nes_provider(std::shared_ptr<const GradProvider> inner, int m,
                                                double sigma, uint64_t seed);

}  // namespace advsr
