#include "advsr/adaptive.hpp"

#include <cmath>
#include <stdexcept>

namespace advsr {

namespace {

class ExactProvider final : public GradProvider {
public:
    ExactProvider(const Model& m, DefenseStack stack, uint64_t seed)
        : model_(m), stack_(std::move(stack)), rng_(seed) {}

    LossGradResult loss_and_grad(const Waveform& w, const LossSpec& spec) const override {
        return loss_and_input_grad(model_, w, spec, stack_ptr(), &rng_);
    }

    double loss(const Waveform& w, const LossSpec& spec) const override {
        return loss_value(model_, w, spec, stack_ptr(), &rng_);
    }

    double margin(const Waveform& w, int label, bool targeted) const override {
        return decision_margin(model_, w, label, targeted, stack_ptr(), &rng_);
    }

    std::string describe() const override { return "exact(" + stack_.describe() + ")"; }

private:
    const DefenseStack* stack_ptr() const { return stack_.empty() ? nullptr : &stack_; }

    const Model& model_;
    DefenseStack stack_;
    mutable Rng rng_;
};

class BpdaProvider final : public GradProvider {
public:
    BpdaProvider(std::shared_ptr<const GradProvider> inner, std::shared_ptr<const WaveMap> t,
                 std::shared_ptr<const WaveMap> surrogate)
        : inner_(std::move(inner)), t_(std::move(t)), surrogate_(std::move(surrogate)) {
        if (surrogate_ && !surrogate_->differentiable())
            throw std::invalid_argument("bpda: surrogate must be differentiable");
    }

    LossGradResult loss_and_grad(const Waveform& w, const LossSpec& spec) const override {
        Waveform z = w;
        z.samples = t_->apply(w.samples, w.sample_rate, nullptr);
        LossGradResult res = inner_->loss_and_grad(z, spec);
        if (surrogate_) {
            std::unique_ptr<MapContext> ctx;
            const auto sz = surrogate_->apply(w.samples, w.sample_rate, nullptr, &ctx);
            if (sz.size() != w.samples.size())
                throw std::invalid_argument("bpda: surrogate changed waveform length");
            res.grad = surrogate_->vjp(ctx.get(), res.grad);
        }
        return res;
    }

    double loss(const Waveform& w, const LossSpec& spec) const override {
        Waveform z = w;
        z.samples = t_->apply(w.samples, w.sample_rate, nullptr);
        return inner_->loss(z, spec);
    }

    double margin(const Waveform& w, int label, bool targeted) const override {
        Waveform z = w;
        z.samples = t_->apply(w.samples, w.sample_rate, nullptr);
        return inner_->margin(z, label, targeted);
    }

    std::string describe() const override {
        return "bpda(" + t_->name() + (surrogate_ ? "," + surrogate_->name() : ",identity") + ")->" +
               inner_->describe();
    }

private:
    std::shared_ptr<const GradProvider> inner_;
    std::shared_ptr<const WaveMap> t_;
    std::shared_ptr<const WaveMap> surrogate_;
};

class EotProvider final : public GradProvider {
public:
    EotProvider(std::shared_ptr<const GradProvider> inner, int r) : inner_(std::move(inner)), r_(r) {
        if (r < 1) throw std::invalid_argument("eot: r must be >= 1");
    }

    LossGradResult loss_and_grad(const Waveform& w, const LossSpec& spec) const override {
        LossGradResult acc = inner_->loss_and_grad(w, spec);
        for (int i = 1; i < r_; ++i) {
            const LossGradResult draw = inner_->loss_and_grad(w, spec);
            acc.loss += draw.loss;
            for (size_t j = 0; j < acc.grad.size(); ++j) acc.grad[j] += draw.grad[j];
        }
        acc.loss /= r_;
        for (auto& g : acc.grad) g /= r_;
        return acc;
    }

    double loss(const Waveform& w, const LossSpec& spec) const override {
        double acc = 0.0;
        for (int i = 0; i < r_; ++i) acc += inner_->loss(w, spec);
        return acc / r_;
    }

    double margin(const Waveform& w, int label, bool targeted) const override {
        double acc = 0.0;
        for (int i = 0; i < r_; ++i) acc += inner_->margin(w, label, targeted);
        return acc / r_;
    }

    std::string describe() const override {
        return "eot(r=" + std::to_string(r_) + ")->" + inner_->describe();
    }

private:
    std::shared_ptr<const GradProvider> inner_;
    int r_;
};

class NesProvider final : public GradProvider {
public:
    NesProvider(std::shared_ptr<const GradProvider> inner, int m, double sigma, uint64_t seed)
        : inner_(std::move(inner)), m_(m), sigma_(sigma), rng_(seed) {
        if (m < 2 || m % 2 != 0) throw std::invalid_argument("nes: m must be even and >= 2");
        if (!(sigma > 0.0)) throw std::invalid_argument("nes: sigma must be positive");
    }

    LossGradResult loss_and_grad(const Waveform& w, const LossSpec& spec) const override {
        LossGradResult res;
        res.loss = inner_->loss(w, spec);
        Waveform probe = w;
        res.grad = nes_grad(
            [&](const std::vector<double>& x) {
                probe.samples = x;
                return inner_->loss(probe, spec);
            },
            w.samples, m_, sigma_, rng_);
        return res;
    }

    double loss(const Waveform& w, const LossSpec& spec) const override { return inner_->loss(w, spec); }

    double margin(const Waveform& w, int label, bool targeted) const override {
        return inner_->margin(w, label, targeted);
    }

    std::string describe() const override {
        return "nes(m=" + std::to_string(m_) + ")->" + inner_->describe();
    }

private:
    std::shared_ptr<const GradProvider> inner_;
    int m_;
    double sigma_;
    mutable Rng rng_;
};

}  // namespace

std::unique_ptr<GradProvider> make_exact_provider(const Model& m, DefenseStack stack, uint64_t seed) {
    return std::make_unique<ExactProvider>(m, std::move(stack), seed);
}

std::unique_ptr<GradProvider> bpda_wrap(std::shared_ptr<const GradProvider> inner,
                                        std::shared_ptr<const WaveMap> t,
                                        std::shared_ptr<const WaveMap> surrogate) {
    return std::make_unique<BpdaProvider>(std::move(inner), std::move(t), std::move(surrogate));
}

std::unique_ptr<GradProvider> eot_wrap(std::shared_ptr<const GradProvider> inner, int r) {
    return std::make_unique<EotProvider>(std::move(inner), r);
}

std::vector<double> nes_grad(const std::function<double(const std::vector<double>&)>& loss_oracle,
                             const std::vector<double>& w, int m, double sigma, Rng& rng) {
    if (m < 2 || m % 2 != 0) throw std::invalid_argument("nes_grad: m must be even and >= 2");
    if (!(sigma > 0.0)) throw std::invalid_argument("nes_grad: sigma must be positive");

    std::vector<double> grad(w.size(), 0.0), u(w.size()), probe(w.size());
    for (int j = 0; j < m / 2; ++j) {
        for (size_t i = 0; i < w.size(); ++i) u[i] = rng.normal();
        for (size_t i = 0; i < w.size(); ++i) probe[i] = w[i] + sigma * u[i];
        const double f_plus = loss_oracle(probe);
        for (size_t i = 0; i < w.size(); ++i) probe[i] = w[i] - sigma * u[i];
        const double f_minus = loss_oracle(probe);
        const double scale = f_plus - f_minus;
        for (size_t i = 0; i < w.size(); ++i) grad[i] += scale * u[i];
    }
    const double norm = 1.0 / (static_cast<double>(m) * sigma);
    for (auto& g : grad) g *= norm;
    return grad;
}

std::unique_ptr<GradProvider> make_nes_provider(std::shared_ptr<const GradProvider> inner, int m,
                                                double sigma, uint64_t seed) {
    return std::make_unique<NesProvider>(std::move(inner), m, sigma, seed);
}

}  // namespace advsr
