#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advsr/matrix.hpp"

namespace advsr {

class Rng;

// Stage of the feature-processing flow a matrix belongs to.
enum class Stage { Origin, Delta, Cmvn, Final };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Opaque forward-pass state a map may need for its backward pass.
struct MapContext {
    virtual ~MapContext() = default;
};

// A defense transformation on raw waveforms. apply() must preserve length and
// sample rate and keep samples in [-1, 1]. Differentiable maps implement
// vjp(); randomized maps draw from the supplied rng (or from their own fixed
// seed when rng is null).
class WaveMap {
public:
    virtual ~WaveMap() = default;
    virtual std::string name() const = 0;
    virtual bool differentiable() const = 0;
    virtual bool randomized() const { return false; }
    virtual std::vector<double> apply(const std::vector<double>& x, int sample_rate, Rng* rng,
                                      std::unique_ptr<MapContext>* ctx = nullptr) const = 0;
    virtual std::vector<double> vjp(const MapContext* /*ctx*/, const std::vector<double>& /*grad_out*/) const {
        throw std::runtime_error("gradient unavailable: transform '" + name() + "' is not differentiable");
    }
};

// A defense transformation on feature matrices (one frame per row).
// Shape-preserving: output is N x d like the input.
class FeatureMap {
public:
    virtual ~FeatureMap() = default;
    virtual std::string name() const = 0;
    virtual bool differentiable() const = 0;
    virtual bool randomized() const { return false; }
    virtual Matrix apply(const Matrix& x, Rng* rng, std::unique_ptr<MapContext>* ctx = nullptr) const = 0;
    virtual Matrix vjp(const MapContext* /*ctx*/, const Matrix& /*grad_out*/) const {
        throw std::runtime_error("gradient unavailable: transform '" + name() + "' is not differentiable");
    }
};

// How a layer participates in backprop. Identity substitutes the identity
// function for the layer in the backward pass (BPDA); the forward pass is
// never altered.
enum class GradThrough { Exact, Identity };

struct DefenseLayer {
    std::shared_ptr<const WaveMap> map;
    GradThrough grad = GradThrough::Exact;
};

struct FeatureTap {
    Stage stage = Stage::Origin;
    std::shared_ptr<const FeatureMap> map;
    GradThrough grad = GradThrough::Exact;
};

// Ordered waveform-level transforms plus at most one feature-stage tap,
// composed in front of a model.
struct DefenseStack {
    std::vector<DefenseLayer> wave;
    std::optional<FeatureTap> tap;

    bool empty() const { return wave.empty() && !tap.has_value(); }
    bool randomized() const {
        for (const auto& l : wave)
            if (l.map->randomized()) return true;
        return tap && tap->map->randomized();
    }
    std::string describe() const;
};

}  // namespace advsr
