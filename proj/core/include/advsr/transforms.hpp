#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advsr/audio.hpp"
#include "advsr/map.hpp"
#include "advsr/rng.hpp"

namespace advsr {

// Defaults are the sweep optima of the parameter-tuning study.
namespace defaults {
inline constexpr int kQtFactor = 512;
inline constexpr double kAtSnrDb = 16.0;
inline constexpr int kAsKernel = 17;
inline constexpr int kMsKernel = 7;
inline constexpr double kDsRatio = 0.45;
inline constexpr double kLpfPassHz = 4000.0;
inline constexpr double kLpfStopHz = 4500.0;
inline constexpr double kBpfStopLowHz = 150.0;
inline constexpr double kBpfPassLowHz = 300.0;
inline constexpr double kBpfPassHighHz = 4000.0;
inline constexpr double kBpfStopHighHz = 6000.0;
inline constexpr double kFcOriginKmeansRatio = 0.2;
inline constexpr double kFcOriginWarpedRatio = 0.35;
inline constexpr double kFcDeepStageRatio = 0.1;  // delta / cmvn / final placements
}  // namespace defaults

class IdentityMap final : public WaveMap {
public:
    std::string name() const override { return "identity"; }
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext*, const std::vector<double>& g) const override { return g; }
};

// QT: snap each sample to the nearest multiple of q on the 16-bit grid.
class QuantizeMap final : public WaveMap {
public:
    explicit QuantizeMap(int q);
    std::string name() const override;
    bool differentiable() const override { return false; }
    std::vector<double> apply(const std::vector<double>& x, int, Rng*,
                              std::unique_ptr<MapContext>*) const override;
    int q() const { return q_; }

private:
    int q_;
};

// AT: add zero-mean uniform noise scaled to a target SNR.
class TurbulenceMap final : public WaveMap {
public:
    explicit TurbulenceMap(double snr_db, uint64_t seed = 0);
    std::string name() const override;
    bool differentiable() const override { return true; }
    bool randomized() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int, Rng* rng,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    double snr_db_;
    uint64_t seed_;
};

// AS: sliding mean, replicate-padded.
class MeanSmoothMap final : public WaveMap {
public:
    explicit MeanSmoothMap(int k);
    std::string name() const override;
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    int k_;
};

// MS: sliding median, replicate-padded; gradient routes to the median source.
class MedianSmoothMap final : public WaveMap {
public:
    explicit MedianSmoothMap(int k);
    std::string name() const override;
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    int k_;
};

// DS: anti-alias filter, linear-interpolation decimate to tau * rate, then
// interpolate back to the original length. tau = 1 is the identity.
class DownsampleMap final : public WaveMap {
public:
    explicit DownsampleMap(double tau);
    std::string name() const override;
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int sample_rate, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    double tau_;
};

// Linear-phase windowed-sinc low-pass, group delay compensated.
class LowPassMap final : public WaveMap {
public:
    LowPassMap(double f_pass, double f_stop);
    std::string name() const override;
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int sample_rate, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    double f_pass_, f_stop_;
};

class BandPassMap final : public WaveMap {
public:
    BandPassMap(double f_stop_low, double f_pass_low, double f_pass_high, double f_stop_high);
    std::string name() const override;
    bool differentiable() const override { return true; }
    std::vector<double> apply(const std::vector<double>& x, int sample_rate, Rng*,
                              std::unique_ptr<MapContext>* ctx) const override;
    std::vector<double> vjp(const MapContext* ctx, const std::vector<double>& g) const override;

private:
    double f_sl_, f_pl_, f_pu_, f_su_;
};

// Round-trips the waveform through an external encoder/decoder command.
// The template must contain {in} and {out} placeholders.
class ExternalCodecMap final : public WaveMap {
public:
    explicit ExternalCodecMap(std::string command_template);
    std::string name() const override { return "codec"; }
    bool differentiable() const override { return false; }
    std::vector<double> apply(const std::vector<double>& x, int sample_rate, Rng*,
                              std::unique_ptr<MapContext>*) const override;

private:
    std::string command_;
};

enum class ClusterMethod { KMeans, WarpedKMeans };

ClusterMethod cluster_method_from_name(const std::string& name);

// FeatCompress: rows of the feature matrix are grouped into K = round(cl_r*N)
// clusters and replaced by their cluster means. Gradients flow through the
// means with assignments held fixed.
class FeatCompressMap final : public FeatureMap {
public:
    FeatCompressMap(ClusterMethod method, double cl_r, uint64_t seed = 0);
    std::string name() const override;
    bool differentiable() const override { return true; }
    bool randomized() const override { return true; }
    Matrix apply(const Matrix& x, Rng* rng, std::unique_ptr<MapContext>* ctx) const override;
    Matrix vjp(const MapContext* ctx, const Matrix& g) const override;
    double cl_r() const { return cl_r_; }
    ClusterMethod method() const { return method_; }

private:
    ClusterMethod method_;
    double cl_r_;
    uint64_t seed_;
};

class IdentityFeatureMap final : public FeatureMap {
public:
    std::string name() const override { return "identity"; }
    bool differentiable() const override { return true; }
    Matrix apply(const Matrix& x, Rng*, std::unique_ptr<MapContext>*) const override { return x; }
    Matrix vjp(const MapContext*, const Matrix& g) const override { return g; }
};

// Average L2 distance between voices and their transformed versions.
double identity_gap(const WaveMap& t, const std::vector<Waveform>& corpus, Rng* rng = nullptr);

// Windowed-sinc design helpers (Hamming window, odd length from the
// normalized transition width).
std::vector<double> design_lowpass_fir(double f_pass, double f_stop, int sample_rate);
std::vector<double> convolve_same_replicate(const std::vector<double>& x, const std::vector<double>& h);
std::vector<double> convolve_same_replicate_vjp(const std::vector<double>& g, const std::vector<double>& h,
                                                size_t n);

}  // namespace advsr
