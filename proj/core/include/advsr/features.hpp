#pragma once

#include <filesystem>
#include <vector>

#include "advsr/audio.hpp"
#include "advsr/map.hpp"
#include "advsr/matrix.hpp"

namespace advsr {

struct FeatureConfig {
    double frame_len_ms = 25.0;
    double hop_ms = 10.0;
    int n_fft = 512;
    int n_mels = 26;
    int n_ceps = 13;
    double log_floor = 1e-10;
    double power_eta = 1e-12;  // smoothing added to the power spectrum
    int delta_orders = 0;      // 0, 1 or 2
    bool apply_cmvn = false;
    bool apply_vad = false;
    double vad_threshold_db = 30.0;
    double preemphasis = 0.0;
    double cmvn_var_floor = 1e-8;

    int frame_samples(int sample_rate) const;
    int hop_samples(int sample_rate) const;
    int feature_dim() const { return n_ceps * (1 + delta_orders); }
    Stage last_stage() const;
    void validate(int sample_rate) const;
};

struct FeatureMatrix {
    Matrix values;
    Stage stage = Stage::Origin;
    std::vector<int> frame_times;  // start sample index per frame
};

// Hamming-windowed frames, one per row; count = floor((L - F) / H) + 1.
Matrix frame_signal(const Waveform& w, const FeatureConfig& cfg, std::vector<int>* frame_times = nullptr);

// |DFT|^2 -> triangular mel filterbank (HTK spacing) -> log with floor ->
// DCT-II keeping n_ceps coefficients.
FeatureMatrix mfcc(const Waveform& w, const FeatureConfig& cfg);

// Regression deltas, window 2, replicate-padded edges; columns appended.
FeatureMatrix add_deltas(const FeatureMatrix& f, int orders);

// Per-column zero mean / unit variance with a variance floor.
FeatureMatrix cmvn(const FeatureMatrix& f, double var_floor = 1e-8);

// Keeps frames whose log-energy is within threshold_db of the loudest frame;
// always retains at least one frame.
FeatureMatrix vad(const FeatureMatrix& f, const Waveform& w, const FeatureConfig& cfg);

// Full flow per cfg flags, with an optional stage tap applied before
// subsequent stages.
FeatureMatrix pipeline(const Waveform& w, const FeatureConfig& cfg, const FeatureTap* tap = nullptr,
                       Rng* rng = nullptr);

// Differentiable pipeline. VAD masks and tap cluster assignments are treated
// as constants in the backward pass.
struct PipelineContext;
FeatureMatrix pipeline_forward(const Waveform& w, const FeatureConfig& cfg, const FeatureTap* tap,
                               Rng* rng, PipelineContext& ctx);
std::vector<double> pipeline_backward(const PipelineContext& ctx, const Matrix& grad_out);

void write_feature_csv(const FeatureMatrix& f, const std::filesystem::path& path);

struct PipelineContext {
    // filled by pipeline_forward
    int signal_len = 0;
    int sample_rate = 0;
    int frame_len = 0;
    int hop = 0;
    FeatureConfig cfg;
    std::vector<int> frame_times;
    std::vector<double> window;
    std::vector<std::vector<double>> spec_re, spec_im;  // per frame, n_fft/2+1 bins
    Matrix mel_energy;                                  // pre-log, pre-floor
    Matrix origin;                                      // after DCT
    Matrix after_delta;
    // cmvn state
    Matrix cmvn_y;
    std::vector<double> cmvn_scale;
    std::vector<bool> cmvn_clamped;
    // vad state
    std::vector<int> vad_kept;
    int pre_vad_rows = 0;
    // tap state
    const FeatureTap* tap = nullptr;
    std::unique_ptr<MapContext> tap_ctx;
    Stage tap_stage = Stage::Origin;
};

}  // namespace advsr
