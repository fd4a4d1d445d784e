#include "advsr/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "advsr/rng.hpp"
#include "fft.hpp"

namespace advsr {

namespace {

constexpr double kEnergyTiny = 1e-20;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters on HTK-style mel-spaced points, n_mels x (n_fft/2+1).
Matrix mel_filterbank(const FeatureConfig& cfg, int sample_rate) {
    const int n_bins = cfg.n_fft / 2 + 1;
    const double nyq = sample_rate / 2.0;
    const double mel_max = hz_to_mel(nyq);
    std::vector<double> pts(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i) pts[i] = mel_to_hz(mel_max * i / (cfg.n_mels + 1));

    Matrix w(cfg.n_mels, n_bins);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / cfg.n_fft;
            if (f > lo && f < mid)
                w.at(m, k) = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w.at(m, k) = (hi - f) / (hi - mid);
        }
    }
    return w;
}

// Orthonormal DCT-II rows, n_ceps x n_mels.
Matrix dct_matrix(int n_ceps, int n_mels) {
    Matrix d(n_ceps, n_mels);
    for (int j = 0; j < n_ceps; ++j) {
        const double scale = std::sqrt((j == 0 ? 1.0 : 2.0) / n_mels);
        for (int m = 0; m < n_mels; ++m)
            d.at(j, m) = scale * std::cos(M_PI * j * (2 * m + 1) / (2.0 * n_mels));
    }
    return d;
}

std::vector<double> hamming(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n - 1));
    return w;
}

std::vector<double> preemphasize(const std::vector<double>& x, double coef) {
    std::vector<double> y(x.size());
    y[0] = x[0];
    for (size_t i = 1; i < x.size(); ++i) y[i] = x[i] - coef * x[i - 1];
    return y;
}

Matrix delta_block(const Matrix& c) {
    // delta_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum n^2), window 2,
    // replicate padding at the edges.
    constexpr int kWin = 2;
    constexpr double kDenom = 10.0;  // 2 * (1 + 4)
    Matrix d(c.rows, c.cols);
    for (int t = 0; t < c.rows; ++t) {
        for (int n = 1; n <= kWin; ++n) {
            const int hi = std::min(t + n, c.rows - 1);
            const int lo = std::max(t - n, 0);
            for (int j = 0; j < c.cols; ++j)
                d.at(t, j) += n * (c.at(hi, j) - c.at(lo, j)) / kDenom;
        }
    }
    return d;
}

// Transpose of delta_block: accumulates grad over d into grad over c.
void delta_block_vjp(const Matrix& g, Matrix& grad_c) {
    constexpr int kWin = 2;
    constexpr double kDenom = 10.0;
    for (int t = 0; t < g.rows; ++t) {
        for (int n = 1; n <= kWin; ++n) {
            const int hi = std::min(t + n, g.rows - 1);
            const int lo = std::max(t - n, 0);
            for (int j = 0; j < g.cols; ++j) {
                grad_c.at(hi, j) += n * g.at(t, j) / kDenom;
                grad_c.at(lo, j) -= n * g.at(t, j) / kDenom;
            }
        }
    }
}

std::vector<int> vad_kept_frames(const Waveform& w, const std::vector<int>& frame_times, int frame_len,
                                 double threshold_db) {
    std::vector<double> energy_db(frame_times.size());
    double max_db = -1e300;
    for (size_t t = 0; t < frame_times.size(); ++t) {
        double e = 0.0;
        for (int i = 0; i < frame_len; ++i) {
            const double s = w.samples[frame_times[t] + i];
            e += s * s;
        }
        energy_db[t] = 10.0 * std::log10(e + kEnergyTiny);
        max_db = std::max(max_db, energy_db[t]);
    }
    std::vector<int> kept;
    for (size_t t = 0; t < frame_times.size(); ++t)
        if (energy_db[t] >= max_db - threshold_db) kept.push_back(static_cast<int>(t));
    if (kept.empty()) {
        const auto it = std::max_element(energy_db.begin(), energy_db.end());
        kept.push_back(static_cast<int>(it - energy_db.begin()));
    }
    return kept;
}

Matrix apply_tap(const FeatureTap& tap, const Matrix& x, Rng* rng, PipelineContext* ctx) {
    std::unique_ptr<MapContext> mctx;
    Matrix y = tap.map->apply(x, rng, ctx ? &mctx : nullptr);
    if (y.rows != x.rows || y.cols != x.cols)
        throw std::runtime_error("feature tap must preserve matrix shape");
    if (ctx) ctx->tap_ctx = std::move(mctx);
    return y;
}

}  // namespace

int FeatureConfig::frame_samples(int sample_rate) const {
    return static_cast<int>(std::llround(frame_len_ms * sample_rate / 1000.0));
}

int FeatureConfig::hop_samples(int sample_rate) const {
    return static_cast<int>(std::llround(hop_ms * sample_rate / 1000.0));
}

Stage FeatureConfig::last_stage() const {
    if (apply_vad) return Stage::Final;
    if (apply_cmvn) return Stage::Cmvn;
    if (delta_orders > 0) return Stage::Delta;
    return Stage::Origin;
}

void FeatureConfig::validate(int sample_rate) const {
    if (hop_ms <= 0 || frame_len_ms < hop_ms)
        throw std::invalid_argument("feature config: need frame_len_ms >= hop_ms > 0");
    if (!detail::is_pow2(n_fft)) throw std::invalid_argument("feature config: n_fft must be a power of two");
    if (n_ceps < 1 || n_ceps > n_mels || n_mels > n_fft / 2 + 1)
        throw std::invalid_argument("feature config: need n_ceps <= n_mels <= n_fft/2+1");
    if (log_floor <= 0) throw std::invalid_argument("feature config: log_floor must be positive");
    if (delta_orders < 0 || delta_orders > 2)
        throw std::invalid_argument("feature config: delta_orders must be 0, 1 or 2");
    if (frame_samples(sample_rate) > n_fft)
        throw std::invalid_argument("feature config: frame longer than n_fft");
}

Matrix frame_signal(const Waveform& w, const FeatureConfig& cfg, std::vector<int>* frame_times) {
    cfg.validate(w.sample_rate);
    const int f = cfg.frame_samples(w.sample_rate);
    const int h = cfg.hop_samples(w.sample_rate);
    const int len = static_cast<int>(w.samples.size());
    if (len < f) throw std::invalid_argument("frame_signal: signal shorter than one frame");
    const int n_frames = (len - f) / h + 1;

    const auto win = hamming(f);
    const std::vector<double> sig = cfg.preemphasis > 0.0 ? preemphasize(w.samples, cfg.preemphasis) : w.samples;

    Matrix frames(n_frames, f);
    if (frame_times) frame_times->resize(n_frames);
    for (int t = 0; t < n_frames; ++t) {
        const int pos = t * h;
        if (frame_times) (*frame_times)[t] = pos;
        for (int i = 0; i < f; ++i) frames.at(t, i) = sig[pos + i] * win[i];
    }
    return frames;
}

FeatureMatrix mfcc(const Waveform& w, const FeatureConfig& cfg) {
    PipelineContext ctx;
    FeatureConfig origin_only = cfg;
    origin_only.delta_orders = 0;
    origin_only.apply_cmvn = false;
    origin_only.apply_vad = false;
    FeatureMatrix out = pipeline_forward(w, origin_only, nullptr, nullptr, ctx);
    out.stage = Stage::Origin;
    return out;
}

FeatureMatrix add_deltas(const FeatureMatrix& f, int orders) {
    if (f.stage != Stage::Origin) throw std::invalid_argument("add_deltas: expects origin-stage features");
    if (f.values.rows < 1) throw std::invalid_argument("add_deltas: empty feature matrix");
    if (orders < 0 || orders > 2) throw std::invalid_argument("add_deltas: orders must be 0, 1 or 2");

    FeatureMatrix out;
    out.stage = Stage::Delta;
    out.frame_times = f.frame_times;
    const int n = f.values.rows, d0 = f.values.cols;
    out.values = Matrix(n, d0 * (1 + orders));
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < d0; ++j) out.values.at(t, j) = f.values.at(t, j);
    Matrix prev = f.values;
    for (int o = 1; o <= orders; ++o) {
        Matrix d = delta_block(prev);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < d0; ++j) out.values.at(t, o * d0 + j) = d.at(t, j);
        prev = std::move(d);
    }
    return out;
}

FeatureMatrix cmvn(const FeatureMatrix& f, double var_floor) {
    if (f.values.rows < 2) throw std::invalid_argument("cmvn: needs at least 2 frames");
    FeatureMatrix out;
    out.stage = Stage::Cmvn;
    out.frame_times = f.frame_times;
    const int n = f.values.rows, d = f.values.cols;
    out.values = Matrix(n, d);
    for (int j = 0; j < d; ++j) {
        double mu = 0.0;
        for (int t = 0; t < n; ++t) mu += f.values.at(t, j);
        mu /= n;
        double var = 0.0;
        for (int t = 0; t < n; ++t) {
            const double c = f.values.at(t, j) - mu;
            var += c * c;
        }
        const double sd = std::sqrt(var / n);
        const double s = std::max(sd, var_floor);
        for (int t = 0; t < n; ++t) out.values.at(t, j) = (f.values.at(t, j) - mu) / s;
        if (sd <= var_floor) {
            // Degenerate column: clamp to zeros so constant features are inert.
            for (int t = 0; t < n; ++t) out.values.at(t, j) = 0.0;
        }
    }
    return out;
}

FeatureMatrix vad(const FeatureMatrix& f, const Waveform& w, const FeatureConfig& cfg) {
    const auto kept = vad_kept_frames(w, f.frame_times, cfg.frame_samples(w.sample_rate), cfg.vad_threshold_db);
    FeatureMatrix out;
    out.stage = Stage::Final;
    out.values = Matrix(static_cast<int>(kept.size()), f.values.cols);
    out.frame_times.reserve(kept.size());
    for (size_t r = 0; r < kept.size(); ++r) {
        out.frame_times.push_back(f.frame_times[kept[r]]);
        for (int j = 0; j < f.values.cols; ++j) out.values.at(static_cast<int>(r), j) = f.values.at(kept[r], j);
    }
    return out;
}

FeatureMatrix pipeline(const Waveform& w, const FeatureConfig& cfg, const FeatureTap* tap, Rng* rng) {
    PipelineContext ctx;
    return pipeline_forward(w, cfg, tap, rng, ctx);
}

FeatureMatrix pipeline_forward(const Waveform& w, const FeatureConfig& cfg, const FeatureTap* tap,
                               Rng* rng, PipelineContext& ctx) {
    cfg.validate(w.sample_rate);
    if (tap) {
        const Stage s = tap->stage;
        const bool available = s == Stage::Origin || (s == Stage::Delta && cfg.delta_orders > 0) ||
                               (s == Stage::Cmvn && cfg.apply_cmvn) || (s == Stage::Final && cfg.apply_vad);
        if (!available)
            throw std::invalid_argument("pipeline: tap stage '" + stage_name(s) + "' not produced by this config");
    }

    ctx = PipelineContext{};
    ctx.cfg = cfg;
    ctx.signal_len = static_cast<int>(w.samples.size());
    ctx.sample_rate = w.sample_rate;
    ctx.frame_len = cfg.frame_samples(w.sample_rate);
    ctx.hop = cfg.hop_samples(w.sample_rate);
    ctx.window = hamming(ctx.frame_len);
    ctx.tap = tap;
    if (tap) ctx.tap_stage = tap->stage;

    const int len = ctx.signal_len;
    if (len < ctx.frame_len) throw std::invalid_argument("pipeline: signal shorter than one frame");
    const int n_frames = (len - ctx.frame_len) / ctx.hop + 1;
    const int n_bins = cfg.n_fft / 2 + 1;

    const std::vector<double> sig =
        cfg.preemphasis > 0.0 ? preemphasize(w.samples, cfg.preemphasis) : w.samples;

    const Matrix mel_w = mel_filterbank(cfg, w.sample_rate);
    const Matrix dct = dct_matrix(cfg.n_ceps, cfg.n_mels);

    ctx.frame_times.resize(n_frames);
    ctx.spec_re.assign(n_frames, {});
    ctx.spec_im.assign(n_frames, {});
    ctx.mel_energy = Matrix(n_frames, cfg.n_mels);
    ctx.origin = Matrix(n_frames, cfg.n_ceps);

    std::vector<double> re(cfg.n_fft), im(cfg.n_fft);
    std::vector<double> logmel(cfg.n_mels);
    for (int t = 0; t < n_frames; ++t) {
        const int pos = t * ctx.hop;
        ctx.frame_times[t] = pos;
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int i = 0; i < ctx.frame_len; ++i) re[i] = sig[pos + i] * ctx.window[i];
        detail::fft_inplace(re, im, false);
        ctx.spec_re[t].assign(re.begin(), re.begin() + n_bins);
        ctx.spec_im[t].assign(im.begin(), im.begin() + n_bins);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            const double* wrow = mel_w.row(m);
            for (int k = 0; k < n_bins; ++k)
                e += wrow[k] * (re[k] * re[k] + im[k] * im[k] + cfg.power_eta);
            ctx.mel_energy.at(t, m) = e;
            logmel[m] = std::log(std::max(e, cfg.log_floor));
        }
        for (int j = 0; j < cfg.n_ceps; ++j) {
            double c = 0.0;
            const double* drow = dct.row(j);
            for (int m = 0; m < cfg.n_mels; ++m) c += drow[m] * logmel[m];
            ctx.origin.at(t, j) = c;
        }
    }

    FeatureMatrix cur;
    cur.values = ctx.origin;
    cur.stage = Stage::Origin;
    cur.frame_times = ctx.frame_times;

    if (tap && tap->stage == Stage::Origin) cur.values = apply_tap(*tap, cur.values, rng, &ctx);

    if (cfg.delta_orders > 0) {
        FeatureMatrix tmp;
        tmp.values = cur.values;
        tmp.stage = Stage::Origin;
        tmp.frame_times = cur.frame_times;
        cur = add_deltas(tmp, cfg.delta_orders);
        ctx.after_delta = cur.values;
        if (tap && tap->stage == Stage::Delta) cur.values = apply_tap(*tap, cur.values, rng, &ctx);
    }

    if (cfg.apply_cmvn) {
        FeatureMatrix normalized = cmvn(cur, cfg.cmvn_var_floor);
        // save backward state
        const int n = cur.values.rows, d = cur.values.cols;
        ctx.cmvn_y = normalized.values;
        ctx.cmvn_scale.resize(d);
        ctx.cmvn_clamped.resize(d);
        for (int j = 0; j < d; ++j) {
            double mu = 0.0;
            for (int t = 0; t < n; ++t) mu += cur.values.at(t, j);
            mu /= n;
            double var = 0.0;
            for (int t = 0; t < n; ++t) {
                const double c = cur.values.at(t, j) - mu;
                var += c * c;
            }
            const double sd = std::sqrt(var / n);
            ctx.cmvn_clamped[j] = sd <= cfg.cmvn_var_floor;
            ctx.cmvn_scale[j] = std::max(sd, cfg.cmvn_var_floor);
        }
        cur = std::move(normalized);
        if (tap && tap->stage == Stage::Cmvn) cur.values = apply_tap(*tap, cur.values, rng, &ctx);
    }

    if (cfg.apply_vad) {
        ctx.pre_vad_rows = cur.values.rows;
        ctx.vad_kept = vad_kept_frames(w, cur.frame_times, ctx.frame_len, cfg.vad_threshold_db);
        FeatureMatrix masked;
        masked.stage = Stage::Final;
        masked.values = Matrix(static_cast<int>(ctx.vad_kept.size()), cur.values.cols);
        for (size_t r = 0; r < ctx.vad_kept.size(); ++r) {
            masked.frame_times.push_back(cur.frame_times[ctx.vad_kept[r]]);
            for (int j = 0; j < cur.values.cols; ++j)
                masked.values.at(static_cast<int>(r), j) = cur.values.at(ctx.vad_kept[r], j);
        }
        cur = std::move(masked);
        if (tap && tap->stage == Stage::Final) cur.values = apply_tap(*tap, cur.values, rng, &ctx);
    }

    cur.stage = cfg.last_stage();
    return cur;
}

std::vector<double> pipeline_backward(const PipelineContext& ctx, const Matrix& grad_out) {
    const FeatureConfig& cfg = ctx.cfg;
    const int n_frames = static_cast<int>(ctx.frame_times.size());
    const int n_bins = cfg.n_fft / 2 + 1;

    Matrix g = grad_out;

    auto tap_backward = [&](Stage s) {
        if (!ctx.tap || ctx.tap_stage != s) return;
        if (ctx.tap->grad == GradThrough::Identity) return;
        g = ctx.tap->map->vjp(ctx.tap_ctx.get(), g);
    };

    if (cfg.apply_vad) {
        tap_backward(Stage::Final);
        Matrix full(ctx.pre_vad_rows, g.cols);
        for (size_t r = 0; r < ctx.vad_kept.size(); ++r)
            for (int j = 0; j < g.cols; ++j) full.at(ctx.vad_kept[r], j) = g.at(static_cast<int>(r), j);
        g = std::move(full);
    }

    if (cfg.apply_cmvn) {
        tap_backward(Stage::Cmvn);
        const int n = g.rows, d = g.cols;
        Matrix gx(n, d);
        for (int j = 0; j < d; ++j) {
            const double s = ctx.cmvn_scale[j];
            double gbar = 0.0, gy = 0.0;
            for (int t = 0; t < n; ++t) {
                gbar += g.at(t, j);
                gy += g.at(t, j) * ctx.cmvn_y.at(t, j);
            }
            gbar /= n;
            gy /= n;
            for (int t = 0; t < n; ++t) {
                if (ctx.cmvn_clamped[j])
                    gx.at(t, j) = (g.at(t, j) - gbar) / s;
                else
                    gx.at(t, j) = (g.at(t, j) - gbar - ctx.cmvn_y.at(t, j) * gy) / s;
            }
        }
        g = std::move(gx);
    }

    if (cfg.delta_orders > 0) {
        tap_backward(Stage::Delta);
        const int d0 = cfg.n_ceps;
        // Column blocks: [origin | d1 | (d2)]; d2 = delta(d1), d1 = delta(origin).
        Matrix g_orig(g.rows, d0);
        for (int t = 0; t < g.rows; ++t)
            for (int j = 0; j < d0; ++j) g_orig.at(t, j) = g.at(t, j);
        if (cfg.delta_orders >= 1) {
            Matrix g_d1(g.rows, d0);
            for (int t = 0; t < g.rows; ++t)
                for (int j = 0; j < d0; ++j) g_d1.at(t, j) = g.at(t, d0 + j);
            if (cfg.delta_orders == 2) {
                Matrix g_d2(g.rows, d0);
                for (int t = 0; t < g.rows; ++t)
                    for (int j = 0; j < d0; ++j) g_d2.at(t, j) = g.at(t, 2 * d0 + j);
                delta_block_vjp(g_d2, g_d1);
            }
            delta_block_vjp(g_d1, g_orig);
        }
        g = std::move(g_orig);
    }

    tap_backward(Stage::Origin);

    if (g.rows != n_frames || g.cols != cfg.n_ceps)
        throw std::invalid_argument("pipeline_backward: gradient shape mismatch");

    const Matrix mel = mel_filterbank(cfg, ctx.sample_rate);
    const Matrix dct = dct_matrix(cfg.n_ceps, cfg.n_mels);

    std::vector<double> grad_sig(ctx.signal_len, 0.0);
    std::vector<double> g_logmel(cfg.n_mels), g_power(n_bins);
    std::vector<double> hre(cfg.n_fft), him(cfg.n_fft);

    for (int t = 0; t < n_frames; ++t) {
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (int j = 0; j < cfg.n_ceps; ++j) acc += dct.at(j, m) * g.at(t, j);
            const double e = ctx.mel_energy.at(t, m);
            g_logmel[m] = e > cfg.log_floor ? acc / e : 0.0;
        }
        for (int k = 0; k < n_bins; ++k) {
            double acc = 0.0;
            for (int m = 0; m < cfg.n_mels; ++m) acc += mel.at(m, k) * g_logmel[m];
            g_power[k] = acc;
        }
        // dP_k/dx_n = 2 Re(X_k e^{2pi i k n / N}); assemble the Hermitian
        // product and take one inverse FFT.
        std::fill(hre.begin(), hre.end(), 0.0);
        std::fill(him.begin(), him.end(), 0.0);
        for (int k = 0; k < n_bins; ++k) {
            const double xr = ctx.spec_re[t][k], xi = ctx.spec_im[t][k];
            const double gr = g_power[k] * xr, gi = g_power[k] * xi;
            hre[k] += gr;
            him[k] += gi;
            const int kk = (cfg.n_fft - k) % cfg.n_fft;
            hre[kk] += gr;
            him[kk] -= gi;
        }
        detail::fft_inplace(hre, him, true);
        const int pos = ctx.frame_times[t];
        for (int i = 0; i < ctx.frame_len; ++i) grad_sig[pos + i] += hre[i] * ctx.window[i];
    }

    if (cfg.preemphasis > 0.0) {
        std::vector<double> gx(ctx.signal_len, 0.0);
        for (int i = 0; i < ctx.signal_len; ++i) {
            gx[i] += grad_sig[i];
            if (i + 1 < ctx.signal_len) gx[i] -= cfg.preemphasis * grad_sig[i + 1];
        }
        return gx;
    }
    return grad_sig;
}

void write_feature_csv(const FeatureMatrix& f, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_feature_csv: cannot open " + path.string());
    for (int t = 0; t < f.values.rows; ++t) {
        for (int j = 0; j < f.values.cols; ++j) {
            if (j) out << ",";
            out << f.values.at(t, j);
        }
        out << "\n";
    }
}

}  // namespace advsr
