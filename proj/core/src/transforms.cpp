#include "advsr/transforms.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "advsr/clustering.hpp"

namespace advsr {

namespace {

double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

std::string fmt_name(const char* base, double v) {
    char buf[64];
    if (v == std::floor(v))
        std::snprintf(buf, sizeof(buf), "%s(%lld)", base, static_cast<long long>(v));
    else
        std::snprintf(buf, sizeof(buf), "%s(%g)", base, v);
    return buf;
}

struct ClipMaskContext final : MapContext {
    std::vector<bool> clipped;
};

struct MedianContext final : MapContext {
    std::vector<int> source;  // original index feeding each output sample
    size_t n = 0;
};

struct SizeContext final : MapContext {
    size_t n = 0;
};

struct FirContext final : MapContext {
    size_t n = 0;
    std::vector<double> fir;
    std::vector<bool> clipped;
};

struct DownsampleContext final : MapContext {
    size_t n = 0;
    int n_down = 0;
    std::vector<double> fir;  // empty when tau == 1
    std::vector<bool> clipped;
};

// y[i] = x at fractional position i * (n_from - 1) / (n_to - 1).
std::vector<double> resample_linear(const std::vector<double>& x, int n_to) {
    const int n_from = static_cast<int>(x.size());
    std::vector<double> y(n_to);
    if (n_to == 1) {
        y[0] = x[0];
        return y;
    }
    const double step = static_cast<double>(n_from - 1) / (n_to - 1);
    for (int i = 0; i < n_to; ++i) {
        const double p = i * step;
        const int lo = std::min(static_cast<int>(p), n_from - 2);
        const double frac = p - lo;
        y[i] = x[lo] * (1.0 - frac) + x[lo + 1] * frac;
    }
    return y;
}

std::vector<double> resample_linear_vjp(const std::vector<double>& g, int n_from) {
    const int n_to = static_cast<int>(g.size());
    std::vector<double> gx(n_from, 0.0);
    if (n_to == 1) {
        gx[0] = g[0];
        return gx;
    }
    const double step = static_cast<double>(n_from - 1) / (n_to - 1);
    for (int i = 0; i < n_to; ++i) {
        const double p = i * step;
        const int lo = std::min(static_cast<int>(p), n_from - 2);
        const double frac = p - lo;
        gx[lo] += g[i] * (1.0 - frac);
        gx[lo + 1] += g[i] * frac;
    }
    return gx;
}

}  // namespace

std::vector<double> design_lowpass_fir(double f_pass, double f_stop, int sample_rate) {
    if (!(f_pass > 0) || !(f_stop > f_pass) || f_stop >= sample_rate / 2.0)
        throw std::invalid_argument("fir design: need 0 < f_pass < f_stop < Nyquist");
    const double trans = (f_stop - f_pass) / sample_rate;
    int len = static_cast<int>(std::ceil(3.3 / trans));
    if (len % 2 == 0) ++len;
    const double fc = 0.5 * (f_pass + f_stop) / sample_rate;  // cutoff, cycles/sample
    const int mid = len / 2;
    std::vector<double> h(len);
    for (int i = 0; i < len; ++i) {
        const int m = i - mid;
        const double sinc = m == 0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * m) / (M_PI * m);
        const double win = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (len - 1));
        h[i] = sinc * win;
    }
    const double sum = std::accumulate(h.begin(), h.end(), 0.0);
    for (double& v : h) v /= sum;  // unit DC gain
    return h;
}

std::vector<double> convolve_same_replicate(const std::vector<double>& x, const std::vector<double>& h) {
    const int n = static_cast<int>(x.size());
    const int len = static_cast<int>(h.size());
    const int mid = len / 2;
    std::vector<double> y(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < len; ++j) {
            const int src = std::clamp(i + j - mid, 0, n - 1);
            acc += h[j] * x[src];
        }
        y[i] = acc;
    }
    return y;
}

std::vector<double> convolve_same_replicate_vjp(const std::vector<double>& g, const std::vector<double>& h,
                                                size_t n) {
    const int len = static_cast<int>(h.size());
    const int mid = len / 2;
    std::vector<double> gx(n, 0.0);
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int j = 0; j < len; ++j) {
            const int src = std::clamp(i + j - mid, 0, static_cast<int>(n) - 1);
            gx[src] += h[j] * g[i];
        }
    return gx;
}

// ---- identity ----

std::vector<double> IdentityMap::apply(const std::vector<double>& x, int, Rng*,
                                       std::unique_ptr<MapContext>* ctx) const {
    if (ctx) *ctx = nullptr;
    return x;
}

// ---- QT ----

QuantizeMap::QuantizeMap(int q) : q_(q) {
    if (q <= 0) throw std::invalid_argument("qt: q must be positive");
}

std::string QuantizeMap::name() const { return fmt_name("qt", q_); }

std::vector<double> QuantizeMap::apply(const std::vector<double>& x, int, Rng*,
                                       std::unique_ptr<MapContext>*) const {
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double a = std::llround(x[i] * 32768.0);
        const double snapped = q_ * std::llround(a / q_);
        y[i] = clamp1(snapped / 32768.0);
    }
    return y;
}

// ---- AT ----

TurbulenceMap::TurbulenceMap(double snr_db, uint64_t seed) : snr_db_(snr_db), seed_(seed) {}

std::string TurbulenceMap::name() const { return fmt_name("at", snr_db_); }

std::vector<double> TurbulenceMap::apply(const std::vector<double>& x, int, Rng* rng,
                                         std::unique_ptr<MapContext>* ctx) const {
    double p_signal = 0.0;
    for (double s : x) p_signal += s * s;
    p_signal /= static_cast<double>(x.size());
    if (p_signal <= 0.0) throw std::invalid_argument("at: all-zero input, snr scaling undefined");

    const double p_noise = p_signal / std::pow(10.0, snr_db_ / 10.0);
    const double amp = std::sqrt(3.0 * p_noise);  // uniform[-a,a] has power a^2/3

    Rng local(seed_);
    Rng& r = rng ? *rng : local;
    auto mask = std::make_unique<ClipMaskContext>();
    mask->clipped.resize(x.size());
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = x[i] + r.uniform(-amp, amp);
        mask->clipped[i] = v < -1.0 || v > 1.0;
        y[i] = clamp1(v);
    }
    if (ctx) *ctx = std::move(mask);
    return y;
}

std::vector<double> TurbulenceMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* mask = dynamic_cast<const ClipMaskContext*>(ctx);
    if (!mask) throw std::invalid_argument("at: missing forward context");
    std::vector<double> gx(g.size());
    for (size_t i = 0; i < g.size(); ++i) gx[i] = mask->clipped[i] ? 0.0 : g[i];
    return gx;
}

// ---- AS ----

MeanSmoothMap::MeanSmoothMap(int k) : k_(k) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("as: kernel size must be odd and >= 1");
}

std::string MeanSmoothMap::name() const { return fmt_name("as", k_); }

std::vector<double> MeanSmoothMap::apply(const std::vector<double>& x, int, Rng*,
                                         std::unique_ptr<MapContext>* ctx) const {
    if (ctx) {
        auto c = std::make_unique<SizeContext>();
        c->n = x.size();
        *ctx = std::move(c);
    }
    const std::vector<double> h(k_, 1.0 / k_);
    return convolve_same_replicate(x, h);
}

std::vector<double> MeanSmoothMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* c = dynamic_cast<const SizeContext*>(ctx);
    if (!c) throw std::invalid_argument("as: missing forward context");
    const std::vector<double> h(k_, 1.0 / k_);
    return convolve_same_replicate_vjp(g, h, c->n);
}

// ---- MS ----

MedianSmoothMap::MedianSmoothMap(int k) : k_(k) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("ms: kernel size must be odd and >= 1");
}

std::string MedianSmoothMap::name() const { return fmt_name("ms", k_); }

std::vector<double> MedianSmoothMap::apply(const std::vector<double>& x, int, Rng*,
                                           std::unique_ptr<MapContext>* ctx) const {
    const int n = static_cast<int>(x.size());
    const int mid = k_ / 2;
    std::vector<double> y(n);
    auto mctx = std::make_unique<MedianContext>();
    mctx->source.resize(n);
    mctx->n = x.size();

    std::vector<std::pair<double, int>> window(k_);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k_; ++j) {
            const int src = std::clamp(i + j - mid, 0, n - 1);
            window[j] = {x[src], src};
        }
        std::nth_element(window.begin(), window.begin() + mid, window.end());
        y[i] = window[mid].first;
        mctx->source[i] = window[mid].second;
    }
    if (ctx) *ctx = std::move(mctx);
    return y;
}

std::vector<double> MedianSmoothMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* c = dynamic_cast<const MedianContext*>(ctx);
    if (!c) throw std::invalid_argument("ms: missing forward context");
    std::vector<double> gx(c->n, 0.0);
    for (size_t i = 0; i < g.size(); ++i) gx[c->source[i]] += g[i];
    return gx;
}

// ---- DS ----

DownsampleMap::DownsampleMap(double tau) : tau_(tau) {
    if (!(tau > 0.0) || tau > 1.0) throw std::invalid_argument("ds: tau must be in (0, 1]");
}

std::string DownsampleMap::name() const { return fmt_name("ds", tau_); }

std::vector<double> DownsampleMap::apply(const std::vector<double>& x, int sample_rate, Rng*,
                                         std::unique_ptr<MapContext>* ctx) const {
    auto c = std::make_unique<DownsampleContext>();
    c->n = x.size();
    if (tau_ == 1.0) {
        if (ctx) *ctx = std::move(c);
        return x;
    }
    const double new_nyq = tau_ * sample_rate / 2.0;
    c->fir = design_lowpass_fir(0.85 * new_nyq, new_nyq, sample_rate);
    c->n_down = std::max(2, static_cast<int>(std::llround(tau_ * static_cast<double>(x.size()))));

    std::vector<double> y = convolve_same_replicate(x, c->fir);
    y = resample_linear(y, c->n_down);
    y = resample_linear(y, static_cast<int>(x.size()));
    c->clipped.resize(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        c->clipped[i] = y[i] < -1.0 || y[i] > 1.0;
        y[i] = clamp1(y[i]);
    }
    if (ctx) *ctx = std::move(c);
    return y;
}

std::vector<double> DownsampleMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* c = dynamic_cast<const DownsampleContext*>(ctx);
    if (!c) throw std::invalid_argument("ds: missing forward context");
    if (tau_ == 1.0) return g;
    std::vector<double> gm(g.size());
    for (size_t i = 0; i < g.size(); ++i) gm[i] = c->clipped[i] ? 0.0 : g[i];
    std::vector<double> gx = resample_linear_vjp(gm, c->n_down);
    gx = resample_linear_vjp(gx, static_cast<int>(c->n));
    return convolve_same_replicate_vjp(gx, c->fir, c->n);
}

// ---- LPF ----

LowPassMap::LowPassMap(double f_pass, double f_stop) : f_pass_(f_pass), f_stop_(f_stop) {
    if (!(f_pass > 0) || !(f_stop > f_pass)) throw std::invalid_argument("lpf: need 0 < f_pass < f_stop");
}

std::string LowPassMap::name() const { return fmt_name("lpf", f_stop_); }

std::vector<double> LowPassMap::apply(const std::vector<double>& x, int sample_rate, Rng*,
                                      std::unique_ptr<MapContext>* ctx) const {
    if (f_stop_ >= sample_rate / 2.0) throw std::invalid_argument("lpf: f_stop must be below Nyquist");
    auto c = std::make_unique<FirContext>();
    c->n = x.size();
    c->fir = design_lowpass_fir(f_pass_, f_stop_, sample_rate);
    auto y = convolve_same_replicate(x, c->fir);
    c->clipped.resize(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        c->clipped[i] = y[i] < -1.0 || y[i] > 1.0;
        y[i] = clamp1(y[i]);
    }
    if (ctx) *ctx = std::move(c);
    return y;
}

std::vector<double> LowPassMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* c = dynamic_cast<const FirContext*>(ctx);
    if (!c) throw std::invalid_argument("lpf: missing forward context");
    std::vector<double> gm(g.size());
    for (size_t i = 0; i < g.size(); ++i) gm[i] = c->clipped[i] ? 0.0 : g[i];
    return convolve_same_replicate_vjp(gm, c->fir, c->n);
}

// ---- BPF ----

BandPassMap::BandPassMap(double f_stop_low, double f_pass_low, double f_pass_high, double f_stop_high)
    : f_sl_(f_stop_low), f_pl_(f_pass_low), f_pu_(f_pass_high), f_su_(f_stop_high) {
    if (!(0 < f_sl_ && f_sl_ < f_pl_ && f_pl_ < f_pu_ && f_pu_ < f_su_))
        throw std::invalid_argument("bpf: need 0 < f_sl < f_pl < f_pu < f_su");
}

std::string BandPassMap::name() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "bpf(%g-%g)", f_pl_, f_pu_);
    return buf;
}

std::vector<double> BandPassMap::apply(const std::vector<double>& x, int sample_rate, Rng*,
                                       std::unique_ptr<MapContext>* ctx) const {
    if (f_su_ >= sample_rate / 2.0) throw std::invalid_argument("bpf: f_su must be below Nyquist");
    const auto upper = design_lowpass_fir(f_pu_, f_su_, sample_rate);
    const auto lower = design_lowpass_fir(f_sl_, f_pl_, sample_rate);
    // same odd length so the difference stays linear-phase
    const size_t len = std::max(upper.size(), lower.size());
    auto centered = [len](const std::vector<double>& h) {
        std::vector<double> out(len, 0.0);
        const size_t off = (len - h.size()) / 2;
        for (size_t i = 0; i < h.size(); ++i) out[off + i] = h[i];
        return out;
    };
    const auto hu = centered(upper), hl = centered(lower);
    auto c = std::make_unique<FirContext>();
    c->n = x.size();
    c->fir.resize(len);
    for (size_t i = 0; i < len; ++i) c->fir[i] = hu[i] - hl[i];
    auto y = convolve_same_replicate(x, c->fir);
    c->clipped.resize(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        c->clipped[i] = y[i] < -1.0 || y[i] > 1.0;
        y[i] = clamp1(y[i]);
    }
    if (ctx) *ctx = std::move(c);
    return y;
}

std::vector<double> BandPassMap::vjp(const MapContext* ctx, const std::vector<double>& g) const {
    const auto* c = dynamic_cast<const FirContext*>(ctx);
    if (!c) throw std::invalid_argument("bpf: missing forward context");
    std::vector<double> gm(g.size());
    for (size_t i = 0; i < g.size(); ++i) gm[i] = c->clipped[i] ? 0.0 : g[i];
    return convolve_same_replicate_vjp(gm, c->fir, c->n);
}

// ---- external codec ----

ExternalCodecMap::ExternalCodecMap(std::string command_template) : command_(std::move(command_template)) {
    if (command_.find("{in}") == std::string::npos || command_.find("{out}") == std::string::npos)
        throw std::invalid_argument("codec: command template needs {in} and {out} placeholders");
}

std::vector<double> ExternalCodecMap::apply(const std::vector<double>& x, int sample_rate, Rng*,
                                            std::unique_ptr<MapContext>*) const {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    static std::atomic<uint64_t> counter{0};
    const uint64_t id = counter++;
    const auto in_path = dir / ("advsr_codec_in_" + std::to_string(id) + ".wav");
    const auto out_path = dir / ("advsr_codec_out_" + std::to_string(id) + ".wav");

    Waveform w;
    w.samples = x;
    w.sample_rate = sample_rate;
    write_wav(w, in_path);

    std::string cmd = command_;
    auto replace_all = [&cmd](const std::string& from, const std::string& to) {
        for (size_t p = cmd.find(from); p != std::string::npos; p = cmd.find(from, p + to.size()))
            cmd.replace(p, from.size(), to);
    };
    replace_all("{in}", in_path.string());
    replace_all("{out}", out_path.string());

    const int status = std::system(cmd.c_str());
    std::error_code ec;
    if (status != 0) {
        fs::remove(in_path, ec);
        fs::remove(out_path, ec);
        throw std::runtime_error("codec: command failed with exit status " + std::to_string(status) + ": " + cmd);
    }
    Waveform back;
    try {
        back = read_wav(out_path);
    } catch (...) {
        fs::remove(in_path, ec);
        fs::remove(out_path, ec);
        throw;
    }
    fs::remove(in_path, ec);
    fs::remove(out_path, ec);

    // re-align to the input length
    std::vector<double> y = std::move(back.samples);
    y.resize(x.size(), 0.0);
    return y;
}

// ---- FeatCompress ----

ClusterMethod cluster_method_from_name(const std::string& name) {
    if (name == "kmeans" || name == "k") return ClusterMethod::KMeans;
    if (name == "warped-kmeans" || name == "wk") return ClusterMethod::WarpedKMeans;
    throw std::invalid_argument("unknown cluster method: " + name);
}

namespace {
struct FcContext final : MapContext {
    std::vector<int> assign;
    std::vector<int> count;
    int rows = 0, cols = 0;
};
}  // namespace

FeatCompressMap::FeatCompressMap(ClusterMethod method, double cl_r, uint64_t seed)
    : method_(method), cl_r_(cl_r), seed_(seed) {
    if (!(cl_r > 0.0) || cl_r > 1.0) throw std::invalid_argument("fc: cl_r must be in (0, 1]");
}

std::string FeatCompressMap::name() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "fc-%s(%g)", method_ == ClusterMethod::KMeans ? "k" : "wk", cl_r_);
    return buf;
}

Matrix FeatCompressMap::apply(const Matrix& x, Rng* rng, std::unique_ptr<MapContext>* ctx) const {
    if (x.rows < 1) throw std::invalid_argument("fc: empty feature matrix");
    const int n = x.rows;
    const int k = std::min(n, std::max(1, static_cast<int>(std::llround(cl_r_ * n))));

    auto c = std::make_unique<FcContext>();
    c->rows = x.rows;
    c->cols = x.cols;

    if (k == n) {
        c->assign.resize(n);
        c->count.assign(n, 1);
        for (int i = 0; i < n; ++i) c->assign[i] = i;
        if (ctx) *ctx = std::move(c);
        return x;
    }

    ClusterResult res;
    if (method_ == ClusterMethod::KMeans) {
        Rng local(seed_);
        res = kmeans_cluster(x, k, rng ? *rng : local);
    } else {
        res = warped_kmeans_cluster(x, k);
    }

    c->assign = res.assign;
    c->count.assign(k, 0);
    for (int a : res.assign) c->count[a]++;

    // rows replaced by their cluster means; shape stays N x d
    Matrix means(k, x.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols; ++j) means.at(res.assign[i], j) += x.at(i, j);
    for (int cl = 0; cl < k; ++cl)
        if (c->count[cl] > 0)
            for (int j = 0; j < x.cols; ++j) means.at(cl, j) /= c->count[cl];

    Matrix y(n, x.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = means.at(res.assign[i], j);
    if (ctx) *ctx = std::move(c);
    return y;
}

Matrix FeatCompressMap::vjp(const MapContext* ctx, const Matrix& g) const {
    const auto* c = dynamic_cast<const FcContext*>(ctx);
    if (!c) throw std::invalid_argument("fc: missing forward context");
    if (g.rows != c->rows || g.cols != c->cols) throw std::invalid_argument("fc: gradient shape mismatch");
    // d y_i / d x_j = 1/|cluster| for same-cluster pairs: the vjp is the same
    // cluster-averaging projection applied to the gradient.
    const int k = static_cast<int>(c->count.size());
    Matrix sums(k, g.cols);
    for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) sums.at(c->assign[i], j) += g.at(i, j);
    Matrix gx(g.rows, g.cols);
    for (int i = 0; i < g.rows; ++i) {
        const int cl = c->assign[i];
        for (int j = 0; j < g.cols; ++j) gx.at(i, j) = sums.at(cl, j) / c->count[cl];
    }
    return gx;
}

double identity_gap(const WaveMap& t, const std::vector<Waveform>& corpus, Rng* rng) {
    if (corpus.empty()) throw std::invalid_argument("identity_gap: empty corpus");
    double total = 0.0;
    for (const auto& w : corpus) {
        const auto y = t.apply(w.samples, w.sample_rate, rng);
        double l2 = 0.0;
        for (size_t i = 0; i < w.samples.size(); ++i) {
            const double d = w.samples[i] - y[i];
            l2 += d * d;
        }
        total += std::sqrt(l2);
    }
    return total / static_cast<double>(corpus.size());
}

}  // namespace advsr
