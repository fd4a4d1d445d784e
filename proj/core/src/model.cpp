#include "advsr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "advsr/rng.hpp"
#include "net_internal.hpp"

namespace advsr {

using nlohmann::json;

Model make_model(const FeatureConfig& fcfg, const AudioNetConfig& ncfg, int n_classes, uint64_t init_seed) {
    if (n_classes < 2) throw std::invalid_argument("make_model: need at least 2 classes");
    if (ncfg.conv_channels.empty()) throw std::invalid_argument("make_model: need at least one conv block");
    if (ncfg.kernel < 1 || ncfg.kernel % 2 == 0) throw std::invalid_argument("make_model: kernel must be odd");

    Model m;
    m.feature_cfg = fcfg;
    m.net = ncfg;
    m.n_classes = n_classes;

    Rng rng(init_seed);
    auto init_matrix = [&rng](Matrix& w, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : w.d) v = rng.uniform(-bound, bound);
    };

    int in_ch = fcfg.feature_dim();
    for (int out_ch : ncfg.conv_channels) {
        ConvLayer c;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.kernel = ncfg.kernel;
        c.stride = ncfg.stride;
        c.w = Matrix(out_ch, in_ch * ncfg.kernel);
        c.b.assign(out_ch, 0.0);
        init_matrix(c.w, in_ch * ncfg.kernel);
        m.convs.push_back(std::move(c));
        in_ch = out_ch;
    }
    m.emb_w = Matrix(ncfg.embedding_dim, in_ch);
    m.emb_b.assign(ncfg.embedding_dim, 0.0);
    init_matrix(m.emb_w, in_ch);
    m.cls_w = Matrix(n_classes, ncfg.embedding_dim);
    m.cls_b.assign(n_classes, 0.0);
    init_matrix(m.cls_w, ncfg.embedding_dim);
    return m;
}

namespace detail {

int conv_out_len(int in_len, int kernel, int stride) {
    const int pad = kernel / 2;
    return (in_len + 2 * pad - kernel) / stride + 1;
}

std::vector<double> net_forward(const Model& m, const Matrix& features, NetContext* ctx) {
    // features: N frames x d; the network sees d channels over time
    const int n = features.rows, d = features.cols;
    if (d != m.convs.front().in_ch)
        throw std::invalid_argument("net_forward: feature dim does not match model input channels");

    Matrix cur(d, n);
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < d; ++j) cur.at(j, t) = features.at(t, j);
    if (ctx) {
        ctx->input_len = n;
        ctx->acts.clear();
        ctx->acts.push_back(cur);
    }

    for (const auto& conv : m.convs) {
        const int in_len = cur.cols;
        const int out_len = conv_out_len(in_len, conv.kernel, conv.stride);
        if (out_len < 1) throw std::invalid_argument("net_forward: input too short for conv stack");
        const int pad = conv.kernel / 2;
        Matrix z(conv.out_ch, out_len);
        for (int o = 0; o < conv.out_ch; ++o) {
            const double* wrow = conv.w.row(o);
            for (int t = 0; t < out_len; ++t) {
                double acc = conv.b[o];
                const int base = t * conv.stride - pad;
                for (int i = 0; i < conv.in_ch; ++i) {
                    const double* in_row = cur.row(i);
                    const double* wk = wrow + i * conv.kernel;
                    const int j0 = std::max(0, -base);
                    const int j1 = std::min(conv.kernel, in_len - base);
                    for (int j = j0; j < j1; ++j) acc += wk[j] * in_row[base + j];
                }
                z.at(o, t) = acc;
            }
        }
        Matrix a = z;
        for (auto& v : a.d) v = v > 0.0 ? v : 0.0;  // relu
        if (ctx) {
            ctx->pre_acts.push_back(z);
            ctx->acts.push_back(a);
        }
        cur = std::move(a);
    }

    // mean-pool over time
    const int ch = cur.rows, len = cur.cols;
    std::vector<double> pooled(ch, 0.0);
    for (int o = 0; o < ch; ++o) {
        const double* r = cur.row(o);
        double s = 0.0;
        for (int t = 0; t < len; ++t) s += r[t];
        pooled[o] = s / len;
    }

    std::vector<double> emb(m.net.embedding_dim, 0.0);
    for (int e = 0; e < m.net.embedding_dim; ++e) {
        double acc = m.emb_b[e];
        const double* wr = m.emb_w.row(e);
        for (int o = 0; o < ch; ++o) acc += wr[o] * pooled[o];
        emb[e] = acc;
    }

    std::vector<double> logits(m.n_classes, 0.0);
    for (int c = 0; c < m.n_classes; ++c) {
        double acc = m.cls_b[c];
        const double* wr = m.cls_w.row(c);
        for (int e = 0; e < m.net.embedding_dim; ++e) acc += wr[e] * emb[e];
        logits[c] = acc;
    }

    if (ctx) {
        ctx->pooled = pooled;
        ctx->embedding = emb;
        ctx->logits = logits;
    }
    return logits;
}

Matrix net_backward(const Model& m, const NetContext& ctx, const std::vector<double>& grad_logits,
                    ParamGrads* grads) {
    const int ch_last = static_cast<int>(ctx.pooled.size());

    std::vector<double> g_emb(m.net.embedding_dim, 0.0);
    for (int c = 0; c < m.n_classes; ++c) {
        const double g = grad_logits[c];
        const double* wr = m.cls_w.row(c);
        for (int e = 0; e < m.net.embedding_dim; ++e) g_emb[e] += g * wr[e];
        if (grads) {
            double* gw = grads->cls_w.row(c);
            for (int e = 0; e < m.net.embedding_dim; ++e) gw[e] += g * ctx.embedding[e];
            grads->cls_b[c] += g;
        }
    }

    std::vector<double> g_pooled(ch_last, 0.0);
    for (int e = 0; e < m.net.embedding_dim; ++e) {
        const double g = g_emb[e];
        const double* wr = m.emb_w.row(e);
        for (int o = 0; o < ch_last; ++o) g_pooled[o] += g * wr[o];
        if (grads) {
            double* gw = grads->emb_w.row(e);
            for (int o = 0; o < ch_last; ++o) gw[o] += g * ctx.pooled[o];
            grads->emb_b[e] += g;
        }
    }

    const Matrix& last = ctx.acts.back();
    Matrix g_cur(last.rows, last.cols);
    for (int o = 0; o < last.rows; ++o)
        for (int t = 0; t < last.cols; ++t) g_cur.at(o, t) = g_pooled[o] / last.cols;

    for (int li = static_cast<int>(m.convs.size()) - 1; li >= 0; --li) {
        const auto& conv = m.convs[li];
        const Matrix& z = ctx.pre_acts[li];
        const Matrix& input = ctx.acts[li];
        const int in_len = input.cols;
        const int out_len = z.cols;
        const int pad = conv.kernel / 2;

        // relu backward
        for (int o = 0; o < z.rows; ++o)
            for (int t = 0; t < out_len; ++t)
                if (z.at(o, t) <= 0.0) g_cur.at(o, t) = 0.0;

        Matrix g_in(conv.in_ch, in_len);
        for (int o = 0; o < conv.out_ch; ++o) {
            const double* wrow = conv.w.row(o);
            double* gw = grads ? grads->conv_w[li].row(o) : nullptr;
            for (int t = 0; t < out_len; ++t) {
                const double g = g_cur.at(o, t);
                if (g == 0.0) continue;
                const int base = t * conv.stride - pad;
                const int j0 = std::max(0, -base);
                const int j1 = std::min(conv.kernel, in_len - base);
                for (int i = 0; i < conv.in_ch; ++i) {
                    const double* in_row = input.row(i);
                    double* gin_row = g_in.row(i);
                    const double* wk = wrow + i * conv.kernel;
                    for (int j = j0; j < j1; ++j) {
                        gin_row[base + j] += g * wk[j];
                        if (gw) gw[i * conv.kernel + j] += g * in_row[base + j];
                    }
                }
                if (grads) grads->conv_b[li][o] += g;
            }
        }
        g_cur = std::move(g_in);
    }

    // back to N x d feature layout
    Matrix g_feat(ctx.input_len, g_cur.rows);
    for (int t = 0; t < ctx.input_len; ++t)
        for (int j = 0; j < g_cur.rows; ++j) g_feat.at(t, j) = g_cur.at(j, t);
    return g_feat;
}

void ParamGrads::init_like(const Model& m) {
    conv_w.clear();
    conv_b.clear();
    for (const auto& c : m.convs) {
        conv_w.emplace_back(c.w.rows, c.w.cols);
        conv_b.emplace_back(c.b.size(), 0.0);
    }
    emb_w = Matrix(m.emb_w.rows, m.emb_w.cols);
    emb_b.assign(m.emb_b.size(), 0.0);
    cls_w = Matrix(m.cls_w.rows, m.cls_w.cols);
    cls_b.assign(m.cls_b.size(), 0.0);
}

void ParamGrads::scale(double f) {
    for (auto& w : conv_w)
        for (auto& v : w.d) v *= f;
    for (auto& b : conv_b)
        for (auto& v : b) v *= f;
    for (auto& v : emb_w.d) v *= f;
    for (auto& v : emb_b) v *= f;
    for (auto& v : cls_w.d) v *= f;
    for (auto& v : cls_b) v *= f;
}

ChainContext chain_forward(const Model& m, const Waveform& w, const DefenseStack* stack, Rng* rng,
                           bool keep_for_backward) {
    ChainContext ctx;
    ctx.stack = stack;
    const std::vector<double>* cur = &w.samples;
    std::vector<double> buf;
    if (stack) {
        for (const auto& layer : stack->wave) {
            std::unique_ptr<MapContext> mctx;
            buf = layer.map->apply(*cur, w.sample_rate, rng, keep_for_backward ? &mctx : nullptr);
            if (buf.size() != cur->size())
                throw std::runtime_error("defense transform must preserve waveform length");
            ctx.wave_ctx.push_back(std::move(mctx));
            ctx.wave_out.push_back(buf);
            cur = &ctx.wave_out.back();
        }
    }
    Waveform transformed;
    transformed.samples = *cur;
    transformed.sample_rate = w.sample_rate;

    const FeatureTap* tap = stack && stack->tap ? &*stack->tap : nullptr;
    FeatureMatrix feats = pipeline_forward(transformed, m.feature_cfg, tap, rng, ctx.pipeline);
    ctx.logits = net_forward(m, feats.values, keep_for_backward ? &ctx.net : nullptr);
    if (!keep_for_backward) ctx.wave_out.clear();
    return ctx;
}

std::vector<double> chain_backward(const Model& m, const ChainContext& ctx,
                                   const std::vector<double>& grad_logits, ParamGrads* grads) {
    const Matrix g_feat = net_backward(m, ctx.net, grad_logits, grads);
    std::vector<double> g = pipeline_backward(ctx.pipeline, g_feat);
    if (ctx.stack) {
        for (int i = static_cast<int>(ctx.stack->wave.size()) - 1; i >= 0; --i) {
            const auto& layer = ctx.stack->wave[i];
            if (layer.grad == GradThrough::Identity) continue;
            g = layer.map->vjp(ctx.wave_ctx[i].get(), g);
        }
    }
    return g;
}

}  // namespace detail

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

double cross_entropy_from_logits(const std::vector<double>& logits, int label,
                                 std::vector<double>* grad_logits) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("cross_entropy: invalid label");
    const auto p = softmax(logits);
    const double loss = -std::log(std::max(p[label], 1e-300));
    if (grad_logits) {
        *grad_logits = p;
        (*grad_logits)[label] -= 1.0;
    }
    return loss;
}

double raw_margin_from_logits(const std::vector<double>& logits, int label, bool targeted) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("margin: invalid label");
    double other = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < logits.size(); ++i)
        if (static_cast<int>(i) != label) other = std::max(other, logits[i]);
    return targeted ? other - logits[label] : logits[label] - other;
}

double cw_margin_from_logits(const std::vector<double>& logits, const LossSpec& spec,
                             std::vector<double>* grad_logits) {
    const int label = spec.label;
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("cw_margin: invalid label");
    int best_other = -1;
    double other = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < logits.size(); ++i) {
        if (static_cast<int>(i) == label) continue;
        if (logits[i] > other) {
            other = logits[i];
            best_other = static_cast<int>(i);
        }
    }
    const double margin = spec.targeted ? other - logits[label] : logits[label] - other;
    const double loss = std::max(margin, -spec.kappa);
    if (grad_logits) {
        grad_logits->assign(logits.size(), 0.0);
        if (margin > -spec.kappa) {
            const double s = spec.targeted ? -1.0 : 1.0;
            (*grad_logits)[label] = s;
            (*grad_logits)[best_other] = -s;
        }
    }
    return loss;
}

namespace {

double loss_from_logits(const std::vector<double>& logits, const LossSpec& spec,
                        std::vector<double>* grad_logits) {
    switch (spec.kind) {
        case LossKind::CrossEntropy: return cross_entropy_from_logits(logits, spec.label, grad_logits);
        case LossKind::CwMargin: return cw_margin_from_logits(logits, spec, grad_logits);
    }
    throw std::logic_error("unknown loss kind");
}

}  // namespace

std::vector<double> forward_logits(const Model& m, const Waveform& w, const DefenseStack* stack, Rng* rng) {
    return detail::chain_forward(m, w, stack, rng, false).logits;
}

int predict_class(const Model& m, const Waveform& w, const DefenseStack* stack, Rng* rng) {
    const auto logits = forward_logits(m, w, stack, rng);
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<double> embed(const Model& m, const Waveform& w, const DefenseStack* stack, Rng* rng) {
    detail::ChainContext ctx = detail::chain_forward(m, w, stack, rng, true);
    return ctx.net.embedding;
}

LossGradResult loss_and_input_grad(const Model& m, const Waveform& w, const LossSpec& spec,
                                   const DefenseStack* stack, Rng* rng) {
    detail::ChainContext ctx = detail::chain_forward(m, w, stack, rng, true);
    std::vector<double> grad_logits;
    LossGradResult out;
    out.loss = loss_from_logits(ctx.logits, spec, &grad_logits);
    out.grad = detail::chain_backward(m, ctx, grad_logits, nullptr);
    return out;
}

double loss_value(const Model& m, const Waveform& w, const LossSpec& spec, const DefenseStack* stack,
                  Rng* rng) {
    const auto logits = forward_logits(m, w, stack, rng);
    return loss_from_logits(logits, spec, nullptr);
}

double decision_margin(const Model& m, const Waveform& w, int label, bool targeted,
                       const DefenseStack* stack, Rng* rng) {
    const auto logits = forward_logits(m, w, stack, rng);
    return raw_margin_from_logits(logits, label, targeted);
}

// ---- checkpoints ----

namespace {

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.d}};
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.d = j.at("data").get<std::vector<double>>();
    if (m.d.size() != static_cast<size_t>(m.rows) * m.cols)
        throw std::runtime_error("checkpoint: matrix size mismatch");
    return m;
}

json feature_cfg_to_json(const FeatureConfig& c) {
    return json{{"frame_len_ms", c.frame_len_ms},
                {"hop_ms", c.hop_ms},
                {"n_fft", c.n_fft},
                {"n_mels", c.n_mels},
                {"n_ceps", c.n_ceps},
                {"log_floor", c.log_floor},
                {"power_eta", c.power_eta},
                {"delta_orders", c.delta_orders},
                {"apply_cmvn", c.apply_cmvn},
                {"apply_vad", c.apply_vad},
                {"vad_threshold_db", c.vad_threshold_db},
                {"preemphasis", c.preemphasis},
                {"cmvn_var_floor", c.cmvn_var_floor}};
}

FeatureConfig feature_cfg_from_json(const json& j) {
    FeatureConfig c;
    c.frame_len_ms = j.at("frame_len_ms").get<double>();
    c.hop_ms = j.at("hop_ms").get<double>();
    c.n_fft = j.at("n_fft").get<int>();
    c.n_mels = j.at("n_mels").get<int>();
    c.n_ceps = j.at("n_ceps").get<int>();
    c.log_floor = j.at("log_floor").get<double>();
    c.power_eta = j.at("power_eta").get<double>();
    c.delta_orders = j.at("delta_orders").get<int>();
    c.apply_cmvn = j.at("apply_cmvn").get<bool>();
    c.apply_vad = j.at("apply_vad").get<bool>();
    c.vad_threshold_db = j.at("vad_threshold_db").get<double>();
    c.preemphasis = j.at("preemphasis").get<double>();
    c.cmvn_var_floor = j.at("cmvn_var_floor").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    json convs = json::array();
    for (const auto& c : m.convs)
        convs.push_back(json{{"w", matrix_to_json(c.w)},
                             {"b", c.b},
                             {"in_ch", c.in_ch},
                             {"out_ch", c.out_ch},
                             {"kernel", c.kernel},
                             {"stride", c.stride}});
    json doc = {{"format", "advsr-model"},
                {"version", 1},
                {"n_classes", m.n_classes},
                {"class_ids", m.class_ids},
                {"features", feature_cfg_to_json(m.feature_cfg)},
                {"net",
                 {{"conv_channels", m.net.conv_channels},
                  {"kernel", m.net.kernel},
                  {"stride", m.net.stride},
                  {"embedding_dim", m.net.embedding_dim}}},
                {"convs", convs},
                {"emb_w", matrix_to_json(m.emb_w)},
                {"emb_b", m.emb_b},
                {"cls_w", matrix_to_json(m.cls_w)},
                {"cls_b", m.cls_b}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    f << doc.dump() << "\n";
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    json doc = json::parse(f);
    if (doc.at("format").get<std::string>() != "advsr-model" || doc.at("version").get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported format/version");
    Model m;
    m.n_classes = doc.at("n_classes").get<int>();
    m.class_ids = doc.at("class_ids").get<std::vector<std::string>>();
    m.feature_cfg = feature_cfg_from_json(doc.at("features"));
    const auto& net = doc.at("net");
    m.net.conv_channels = net.at("conv_channels").get<std::vector<int>>();
    m.net.kernel = net.at("kernel").get<int>();
    m.net.stride = net.at("stride").get<int>();
    m.net.embedding_dim = net.at("embedding_dim").get<int>();
    for (const auto& cj : doc.at("convs")) {
        ConvLayer c;
        c.w = matrix_from_json(cj.at("w"));
        c.b = cj.at("b").get<std::vector<double>>();
        c.in_ch = cj.at("in_ch").get<int>();
        c.out_ch = cj.at("out_ch").get<int>();
        c.kernel = cj.at("kernel").get<int>();
        c.stride = cj.at("stride").get<int>();
        m.convs.push_back(std::move(c));
    }
    m.emb_w = matrix_from_json(doc.at("emb_w"));
    m.emb_b = doc.at("emb_b").get<std::vector<double>>();
    m.cls_w = matrix_from_json(doc.at("cls_w"));
    m.cls_b = doc.at("cls_b").get<std::vector<double>>();
    return m;
}

// ---- enrollment & decisions ----

EnrollmentDB enroll(const Model& m, const DatasetManifest& enroll_set) {
    EnrollmentDB db;
    for (const auto& [speaker, paths] : enroll_set.entries) {
        if (paths.empty()) throw std::invalid_argument("enroll: speaker '" + speaker + "' has no voices");
        std::vector<double> mean;
        for (const auto& p : paths) {
            const auto e = embed(m, read_wav(p));
            if (mean.empty()) mean.assign(e.size(), 0.0);
            for (size_t i = 0; i < e.size(); ++i) mean[i] += e[i];
        }
        for (auto& v : mean) v /= static_cast<double>(paths.size());
        db.embeddings[speaker] = std::move(mean);
    }
    return db;
}

void save_enrollment(const EnrollmentDB& db, const std::filesystem::path& path) {
    json doc = json::object();
    for (const auto& [id, e] : db.embeddings) doc[id] = e;
    if (std::isinf(db.theta))
        doc["theta"] = nullptr;
    else
        doc["theta"] = db.theta;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_enrollment: cannot open " + path.string());
    f << doc.dump(2) << "\n";
}

EnrollmentDB load_enrollment(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_enrollment: cannot open " + path.string());
    json doc = json::parse(f);
    EnrollmentDB db;
    for (const auto& [key, val] : doc.items()) {
        if (key == "theta") {
            db.theta = val.is_null() ? -HUGE_VAL : val.get<double>();
        } else {
            db.embeddings[key] = val.get<std::vector<double>>();
        }
    }
    return db;
}

double score_coss(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("score_coss: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("score_coss: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Task task_from_name(const std::string& name) {
    if (name == "csi-ne") return Task::CSI_NE;
    if (name == "csi-e") return Task::CSI_E;
    if (name == "sv") return Task::SV;
    if (name == "osi") return Task::OSI;
    throw std::invalid_argument("unknown task: " + name);
}

std::string task_name(Task t) {
    switch (t) {
        case Task::CSI_NE: return "csi-ne";
        case Task::CSI_E: return "csi-e";
        case Task::SV: return "sv";
        case Task::OSI: return "osi";
    }
    return "unknown";
}

Decision decide(Task task, const Model& m, const EnrollmentDB* db, const Waveform& w,
                const DefenseStack* stack, Rng* rng) {
    Decision d;
    if (task == Task::CSI_NE) {
        const auto logits = forward_logits(m, w, stack, rng);
        int best = 0;
        for (size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = static_cast<int>(i);
        d.accepted = true;
        d.class_index = best;
        d.speaker_id = best < static_cast<int>(m.class_ids.size()) ? m.class_ids[best] : std::to_string(best);
        for (size_t i = 0; i < logits.size(); ++i) {
            const std::string id =
                i < m.class_ids.size() ? m.class_ids[i] : std::to_string(i);
            d.scores[id] = logits[i];
        }
        return d;
    }

    if (!db) throw std::invalid_argument("decide: task requires an enrollment db");
    if (task == Task::SV && db->embeddings.size() != 1)
        throw std::invalid_argument("decide: SV expects exactly one enrolled speaker");

    const auto e = embed(m, w, stack, rng);
    std::string best_id;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& [id, ref] : db->embeddings) {
        const double s = score_coss(ref, e);
        d.scores[id] = s;
        if (s > best_score) {  // ties keep the lowest speaker id (map order)
            best_score = s;
            best_id = id;
        }
    }

    switch (task) {
        case Task::CSI_E:
            d.accepted = true;
            d.speaker_id = best_id;
            break;
        case Task::SV:
        case Task::OSI:
            if (best_score >= db->theta) {
                d.accepted = true;
                d.speaker_id = best_id;
            } else {
                d.accepted = false;
            }
            break;
        default: break;
    }
    return d;
}

double calibrate_threshold(const EnrollmentDB& db, const Model& m, const DatasetManifest& imposters,
                           double target_far) {
    if (imposters.voice_count() == 0) throw std::invalid_argument("calibrate_threshold: empty imposter set");
    if (target_far < 0.0 || target_far > 1.0)
        throw std::invalid_argument("calibrate_threshold: target_far must be in [0, 1]");

    std::vector<double> max_scores;
    for (const auto& [id, paths] : imposters.entries) {
        for (const auto& p : paths) {
            const auto e = embed(m, read_wav(p));
            double mx = -std::numeric_limits<double>::infinity();
            for (const auto& [sid, ref] : db.embeddings) mx = std::max(mx, score_coss(ref, e));
            max_scores.push_back(mx);
        }
    }
    std::sort(max_scores.begin(), max_scores.end());
    const int n = static_cast<int>(max_scores.size());
    const int allowed = static_cast<int>(std::floor(target_far * n));
    if (allowed >= n) return -HUGE_VAL;

    // smallest threshold (over scores and just-above-scores) whose imposter
    // accept count stays within the budget
    auto count_at_least = [&](double theta) {
        return static_cast<int>(max_scores.end() -
                                std::lower_bound(max_scores.begin(), max_scores.end(), theta));
    };
    double best = std::numeric_limits<double>::infinity();
    for (const double s : max_scores) {
        if (count_at_least(s) <= allowed) best = std::min(best, s);
        const double above = std::nextafter(s, std::numeric_limits<double>::infinity());
        if (count_at_least(above) <= allowed) best = std::min(best, above);
    }
    return best;
}

}  // namespace advsr
