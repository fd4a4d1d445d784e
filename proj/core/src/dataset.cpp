#include "advsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "advsr/rng.hpp"

namespace advsr {

using nlohmann::json;

std::string role_name(Role r) {
    switch (r) {
        case Role::Enroll: return "enroll";
        case Role::Test: return "test";
        case Role::Imposter: return "imposter";
        case Role::Train: return "train";
        case Role::TrainTest: return "train-test";
    }
    return "unknown";
}

Role role_from_name(const std::string& name) {
    if (name == "enroll") return Role::Enroll;
    if (name == "test") return Role::Test;
    if (name == "imposter") return Role::Imposter;
    if (name == "train") return Role::Train;
    if (name == "train-test") return Role::TrainTest;
    throw std::invalid_argument("unknown manifest role: " + name);
}

size_t DatasetManifest::voice_count() const {
    size_t n = 0;
    for (const auto& [id, paths] : entries) n += paths.size();
    return n;
}

std::vector<std::string> DatasetManifest::speaker_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& [id, paths] : entries) ids.push_back(id);
    return ids;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    json entries = json::object();
    for (const auto& [id, paths] : m.entries) {
        json list = json::array();
        for (const auto& p : paths) list.push_back(p.string());
        entries[id] = list;
    }
    json doc = {{"role", role_name(m.role)}, {"seed", m.seed}, {"entries", entries}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path.string());
    f << doc.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path.string());
    json doc = json::parse(f);
    DatasetManifest m;
    m.role = role_from_name(doc.at("role").get<std::string>());
    m.seed = doc.at("seed").get<uint64_t>();
    for (const auto& [id, list] : doc.at("entries").items()) {
        std::vector<std::filesystem::path> paths;
        for (const auto& p : list) paths.emplace_back(p.get<std::string>());
        m.entries[id] = std::move(paths);
    }
    return m;
}

namespace {

struct SpeakerProfile {
    double f0;             // fundamental, Hz
    double formants[3];    // center frequencies, Hz
    double bandwidths[3];  // resonance widths, Hz
    double tilt;           // spectral slope of the glottal source
    double breathiness;    // noise floor relative to harmonics
};

// Profiles are laid out on shuffled grids so that no two speakers collide in
// pitch or formant space, then jittered for organic variety.
SpeakerProfile speaker_profile(const SyntheticSpeakerSpec& spec, int speaker_idx) {
    const int total = spec.n_speakers * 2;  // mains plus imposters
    Rng grid_rng(Rng::mix(spec.seed, 0x5eedf00dULL));
    std::vector<int> slots(total);
    for (int i = 0; i < total; ++i) slots[i] = i;
    for (int i = total - 1; i > 0; --i) std::swap(slots[i], slots[grid_rng.uniform_int(0, i)]);

    Rng rng(Rng::mix(Rng::mix(spec.seed, 0xa11ce), static_cast<uint64_t>(speaker_idx)));
    const int slot = slots[speaker_idx];
    SpeakerProfile p;
    p.f0 = 95.0 + (165.0 * slot) / total + rng.uniform(-3.0, 3.0);
    p.formants[0] = 320.0 + (520.0 * ((slot * 7) % total)) / total + rng.uniform(-15.0, 15.0);
    p.formants[1] = 950.0 + (1400.0 * ((slot * 3) % total)) / total + rng.uniform(-30.0, 30.0);
    p.formants[2] = 2500.0 + (900.0 * ((slot * 5) % total)) / total + rng.uniform(-40.0, 40.0);
    p.bandwidths[0] = rng.uniform(60.0, 90.0);
    p.bandwidths[1] = rng.uniform(80.0, 120.0);
    p.bandwidths[2] = rng.uniform(120.0, 180.0);
    p.tilt = rng.uniform(0.7, 1.1);
    p.breathiness = rng.uniform(0.004, 0.012);
    return p;
}

double resonance_gain(double f, const SpeakerProfile& p) {
    double g = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double df = (f - p.formants[i]) / p.bandwidths[i];
        g += 1.0 / (1.0 + df * df);
    }
    return g;
}

}  // namespace

Waveform synth_voice(const SyntheticSpeakerSpec& spec, int speaker_idx, int voice_idx) {
    const SpeakerProfile prof = speaker_profile(spec, speaker_idx);
    Rng rng(Rng::mix(Rng::mix(spec.seed, 0xb0ceULL + speaker_idx), static_cast<uint64_t>(voice_idx)));

    const int n = std::max(1, static_cast<int>(std::llround(spec.duration_s * spec.sample_rate)));
    const double sr = spec.sample_rate;
    const double nyq = sr / 2.0;

    const double vib_rate = rng.uniform(4.0, 7.0);
    const double vib_depth = rng.uniform(0.005, 0.02);
    const double drift = rng.uniform(-0.04, 0.04);
    const double f0_base = prof.f0 * (1.0 + rng.uniform(-0.05, 0.05));
    const double vib_phase = rng.uniform(0.0, 2.0 * M_PI);

    // per-voice articulation: formants shift as if a different utterance
    double formant_shift[3];
    for (double& s : formant_shift) s = rng.uniform(0.90, 1.10);
    const double glide_rate = rng.uniform(0.8, 2.5);
    const double glide_depth = rng.uniform(0.0, 0.06);
    const double glide_phase = rng.uniform(0.0, 2.0 * M_PI);

    const double max_harm_f = std::min(4000.0, nyq * 0.9);
    const int n_harm = std::max(1, static_cast<int>(max_harm_f / f0_base));
    std::vector<double> amp_a(n_harm), amp_b(n_harm), phase(n_harm);
    SpeakerProfile start = prof, end = prof;
    for (int i = 0; i < 3; ++i) {
        start.formants[i] = prof.formants[i] * formant_shift[i];
        end.formants[i] = prof.formants[i] * formant_shift[i] * (1.0 + glide_depth * std::sin(glide_phase + i));
    }
    for (int h = 0; h < n_harm; ++h) {
        const double f = f0_base * (h + 1);
        amp_a[h] = resonance_gain(f, start) / std::pow(h + 1.0, prof.tilt);
        amp_b[h] = resonance_gain(f, end) / std::pow(h + 1.0, prof.tilt);
        phase[h] = rng.uniform(0.0, 2.0 * M_PI);
    }
    (void)glide_rate;

    // Slow amplitude envelope: raised-cosine edges plus a gentle random arc.
    const double env_mod = rng.uniform(0.1, 0.3);
    const double env_rate = rng.uniform(1.0, 3.0);
    const double env_phase = rng.uniform(0.0, 2.0 * M_PI);

    Waveform w;
    w.sample_rate = spec.sample_rate;
    w.samples.resize(n);

    double inst_phase = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = i / sr;
        const double u = static_cast<double>(i) / std::max(1, n - 1);
        const double f0 = f0_base * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t + vib_phase) +
                                     drift * t / std::max(spec.duration_s, 1e-6));
        inst_phase += 2.0 * M_PI * f0 / sr;
        double s = 0.0;
        for (int h = 0; h < n_harm; ++h) {
            const double a = amp_a[h] + (amp_b[h] - amp_a[h]) * u;
            s += a * std::sin((h + 1) * inst_phase + phase[h]);
        }
        s += prof.breathiness * rng.normal();
        double env = 1.0 + env_mod * std::sin(2.0 * M_PI * env_rate * t + env_phase);
        const double edge = std::min(1.0, std::min(i, n - 1 - i) / (0.02 * sr));
        w.samples[i] = s * env * edge;
    }

    double peak = 1e-12;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    const double gain = 0.35 / peak;
    for (double& s : w.samples) s *= gain;
    return quantize_pcm16(w);
}

CorpusManifests synth_corpus(const SyntheticSpeakerSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.n_speakers < 2)
        throw std::invalid_argument("synth_corpus: need at least 2 speakers for classification");
    if (spec.voices_per_speaker < 1 || spec.duration_s <= 0.0 || spec.sample_rate <= 0)
        throw std::invalid_argument("synth_corpus: invalid spec");

    const int v = spec.voices_per_speaker;
    const int n_train = v;
    const int n_train_test = std::max(1, v / 5);
    const int n_enroll = std::max(1, v / 4);
    const int n_test = std::max(2, v / 2);

    std::filesystem::create_directories(out_dir / "wav");

    CorpusManifests out;
    out.train.role = Role::Train;
    out.train_test.role = Role::TrainTest;
    out.enroll.role = Role::Enroll;
    out.test.role = Role::Test;
    out.imposter.role = Role::Imposter;
    for (auto* m : {&out.train, &out.train_test, &out.enroll, &out.test, &out.imposter}) m->seed = spec.seed;

    auto emit = [&](int speaker_idx, const std::string& speaker_id, int voice_idx) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_v%03d.wav", speaker_id.c_str(), voice_idx);
        const auto path = out_dir / "wav" / name;
        write_wav(synth_voice(spec, speaker_idx, voice_idx), path);
        return path;
    };

    for (int s = 0; s < spec.n_speakers; ++s) {
        char id[32];
        std::snprintf(id, sizeof(id), "speaker_%02d", s);
        int voice = 0;
        auto take = [&](DatasetManifest& m, int count) {
            for (int k = 0; k < count; ++k) m.entries[id].push_back(emit(s, id, voice++));
        };
        take(out.train, n_train);
        take(out.train_test, n_train_test);
        take(out.enroll, n_enroll);  // "top" voices: the first after the training block
        take(out.test, n_test);
    }
    for (int s = 0; s < spec.n_speakers; ++s) {
        char id[32];
        std::snprintf(id, sizeof(id), "imposter_%02d", s);
        for (int k = 0; k < n_test; ++k)
            out.imposter.entries[id].push_back(emit(spec.n_speakers + s, id, k));
    }

    save_manifest(out.train, out_dir / "train.json");
    save_manifest(out.train_test, out_dir / "train-test.json");
    save_manifest(out.enroll, out_dir / "enroll.json");
    save_manifest(out.test, out_dir / "test.json");
    save_manifest(out.imposter, out_dir / "imposter.json");
    return out;
}

}  // namespace advsr
