#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "advsr/audio.hpp"

namespace advsr {

enum class Role { Enroll, Test, Imposter, Train, TrainTest };

std::string role_name(Role r);
Role role_from_name(const std::string& name);

// Maps speaker id -> voice files for one dataset role. Enroll/test manifests
// share speaker ids; imposter ids are disjoint from them.
struct DatasetManifest {
    Role role = Role::Train;
    uint64_t seed = 0;
    std::map<std::string, std::vector<std::filesystem::path>> entries;

    size_t voice_count() const;
    std::vector<std::string> speaker_ids() const;
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct SyntheticSpeakerSpec {
    int n_speakers = 10;
    int voices_per_speaker = 20;
    double duration_s = 1.0;
    int sample_rate = 16000;
    uint64_t seed = 7;
};

struct CorpusManifests {
    DatasetManifest train;
    DatasetManifest train_test;
    DatasetManifest enroll;
    DatasetManifest test;
    DatasetManifest imposter;
};

// Deterministic voice synthesizer: each speaker owns a fixed acoustic profile
// (pitch and formant centers drawn from the corpus seed), each voice excites
// that profile with seeded jitter, noise and envelope. Writes WAVs plus the
// five role manifests under out_dir.
CorpusManifests synth_corpus(const SyntheticSpeakerSpec& spec, const std::filesystem::path& out_dir);

// Single voice for speaker `speaker_idx` (0-based across mains and imposters).
Waveform synth_voice(const SyntheticSpeakerSpec& spec, int speaker_idx, int voice_idx);

}  // namespace advsr
