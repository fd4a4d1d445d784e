#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace advsr {

// Mono audio signal with normalized amplitudes in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Throws std::invalid_argument on empty audio, non-positive rate or
// out-of-range samples.
void validate(const Waveform& w);

// 16-bit PCM grid. round() is half-away-from-zero, then clamp to int16.
int pcm16_quantize_level(double sample);
double pcm16_quantize_sample(double sample);

// Snaps every sample to the 16-bit PCM grid. Idempotent.
Waveform quantize_pcm16(const Waveform& w);

// RIFF/WAVE 16-bit PCM mono little-endian reader/writer.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const Waveform& w, const std::filesystem::path& path);

}  // namespace advsr
