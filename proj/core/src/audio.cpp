#include "advsr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace advsr {

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::ifstream& f) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void validate(const Waveform& w) {
    if (w.sample_rate <= 0) throw std::invalid_argument("waveform: sample_rate must be positive");
    if (w.samples.empty()) throw std::invalid_argument("waveform: empty audio");
    for (double s : w.samples) {
        if (!std::isfinite(s) || s < -1.0 || s > 1.0)
            throw std::invalid_argument("waveform: sample outside [-1, 1]");
    }
}

int pcm16_quantize_level(double sample) {
    const long long a = std::llround(sample * 32768.0);
    return static_cast<int>(std::clamp<long long>(a, -32768, 32767));
}

double pcm16_quantize_sample(double sample) {
    return pcm16_quantize_level(sample) / 32768.0;
}

Waveform quantize_pcm16(const Waveform& w) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.reserve(w.samples.size());
    for (double s : w.samples) out.samples.push_back(pcm16_quantize_sample(s));
    return out;
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav: cannot open " + path.string());

    char tag[4];
    f.read(tag, 4);
    if (!f || std::memcmp(tag, "RIFF", 4) != 0)
        throw std::runtime_error("read_wav: malformed header (missing RIFF): " + path.string());
    get_u32(f);  // riff size, unchecked
    f.read(tag, 4);
    if (!f || std::memcmp(tag, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: malformed header (missing WAVE): " + path.string());

    bool have_fmt = false;
    uint16_t channels = 0, bits = 0, format = 0;
    uint32_t sample_rate = 0;
    std::vector<int16_t> data;
    bool have_data = false;

    while (f) {
        f.read(tag, 4);
        if (!f) break;
        const uint32_t chunk_size = get_u32(f);
        if (!f) throw std::runtime_error("read_wav: truncated chunk header: " + path.string());
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw std::runtime_error("read_wav: malformed fmt chunk");
            format = get_u16(f);
            channels = get_u16(f);
            sample_rate = get_u32(f);
            get_u32(f);  // byte rate
            get_u16(f);  // block align
            bits = get_u16(f);
            f.seekg(chunk_size - 16 + (chunk_size & 1), std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("read_wav: data chunk before fmt");
            const size_t n = chunk_size / 2;
            data.resize(n);
            f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 2));
            if (!f) throw std::runtime_error("read_wav: truncated data chunk: " + path.string());
            if (chunk_size & 1) f.seekg(1, std::ios::cur);
            have_data = true;
        } else {
            f.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }

    if (!have_fmt || !have_data) throw std::runtime_error("read_wav: malformed header: " + path.string());
    if (format != 1) throw std::runtime_error("read_wav: unsupported encoding (want PCM): " + path.string());
    if (channels != 1) throw std::runtime_error("read_wav: unsupported channel count: " + std::to_string(channels));
    if (bits != 16) throw std::runtime_error("read_wav: unsupported bit depth: " + std::to_string(bits));
    if (data.empty()) throw std::runtime_error("read_wav: empty audio: " + path.string());
    if (sample_rate == 0) throw std::runtime_error("read_wav: malformed header (zero sample rate)");

    Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    w.samples.reserve(data.size());
    for (int16_t v : data) w.samples.push_back(v / 32768.0);
    return w;
}

void write_wav(const Waveform& w, const std::filesystem::path& path) {
    validate(w);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path.string());

    const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
    f.write("RIFF", 4);
    put_u32(f, 36 + data_size);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(f, 16);
    put_u16(f, 1);  // PCM
    put_u16(f, 1);  // mono
    put_u32(f, static_cast<uint32_t>(w.sample_rate));
    put_u32(f, static_cast<uint32_t>(w.sample_rate) * 2);
    put_u16(f, 2);
    put_u16(f, 16);
    f.write("data", 4);
    put_u32(f, data_size);
    for (double s : w.samples) {
        const int16_t v = static_cast<int16_t>(pcm16_quantize_level(s));
        const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                    static_cast<unsigned char>((v >> 8) & 0xff)};
        f.write(reinterpret_cast<const char*>(b), 2);
    }
    if (!f) throw std::runtime_error("write_wav: I/O failure: " + path.string());
}

}  // namespace advsr
