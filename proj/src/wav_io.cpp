#include "uxmil/wav_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace uxmil {

namespace {

struct ChunkHeader {
    char id[4];
    uint32_t size;
};

uint32_t read_u32(std::istream& is, const char* what) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError(std::string("wav: truncated ") + what);
    return v;
}

uint16_t read_u16(std::istream& is, const char* what) {
    uint16_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 2)) throw IoError(std::string("wav: truncated ") + what);
    return v;
}

}  // namespace

AudioClip load_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("wav: cannot open " + path);
    char riff[4], wave[4];
    if (!is.read(riff, 4) || std::memcmp(riff, "RIFF", 4) != 0)
        throw ValidationError("wav: not a RIFF file: " + path);
    read_u32(is, "riff size");
    if (!is.read(wave, 4) || std::memcmp(wave, "WAVE", 4) != 0)
        throw ValidationError("wav: not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    bool have_fmt = false;
    AudioClip clip;

    while (true) {
        char id[4];
        if (!is.read(id, 4)) break;
        const uint32_t size = read_u32(is, "chunk size");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw ValidationError("wav: malformed fmt chunk in " + path);
            format = read_u16(is, "format");
            channels = read_u16(is, "channels");
            sample_rate = read_u32(is, "sample rate");
            read_u32(is, "byte rate");
            read_u16(is, "block align");
            bits = read_u16(is, "bits per sample");
            is.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) throw ValidationError("wav: data chunk before fmt in " + path);
            if (format != 1 || bits != 16)
                throw ValidationError("wav: unsupported encoding (need 16-bit PCM) in " + path);
            if (channels != 1 && channels != 2)
                throw ValidationError("wav: unsupported channel count " +
                                      std::to_string(channels) + " in " + path);
            const std::size_t n_values = size / 2;
            std::vector<int16_t> raw(n_values);
            if (n_values && !is.read(reinterpret_cast<char*>(raw.data()),
                                     static_cast<std::streamsize>(n_values * 2)))
                throw IoError("wav: truncated data chunk in " + path);
            const std::size_t frames = n_values / channels;
            clip.sample_rate = static_cast<int>(sample_rate);
            clip.samples.resize(frames);
            for (std::size_t i = 0; i < frames; ++i) {
                double acc = 0;
                for (std::size_t c = 0; c < channels; ++c)
                    acc += static_cast<double>(raw[i * channels + c]);
                clip.samples[i] = acc / (channels * 32768.0);
            }
            return clip;
        } else {
            is.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
        }
        if (!is) throw IoError("wav: truncated chunk in " + path);
    }
    throw ValidationError("wav: no data chunk in " + path);
}

void save_wav(const std::string& path, const AudioClip& clip) {
    if (clip.samples.empty()) throw ValidationError("wav: refusing to write empty clip");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("wav: cannot open for writing: " + path);
    const uint32_t data_size = static_cast<uint32_t>(clip.samples.size() * 2);
    const uint32_t riff_size = 36 + data_size;
    const uint32_t sr = static_cast<uint32_t>(clip.sample_rate);
    const uint32_t byte_rate = sr * 2;
    const uint16_t block_align = 2, channels = 1, bits = 16, pcm = 1;

    os.write("RIFF", 4);
    os.write(reinterpret_cast<const char*>(&riff_size), 4);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    const uint32_t fmt_size = 16;
    os.write(reinterpret_cast<const char*>(&fmt_size), 4);
    os.write(reinterpret_cast<const char*>(&pcm), 2);
    os.write(reinterpret_cast<const char*>(&channels), 2);
    os.write(reinterpret_cast<const char*>(&sr), 4);
    os.write(reinterpret_cast<const char*>(&byte_rate), 4);
    os.write(reinterpret_cast<const char*>(&block_align), 2);
    os.write(reinterpret_cast<const char*>(&bits), 2);
    os.write("data", 4);
    os.write(reinterpret_cast<const char*>(&data_size), 4);
    for (double v : clip.samples) {
        // inverse of the loader's 1/32768 scaling, clamped at the int16 rails
        const long q = std::lrint(std::max(-1.0, std::min(1.0, v)) * 32768.0);
        const int16_t s = static_cast<int16_t>(std::max(-32768L, std::min(32767L, q)));
        os.write(reinterpret_cast<const char*>(&s), 2);
    }
    if (!os) throw IoError("wav: write failure: " + path);
}

}  // namespace uxmil
