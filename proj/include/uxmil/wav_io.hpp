#pragma once

#include <string>
#include <vector>

#include "uxmil/common.hpp"

namespace uxmil {

// Mono audio, samples normalized to [-1, 1].
struct AudioClip {
    int sample_rate = 0;
    std::vector<double> samples;
};

// Reads a RIFF/WAVE file with 16-bit PCM samples, mono or stereo (stereo is
// averaged to mono). Samples are scaled by 1/32768.
AudioClip load_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled by 32768
// (the loader's inverse), saturating at the int16 rails.
void save_wav(const std::string& path, const AudioClip& clip);

}  // namespace uxmil
