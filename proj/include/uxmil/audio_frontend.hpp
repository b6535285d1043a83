#pragma once

#include <vector>

#include "uxmil/tensor.hpp"
#include "uxmil/wav_io.hpp"

namespace uxmil {

struct MelParams {
    std::size_t n_fft = 1024;
    std::size_t hop = 256;
    std::size_t n_mels = 128;
    int sample_rate = 16000;
    double log_floor = 1e-10;
};

// Log-power mel spectrogram, [n_mels, n_time], natural log with floor.
struct MelSpectrogram {
    MelParams params;
    std::size_t n_time = 0;
    std::vector<double> values;  // row-major [n_mels, n_time]

    double at(std::size_t mel, std::size_t t) const { return values[mel * n_time + t]; }
};

// The audio instance bag: 16 patches of 64x64, a 2x8 grid over the
// standardized 128x512 mel image (row-major: patches 1-8 are the top mel
// rows, 9-16 the bottom).
struct PatchSet {
    static constexpr std::size_t kPatches = 16;
    static constexpr std::size_t kPatchSize = 64;
    static constexpr std::size_t kGridRows = 2;
    static constexpr std::size_t kGridCols = 8;
    static constexpr std::size_t kTimeFrames = 512;

    Tensor<float> patches;  // [16, 64, 64]
};

// Hann-windowed STFT power, HTK-mel triangular filterbank from 0 Hz to
// Nyquist, natural log of max(power, log_floor). Input is resampled to
// params.sample_rate by linear interpolation when rates differ.
MelSpectrogram compute_mel(const AudioClip& audio, const MelParams& params = {});

// Bilinear resize of the time axis to 512 frames, whole-image
// standardization (zero mean, unit variance; constant images map to zeros),
// then the lossless 2x8 split into 64x64 patches.
PatchSet patchify(const MelSpectrogram& mel);

// Reassembles the 2x8 grid back into the standardized [128, 512] image.
Tensor<float> reassemble_patches(const PatchSet& patches);

// HTK mel scale helpers (exposed for tests).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace uxmil
