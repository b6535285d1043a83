#pragma once

#include <string>
#include <vector>

#include "uxmil/tensor.hpp"
#include "uxmil/wav_io.hpp"

namespace uxmil {

enum class CueModality { both, vision_only, audio_only };

struct SynthCueParams {
    double blob_intensity = 0.9;  // additive peak brightness of the smile blob
    double blob_rx = 16.0;        // ellipse radii, pixels
    double blob_ry = 11.0;
    double tone_freq_hz = 2000.0;  // cue tone, well above the voiced base band
    double tone_amp = 0.5;
    double tone_seconds = 0.8;
};

// Deterministic synthetic HRI-style dataset: per-episode WAV plus face-frame
// PNGs, with cue events whose count equals label-1. Cues are sparse (a few of
// the 16 clips / time slots), so the label is a bag-level property.
struct SynthConfig {
    std::size_t n_subjects = 12;
    std::size_t episodes_per_subject = 10;
    double duration_seconds = 30.0;  // paper range is 30..120 s
    double frame_rate = 4.0;
    int sample_rate = 16000;
    SynthCueParams cue;
    CueModality cue_modality = CueModality::both;
    double label_noise = 0.0;
    uint64_t seed = 1234;

    void validate() const;
};

struct SynthEpisodeTruth {
    std::string episode_id;
    std::vector<int> cue_clips;  // planted visual cue clip indices, 0-based
    int strength = 0;            // s in 0..6, label = s+1 before noise
};

struct SynthResult {
    std::string manifest_path;
    std::vector<SynthEpisodeTruth> truth;
};

SynthResult generate_dataset(const SynthConfig& cfg, const std::string& out_dir,
                             int threads = 1);

// Cue-counting oracle, independent of the model: thresholded blob detection
// per clip span and Goertzel band energy per time slot.
struct SeparabilityReport {
    double accuracy = 0.0;
    std::size_t n_episodes = 0;
    std::vector<std::string> mismatched;
};

SeparabilityReport verify_separability(const std::string& manifest_path);

// Exposed for tests: counts cue clips among the M spans of the raw frame
// sequence; optionally reports which clip indices fired.
int count_visual_cues(const Tensor<float>& frames, std::size_t num_clips,
                      std::vector<int>* which = nullptr);

// Counts time slots whose 2 kHz band amplitude clears the burst threshold.
int count_audio_cues(const AudioClip& clip, std::size_t num_slots,
                     double tone_freq_hz = 2000.0);

std::vector<SynthEpisodeTruth> load_truth_csv(const std::string& path);

}  // namespace uxmil
