#pragma once

#include <string>
#include <vector>

#include "uxmil/audio_frontend.hpp"
#include "uxmil/video_frontend.hpp"

namespace uxmil {

struct EpisodeMeta {
    std::string episode_id;
    std::string subject_id;
    std::string audio_path;  // resolved to absolute on load
    std::string frames_dir;
    int label = 0;  // 1..7
    std::string scenario;
};

struct DatasetManifest {
    std::string question_id;
    std::string base_dir;
    std::vector<EpisodeMeta> episodes;
};

// Parses a dataset manifest; relative paths are resolved against the manifest
// file's directory. Labels are validated to lie in 1..7.
DatasetManifest load_manifest(const std::string& path);

// One episode's model-ready inputs.
struct EpisodeBags {
    std::string episode_id;
    std::string subject_id;
    int label = 0;
    PatchSet patches;
    ClipSet clips;
};

EpisodeBags preprocess_episode(const EpisodeMeta& meta);

// Preprocesses every episode; worker parallelism never changes the result.
std::vector<EpisodeBags> preprocess_dataset(const DatasetManifest& manifest, int threads = 1);

}  // namespace uxmil
