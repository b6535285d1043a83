#include "uxmil/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "uxmil/threadpool.hpp"

namespace uxmil {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("manifest: cannot open " + path);
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ValidationError("manifest: parse error in " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = fs::absolute(fs::path(path)).parent_path().string();
    try {
        m.question_id = doc.at("question_id").get<std::string>();
        for (const auto& e : doc.at("episodes")) {
            EpisodeMeta meta;
            meta.episode_id = e.at("episode_id").get<std::string>();
            meta.subject_id = e.at("subject_id").get<std::string>();
            meta.label = e.at("label").get<int>();
            meta.scenario = e.value("scenario", "");
            const auto resolve = [&](const std::string& p) {
                fs::path fp(p);
                return fp.is_absolute() ? fp.string() : (fs::path(m.base_dir) / fp).string();
            };
            meta.audio_path = resolve(e.at("audio_path").get<std::string>());
            meta.frames_dir = resolve(e.at("frames_dir").get<std::string>());
            if (meta.label < 1 || meta.label > 7)
                throw ValidationError("manifest: label " + std::to_string(meta.label) +
                                      " out of range 1..7 for episode " + meta.episode_id);
            m.episodes.push_back(std::move(meta));
        }
    } catch (const json::exception& e) {
        throw ValidationError("manifest: missing or malformed field in " + path + ": " +
                              e.what());
    }
    return m;
}

EpisodeBags preprocess_episode(const EpisodeMeta& meta) {
    EpisodeBags bags;
    bags.episode_id = meta.episode_id;
    bags.subject_id = meta.subject_id;
    bags.label = meta.label;
    bags.patches = patchify(compute_mel(load_wav(meta.audio_path)));
    bags.clips = segment_video(load_frames(meta.frames_dir));
    return bags;
}

std::vector<EpisodeBags> preprocess_dataset(const DatasetManifest& manifest, int threads) {
    std::vector<EpisodeBags> out(manifest.episodes.size());
    parallel_for(manifest.episodes.size(), threads,
                 [&](std::size_t i) { out[i] = preprocess_episode(manifest.episodes[i]); });
    return out;
}

}  // namespace uxmil
