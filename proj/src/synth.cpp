#include "uxmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uxmil/dataset.hpp"
#include "uxmil/image_io.hpp"
#include "uxmil/rng.hpp"
#include "uxmil/threadpool.hpp"
#include "uxmil/video_frontend.hpp"

namespace uxmil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kClips = 16;
constexpr std::size_t kFrameSize = 112;

struct SubjectProfile {
    std::vector<float> base_face;  // [112*112]
    double f0 = 0;                 // voiced base pitch
    double lowpass = 0.9;
    double wobble_phase = 0;
};

SubjectProfile make_subject(const Rng& master, std::size_t subject) {
    Rng rng = master.derive("subject", subject);
    SubjectProfile p;
    p.base_face.assign(kFrameSize * kFrameSize, 0.22f);
    const int n_bumps = 5;
    for (int b = 0; b < n_bumps; ++b) {
        const double cx = rng.uniform() * kFrameSize;
        const double cy = rng.uniform() * kFrameSize;
        const double sx = 8.0 + rng.uniform() * 18.0;
        const double sy = 8.0 + rng.uniform() * 18.0;
        const double amp = (rng.uniform() - 0.5) * 0.24;
        for (std::size_t y = 0; y < kFrameSize; ++y)
            for (std::size_t x = 0; x < kFrameSize; ++x) {
                const double dx = (x - cx) / sx, dy = (y - cy) / sy;
                p.base_face[y * kFrameSize + x] +=
                    static_cast<float>(amp * std::exp(-0.5 * (dx * dx + dy * dy)));
            }
    }
    for (auto& v : p.base_face) v = std::min(0.6f, std::max(0.05f, v));
    p.f0 = 130.0 + rng.uniform() * 140.0;
    p.lowpass = 0.88 + rng.uniform() * 0.06;
    p.wobble_phase = rng.uniform() * 2.0 * M_PI;
    return p;
}

std::vector<int> draw_distinct(Rng& rng, int count, int n) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(n - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + count);
    std::sort(out.begin(), out.end());
    return out;
}

struct EpisodePlan {
    std::string episode_id;
    std::size_t subject = 0;
    int strength = 0;
    int label = 0;
    std::vector<int> vision_cues;
    std::vector<int> audio_cues;
    std::string scenario;
};

void write_frames(const SynthConfig& cfg, const SubjectProfile& subj, const EpisodePlan& plan,
                  Rng& rng, const fs::path& frames_dir) {
    const std::size_t n_frames = static_cast<std::size_t>(
        std::lround(cfg.duration_seconds * cfg.frame_rate));
    const auto bounds = partition_bounds(n_frames, kClips);
    std::vector<bool> cue_frame(n_frames, false);
    if (cfg.cue_modality != CueModality::audio_only)
        for (int c : plan.vision_cues)
            for (std::size_t f = bounds[c]; f < bounds[c + 1]; ++f) cue_frame[f] = true;

    const double cx = 50.0 + rng.uniform() * 12.0;
    const double cy = 68.0 + rng.uniform() * 10.0;
    GrayImage img;
    img.width = img.height = kFrameSize;
    img.pixels.resize(kFrameSize * kFrameSize);
    char name[64];
    for (std::size_t f = 0; f < n_frames; ++f) {
        const double wobble =
            1.0 + 0.04 * std::sin(2.0 * M_PI * f / 24.0 + subj.wobble_phase);
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = static_cast<float>(subj.base_face[i] * wobble +
                                               0.015 * rng.gaussian());
        if (cue_frame[f]) {
            for (std::size_t y = 0; y < kFrameSize; ++y)
                for (std::size_t x = 0; x < kFrameSize; ++x) {
                    const double dx = (x - cx) / cfg.cue.blob_rx;
                    const double dy = (y - cy) / cfg.cue.blob_ry;
                    img.pixels[y * kFrameSize + x] += static_cast<float>(
                        cfg.cue.blob_intensity * std::exp(-0.5 * (dx * dx + dy * dy)));
                }
        }
        for (auto& v : img.pixels) v = std::min(1.0f, std::max(0.0f, v));
        std::snprintf(name, sizeof(name), "f_%05zu.png", f);
        save_png((frames_dir / name).string(), img);
    }
}

void write_audio(const SynthConfig& cfg, const SubjectProfile& subj, const EpisodePlan& plan,
                 Rng& rng, const fs::path& wav_path) {
    const std::size_t n = static_cast<std::size_t>(
        std::lround(cfg.duration_seconds * cfg.sample_rate));
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    clip.samples.resize(n);
    double lp = 0.0;
    const double alpha = subj.lowpass;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / cfg.sample_rate;
        lp = alpha * lp + (1.0 - alpha) * rng.gaussian();
        const double voiced =
            0.18 * std::sin(2.0 * M_PI * subj.f0 * t + 0.3 * std::sin(2.0 * M_PI * 3.1 * t));
        clip.samples[i] = 0.8 * lp + voiced;
    }
    if (cfg.cue_modality != CueModality::vision_only) {
        const double slot_len = cfg.duration_seconds / kClips;
        for (int slot : plan.audio_cues) {
            const double burst = std::min(cfg.cue.tone_seconds, slot_len);
            const double start = slot * slot_len + 0.5 * (slot_len - burst);
            const std::size_t i0 = static_cast<std::size_t>(start * cfg.sample_rate);
            const std::size_t len = static_cast<std::size_t>(burst * cfg.sample_rate);
            const std::size_t ramp = static_cast<std::size_t>(0.05 * cfg.sample_rate);
            for (std::size_t k = 0; k < len && i0 + k < n; ++k) {
                double env = 1.0;
                if (k < ramp) env = static_cast<double>(k) / ramp;
                if (len - k <= ramp) env = std::min(env, static_cast<double>(len - k) / ramp);
                const double t = static_cast<double>(i0 + k) / cfg.sample_rate;
                clip.samples[i0 + k] +=
                    env * cfg.cue.tone_amp * std::sin(2.0 * M_PI * cfg.cue.tone_freq_hz * t);
            }
        }
    }
    for (auto& s : clip.samples) s = std::min(0.999, std::max(-0.999, s));
    save_wav(wav_path.string(), clip);
}

}  // namespace

void SynthConfig::validate() const {
    if (n_subjects < 4)
        throw ConfigError("synth: need at least 4 subjects for 4-fold evaluation, got " +
                          std::to_string(n_subjects));
    if (episodes_per_subject == 0) throw ConfigError("synth: episodes_per_subject must be > 0");
    if (duration_seconds < 30.0 || duration_seconds > 120.0)
        throw ConfigError("synth: duration_seconds must lie in [30, 120], got " +
                          std::to_string(duration_seconds));
    if (frame_rate <= 0.0) throw ConfigError("synth: frame_rate must be positive");
    if (label_noise < 0.0 || label_noise > 1.0)
        throw ConfigError("synth: label_noise must lie in [0, 1]");
}

SynthResult generate_dataset(const SynthConfig& cfg, const std::string& out_dir, int threads) {
    cfg.validate();
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (!fs::is_directory(root))
        throw IoError("synth: cannot create output directory " + out_dir);

    const Rng master(cfg.seed);
    std::vector<SubjectProfile> subjects;
    subjects.reserve(cfg.n_subjects);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) subjects.push_back(make_subject(master, s));

    // plan all episodes up front; cue strength cycles 0..6 so labels stay
    // balanced and every subject spans the scale
    std::vector<EpisodePlan> plans;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        for (std::size_t e = 0; e < cfg.episodes_per_subject; ++e) {
            const std::size_t g = s * cfg.episodes_per_subject + e;
            EpisodePlan plan;
            char id[32];
            std::snprintf(id, sizeof(id), "s%02zue%02zu", s, e);
            plan.episode_id = id;
            plan.subject = s;
            plan.strength = static_cast<int>(g % 7);
            Rng rng = master.derive("plan", g);
            plan.vision_cues = draw_distinct(rng, plan.strength, static_cast<int>(kClips));
            plan.audio_cues = draw_distinct(rng, plan.strength, static_cast<int>(kClips));
            plan.label = plan.strength + 1;
            if (cfg.label_noise > 0.0 && rng.uniform() < cfg.label_noise)
                plan.label = 1 + static_cast<int>(rng.uniform_int(7));
            plan.scenario = (g % 2 == 0) ? "positive" : "negative";
            plans.push_back(std::move(plan));
        }
    }

    parallel_for(plans.size(), threads, [&](std::size_t g) {
        const EpisodePlan& plan = plans[g];
        const fs::path ep_dir = root / plan.episode_id;
        try {
            fs::create_directories(ep_dir / "frames");
            Rng frames_rng = master.derive("frames", g);
            write_frames(cfg, subjects[plan.subject], plan, frames_rng, ep_dir / "frames");
            Rng audio_rng = master.derive("audio", g);
            write_audio(cfg, subjects[plan.subject], plan, audio_rng, ep_dir / "audio.wav");
        } catch (...) {
            std::error_code cleanup_ec;
            fs::remove_all(ep_dir, cleanup_ec);
            throw;
        }
    });

    json manifest;
    manifest["question_id"] = "Q1";
    manifest["episodes"] = json::array();
    for (const auto& plan : plans) {
        json e;
        e["episode_id"] = plan.episode_id;
        char subj[16];
        std::snprintf(subj, sizeof(subj), "subj%02zu", plan.subject);
        e["subject_id"] = subj;
        e["audio_path"] = plan.episode_id + "/audio.wav";
        e["frames_dir"] = plan.episode_id + "/frames";
        e["label"] = plan.label;
        e["scenario"] = plan.scenario;
        manifest["episodes"].push_back(e);
    }
    const std::string manifest_path = (root / "manifest.json").string();
    {
        std::ofstream os(manifest_path, std::ios::trunc);
        if (!os) throw IoError("synth: cannot write " + manifest_path);
        os << manifest.dump(2) << "\n";
    }

    SynthResult result;
    result.manifest_path = manifest_path;
    {
        std::ofstream truth(root / "truth.csv", std::ios::trunc);
        if (!truth) throw IoError("synth: cannot write truth.csv");
        truth << "episode_id,cue_clips,strength\n";
        for (const auto& plan : plans) {
            std::ostringstream cues;
            for (std::size_t i = 0; i < plan.vision_cues.size(); ++i)
                cues << (i ? ";" : "") << plan.vision_cues[i];
            truth << plan.episode_id << "," << cues.str() << "," << plan.strength << "\n";
            result.truth.push_back({plan.episode_id, plan.vision_cues, plan.strength});
        }
    }
    return result;
}

int count_visual_cues(const Tensor<float>& frames, std::size_t num_clips,
                      std::vector<int>* which) {
    const std::size_t n = frames.dim(0);
    const std::size_t fs = frames.dim(1) * frames.dim(2);
    const auto bounds = partition_bounds(n, num_clips);
    int count = 0;
    for (std::size_t c = 0; c < num_clips; ++c) {
        std::size_t best = 0;
        for (std::size_t f = bounds[c]; f < bounds[c + 1]; ++f) {
            std::size_t bright = 0;
            const float* px = frames.data() + f * fs;
            for (std::size_t i = 0; i < fs; ++i) bright += (px[i] > 0.82f);
            best = std::max(best, bright);
        }
        if (best > 40) {
            ++count;
            if (which) which->push_back(static_cast<int>(c));
        }
    }
    return count;
}

int count_audio_cues(const AudioClip& clip, std::size_t num_slots, double tone_freq_hz) {
    const std::size_t n = clip.samples.size();
    const auto bounds = partition_bounds(n, num_slots);
    const double omega = 2.0 * M_PI * tone_freq_hz / clip.sample_rate;
    int count = 0;
    for (std::size_t s = 0; s < num_slots; ++s) {
        // Goertzel magnitude at the cue frequency over this slot
        const double coeff = 2.0 * std::cos(omega);
        double s0 = 0, s1 = 0, s2 = 0;
        const std::size_t len = bounds[s + 1] - bounds[s];
        for (std::size_t i = bounds[s]; i < bounds[s + 1]; ++i) {
            s0 = clip.samples[i] + coeff * s1 - s2;
            s2 = s1;
            s1 = s0;
        }
        const double power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
        const double amp = len ? 2.0 * std::sqrt(std::max(power, 0.0)) / len : 0.0;
        if (amp > 0.08) ++count;
    }
    return count;
}

SeparabilityReport verify_separability(const std::string& manifest_path) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    SeparabilityReport report;
    report.n_episodes = manifest.episodes.size();
    std::size_t hits = 0;
    for (const auto& ep : manifest.episodes) {
        const Tensor<float> frames = load_frames(ep.frames_dir);
        const AudioClip audio = load_wav(ep.audio_path);
        const int s_vision = count_visual_cues(frames, kClips);
        const int s_audio = count_audio_cues(audio, kClips);
        const int label_hat = std::max(s_vision, s_audio) + 1;
        if (label_hat == ep.label)
            ++hits;
        else
            report.mismatched.push_back(ep.episode_id);
    }
    report.accuracy =
        report.n_episodes ? static_cast<double>(hits) / report.n_episodes : 0.0;
    return report;
}

std::vector<SynthEpisodeTruth> load_truth_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("truth.csv: cannot open " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<SynthEpisodeTruth> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.rfind(',');
        if (c1 == std::string::npos || c2 == c1)
            throw ValidationError("truth.csv: malformed row: " + line);
        SynthEpisodeTruth row;
        row.episode_id = line.substr(0, c1);
        row.strength = std::stoi(line.substr(c2 + 1));
        std::string cues = line.substr(c1 + 1, c2 - c1 - 1);
        std::stringstream ss(cues);
        std::string tok;
        while (std::getline(ss, tok, ';'))
            if (!tok.empty()) row.cue_clips.push_back(std::stoi(tok));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace uxmil
