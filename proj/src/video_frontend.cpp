#include "uxmil/video_frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "uxmil/image_io.hpp"

namespace uxmil {

Tensor<float> ClipSet::clips() const {
    const std::size_t fs = kFrameSize * kFrameSize;
    Tensor<float> out(Shape{num_clips, frames_per_clip, kFrameSize, kFrameSize});
    for (std::size_t s = 0; s < slot_frame.size(); ++s)
        std::copy(unique_frames.data() + slot_frame[s] * fs,
                  unique_frames.data() + (slot_frame[s] + 1) * fs, out.data() + s * fs);
    return out;
}

std::vector<std::size_t> partition_bounds(std::size_t n, std::size_t m) {
    std::vector<std::size_t> bounds(m + 1);
    for (std::size_t i = 0; i <= m; ++i) bounds[i] = i * n / m;
    return bounds;
}

ClipSet segment_video(const Tensor<float>& frames, std::size_t num_clips,
                      std::size_t frames_per_clip) {
    if (frames.rank() != 3 || frames.dim(1) != ClipSet::kFrameSize ||
        frames.dim(2) != ClipSet::kFrameSize)
        throw ShapeError("segment_video: expected [N,112,112], got " + shape_str(frames.shape()));
    const std::size_t n = frames.dim(0);
    if (n == 0) throw ValidationError("segment_video: empty frame list");
    if (num_clips == 0 || frames_per_clip == 0)
        throw ConfigError("segment_video: M and T must be positive");

    ClipSet set;
    set.num_clips = num_clips;
    set.frames_per_clip = frames_per_clip;
    set.slot_frame.resize(num_clips * frames_per_clip);
    set.source_indices.resize(num_clips);

    const auto bounds = partition_bounds(n, num_clips);
    std::vector<std::size_t> selected;  // unique source indices, ascending
    selected.reserve(n);
    std::vector<std::size_t> frame_slot(n, SIZE_MAX);  // source index -> unique slot

    for (std::size_t c = 0; c < num_clips; ++c) {
        const std::size_t start = bounds[c];
        std::size_t len = bounds[c + 1] - bounds[c];
        std::size_t base = start;
        if (len == 0) {  // more clips than frames: borrow the nearest frame
            base = std::min(start, n - 1);
            len = 1;
        }
        set.source_indices[c].reserve(frames_per_clip);
        for (std::size_t t = 0; t < frames_per_clip; ++t) {
            const std::size_t src = base + t * len / frames_per_clip;
            set.source_indices[c].push_back(src);
            if (frame_slot[src] == SIZE_MAX) {
                frame_slot[src] = selected.size();
                selected.push_back(src);
            }
            set.slot_frame[c * frames_per_clip + t] = frame_slot[src];
        }
    }

    // per-episode standardization over the selected content, slot-weighted
    const std::size_t fs = ClipSet::kFrameSize * ClipSet::kFrameSize;
    std::vector<std::size_t> multiplicity(selected.size(), 0);
    for (std::size_t s : set.slot_frame) multiplicity[s] += 1;
    double mean = 0;
    const double total = static_cast<double>(set.slot_frame.size() * fs);
    for (std::size_t u = 0; u < selected.size(); ++u) {
        const float* src = frames.data() + selected[u] * fs;
        double acc = 0;
        for (std::size_t i = 0; i < fs; ++i) acc += src[i];
        mean += acc * static_cast<double>(multiplicity[u]);
    }
    mean /= total;
    double var = 0;
    for (std::size_t u = 0; u < selected.size(); ++u) {
        const float* src = frames.data() + selected[u] * fs;
        double acc = 0;
        for (std::size_t i = 0; i < fs; ++i) acc += (src[i] - mean) * (src[i] - mean);
        var += acc * static_cast<double>(multiplicity[u]);
    }
    var /= total;

    set.unique_frames = Tensor<float>(Shape{selected.size(), ClipSet::kFrameSize,
                                            ClipSet::kFrameSize});
    if (var < 1e-12) {
        // constant input: standardized content is all zeros
    } else {
        const double inv_std = 1.0 / std::sqrt(var);
        for (std::size_t u = 0; u < selected.size(); ++u) {
            const float* src = frames.data() + selected[u] * fs;
            float* dst = set.unique_frames.data() + u * fs;
            for (std::size_t i = 0; i < fs; ++i)
                dst[i] = static_cast<float>((src[i] - mean) * inv_std);
        }
    }
    return set;
}

Tensor<float> load_frames(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM")
            paths.push_back(entry.path().string());
    }
    if (ec) throw IoError("load_frames: cannot read directory " + dir);
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw ValidationError("load_frames: no readable images in " + dir);

    const std::size_t fsz = ClipSet::kFrameSize;
    Tensor<float> frames(Shape{paths.size(), fsz, fsz});
    bool warned = false;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        GrayImage img = load_image(paths[i]);
        if (img.width != fsz || img.height != fsz) {
            if (!warned) {
                std::fprintf(stderr, "load_frames: resizing %zux%zu frames in %s to %zux%zu\n",
                             img.width, img.height, dir.c_str(), fsz, fsz);
                warned = true;
            }
            img = resize_bilinear(img, fsz, fsz);
        }
        std::copy(img.pixels.begin(), img.pixels.end(), frames.data() + i * fsz * fsz);
    }
    return frames;
}

}  // namespace uxmil
