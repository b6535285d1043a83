#pragma once

#include <string>
#include <vector>

#include "uxmil/tensor.hpp"

namespace uxmil {

// The vision instance bag: M clips of T frames each. Frames are stored once
// (deduplicated) with per-slot indices into the unique-frame tensor, so the
// shared frame CNN runs once per distinct source frame.
struct ClipSet {
    static constexpr std::size_t kFrameSize = 112;

    std::size_t num_clips = 16;     // M
    std::size_t frames_per_clip = 16;  // T
    Tensor<float> unique_frames;    // [F, 112, 112], standardized
    std::vector<std::size_t> slot_frame;  // [M*T] index into unique_frames
    std::vector<std::vector<std::size_t>> source_indices;  // per clip, into the input sequence

    // Materialized [M, T, 112, 112] view (tests and external consumers).
    Tensor<float> clips() const;
};

// Near-equal contiguous partition of [0, n) into m segments (sizes differ by
// at most one). Returned as segment start offsets of length m+1.
std::vector<std::size_t> partition_bounds(std::size_t n, std::size_t m);

// Splits the frame sequence [N, 112, 112] into M contiguous segments, picks T
// uniformly spaced frames per segment (with repetition when a segment has
// fewer than T frames), and standardizes pixel values per episode.
ClipSet segment_video(const Tensor<float>& frames, std::size_t num_clips = 16,
                      std::size_t frames_per_clip = 16);

// Loads all readable .png/.pgm frames in filename order, converting to
// grayscale and resizing to 112x112 when needed. Values in [0, 1].
Tensor<float> load_frames(const std::string& dir);

}  // namespace uxmil
