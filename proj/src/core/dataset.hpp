#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "core/image.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct VideoRef {
    std::string id;
    std::filesystem::path dir;  // contains frames/ and masks/
    int num_frames = 0;
    bool has_masks = false;
};

// Expects <root>/<video_id>/frames/%05d.ppm (+ masks/%05d.pgm for labeled
// data), 1-indexed without gaps; missing indices are rejected listing them.
std::vector<VideoRef> open_dataset(const std::filesystem::path& root, bool require_masks);
VideoRef open_video(const std::filesystem::path& dir, bool require_masks);

Image load_frame(const VideoRef& video, int index);  // 1-based
Image load_mask(const VideoRef& video, int index);   // binarized at 0.5

struct VideoClip {
    std::string video_id;
    int start = 1;  // 1-based index of the first frame
    std::vector<Image> frames;
    std::vector<Image> masks;
    int length() const { return int(frames.size()); }
};

VideoClip sample_clip(const VideoRef& video, int T, int start);

// Horizontal flip and temporal inversion, each with probability 1/2; frames
// and masks move in lockstep.
void augment_clip(VideoClip& clip, Rng& rng);

// Memory frames for query position t (1-based) in a clip of length T.
// A missing neighbor at the clip boundary is replaced by the existing one;
// T = 1 degenerates to the query frame itself.
std::pair<int, int> neighbor_indices(int t, int T);

// Batch tensorization, [B,3,H,W] / [B,1,H,W].
Tensor frames_to_tensor(const std::vector<const Image*>& frames);
Tensor masks_to_tensor(const std::vector<const Image*>& masks);
Image tensor_to_map(const Tensor& t, int batch_index);  // [B,1,H,W] slice

} // namespace vsod
