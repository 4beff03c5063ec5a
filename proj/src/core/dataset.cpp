#include "core/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <stdexcept>

namespace vsod {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d%s", index, ext);
    return buf;
}

// Counts %05d-indexed files from 1 and reports holes.
int count_indexed(const fs::path& dir, const char* ext, const std::string& what) {
    if (!fs::is_directory(dir)) throw std::runtime_error(what + " directory missing: " + dir.string());
    int count = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) ++count;
    }
    std::vector<int> missing;
    for (int i = 1; i <= count; ++i) {
        if (!fs::exists(dir / frame_name(i, ext))) missing.push_back(i);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 8; ++i) {
            list += (i ? ", " : "") + std::to_string(missing[i]);
        }
        if (missing.size() > 8) list += ", ...";
        throw std::runtime_error(what + " in " + dir.string() + " has missing indices: " + list);
    }
    return count;
}

} // namespace

VideoRef open_video(const fs::path& dir, bool require_masks) {
    VideoRef ref;
    ref.id = dir.filename().string();
    ref.dir = dir;
    ref.num_frames = count_indexed(dir / "frames", ".ppm", "frames");
    if (ref.num_frames == 0) throw std::runtime_error("no frames found under " + (dir / "frames").string());
    ref.has_masks = fs::is_directory(dir / "masks");
    if (require_masks || ref.has_masks) {
        const int masks = count_indexed(dir / "masks", ".pgm", "masks");
        if (require_masks && masks != ref.num_frames) {
            throw std::runtime_error(dir.string() + ": " + std::to_string(masks) + " masks for " +
                                     std::to_string(ref.num_frames) + " frames");
        }
        ref.has_masks = masks == ref.num_frames;
    }
    return ref;
}

std::vector<VideoRef> open_dataset(const fs::path& root, bool require_masks) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset root missing: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<VideoRef> videos;
    videos.reserve(dirs.size());
    for (const auto& d : dirs) videos.push_back(open_video(d, require_masks));
    if (videos.empty()) throw std::runtime_error("dataset root has no videos: " + root.string());
    return videos;
}

Image load_frame(const VideoRef& video, int index) {
    Image img = read_pnm(video.dir / "frames" / frame_name(index, ".ppm"));
    if (img.channels != 3) throw std::runtime_error("frame is not a pixmap: " + video.id);
    return img;
}

Image load_mask(const VideoRef& video, int index) {
    Image img = read_pnm(video.dir / "masks" / frame_name(index, ".pgm"));
    if (img.channels != 1) throw std::runtime_error("mask is not a graymap: " + video.id);
    for (auto& v : img.data) v = v >= 0.5f ? 1.0f : 0.0f;
    return img;
}

VideoClip sample_clip(const VideoRef& video, int T, int start) {
    if (T < 1) throw std::invalid_argument("sample_clip: T must be >= 1");
    if (start < 1 || start + T - 1 > video.num_frames) {
        throw std::invalid_argument("sample_clip: start " + std::to_string(start) + " with T " +
                                    std::to_string(T) + " outside video of " +
                                    std::to_string(video.num_frames) + " frames");
    }
    VideoClip clip;
    clip.video_id = video.id;
    clip.start = start;
    for (int i = 0; i < T; ++i) {
        clip.frames.push_back(load_frame(video, start + i));
        if (video.has_masks) clip.masks.push_back(load_mask(video, start + i));
    }
    return clip;
}

void augment_clip(VideoClip& clip, Rng& rng) {
    const bool flip = rng.coin();
    const bool invert = rng.coin();
    if (flip) {
        for (auto& f : clip.frames) f = hflip(f);
        for (auto& m : clip.masks) m = hflip(m);
    }
    if (invert) {
        std::reverse(clip.frames.begin(), clip.frames.end());
        std::reverse(clip.masks.begin(), clip.masks.end());
    }
}

std::pair<int, int> neighbor_indices(int t, int T) {
    if (t < 1 || t > T) {
        throw std::invalid_argument("neighbor_indices: t " + std::to_string(t) + " outside clip of length " +
                                    std::to_string(T));
    }
    if (T == 1) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "warning: single-frame clip, memory degenerates to the query frame\n";
            warned = true;
        }
        return {1, 1};
    }
    const int prev = t - 1, next = t + 1;
    if (prev < 1) return {next, next};
    if (next > T) return {prev, prev};
    return {prev, next};
}

namespace {

Tensor stack_images(const std::vector<const Image*>& images, int channels, const char* what) {
    if (images.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
    const Image& first = *images.front();
    if (first.channels != channels) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) +
                                    " channels, got " + std::to_string(first.channels));
    }
    for (const Image* img : images) {
        if (img->channels != channels || img->height != first.height || img->width != first.width) {
            throw std::invalid_argument(std::string(what) + ": images in a batch must share shape");
        }
    }
    std::vector<float> data;
    data.reserve(images.size() * first.size());
    for (const Image* img : images) data.insert(data.end(), img->data.begin(), img->data.end());
    return Tensor::from_data({int(images.size()), channels, first.height, first.width}, std::move(data));
}

} // namespace

Tensor frames_to_tensor(const std::vector<const Image*>& frames) {
    return stack_images(frames, 3, "frames_to_tensor");
}

Tensor masks_to_tensor(const std::vector<const Image*>& masks) {
    return stack_images(masks, 1, "masks_to_tensor");
}

Image tensor_to_map(const Tensor& t, int batch_index) {
    if (t.rank() != 4 || t.dim(1) != 1) {
        throw std::invalid_argument("tensor_to_map: expected [B,1,H,W], got " + shape_str(t.shape()));
    }
    const int H = t.dim(2), W = t.dim(3);
    Image img(1, H, W);
    const std::size_t off = std::size_t(batch_index) * H * W;
    std::copy_n(t.data().data() + off, std::size_t(H) * W, img.data.data());
    return img;
}

} // namespace vsod
