#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "core/image.hpp"
#include "core/rng.hpp"

namespace vsod {

struct SyntheticConfig {
    int videos = 4;
    int frames_per_video = 16;
    int height = 64, width = 64;
    int distractors = 2;
    double shift_prob = 0.25;      // chance a video swaps its salient object mid-way
    std::uint64_t seed = 1;
    // appearance knobs
    int background_fields = 3;     // low-frequency cosine components
    double noise_amplitude = 0.05; // uniform pixel noise, +-amplitude
    double min_contrast = 0.2;     // shape color vs local background
};

struct SyntheticVideo {
    std::string id;
    std::vector<Image> frames;                        // RGB
    std::vector<Image> masks;                         // {0,1}
    std::vector<std::pair<double, double>> centers;   // salient-shape center per frame
    bool has_shift = false;
    int shift_frame = -1;                             // first frame with the new salient object
};

// Fully determined by (config, index); videos are independent streams.
SyntheticVideo generate_video(const SyntheticConfig& config, int index);

// Writes <out>/<video_id>/frames/%05d.ppm and <out>/<video_id>/masks/%05d.pgm,
// ids zero-padded, frames 1-indexed.
void generate_dataset(const SyntheticConfig& config, const std::filesystem::path& out_dir);

std::string video_id_string(int index);

} // namespace vsod
