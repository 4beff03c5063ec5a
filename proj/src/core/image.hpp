#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace vsod {

// Planar float image, values in [0,1], layout [c][y][x].
struct Image {
    int channels = 0, height = 0, width = 0;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[(std::size_t(c) * height + std::size_t(y)) * width + std::size_t(x)];
    }
    float at(int c, int y, int x) const {
        return data[(std::size_t(c) * height + std::size_t(y)) * width + std::size_t(x)];
    }
    std::size_t size() const { return data.size(); }

    std::vector<float> data;
};

Image hflip(const Image& img);

// Binary portable anymap I/O, maxval 255. P5 (graymap) carries one channel,
// P6 (pixmap) three. Gray value g maps to g/255 on read; writes quantize
// with round(v*255) clamped to [0,255]. Malformed files are rejected with
// the byte offset of the problem.
Image read_pnm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);
void write_ppm(const std::filesystem::path& path, const Image& img);

// Writes {0,255} from a {0,1} mask.
void write_mask_pgm(const std::filesystem::path& path, const Image& mask);

} // namespace vsod
