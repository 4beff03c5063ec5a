#include "core/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace vsod {

namespace fs = std::filesystem;

Image hflip(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    return out;
}

namespace {

[[noreturn]] void parse_fail(const fs::path& path, std::size_t offset, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what + " at byte " + std::to_string(offset));
}

std::vector<std::uint8_t> read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

bool is_space(std::uint8_t b) { return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\v' || b == '\f'; }

int parse_int(const fs::path& path, const std::vector<std::uint8_t>& bytes, std::size_t& pos,
              const char* field) {
    while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
        parse_fail(path, pos, std::string("expected ") + field);
    }
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        v = v * 10 + (bytes[pos] - '0');
        if (v > 1 << 20) parse_fail(path, pos, std::string(field) + " out of range");
        ++pos;
    }
    return int(v);
}

void write_bytes(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& payload) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out.write(header.data(), std::streamsize(header.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::uint8_t quantize(float v) {
    const float scaled = std::round(v * 255.0f);
    return std::uint8_t(std::min(std::max(scaled, 0.0f), 255.0f));
}

} // namespace

Image read_pnm(const fs::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        parse_fail(path, 0, "expected magic 'P5' or 'P6'");
    }
    const int channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const int width = parse_int(path, bytes, pos, "width");
    const int height = parse_int(path, bytes, pos, "height");
    const std::size_t maxval_pos = pos;
    const int maxval = parse_int(path, bytes, pos, "maxval");
    if (maxval != 255) parse_fail(path, maxval_pos, "unsupported maxval " + std::to_string(maxval));
    if (pos >= bytes.size() || !is_space(bytes[pos])) parse_fail(path, pos, "expected single whitespace before payload");
    ++pos;

    const std::size_t need = std::size_t(channels) * width * height;
    if (bytes.size() - pos < need) {
        parse_fail(path, bytes.size(),
                   "truncated payload, need " + std::to_string(need) + " bytes, have " +
                       std::to_string(bytes.size() - pos));
    }

    Image img(channels, height, width);
    // PNM payload is interleaved per pixel; internal layout is planar.
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                img.at(c, y, x) = float(bytes[pos++]) / 255.0f;
            }
        }
    }
    return img;
}

void write_pgm(const fs::path& path, const Image& img) {
    if (img.channels != 1) throw std::invalid_argument("write_pgm: image must have one channel");
    std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> payload(std::size_t(img.width) * img.height);
    std::size_t at = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) payload[at++] = quantize(img.at(0, y, x));
    }
    write_bytes(path, header, payload);
}

void write_ppm(const fs::path& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_ppm: image must have three channels");
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> payload(3 * std::size_t(img.width) * img.height);
    std::size_t at = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) payload[at++] = quantize(img.at(c, y, x));
        }
    }
    write_bytes(path, header, payload);
}

void write_mask_pgm(const fs::path& path, const Image& mask) {
    if (mask.channels != 1) throw std::invalid_argument("write_mask_pgm: mask must have one channel");
    Image scaled = mask;
    for (auto& v : scaled.data) v = v >= 0.5f ? 1.0f : 0.0f;
    write_pgm(path, scaled);
}

} // namespace vsod
