#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace vsod {

struct NamedBuffer {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

// Binary container: magic "MMNC", u32 version (1), u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, float32 payload.
// Everything little-endian. Malformed files are rejected with the byte
// offset of the problem.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedBuffer>& buffers);
std::vector<NamedBuffer> read_checkpoint(const std::filesystem::path& path);

} // namespace vsod
