#include "core/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vsod {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 24));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

[[noreturn]] void corrupt(const std::filesystem::path& path, std::size_t offset, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what + " at byte " + std::to_string(offset));
}

std::uint32_t take_u32(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                       std::size_t& pos, const char* what) {
    if (bytes.size() - pos < 4) corrupt(path, pos, std::string("truncated ") + what);
    std::uint32_t v = std::uint32_t(bytes[pos]) | std::uint32_t(bytes[pos + 1]) << 8 |
                      std::uint32_t(bytes[pos + 2]) << 16 | std::uint32_t(bytes[pos + 3]) << 24;
    pos += 4;
    return v;
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedBuffer>& buffers) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, std::uint32_t(buffers.size()));
    for (const NamedBuffer& b : buffers) {
        if (shape_numel(b.shape) != b.data.size()) {
            throw std::logic_error("checkpoint: buffer '" + b.name + "' does not match its shape");
        }
        put_u32(out, std::uint32_t(b.name.size()));
        out.insert(out.end(), b.name.begin(), b.name.end());
        put_u32(out, std::uint32_t(b.shape.size()));
        for (int d : b.shape) put_u32(out, std::uint32_t(d));
        for (float v : b.data) put_f32(out, v);
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error(path.string() + ": cannot open for writing");
    file.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!file) throw std::runtime_error(path.string() + ": write failed");
}

std::vector<NamedBuffer> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error(path.string() + ": cannot open for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        corrupt(path, 0, "bad magic, expected 'MMNC'");
    }
    pos = 4;
    const std::uint32_t version = take_u32(path, bytes, pos, "version");
    if (version != kVersion) corrupt(path, 4, "unsupported version " + std::to_string(version));
    const std::uint32_t count = take_u32(path, bytes, pos, "tensor count");

    std::vector<NamedBuffer> buffers;
    buffers.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBuffer b;
        const std::uint32_t name_len = take_u32(path, bytes, pos, "name length");
        if (bytes.size() - pos < name_len) corrupt(path, pos, "truncated name");
        b.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        const std::uint32_t rank = take_u32(path, bytes, pos, "rank");
        if (rank > 8) corrupt(path, pos - 4, "implausible rank " + std::to_string(rank));
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = take_u32(path, bytes, pos, "dimension");
            if (dim == 0) corrupt(path, pos - 4, "zero dimension");
            b.shape.push_back(int(dim));
            numel *= dim;
        }
        if (bytes.size() - pos < numel * 4) {
            corrupt(path, bytes.size(), "truncated payload for '" + b.name + "'");
        }
        b.data.resize(numel);
        std::memcpy(b.data.data(), bytes.data() + pos, numel * 4);
        pos += numel * 4;
        buffers.push_back(std::move(b));
    }
    if (pos != bytes.size()) corrupt(path, pos, "trailing bytes");
    return buffers;
}

} // namespace vsod
