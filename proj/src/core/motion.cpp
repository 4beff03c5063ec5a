#include "core/motion.hpp"

#include <iostream>
#include <stdexcept>

namespace vsod {

Image motion_label(const Image& mask_a, const Image& mask_b) {
    if (mask_a.channels != 1 || mask_b.channels != 1 || mask_a.height != mask_b.height ||
        mask_a.width != mask_b.width) {
        throw std::invalid_argument("motion_label: masks must be single-channel and share shape");
    }
    Image out(1, mask_a.height, mask_a.width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float a = mask_a.data[i], b = mask_b.data[i];
        if ((a != 0.0f && a != 1.0f) || (b != 0.0f && b != 1.0f)) {
            throw std::invalid_argument("motion_label: inputs must be strictly binary");
        }
        out.data[i] = a != b ? 1.0f : 0.0f;
    }
    return out;
}

std::vector<std::pair<int, int>> clip_motion_pairs(int T) {
    std::vector<std::pair<int, int>> pairs;
    if (T < 2) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "warning: clip shorter than two frames, motion term skipped\n";
            warned = true;
        }
        return pairs;
    }
    pairs.reserve(std::size_t(T) - 1);
    for (int t = 1; t < T; ++t) pairs.emplace_back(t, t + 1);
    return pairs;
}

} // namespace vsod
