#pragma once

#include <utility>
#include <vector>

#include "core/image.hpp"

namespace vsod {

// Per-pixel exclusive-or of two binary masks; the supervision signal for
// boundary motion. Rejects non-binary inputs.
Image motion_label(const Image& mask_a, const Image& mask_b);

// Consecutive (t, t+1) pairs of a clip, 1-based. Empty for T < 2 (the
// motion term then contributes nothing); a warning is emitted once.
std::vector<std::pair<int, int>> clip_motion_pairs(int T);

} // namespace vsod
