#pragma once

#include <array>

#include "core/params.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct BackboneConfig {
    int height = 64, width = 64;
    std::array<int, 5> channels{16, 24, 32, 48, 64};
    int blocks_per_level = 2;

    void validate() const;  // size divisible by 32, channels non-decreasing
};

// level[k] has stride 2^(k+1); level[4] feeds the memory module and the
// spatial-branch head.
struct FeaturePyramid {
    std::array<Tensor, 5> level;
};

// Five stride-2 stages of 3x3 convolutions with residual refinement blocks.
// One weight set serves query and memory frames alike.
class Backbone {
public:
    Backbone(ParamRegistry& reg, const BackboneConfig& cfg);

    FeaturePyramid encode(const Tensor& frames) const;  // [B,3,H,W], H,W % 32 == 0

    const BackboneConfig& config() const { return cfg_; }

private:
    struct Level {
        ConvLayer down;
        std::vector<ConvLayer> blocks;
    };
    BackboneConfig cfg_;
    std::vector<Level> levels_;
};

} // namespace vsod
