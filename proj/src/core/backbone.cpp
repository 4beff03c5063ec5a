#include "core/backbone.hpp"

#include <stdexcept>
#include <string>

namespace vsod {

void BackboneConfig::validate() const {
    if (height % 32 != 0 || width % 32 != 0) {
        throw std::invalid_argument("backbone input size " + std::to_string(height) + "x" +
                                    std::to_string(width) + " is not divisible by 32");
    }
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
        if (channels[i + 1] < channels[i]) {
            throw std::invalid_argument("backbone channels must be non-decreasing");
        }
    }
    if (blocks_per_level < 1) throw std::invalid_argument("blocks_per_level must be positive");
    for (int c : channels) {
        if (c < 1) throw std::invalid_argument("backbone channels must be positive");
    }
}

Backbone::Backbone(ParamRegistry& reg, const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int cin = 3;
    for (int k = 0; k < 5; ++k) {
        Level level;
        const int cout = cfg_.channels[std::size_t(k)];
        const std::string base = "backbone.l" + std::to_string(k + 1);
        level.down = make_conv(reg, base + ".down", cin, cout, 3, 2, 1, kReluGain);
        for (int b = 1; b < cfg_.blocks_per_level; ++b) {
            level.blocks.push_back(
                make_conv(reg, base + ".res" + std::to_string(b), cout, cout, 3, 1, 1, kResidualGain));
        }
        levels_.push_back(std::move(level));
        cin = cout;
    }
}

FeaturePyramid Backbone::encode(const Tensor& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != 3) {
        throw std::invalid_argument("encode: expected [B,3,H,W], got " + shape_str(frames.shape()));
    }
    if (frames.dim(2) % 32 != 0 || frames.dim(3) % 32 != 0) {
        throw std::invalid_argument("encode: input size " + std::to_string(frames.dim(2)) + "x" +
                                    std::to_string(frames.dim(3)) + " is not divisible by 32");
    }
    FeaturePyramid pyr;
    Tensor x = frames;
    for (int k = 0; k < 5; ++k) {
        const Level& level = levels_[std::size_t(k)];
        x = relu(level.down(x));
        for (const ConvLayer& block : level.blocks) {
            x = add(x, relu(block(x)));
        }
        pyr.level[std::size_t(k)] = x;
    }
    return pyr;
}

} // namespace vsod
