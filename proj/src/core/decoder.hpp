#pragma once

#include <array>
#include <memory>
#include <string>

#include "core/backbone.hpp"
#include "core/params.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct DecoderConfig {
    int width = 32;            // shared channel count after reduction
    bool no_ffs = false;       // plain upsample+concat+1x1 fusion instead of FFS
    bool channel_gate = false; // sigmoid on the channel recalibration weights

    void validate() const;     // width >= 8
};

// Spatial-attention fusion of an upscaled high-level feature with a
// same-width low-level feature, followed by channel recalibration with a
// residual path.
class FfsBlock {
public:
    FfsBlock(ParamRegistry& reg, const std::string& name, int width, bool gate);

    // high [B,c,h,w], low [B,c,2h,2w] -> [B,c,2h,2w]
    Tensor spatial(const Tensor& high, const Tensor& low) const;
    Tensor channel(const Tensor& s) const;
    Tensor fuse(const Tensor& high, const Tensor& low) const { return channel(spatial(high, low)); }

private:
    ConvLayer up_conv_, attention_conv_, content_conv_, channel_fc_;
    bool gate_;
};

// Baseline fusion: bilinear x2, concat, 1x1 conv back to width.
class ConcatFuse {
public:
    ConcatFuse(ParamRegistry& reg, const std::string& name, int width);
    Tensor fuse(const Tensor& high, const Tensor& low) const;

private:
    ConvLayer conv_;
};

// Two-branch three-stage decoder. Each stage fuses the running decoder state
// with the query's and the adjacent frames' reduced features and merges the
// branches with a 3x3 convolution; the three stage outputs produce the
// saliency logits.
class Decoder {
public:
    Decoder(ParamRegistry& reg, const DecoderConfig& cfg,
            const std::array<int, 5>& pyramid_channels, int temporal_channels);

    struct FrameOutput {
        Tensor saliency_quarter;  // [B,1,H/4,W/4], probabilities
        Tensor dcat;              // [B,3c,H/4,W/4], stage concat (motion head input)
    };

    // temporal_feature may be undefined; the spatial stream then feeds the
    // temporal branch too (memory-free ablation).
    FrameOutput forward(const FeaturePyramid& query, const Tensor& temporal_feature,
                        const FeaturePyramid& memory_prev, const FeaturePyramid& memory_next) const;

    int width() const { return cfg_.width; }

private:
    Tensor fuse(int stage, bool temporal, const Tensor& high, const Tensor& low) const;

    DecoderConfig cfg_;
    ConvLayer reduce_q5_, reduce_q4_, reduce_q3_, reduce_q2_;
    ConvLayer reduce_temporal_, reduce_m4_, reduce_m3_, reduce_m2_;
    std::array<std::unique_ptr<FfsBlock>, 6> ffs_;        // [stage][branch]
    std::array<std::unique_ptr<ConcatFuse>, 6> concat_fuse_;
    std::array<ConvLayer, 3> stage_conv_;
    ConvLayer head_;
};

} // namespace vsod
