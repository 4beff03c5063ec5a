#include "core/decoder.hpp"

#include <stdexcept>

#include "core/ops.hpp"

namespace vsod {

void DecoderConfig::validate() const {
    if (width < 8) throw std::invalid_argument("decoder width must be >= 8");
}

FfsBlock::FfsBlock(ParamRegistry& reg, const std::string& name, int width, bool gate) : gate_(gate) {
    up_conv_ = make_conv(reg, name + ".up", width, width, 3, 1, 1);
    attention_conv_ = make_conv(reg, name + ".att", width, 1, 3, 1, 1);
    content_conv_ = make_conv(reg, name + ".content", width, width, 3, 1, 1);
    channel_fc_ = make_conv(reg, name + ".fc", width, width, 1, 1, 0);
}

Tensor FfsBlock::spatial(const Tensor& high, const Tensor& low) const {
    if (low.dim(2) != 2 * high.dim(2) || low.dim(3) != 2 * high.dim(3)) {
        throw std::invalid_argument("ffs spatial: low feature " + shape_str(low.shape()) +
                                    " is not exactly twice the size of high " + shape_str(high.shape()));
    }
    Tensor upscaled = up_conv_(bilinear_resize(high, low.dim(2), low.dim(3)));
    Tensor attention = attention_conv_(upscaled);   // [B,1,h,w]
    Tensor content = content_conv_(low);            // [B,c,h,w]
    return mul_bc(attention, content);
}

Tensor FfsBlock::channel(const Tensor& s) const {
    Tensor weights = channel_fc_(global_avg_pool(s));  // [B,c,1,1]
    if (gate_) weights = sigmoid(weights);
    return add(s, mul_bc(weights, s));
}

ConcatFuse::ConcatFuse(ParamRegistry& reg, const std::string& name, int width) {
    conv_ = make_conv(reg, name + ".mix", 2 * width, width, 1, 1, 0);
}

Tensor ConcatFuse::fuse(const Tensor& high, const Tensor& low) const {
    if (low.dim(2) != 2 * high.dim(2) || low.dim(3) != 2 * high.dim(3)) {
        throw std::invalid_argument("concat fuse: low feature is not exactly twice the size of high");
    }
    Tensor upscaled = bilinear_resize(high, low.dim(2), low.dim(3));
    return conv_(concat({upscaled, low}, 1));
}

Decoder::Decoder(ParamRegistry& reg, const DecoderConfig& cfg,
                 const std::array<int, 5>& pyramid_channels, int temporal_channels)
    : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.width;
    reduce_q5_ = make_conv(reg, "dec.red.q5", pyramid_channels[4], c, 1, 1, 0);
    reduce_q4_ = make_conv(reg, "dec.red.q4", pyramid_channels[3], c, 1, 1, 0);
    reduce_q3_ = make_conv(reg, "dec.red.q3", pyramid_channels[2], c, 1, 1, 0);
    reduce_q2_ = make_conv(reg, "dec.red.q2", pyramid_channels[1], c, 1, 1, 0);
    reduce_temporal_ = make_conv(reg, "dec.red.et", temporal_channels, c, 1, 1, 0);
    reduce_m4_ = make_conv(reg, "dec.red.m4", 2 * pyramid_channels[3], c, 1, 1, 0);
    reduce_m3_ = make_conv(reg, "dec.red.m3", 2 * pyramid_channels[2], c, 1, 1, 0);
    reduce_m2_ = make_conv(reg, "dec.red.m2", 2 * pyramid_channels[1], c, 1, 1, 0);

    for (int stage = 0; stage < 3; ++stage) {
        for (int branch = 0; branch < 2; ++branch) {
            const std::string name = std::string("dec.fuse.s") + std::to_string(stage + 1) +
                                     (branch == 0 ? ".spatial" : ".temporal");
            const std::size_t slot = std::size_t(stage * 2 + branch);
            if (cfg_.no_ffs) {
                concat_fuse_[slot] = std::make_unique<ConcatFuse>(reg, name, c);
            } else {
                ffs_[slot] = std::make_unique<FfsBlock>(reg, name, c, cfg_.channel_gate);
            }
        }
        stage_conv_[std::size_t(stage)] =
            make_conv(reg, "dec.stage" + std::to_string(stage + 1), 3 * c, c, 3, 1, 1, kReluGain);
    }
    head_ = make_conv(reg, "dec.head", 3 * c, 1, 3, 1, 1, kHeadGain);
}

Tensor Decoder::fuse(int stage, bool temporal, const Tensor& high, const Tensor& low) const {
    const std::size_t slot = std::size_t(stage * 2 + (temporal ? 1 : 0));
    if (cfg_.no_ffs) return concat_fuse_[slot]->fuse(high, low);
    return ffs_[slot]->fuse(high, low);
}

Decoder::FrameOutput Decoder::forward(const FeaturePyramid& query, const Tensor& temporal_feature,
                                      const FeaturePyramid& memory_prev,
                                      const FeaturePyramid& memory_next) const {
    Tensor rq5 = reduce_q5_(query.level[4]);
    const std::array<Tensor, 3> query_low{
        reduce_q4_(query.level[3]), reduce_q3_(query.level[2]), reduce_q2_(query.level[1])};

    // low-level temporal content: the two adjacent frames' features,
    // concatenated (previous, next) on channels, then reduced
    const std::array<const ConvLayer*, 3> mem_reduce{&reduce_m4_, &reduce_m3_, &reduce_m2_};
    std::array<Tensor, 3> memory_low;
    for (int i = 0; i < 3; ++i) {
        const std::size_t lvl = std::size_t(3 - i);
        Tensor cat = concat({memory_prev.level[lvl], memory_next.level[lvl]}, 1);
        memory_low[std::size_t(i)] = (*mem_reduce[std::size_t(i)])(cat);
    }

    Tensor temporal_high = temporal_feature.defined() ? reduce_temporal_(temporal_feature) : rq5;

    Tensor d = rq5;
    std::array<Tensor, 3> stages;
    for (int i = 0; i < 3; ++i) {
        const Tensor& h_s = i == 0 ? rq5 : d;
        const Tensor& h_t = i == 0 ? temporal_high : d;
        Tensor f_s = fuse(i, false, h_s, query_low[std::size_t(i)]);
        Tensor f_t = fuse(i, true, h_t, memory_low[std::size_t(i)]);
        Tensor up = bilinear_resize(d, f_s.dim(2), f_s.dim(3));
        if (f_s.dim(2) != f_t.dim(2) || f_s.dim(3) != f_t.dim(3)) {
            throw std::invalid_argument("decode stage: branch resolutions disagree");
        }
        d = relu(stage_conv_[std::size_t(i)](concat({f_s, f_t, up}, 1)));
        stages[std::size_t(i)] = d;
    }

    const int out_h = stages[2].dim(2), out_w = stages[2].dim(3);
    Tensor dcat = concat({bilinear_resize(stages[0], out_h, out_w),
                          bilinear_resize(stages[1], out_h, out_w), stages[2]},
                         1);
    FrameOutput out;
    out.dcat = dcat;
    out.saliency_quarter = sigmoid(head_(dcat));
    return out;
}

} // namespace vsod
