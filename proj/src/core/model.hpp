#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "core/astm.hpp"
#include "core/backbone.hpp"
#include "core/decoder.hpp"
#include "core/params.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct ModelConfig {
    int height = 64, width = 64;
    std::array<int, 5> channels{16, 24, 32, 48, 64};
    int blocks_per_level = 2;
    int decoder_width = 32;
    int key_channels = 0;   // 0 picks ceil(top channels / 4)
    int memory_frames = 2;  // 2 = adjacent pair, 4 = extended window
    bool no_ffs = false;
    bool no_astm = false;
    bool no_motion = false;  // drops the motion loss term; the head still exists
    bool scale_logits = false;
    bool channel_gate = false;

    void validate() const;
    std::vector<float> fingerprint() const;
    static ModelConfig from_fingerprint(const std::vector<float>& v);
};

// Memory frame indices for query position t in a clip of length T (1-based).
// Out-of-range offsets fall back to their mirrored counterpart, then to the
// nearest valid frame.
std::vector<int> memory_frame_indices(int t, int T, int memory_frames);

// Full network: shared encoder, adjacent-frame memory read, two-branch
// decoder, saliency and motion heads.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    const Backbone& backbone() const { return backbone_; }
    const Astm& astm() const { return astm_; }
    const Decoder& decoder() const { return decoder_; }

    struct ClipResult {
        std::vector<Tensor> saliency;  // per frame, [B,1,H,W]
        std::vector<Tensor> dcat;      // per frame, [B,3c,H/4,W/4]
        std::vector<Tensor> motion;    // per (t,t+1) pair, [B,1,H,W]
    };

    // frames[t] is [B,3,H,W]; every clip in the batch shares its length.
    ClipResult forward_clip(const std::vector<Tensor>& frames, bool with_motion) const;

    // One frame with explicit neighbors (memory pair).
    struct FrameResult {
        Tensor saliency;  // [B,1,H,W]
        Tensor dcat;
    };
    FrameResult forward_frame(const Tensor& query, const Tensor& prev, const Tensor& next) const;

    Tensor predict_motion(const Tensor& dcat_t, const Tensor& dcat_next) const;

private:
    FrameResult decode_with(const FeaturePyramid& query, const FeaturePyramid& prev,
                            const FeaturePyramid& next,
                            const std::vector<const KeyValue*>& memory) const;

    ModelConfig cfg_;
    ParamRegistry reg_;
    Backbone backbone_;
    Astm astm_;
    Decoder decoder_;
    ConvLayer motion_head_;
};

} // namespace vsod
