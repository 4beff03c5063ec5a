#include "core/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "core/dataset.hpp"
#include "core/motion.hpp"
#include "core/ops.hpp"

namespace vsod {

void ModelConfig::validate() const {
    BackboneConfig bb{height, width, channels, blocks_per_level};
    bb.validate();
    DecoderConfig dec{decoder_width, no_ffs, channel_gate};
    dec.validate();
    if (memory_frames != 2 && memory_frames != 4) {
        throw std::invalid_argument("memory_frames must be 2 or 4");
    }
    if (key_channels < 0) throw std::invalid_argument("key_channels must be >= 0");
}

std::vector<float> ModelConfig::fingerprint() const {
    std::vector<float> v{float(height), float(width)};
    for (int c : channels) v.push_back(float(c));
    v.push_back(float(blocks_per_level));
    v.push_back(float(decoder_width));
    v.push_back(float(key_channels));
    v.push_back(float(memory_frames));
    v.push_back(no_ffs ? 1.0f : 0.0f);
    v.push_back(no_astm ? 1.0f : 0.0f);
    v.push_back(no_motion ? 1.0f : 0.0f);
    v.push_back(scale_logits ? 1.0f : 0.0f);
    v.push_back(channel_gate ? 1.0f : 0.0f);
    return v;
}

ModelConfig ModelConfig::from_fingerprint(const std::vector<float>& v) {
    if (v.size() != 16) throw std::runtime_error("config fingerprint has unexpected length");
    ModelConfig cfg;
    std::size_t i = 0;
    cfg.height = int(v[i++]);
    cfg.width = int(v[i++]);
    for (auto& c : cfg.channels) c = int(v[i++]);
    cfg.blocks_per_level = int(v[i++]);
    cfg.decoder_width = int(v[i++]);
    cfg.key_channels = int(v[i++]);
    cfg.memory_frames = int(v[i++]);
    cfg.no_ffs = v[i++] != 0.0f;
    cfg.no_astm = v[i++] != 0.0f;
    cfg.no_motion = v[i++] != 0.0f;
    cfg.scale_logits = v[i++] != 0.0f;
    cfg.channel_gate = v[i++] != 0.0f;
    cfg.validate();
    return cfg;
}

std::vector<int> memory_frame_indices(int t, int T, int memory_frames) {
    if (t < 1 || t > T) throw std::invalid_argument("memory_frame_indices: t outside clip");
    const std::vector<int> offsets =
        memory_frames == 4 ? std::vector<int>{-2, -1, 1, 2} : std::vector<int>{-1, 1};
    std::vector<int> indices;
    indices.reserve(offsets.size());
    for (int off : offsets) {
        int cand = t + off;
        if (cand < 1 || cand > T) cand = t - off;          // mirrored counterpart
        if (cand < 1 || cand > T) cand = std::clamp(t + off, 1, T);
        if (cand == t && T > 1) cand = t == 1 ? t + 1 : t - 1;
        indices.push_back(cand);
    }
    return indices;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      reg_(seed),
      backbone_(reg_, BackboneConfig{cfg.height, cfg.width, cfg.channels, cfg.blocks_per_level}),
      astm_(reg_, AstmConfig{cfg.channels[4], cfg.key_channels, cfg.scale_logits}),
      decoder_(reg_, DecoderConfig{cfg.decoder_width, cfg.no_ffs, cfg.channel_gate}, cfg.channels,
               4 * ((cfg.key_channels > 0) ? cfg.key_channels : (cfg.channels[4] + 3) / 4)) {
    cfg_.validate();
    motion_head_ = make_conv(reg_, "motion.head", 6 * cfg.decoder_width, 1, 3, 1, 1, kHeadGain);
}

Model::FrameResult Model::decode_with(const FeaturePyramid& query, const FeaturePyramid& prev,
                                      const FeaturePyramid& next,
                                      const std::vector<const KeyValue*>& memory) const {
    Tensor temporal;
    if (!cfg_.no_astm) {
        std::vector<Tensor> keys, values;
        keys.reserve(memory.size());
        values.reserve(memory.size());
        for (const KeyValue* kv : memory) {
            keys.push_back(kv->key);
            values.push_back(kv->value);
        }
        KeyValue q = astm_.embed_query(query.level[4]);
        temporal = astm_.read(q, stack_memory(keys), stack_memory(values));
    }
    Decoder::FrameOutput out = decoder_.forward(query, temporal, prev, next);

    const int h = query.level[0].dim(2) * 2, w = query.level[0].dim(3) * 2;
    FrameResult result;
    result.saliency = bilinear_resize(out.saliency_quarter, h, w);
    result.dcat = out.dcat;
    return result;
}

Model::ClipResult Model::forward_clip(const std::vector<Tensor>& frames, bool with_motion) const {
    if (frames.empty()) throw std::invalid_argument("forward_clip: empty clip");
    const int T = int(frames.size());

    std::vector<FeaturePyramid> pyramids;
    pyramids.reserve(frames.size());
    for (const Tensor& f : frames) pyramids.push_back(backbone_.encode(f));

    // memory embeddings are per frame; banks are rebuilt per query position
    std::vector<KeyValue> memory_embeds;
    if (!cfg_.no_astm) {
        memory_embeds.reserve(frames.size());
        for (const FeaturePyramid& p : pyramids) memory_embeds.push_back(astm_.embed_memory(p.level[4]));
    }

    ClipResult result;
    for (int t = 1; t <= T; ++t) {
        const auto [prev, next] = neighbor_indices(t, T);
        std::vector<const KeyValue*> bank;
        if (!cfg_.no_astm) {
            for (int idx : memory_frame_indices(t, T, cfg_.memory_frames)) {
                bank.push_back(&memory_embeds[std::size_t(idx - 1)]);
            }
        }
        // the memory-free ablation feeds the temporal branch the query's own
        // low-level features
        const FeaturePyramid& low_prev =
            cfg_.no_astm ? pyramids[std::size_t(t - 1)] : pyramids[std::size_t(prev - 1)];
        const FeaturePyramid& low_next =
            cfg_.no_astm ? pyramids[std::size_t(t - 1)] : pyramids[std::size_t(next - 1)];
        FrameResult fr = decode_with(pyramids[std::size_t(t - 1)], low_prev, low_next, bank);
        result.saliency.push_back(fr.saliency);
        result.dcat.push_back(fr.dcat);
    }

    if (with_motion) {
        for (const auto& [a, b] : clip_motion_pairs(T)) {
            result.motion.push_back(
                predict_motion(result.dcat[std::size_t(a - 1)], result.dcat[std::size_t(b - 1)]));
        }
    }
    return result;
}

Model::FrameResult Model::forward_frame(const Tensor& query, const Tensor& prev,
                                        const Tensor& next) const {
    FeaturePyramid pq = backbone_.encode(query);
    FeaturePyramid pp = backbone_.encode(prev);
    FeaturePyramid pn = backbone_.encode(next);
    std::vector<KeyValue> embeds;
    std::vector<const KeyValue*> bank;
    if (!cfg_.no_astm) {
        embeds.push_back(astm_.embed_memory(pp.level[4]));
        embeds.push_back(astm_.embed_memory(pn.level[4]));
        bank = {&embeds[0], &embeds[1]};
    }
    const FeaturePyramid& lp = cfg_.no_astm ? pq : pp;
    const FeaturePyramid& ln = cfg_.no_astm ? pq : pn;
    return decode_with(pq, lp, ln, bank);
}

Tensor Model::predict_motion(const Tensor& dcat_t, const Tensor& dcat_next) const {
    if (dcat_t.shape() != dcat_next.shape()) {
        throw std::invalid_argument("predict_motion: feature resolutions disagree, " +
                                    shape_str(dcat_t.shape()) + " vs " + shape_str(dcat_next.shape()));
    }
    Tensor logits = motion_head_(concat({dcat_t, dcat_next}, 1));
    Tensor prob = sigmoid(logits);
    return bilinear_resize(prob, dcat_t.dim(2) * 4, dcat_t.dim(3) * 4);
}

} // namespace vsod
