#pragma once

#include <vector>

#include "core/params.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct AstmConfig {
    int input_channels = 64;   // channel count of the top pyramid level
    int key_channels = 0;      // 0 picks ceil(input_channels / 4)
    bool scale_logits = false; // optional 1/sqrt(Ck) on the similarities
};

// Key/value embedding of one frame's top-level features. Value carries
// twice the key's channel count.
struct KeyValue {
    Tensor key;    // [B, Ck, h, w]
    Tensor value;  // [B, 2Ck, h, w]
};

// Attention read over the adjacent frames: four distinct embedding
// convolutions (query/memory x key/value) and a non-local softmax read
// across every memory location.
class Astm {
public:
    Astm(ParamRegistry& reg, const AstmConfig& cfg);

    KeyValue embed_query(const Tensor& top_features) const;
    KeyValue embed_memory(const Tensor& top_features) const;

    // mem_keys [B,N,Ck,h,w], mem_values [B,N,2Ck,h,w] -> [B,4Ck,h,w].
    // attention_out, when given, receives the normalized weights
    // [B, h*w, N*h*w].
    Tensor read(const KeyValue& query, const Tensor& mem_keys, const Tensor& mem_values,
                Tensor* attention_out = nullptr) const;

    int key_channels() const { return key_channels_; }

private:
    KeyValue embed(const Tensor& top, const ConvLayer& key_conv, const ConvLayer& value_conv) const;

    AstmConfig cfg_;
    int key_channels_;
    ConvLayer query_key_, query_value_, memory_key_, memory_value_;
};

// Per-frame embeddings stacked along a new leading memory axis:
// N x [B,C,h,w] -> [B,N,C,h,w].
Tensor stack_memory(const std::vector<Tensor>& embeddings);

} // namespace vsod
