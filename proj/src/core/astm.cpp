#include "core/astm.hpp"

#include <cmath>
#include <stdexcept>

#include "core/ops.hpp"

namespace vsod {

Astm::Astm(ParamRegistry& reg, const AstmConfig& cfg) : cfg_(cfg) {
    if (cfg_.input_channels < 1) throw std::invalid_argument("astm: input_channels must be positive");
    key_channels_ = cfg_.key_channels > 0 ? cfg_.key_channels : (cfg_.input_channels + 3) / 4;
    const int c = cfg_.input_channels;
    query_key_ = make_conv(reg, "astm.qk", c, key_channels_, 3, 1, 1);
    query_value_ = make_conv(reg, "astm.qv", c, 2 * key_channels_, 3, 1, 1);
    memory_key_ = make_conv(reg, "astm.mk", c, key_channels_, 3, 1, 1);
    memory_value_ = make_conv(reg, "astm.mv", c, 2 * key_channels_, 3, 1, 1);
}

KeyValue Astm::embed(const Tensor& top, const ConvLayer& key_conv, const ConvLayer& value_conv) const {
    if (top.rank() != 4 || top.dim(1) != cfg_.input_channels) {
        throw std::invalid_argument("astm embed: expected [*, " + std::to_string(cfg_.input_channels) +
                                    ", h, w], got " + shape_str(top.shape()));
    }
    return {key_conv(top), value_conv(top)};
}

KeyValue Astm::embed_query(const Tensor& top) const {
    return embed(top, query_key_, query_value_);
}

KeyValue Astm::embed_memory(const Tensor& top) const {
    return embed(top, memory_key_, memory_value_);
}

Tensor stack_memory(const std::vector<Tensor>& embeddings) {
    if (embeddings.empty()) throw std::invalid_argument("stack_memory: memory must contain at least one frame");
    std::vector<Tensor> expanded;
    expanded.reserve(embeddings.size());
    for (const Tensor& e : embeddings) {
        if (e.rank() != 4) throw std::invalid_argument("stack_memory: embeddings must be [B,C,h,w]");
        expanded.push_back(reshape(e, {e.dim(0), 1, e.dim(1), e.dim(2), e.dim(3)}));
    }
    return concat(std::span<const Tensor>(expanded), 1);
}

Tensor Astm::read(const KeyValue& query, const Tensor& mem_keys, const Tensor& mem_values,
                  Tensor* attention_out) const {
    if (mem_keys.rank() != 5 || mem_values.rank() != 5) {
        throw std::invalid_argument("astm read: memory tensors must be [B,N,C,h,w]");
    }
    const int B = query.key.dim(0), Ck = query.key.dim(1), h = query.key.dim(2), w = query.key.dim(3);
    const int N = mem_keys.dim(1);
    if (N < 1) throw std::invalid_argument("astm read: memory is empty");
    if (mem_keys.dim(2) != Ck) {
        throw std::invalid_argument("astm read: key channels disagree (" + std::to_string(Ck) + " vs " +
                                    std::to_string(mem_keys.dim(2)) + ")");
    }
    if (mem_keys.dim(3) != h || mem_keys.dim(4) != w || mem_values.dim(3) != h || mem_values.dim(4) != w) {
        throw std::invalid_argument("astm read: spatial extents disagree");
    }
    const int Cv = mem_values.dim(2);
    if (Cv != 2 * Ck) {
        throw std::invalid_argument("astm read: value channels must be twice the key channels");
    }

    const int hw = h * w;
    // [B,HW,Ck] x [B,Ck,N*HW] similarities, softmax over memory locations
    Tensor kq = permute(reshape(query.key, {B, Ck, hw}), {0, 2, 1});
    Tensor km = reshape(permute(mem_keys, {0, 2, 1, 3, 4}), {B, Ck, N * hw});
    Tensor logits = matmul(kq, km);
    if (cfg_.scale_logits) logits = mul_scalar(logits, float(1.0 / std::sqrt(double(Ck))));
    Tensor attn = softmax(logits, 2);
    if (attention_out) *attention_out = attn;

    Tensor vm = reshape(permute(mem_values, {0, 1, 3, 4, 2}), {B, N * hw, Cv});
    Tensor retrieved = reshape(permute(matmul(attn, vm), {0, 2, 1}), {B, Cv, h, w});
    return concat({retrieved, query.value}, 1);
}

} // namespace vsod
