#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "core/astm.hpp"
#include "core/backbone.hpp"
#include "core/decoder.hpp"
#include "core/losses.hpp"
#include "core/model.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

using namespace vsod;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = float(rng.uniform(lo, hi));
    return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor rand_frames(int b, int h, int w, Rng& rng) {
    std::vector<float> v(std::size_t(b) * 3 * h * w);
    for (auto& x : v) x = float(rng.uniform(0.0, 1.0));
    return Tensor::from_data({b, 3, h, w}, std::move(v));
}

void fill_param(ParamRegistry& reg, const std::string& name, float value) {
    Tensor t = reg.find(name);
    for (auto& v : t.mutable_data()) v = value;
}

// per-location attention read, brute force
std::vector<float> memory_read_oracle(const Tensor& qk, const Tensor& qv, const Tensor& mk,
                                      const Tensor& mv) {
    const int B = qk.dim(0), Ck = qk.dim(1), h = qk.dim(2), w = qk.dim(3);
    const int N = mk.dim(1), Cv = mv.dim(2);
    const int hw = h * w, nm = N * hw;
    std::vector<float> out(std::size_t(B) * (Cv + Cv) * hw);
    auto q_at = [&](int b, int c, int p) { return double(qk.data()[(std::size_t(b) * Ck + c) * hw + p]); };
    auto mk_at = [&](int b, int j, int c) {
        const int n = j / hw, p = j % hw;
        return double(mk.data()[((std::size_t(b) * N + n) * Ck + c) * hw + p]);
    };
    auto mv_at = [&](int b, int j, int c) {
        const int n = j / hw, p = j % hw;
        return double(mv.data()[((std::size_t(b) * N + n) * Cv + c) * hw + p]);
    };
    for (int b = 0; b < B; ++b) {
        for (int p = 0; p < hw; ++p) {
            std::vector<double> sim(std::size_t(nm), 0.0);
            double mx = -1e300;
            for (int j = 0; j < nm; ++j) {
                double acc = 0.0;
                for (int c = 0; c < Ck; ++c) acc += q_at(b, c, p) * mk_at(b, j, c);
                sim[std::size_t(j)] = acc;
                mx = std::max(mx, acc);
            }
            double z = 0.0;
            for (double& s : sim) {
                s = std::exp(s - mx);
                z += s;
            }
            for (double& s : sim) s /= z;
            for (int c = 0; c < Cv; ++c) {
                double acc = 0.0;
                for (int j = 0; j < nm; ++j) acc += sim[std::size_t(j)] * mv_at(b, j, c);
                out[(std::size_t(b) * 2 * Cv + c) * hw + p] = float(acc);
            }
            // second half of the channels is the query value
            for (int c = 0; c < Cv; ++c) {
                out[(std::size_t(b) * 2 * Cv + Cv + c) * hw + p] =
                    qv.data()[(std::size_t(b) * Cv + c) * hw + p];
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("backbone produces the documented pyramid geometry") {
    ParamRegistry reg(1);
    BackboneConfig cfg;
    Backbone bb(reg, cfg);
    Rng rng(2);
    Tensor frames = rand_frames(1, 64, 64, rng);
    FeaturePyramid p = bb.encode(frames);
    const int sizes[5] = {32, 16, 8, 4, 2};
    const int chans[5] = {16, 24, 32, 48, 64};
    for (int k = 0; k < 5; ++k) {
        CHECK(p.level[std::size_t(k)].shape() == Shape{1, chans[k], sizes[k], sizes[k]});
    }
}

TEST_CASE("backbone encoding is deterministic and role-independent") {
    ParamRegistry reg(3);
    Backbone bb(reg, BackboneConfig{});
    Rng rng(4);
    Tensor frames = rand_frames(2, 64, 64, rng);
    FeaturePyramid a = bb.encode(frames);
    FeaturePyramid b = bb.encode(frames);
    for (int k = 0; k < 5; ++k) {
        REQUIRE(a.level[std::size_t(k)].size() == b.level[std::size_t(k)].size());
        for (std::size_t i = 0; i < a.level[std::size_t(k)].size(); ++i) {
            CHECK(a.level[std::size_t(k)].data()[i] == b.level[std::size_t(k)].data()[i]);
        }
    }
}

TEST_CASE("backbone rejects sizes not divisible by 32") {
    ParamRegistry reg(5);
    Backbone bb(reg, BackboneConfig{});
    CHECK_THROWS_WITH_AS(bb.encode(Tensor::zeros({1, 3, 48, 64})), doctest::Contains("divisible"),
                         std::invalid_argument);
    BackboneConfig bad;
    bad.height = 48;
    CHECK_THROWS_AS(BackboneConfig(bad).validate(), std::invalid_argument);
    BackboneConfig decreasing;
    decreasing.channels = {16, 8, 16, 16, 16};
    CHECK_THROWS_AS(decreasing.validate(), std::invalid_argument);
}

TEST_CASE("astm embeddings: zero weights, distinct roles, documented shapes") {
    ParamRegistry reg(6);
    Astm astm(reg, AstmConfig{64, 16, false});
    Rng rng(7);
    Tensor top = rand_tensor({1, 64, 2, 2}, rng);

    KeyValue q = astm.embed_query(top);
    CHECK(q.key.shape() == Shape{1, 16, 2, 2});
    CHECK(q.value.shape() == Shape{1, 32, 2, 2});

    KeyValue m = astm.embed_memory(top);
    bool differs = false;
    for (std::size_t i = 0; i < q.key.size(); ++i) {
        if (q.key.data()[i] != m.key.data()[i]) differs = true;
    }
    CHECK(differs);

    for (const char* name : {"astm.qk.w", "astm.qk.b", "astm.qv.w", "astm.qv.b"}) {
        fill_param(reg, name, 0.0f);
    }
    KeyValue zq = astm.embed_query(top);
    for (float v : zq.key.data()) CHECK(v == 0.0f);
    for (float v : zq.value.data()) CHECK(v == 0.0f);

    CHECK_THROWS_AS(astm.embed_query(Tensor::zeros({1, 32, 2, 2})), std::invalid_argument);
}

TEST_CASE("memory read over a single location returns that value everywhere") {
    ParamRegistry reg(8);
    Astm astm(reg, AstmConfig{8, 4, false});
    Rng rng(9);
    KeyValue q{rand_tensor({1, 4, 2, 2}, rng), rand_tensor({1, 8, 2, 2}, rng)};
    Tensor mk = rand_tensor({1, 1, 4, 1, 1}, rng);
    Tensor mv = rand_tensor({1, 1, 8, 1, 1}, rng);
    // single memory location needs a 1x1 query too for shape agreement
    KeyValue q1{rand_tensor({1, 4, 1, 1}, rng), rand_tensor({1, 8, 1, 1}, rng)};
    Tensor out = astm.read(q1, mk, mv);
    REQUIRE(out.shape() == Shape{1, 16, 1, 1});
    for (int c = 0; c < 8; ++c) {
        CHECK(out.data()[std::size_t(c)] == doctest::Approx(mv.data()[std::size_t(c)]));
    }
}

TEST_CASE("identical memory keys average the memory values") {
    ParamRegistry reg(10);
    Astm astm(reg, AstmConfig{8, 3, false});
    Rng rng(11);
    KeyValue q{rand_tensor({1, 3, 2, 2}, rng), rand_tensor({1, 6, 2, 2}, rng)};
    Tensor key_plane = rand_tensor({1, 1, 3, 2, 2}, rng);
    Tensor mk = concat({key_plane, key_plane}, 1);  // two frames, identical keys
    Tensor mv = rand_tensor({1, 2, 6, 2, 2}, rng);

    Tensor out = astm.read(q, mk, mv);
    // retrieved channels = mean over all 8 memory locations (keys equal per
    // location pair, but locations differ; instead check against the oracle)
    auto oracle = memory_read_oracle(q.key, q.value, mk, mv);
    REQUIRE(oracle.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(std::abs(out.data()[i] - oracle[i]) < 1e-5f);
    }

    // the strict averaging case: every location shares one key
    Tensor flat_key = Tensor::full({1, 2, 3, 1, 1}, 0.37f);
    Tensor vals = rand_tensor({1, 2, 6, 1, 1}, rng);
    KeyValue q2{rand_tensor({1, 3, 1, 1}, rng), rand_tensor({1, 6, 1, 1}, rng)};
    Tensor out2 = astm.read(q2, flat_key, vals);
    for (int c = 0; c < 6; ++c) {
        const float mean = 0.5f * (vals.data()[std::size_t(c)] + vals.data()[std::size_t(6 + c)]);
        CHECK(out2.data()[std::size_t(c)] == doctest::Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("memory read matches the brute-force oracle and rows sum to one") {
    ParamRegistry reg(12);
    Astm astm(reg, AstmConfig{8, 3, false});
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        KeyValue q{rand_tensor({2, 3, 2, 2}, rng), rand_tensor({2, 6, 2, 2}, rng)};
        Tensor mk = rand_tensor({2, 2, 3, 2, 2}, rng);
        Tensor mv = rand_tensor({2, 2, 6, 2, 2}, rng);
        Tensor attn;
        Tensor out = astm.read(q, mk, mv, &attn);
        auto oracle = memory_read_oracle(q.key, q.value, mk, mv);
        REQUIRE(out.size() == oracle.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(std::abs(out.data()[i] - oracle[i]) < 1e-5f);
        }
        REQUIRE(attn.shape() == Shape{2, 4, 8});
        for (int b = 0; b < 2; ++b) {
            for (int p = 0; p < 4; ++p) {
                double row = 0.0;
                for (int j = 0; j < 8; ++j) row += attn.data()[std::size_t((b * 4 + p) * 8 + j)];
                CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("memory read is invariant under memory permutation") {
    ParamRegistry reg(14);
    Astm astm(reg, AstmConfig{8, 4, false});
    Rng rng(15);
    KeyValue q{rand_tensor({1, 4, 2, 2}, rng), rand_tensor({1, 8, 2, 2}, rng)};
    Tensor k1 = rand_tensor({1, 1, 4, 2, 2}, rng), k2 = rand_tensor({1, 1, 4, 2, 2}, rng);
    Tensor v1 = rand_tensor({1, 1, 8, 2, 2}, rng), v2 = rand_tensor({1, 1, 8, 2, 2}, rng);
    Tensor fwd = astm.read(q, concat({k1, k2}, 1), concat({v1, v2}, 1));
    Tensor rev = astm.read(q, concat({k2, k1}, 1), concat({v2, v1}, 1));
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        CHECK(fwd.data()[i] == doctest::Approx(rev.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("duplicating a memory frame only renormalizes the read") {
    ParamRegistry reg(16);
    Astm astm(reg, AstmConfig{8, 3, false});
    Rng rng(17);
    KeyValue q{rand_tensor({1, 3, 2, 2}, rng), rand_tensor({1, 6, 2, 2}, rng)};
    Tensor k1 = rand_tensor({1, 1, 3, 2, 2}, rng), k2 = rand_tensor({1, 1, 3, 2, 2}, rng);
    Tensor v1 = rand_tensor({1, 1, 6, 2, 2}, rng), v2 = rand_tensor({1, 1, 6, 2, 2}, rng);
    Tensor mk = concat({k1, k2, k2}, 1);
    Tensor mv = concat({v1, v2, v2}, 1);
    Tensor out = astm.read(q, mk, mv);
    auto oracle = memory_read_oracle(q.key, q.value, mk, mv);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(std::abs(out.data()[i] - oracle[i]) < 1e-5f);
    }
    CHECK_THROWS_AS(stack_memory({}), std::invalid_argument);
}

TEST_CASE("ffs spatial: suppression, identity, and the compositional oracle") {
    ParamRegistry reg(18);
    FfsBlock ffs(reg, "f", 4, false);
    Rng rng(19);
    Tensor high = rand_tensor({1, 4, 2, 2}, rng);
    Tensor low = rand_tensor({1, 4, 4, 4}, rng);

    // zeroed attention layer suppresses everything
    fill_param(reg, "f.att.w", 0.0f);
    fill_param(reg, "f.att.b", 0.0f);
    Tensor zero_s = ffs.spatial(high, low);
    for (float v : zero_s.data()) CHECK(v == 0.0f);

    // attention forced to one and an identity content conv pass low through
    fill_param(reg, "f.att.b", 1.0f);
    fill_param(reg, "f.content.w", 0.0f);
    {
        Tensor w = reg.find("f.content.w");  // [4,4,3,3], delta kernel
        for (int c = 0; c < 4; ++c) w.mutable_data()[std::size_t(((c * 4 + c) * 3 + 1) * 3 + 1)] = 1.0f;
        fill_param(reg, "f.content.b", 0.0f);
    }
    Tensor passthrough = ffs.spatial(high, low);
    for (std::size_t i = 0; i < low.size(); ++i) CHECK(passthrough.data()[i] == low.data()[i]);

    // random weights against a from-scratch composition
    ParamRegistry reg2(20);
    FfsBlock ffs2(reg2, "g", 2, false);
    Tensor h2 = rand_tensor({1, 2, 2, 2}, rng);
    Tensor l2 = rand_tensor({1, 2, 4, 4}, rng);
    Tensor got = ffs2.spatial(h2, l2);

    auto conv_oracle = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3), CO = w.dim(0);
        std::vector<float> out(std::size_t(CO) * H * W);
        for (int co = 0; co < CO; ++co) {
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    double acc = b.data()[std::size_t(co)];
                    for (int ci = 0; ci < C; ++ci) {
                        for (int ky = -1; ky <= 1; ++ky) {
                            for (int kx = -1; kx <= 1; ++kx) {
                                const int yy = y + ky, xw = xx + kx;
                                if (yy < 0 || yy >= H || xw < 0 || xw >= W) continue;
                                acc += double(x.data()[(std::size_t(ci) * H + yy) * W + xw]) *
                                       double(w.data()[std::size_t(((co * C + ci) * 3 + ky + 1) * 3 + kx + 1)]);
                            }
                        }
                    }
                    out[(std::size_t(co) * H + y) * W + xx] = float(acc);
                }
            }
        }
        return out;
    };
    auto upsample2_oracle = [&](const Tensor& x) {
        // half-pixel centers, doubling: output pixel d samples s=(d+0.5)/2-0.5
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
        std::vector<float> out(std::size_t(C) * 4 * H * W);
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < 2 * H; ++y) {
                double sy = (y + 0.5) / 2.0 - 0.5;
                sy = std::min(std::max(sy, 0.0), double(H - 1));
                const int y0 = int(std::floor(sy)), y1 = std::min(y0 + 1, H - 1);
                const double fy = sy - y0;
                for (int xx = 0; xx < 2 * W; ++xx) {
                    double sx = (xx + 0.5) / 2.0 - 0.5;
                    sx = std::min(std::max(sx, 0.0), double(W - 1));
                    const int x0 = int(std::floor(sx)), x1 = std::min(x0 + 1, W - 1);
                    const double fx = sx - x0;
                    auto at = [&](int yy, int xw) { return double(x.data()[(std::size_t(c) * H + yy) * W + xw]); };
                    const double v = (at(y0, x0) * (1 - fx) + at(y0, x1) * fx) * (1 - fy) +
                                     (at(y1, x0) * (1 - fx) + at(y1, x1) * fx) * fy;
                    out[(std::size_t(c) * 2 * H + y) * 2 * W + xx] = float(v);
                }
            }
        }
        return out;
    };

    Tensor up = Tensor::from_data({1, 2, 4, 4}, upsample2_oracle(h2));
    Tensor tilde = Tensor::from_data({1, 2, 4, 4}, conv_oracle(up, reg2.find("g.up.w"), reg2.find("g.up.b")));
    std::vector<float> att = conv_oracle(tilde, reg2.find("g.att.w"), reg2.find("g.att.b"));
    std::vector<float> content = conv_oracle(l2, reg2.find("g.content.w"), reg2.find("g.content.b"));
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 16; ++i) {
            const float expect = att[std::size_t(i)] * content[std::size_t(c * 16 + i)];
            CHECK(std::abs(got.data()[std::size_t(c * 16 + i)] - expect) < 1e-5f);
        }
    }

    // geometry contract
    CHECK_THROWS_AS(ffs2.spatial(h2, rand_tensor({1, 2, 6, 6}, rng)), std::invalid_argument);
}

TEST_CASE("ffs channel recalibration: residual identity and doubling") {
    ParamRegistry reg(21);
    FfsBlock ffs(reg, "f", 4, false);
    Rng rng(22);
    Tensor s = rand_tensor({2, 4, 3, 3}, rng);

    fill_param(reg, "f.fc.w", 0.0f);
    fill_param(reg, "f.fc.b", 0.0f);
    Tensor same = ffs.channel(s);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(same.data()[i] == s.data()[i]);

    fill_param(reg, "f.fc.b", 1.0f);  // channel weights identically one
    Tensor twice = ffs.channel(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(twice.data()[i] == doctest::Approx(2.0f * s.data()[i]));
    }
}

TEST_CASE("zeroed final stage and head give a flat 0.5 map") {
    ModelConfig cfg;
    Model model(cfg, 23);
    fill_param(model.params(), "dec.head.w", 0.0f);
    fill_param(model.params(), "dec.head.b", 0.0f);
    Rng rng(24);
    Tensor frame = rand_frames(1, 64, 64, rng);
    auto out = model.forward_frame(frame, frame, frame);
    CHECK(out.saliency.shape() == Shape{1, 1, 64, 64});
    for (float v : out.saliency.data()) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("saliency map matches the input resolution, 64 and 96") {
    for (int size : {64, 96}) {
        ModelConfig cfg;
        cfg.height = size;
        cfg.width = size;
        Model model(cfg, 25);
        Rng rng(26);
        Tensor frame = rand_frames(1, size, size, rng);
        auto out = model.forward_frame(frame, frame, frame);
        CHECK(out.saliency.shape() == Shape{1, 1, size, size});
        for (float v : out.saliency.data()) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("a large head bias saturates the prediction") {
    ModelConfig cfg;
    Model model(cfg, 27);
    fill_param(model.params(), "dec.head.b", 10.0f);
    Rng rng(28);
    Tensor frame = rand_frames(1, 64, 64, rng);
    auto out = model.forward_frame(frame, frame, frame);
    for (float v : out.saliency.data()) CHECK(v > 0.99f);
}

TEST_CASE("ablated model executes a plain U-shaped op vocabulary") {
    ModelConfig cfg;
    cfg.no_ffs = true;
    cfg.no_astm = true;
    Model model(cfg, 29);
    Rng rng(30);
    Tensor frame = rand_frames(1, 64, 64, rng);

    std::vector<std::string> trace;
    begin_op_trace(&trace);
    auto out = model.forward_frame(frame, frame, frame);
    end_op_trace();

    const std::set<std::string> allowed{"conv2d", "relu", "add", "concat", "bilinear_resize", "sigmoid"};
    for (const auto& op : trace) {
        CHECK(allowed.count(op) == 1);
    }
    // and specifically no attention machinery
    for (const auto& op : trace) {
        CHECK(op != "softmax");
        CHECK(op != "matmul");
        CHECK(op != "mul_bc");
        CHECK(op != "global_avg_pool");
    }
    CHECK(out.saliency.dim(2) == 64);
}

TEST_CASE("no-motion flag leaves the saliency forward pass bit-identical") {
    ModelConfig a;
    ModelConfig b;
    b.no_motion = true;
    Model ma(a, 31);
    Model mb(b, 31);
    Rng rng(32);
    std::vector<Tensor> frames{rand_frames(1, 64, 64, rng), rand_frames(1, 64, 64, rng)};
    auto ra = ma.forward_clip(frames, true);
    auto rb = mb.forward_clip(frames, false);
    REQUIRE(ra.saliency.size() == rb.saliency.size());
    for (std::size_t t = 0; t < ra.saliency.size(); ++t) {
        for (std::size_t i = 0; i < ra.saliency[t].size(); ++i) {
            CHECK(ra.saliency[t].data()[i] == rb.saliency[t].data()[i]);
        }
    }
    CHECK(ra.motion.size() == 1);
    CHECK(rb.motion.empty());
}

TEST_CASE("every parameter receives gradient from the stage-2 objective") {
    ModelConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.channels = {6, 8, 10, 12, 16};
    cfg.decoder_width = 8;
    Model model(cfg, 33);
    Rng rng(34);
    // T = 3: a two-frame clip duplicates each query's sole neighbor, and
    // identical memory values null the attention gradient by symmetry
    std::vector<Tensor> frames{rand_frames(1, 32, 32, rng), rand_frames(1, 32, 32, rng),
                               rand_frames(1, 32, 32, rng)};
    std::vector<Tensor> labels;
    for (int t = 0; t < 3; ++t) {
        std::vector<float> v(32 * 32);
        for (auto& x : v) x = rng.coin(0.4) ? 1.0f : 0.0f;
        labels.push_back(Tensor::from_data({1, 1, 32, 32}, std::move(v)));
    }
    std::vector<Tensor> motion_labels;
    for (int t = 0; t < 2; ++t) {
        std::vector<float> xorv(32 * 32);
        for (std::size_t i = 0; i < xorv.size(); ++i) {
            xorv[i] = labels[std::size_t(t)].data()[i] != labels[std::size_t(t) + 1].data()[i] ? 1.0f : 0.0f;
        }
        motion_labels.push_back(Tensor::from_data({1, 1, 32, 32}, xorv));
    }

    model.params().zero_grads();
    auto out = model.forward_clip(frames, true);
    ClipLoss loss = total_loss(out.saliency, labels, out.motion, motion_labels, 2);
    backward(loss.total);

    for (const Tensor& p : model.params().params()) {
        REQUIRE_MESSAGE(p.has_grad(), p.name());
        float peak = 0.0f;
        for (float g : p.grad()) peak = std::max(peak, std::abs(g));
        CHECK_MESSAGE(peak > 0.0f, p.name());
    }
}

TEST_CASE("motion head: flat at zero weights, order-sensitive, grads to both frames") {
    ModelConfig cfg;
    Model model(cfg, 35);
    Rng rng(36);
    Tensor d1 = rand_tensor({1, 96, 16, 16}, rng);
    Tensor d2 = rand_tensor({1, 96, 16, 16}, rng);
    d1.set_requires_grad(true);
    d2.set_requires_grad(true);

    Tensor fwd = model.predict_motion(d1, d2);
    CHECK(fwd.shape() == Shape{1, 1, 64, 64});
    Tensor rev = model.predict_motion(d2, d1);
    bool differs = false;
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        if (fwd.data()[i] != rev.data()[i]) differs = true;
    }
    CHECK(differs);

    backward(sum_all(fwd));
    float peak1 = 0.0f, peak2 = 0.0f;
    for (float g : d1.grad()) peak1 = std::max(peak1, std::abs(g));
    for (float g : d2.grad()) peak2 = std::max(peak2, std::abs(g));
    CHECK(peak1 > 0.0f);
    CHECK(peak2 > 0.0f);

    fill_param(model.params(), "motion.head.w", 0.0f);
    fill_param(model.params(), "motion.head.b", 0.0f);
    Tensor flat = model.predict_motion(d1, d2);
    for (float v : flat.data()) CHECK(v == doctest::Approx(0.5f));

    CHECK_THROWS_AS(model.predict_motion(d1, rand_tensor({1, 96, 8, 8}, rng)), std::invalid_argument);
}

TEST_CASE("forward_clip produces aligned per-frame and per-pair outputs") {
    ModelConfig cfg;
    Model model(cfg, 37);
    Rng rng(38);
    std::vector<Tensor> frames;
    for (int t = 0; t < 4; ++t) frames.push_back(rand_frames(2, 64, 64, rng));
    auto out = model.forward_clip(frames, true);
    CHECK(out.saliency.size() == 4);
    CHECK(out.dcat.size() == 4);
    CHECK(out.motion.size() == 3);
    for (const Tensor& s : out.saliency) CHECK(s.shape() == Shape{2, 1, 64, 64});
    for (const Tensor& d : out.dcat) CHECK(d.shape() == Shape{2, 96, 16, 16});
    for (const Tensor& m : out.motion) CHECK(m.shape() == Shape{2, 1, 64, 64});
}

TEST_CASE("memory frame indices handle boundaries for both pool sizes") {
    CHECK(memory_frame_indices(2, 4, 2) == std::vector<int>{1, 3});
    CHECK(memory_frame_indices(1, 4, 2) == std::vector<int>{2, 2});
    CHECK(memory_frame_indices(4, 4, 2) == std::vector<int>{3, 3});
    CHECK(memory_frame_indices(3, 6, 4) == std::vector<int>{1, 2, 4, 5});
    for (int T : {1, 2, 3, 4, 6}) {
        for (int t = 1; t <= T; ++t) {
            for (int mem : {2, 4}) {
                for (int idx : memory_frame_indices(t, T, mem)) {
                    CHECK(idx >= 1);
                    CHECK(idx <= T);
                    if (T > 1) CHECK(idx != t);
                }
            }
        }
    }
}

TEST_CASE("model config fingerprint round-trips") {
    ModelConfig cfg;
    cfg.height = 96;
    cfg.width = 64;
    cfg.no_ffs = true;
    cfg.memory_frames = 4;
    ModelConfig back = ModelConfig::from_fingerprint(cfg.fingerprint());
    CHECK(back.fingerprint() == cfg.fingerprint());
    CHECK(back.no_ffs);
    CHECK(back.memory_frames == 4);
}
