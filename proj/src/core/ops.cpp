#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "core/parallel.hpp"

namespace vsod {

namespace {

using detail::Node;
using detail::make_op;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) fail(std::string(op) + ": undefined tensor argument");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Gradient accumulation target for one parent, or nullptr when the parent
// does not participate in the backward pass.
double* grad_target(Node& out, std::size_t parent) {
    Node* p = out.parents[parent].get();
    if (!p || !p->requires_grad) return nullptr;
    return p->grad_data();
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) fail(std::string(op) + ": axis out of range");
    return axis;
}

Tensor pointwise_unary(const char* op, const Tensor& x,
                       const std::function<double(double)>& f,
                       const std::function<double(double x, double y)>& dydx) {
    check_defined(x, op);
    std::vector<float> out(x.size());
    std::span<const float> in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(f(in[i]));
    if (x.size() == 1) {
        Tensor r = make_op(op, x.shape(), std::move(out), {x}, [dydx](Node& n) {
            if (double* gx = grad_target(n, 0)) {
                const auto& xv = n.parents[0]->data;
                for (std::size_t i = 0; i < n.data.size(); ++i) {
                    gx[i] += n.grad[i] * dydx(xv[i], n.data[i]);
                }
            }
        });
        r.node()->hp_value = f(x.item_precise());
        r.node()->has_hp = true;
        return r;
    }
    return make_op(op, x.shape(), std::move(out), {x}, [dydx](Node& n) {
        if (double* gx = grad_target(n, 0)) {
            const auto& xv = n.parents[0]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) {
                gx[i] += float(double(n.grad[i]) * dydx(xv[i], n.data[i]));
            }
        }
    });
}

Tensor pointwise_binary(const char* op, const Tensor& a, const Tensor& b,
                        const std::function<double(double, double)>& f,
                        const std::function<double(double, double)>& dfda,
                        const std::function<double(double, double)>& dfdb) {
    check_defined(a, op);
    check_defined(b, op);
    check_same_shape(a, b, op);
    std::vector<float> out(a.size());
    std::span<const float> av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(f(av[i], bv[i]));
    if (a.size() == 1) {
        Tensor r = make_op(op, a.shape(), std::move(out), {a, b}, [dfda, dfdb](Node& n) {
            const auto& av2 = n.parents[0]->data;
            const auto& bv2 = n.parents[1]->data;
            if (double* ga = grad_target(n, 0)) ga[0] += n.grad[0] * dfda(av2[0], bv2[0]);
            if (double* gb = grad_target(n, 1)) gb[0] += n.grad[0] * dfdb(av2[0], bv2[0]);
        });
        r.node()->hp_value = f(a.item_precise(), b.item_precise());
        r.node()->has_hp = true;
        return r;
    }
    return make_op(op, a.shape(), std::move(out), {a, b}, [dfda, dfdb](Node& n) {
        const auto& av = n.parents[0]->data;
        const auto& bv = n.parents[1]->data;
        if (double* ga = grad_target(n, 0)) {
            for (std::size_t i = 0; i < n.data.size(); ++i) {
                ga[i] += n.grad[i] * dfda(av[i], bv[i]);
            }
        }
        if (double* gb = grad_target(n, 1)) {
            for (std::size_t i = 0; i < n.data.size(); ++i) {
                gb[i] += n.grad[i] * dfdb(av[i], bv[i]);
            }
        }
    });
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    check_defined(input, "conv2d");
    check_defined(weight, "conv2d");
    if (input.rank() != 4) fail("conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 4) fail("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
    if (stride < 1) fail("conv2d: stride must be positive");
    if (padding < 0) fail("conv2d: padding must be non-negative");

    const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    if (weight.dim(1) != Cin) {
        fail("conv2d: weight input-channel dimension (" + std::to_string(weight.dim(1)) +
             ") does not match input channel dimension (" + std::to_string(Cin) + ")");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
        fail("conv2d: bias dimension " + shape_str(bias.shape()) + " does not match output channels (" +
             std::to_string(Cout) + ")");
    }
    if (KH > H + 2 * padding) {
        fail("conv2d: kernel height (" + std::to_string(KH) + ") exceeds padded input height (" +
             std::to_string(H + 2 * padding) + ")");
    }
    if (KW > W + 2 * padding) {
        fail("conv2d: kernel width (" + std::to_string(KW) + ") exceeds padded input width (" +
             std::to_string(W + 2 * padding) + ")");
    }

    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;
    std::vector<float> out(std::size_t(B) * Cout * OH * OW);

    const float* x = input.data().data();
    const float* w = weight.data().data();
    const float* bs = bias.defined() ? bias.data().data() : nullptr;

    auto forward_plane = [&](std::size_t begin, std::size_t end) {
        for (std::size_t plane = begin; plane < end; ++plane) {
            const int b = int(plane) / Cout;
            const int co = int(plane) % Cout;
            const float* wbase = w + std::size_t(co) * Cin * KH * KW;
            float* obase = out.data() + plane * std::size_t(OH) * OW;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bs ? double(bs[co]) : 0.0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const float* xin = x + ((std::size_t(b) * Cin + ci) * H) * W;
                        const float* wk = wbase + std::size_t(ci) * KH * KW;
                        for (int kh = 0; kh < KH; ++kh) {
                            const int ih = oh * stride - padding + kh;
                            if (ih < 0 || ih >= H) continue;
                            const float* xrow = xin + std::size_t(ih) * W;
                            const float* wrow = wk + std::size_t(kh) * KW;
                            for (int kw = 0; kw < KW; ++kw) {
                                const int iw = ow * stride - padding + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += double(xrow[iw]) * double(wrow[kw]);
                            }
                        }
                    }
                    obase[std::size_t(oh) * OW + ow] = float(acc);
                }
            }
        }
    };
    parallel_for(std::size_t(B) * Cout, forward_plane);

    const bool has_bias = bias.defined();
    std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{input, weight, bias}
                                           : std::vector<Tensor>{input, weight};
    auto bw = [=](Node& n) {
        const double* go = n.grad.data();
        const float* x = n.parents[0]->data.data();
        const float* w = n.parents[1]->data.data();

        if (double* gx = grad_target(n, 0)) {
            parallel_for(std::size_t(B), [&](std::size_t b0, std::size_t b1) {
                for (std::size_t b = b0; b < b1; ++b) {
                    for (int co = 0; co < Cout; ++co) {
                        const double* gobase = go + ((b * Cout + co) * OH) * std::size_t(OW);
                        const float* wbase = w + std::size_t(co) * Cin * KH * KW;
                        for (int oh = 0; oh < OH; ++oh) {
                            for (int ow = 0; ow < OW; ++ow) {
                                const double g = gobase[std::size_t(oh) * OW + ow];
                                if (g == 0.0) continue;
                                for (int ci = 0; ci < Cin; ++ci) {
                                    double* gxin = gx + ((b * Cin + ci) * H) * std::size_t(W);
                                    const float* wk = wbase + std::size_t(ci) * KH * KW;
                                    for (int kh = 0; kh < KH; ++kh) {
                                        const int ih = oh * stride - padding + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int kw = 0; kw < KW; ++kw) {
                                            const int iw = ow * stride - padding + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            gxin[std::size_t(ih) * W + iw] += g * wk[std::size_t(kh) * KW + kw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }

        if (double* gw = grad_target(n, 1)) {
            parallel_for(std::size_t(Cout), [&](std::size_t c0, std::size_t c1) {
                for (std::size_t co = c0; co < c1; ++co) {
                    double* gwbase = gw + co * Cin * KH * KW;
                    for (int b = 0; b < B; ++b) {
                        const double* gobase = go + ((std::size_t(b) * Cout + co) * OH) * OW;
                        for (int oh = 0; oh < OH; ++oh) {
                            for (int ow = 0; ow < OW; ++ow) {
                                const double g = gobase[std::size_t(oh) * OW + ow];
                                if (g == 0.0) continue;
                                for (int ci = 0; ci < Cin; ++ci) {
                                    const float* xin = x + ((std::size_t(b) * Cin + ci) * H) * W;
                                    double* gwk = gwbase + std::size_t(ci) * KH * KW;
                                    for (int kh = 0; kh < KH; ++kh) {
                                        const int ih = oh * stride - padding + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int kw = 0; kw < KW; ++kw) {
                                            const int iw = ow * stride - padding + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            gwk[std::size_t(kh) * KW + kw] += g * xin[std::size_t(ih) * W + iw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }

        if (has_bias) {
            if (double* gb = grad_target(n, 2)) {
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const double* gobase = go + ((std::size_t(b) * Cout + co) * OH) * OW;
                        for (int i = 0; i < OH * OW; ++i) acc += gobase[i];
                    }
                    gb[co] += acc;
                }
            }
        }
    };
    return make_op("conv2d", {B, Cout, OH, OW}, std::move(out), parents, std::move(bw));
}

Tensor softmax(const Tensor& input, int axis) {
    check_defined(input, "softmax");
    const int rank = input.rank();
    axis = normalize_axis(axis, rank, "softmax");
    const int n = input.dim(axis);

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= std::size_t(input.dim(i));
    for (int i = axis + 1; i < rank; ++i) inner *= std::size_t(input.dim(i));

    std::vector<float> out(input.size());
    const float* x = input.data().data();
    parallel_for(outer, [&](std::size_t o0, std::size_t o1) {
        for (std::size_t o = o0; o < o1; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                float mx = x[base];
                for (int k = 1; k < n; ++k) mx = std::max(mx, x[base + std::size_t(k) * inner]);
                double sum = 0.0;
                for (int k = 0; k < n; ++k) {
                    double e = std::exp(double(x[base + std::size_t(k) * inner]) - double(mx));
                    out[base + std::size_t(k) * inner] = float(e);
                    sum += e;
                }
                const double inv = 1.0 / sum;
                for (int k = 0; k < n; ++k) {
                    out[base + std::size_t(k) * inner] = float(double(out[base + std::size_t(k) * inner]) * inv);
                }
            }
        }
    });

    auto bw = [outer, inner, n](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const float* y = nd.data.data();
            const double* go = nd.grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * std::size_t(n) * inner + in;
                    double dot = 0.0;
                    for (int k = 0; k < n; ++k) {
                        const std::size_t i = base + std::size_t(k) * inner;
                        dot += double(y[i]) * go[i];
                    }
                    for (int k = 0; k < n; ++k) {
                        const std::size_t i = base + std::size_t(k) * inner;
                        gx[i] += double(y[i]) * (go[i] - dot);
                    }
                }
            }
        }
    };
    return make_op("softmax", input.shape(), std::move(out), {input}, std::move(bw));
}

namespace {

struct MatShape {
    Shape batch;        // broadcast batch dims
    std::vector<std::size_t> a_stride, b_stride;  // per batch dim, 0 when broadcast
    int M, K, N;
};

MatShape matmul_shapes(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) fail("matmul: operands must have rank >= 2");
    MatShape s;
    s.M = a.dim(a.rank() - 2);
    s.K = a.dim(a.rank() - 1);
    s.N = b.dim(b.rank() - 1);
    if (b.dim(b.rank() - 2) != s.K) {
        fail("matmul: inner dimensions do not agree (" + std::to_string(s.K) + " vs " +
             std::to_string(b.dim(b.rank() - 2)) + ")");
    }
    const int ra = a.rank() - 2, rb = b.rank() - 2;
    const int rc = std::max(ra, rb);
    s.batch.assign(std::size_t(rc), 1);
    for (int i = 0; i < rc; ++i) {
        const int da = i < rc - ra ? 1 : a.dim(i - (rc - ra));
        const int db = i < rc - rb ? 1 : b.dim(i - (rc - rb));
        if (da != db && da != 1 && db != 1) {
            fail("matmul: batch dimensions do not broadcast (" + std::to_string(da) + " vs " +
                 std::to_string(db) + ")");
        }
        s.batch[std::size_t(i)] = std::max(da, db);
    }
    // strides in units of full matrices
    auto strides = [&](const Tensor& t, int r) {
        std::vector<std::size_t> st(std::size_t(rc), 0);
        std::size_t acc = 1;
        for (int i = r - 1; i >= 0; --i) {
            const int d = t.dim(i);
            st[std::size_t(i + (rc - r))] = (d == 1) ? 0 : acc;
            acc *= std::size_t(d);
        }
        // broadcast dims that exist but have extent 1 keep stride 0
        return st;
    };
    s.a_stride = strides(a, ra);
    s.b_stride = strides(b, rb);
    return s;
}

std::size_t batch_offset(std::size_t flat, const Shape& batch, const std::vector<std::size_t>& stride) {
    std::size_t off = 0;
    for (int i = int(batch.size()) - 1; i >= 0; --i) {
        const std::size_t d = std::size_t(batch[std::size_t(i)]);
        off += (flat % d) * stride[std::size_t(i)];
        flat /= d;
    }
    return off;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    MatShape s = matmul_shapes(a, b);
    const std::size_t nbatch = shape_numel(s.batch);
    const std::size_t mk = std::size_t(s.M) * s.K, kn = std::size_t(s.K) * s.N, mn = std::size_t(s.M) * s.N;

    Shape out_shape = s.batch;
    out_shape.push_back(s.M);
    out_shape.push_back(s.N);
    std::vector<float> out(nbatch * mn);

    const float* av = a.data().data();
    const float* bv = b.data().data();
    parallel_for(nbatch, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const float* am = av + batch_offset(i, s.batch, s.a_stride) * mk;
            const float* bm = bv + batch_offset(i, s.batch, s.b_stride) * kn;
            float* om = out.data() + i * mn;
            for (int m = 0; m < s.M; ++m) {
                for (int n2 = 0; n2 < s.N; ++n2) {
                    double acc = 0.0;
                    for (int k = 0; k < s.K; ++k) {
                        acc += double(am[std::size_t(m) * s.K + k]) * double(bm[std::size_t(k) * s.N + n2]);
                    }
                    om[std::size_t(m) * s.N + n2] = float(acc);
                }
            }
        }
    });

    auto bw = [s, nbatch, mk, kn, mn](Node& nd) {
        const double* go = nd.grad.data();
        const float* av = nd.parents[0]->data.data();
        const float* bv = nd.parents[1]->data.data();
        double* ga = grad_target(nd, 0);
        double* gb = grad_target(nd, 1);
        for (std::size_t i = 0; i < nbatch; ++i) {
            const std::size_t ao = batch_offset(i, s.batch, s.a_stride) * mk;
            const std::size_t bo = batch_offset(i, s.batch, s.b_stride) * kn;
            const double* gm = go + i * mn;
            if (ga) {
                for (int m = 0; m < s.M; ++m) {
                    for (int k = 0; k < s.K; ++k) {
                        double acc = 0.0;
                        for (int n2 = 0; n2 < s.N; ++n2) {
                            acc += gm[std::size_t(m) * s.N + n2] * double(bv[bo + std::size_t(k) * s.N + n2]);
                        }
                        ga[ao + std::size_t(m) * s.K + k] += acc;
                    }
                }
            }
            if (gb) {
                for (int k = 0; k < s.K; ++k) {
                    for (int n2 = 0; n2 < s.N; ++n2) {
                        double acc = 0.0;
                        for (int m = 0; m < s.M; ++m) {
                            acc += double(av[ao + std::size_t(m) * s.K + k]) * gm[std::size_t(m) * s.N + n2];
                        }
                        gb[bo + std::size_t(k) * s.N + n2] += acc;
                    }
                }
            }
        }
    };
    return make_op("matmul", std::move(out_shape), std::move(out), {a, b}, std::move(bw));
}

namespace {

struct ResampleAxis {
    std::vector<int> lo, hi;
    std::vector<float> frac;
};

ResampleAxis resample_axis(int in, int out) {
    ResampleAxis r;
    r.lo.resize(std::size_t(out));
    r.hi.resize(std::size_t(out));
    r.frac.resize(std::size_t(out));
    const double scale = double(in) / double(out);
    for (int d = 0; d < out; ++d) {
        double s = (double(d) + 0.5) * scale - 0.5;
        s = std::min(std::max(s, 0.0), double(in - 1));
        const int lo = int(std::floor(s));
        r.lo[std::size_t(d)] = lo;
        r.hi[std::size_t(d)] = std::min(lo + 1, in - 1);
        r.frac[std::size_t(d)] = float(s - double(lo));
    }
    return r;
}

} // namespace

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    check_defined(input, "bilinear_resize");
    if (input.rank() != 4) fail("bilinear_resize: input must be [B,C,H,W], got " + shape_str(input.shape()));
    if (out_h < 1 || out_w < 1) fail("bilinear_resize: output extents must be >= 1");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const ResampleAxis ry = resample_axis(H, out_h);
    const ResampleAxis rx = resample_axis(W, out_w);

    std::vector<float> out(std::size_t(B) * C * out_h * out_w);
    const float* x = input.data().data();
    parallel_for(std::size_t(B) * C, [&](std::size_t p0, std::size_t p1) {
        for (std::size_t p = p0; p < p1; ++p) {
            const float* xin = x + p * std::size_t(H) * W;
            float* obase = out.data() + p * std::size_t(out_h) * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ry.lo[std::size_t(oy)], y1 = ry.hi[std::size_t(oy)];
                const double fy = ry.frac[std::size_t(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = rx.lo[std::size_t(ox)], x1 = rx.hi[std::size_t(ox)];
                    const double fx = rx.frac[std::size_t(ox)];
                    const double top = double(xin[std::size_t(y0) * W + x0]) * (1.0 - fx) +
                                       double(xin[std::size_t(y0) * W + x1]) * fx;
                    const double bot = double(xin[std::size_t(y1) * W + x0]) * (1.0 - fx) +
                                       double(xin[std::size_t(y1) * W + x1]) * fx;
                    obase[std::size_t(oy) * out_w + ox] = float(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    });

    auto bw = [B, C, H, W, out_h, out_w, ry, rx](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double* go = nd.grad.data();
            parallel_for(std::size_t(B) * C, [&](std::size_t p0, std::size_t p1) {
                for (std::size_t p = p0; p < p1; ++p) {
                    double* gxin = gx + p * std::size_t(H) * W;
                    const double* gobase = go + p * std::size_t(out_h) * out_w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const int y0 = ry.lo[std::size_t(oy)], y1 = ry.hi[std::size_t(oy)];
                        const double fy = ry.frac[std::size_t(oy)];
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int x0 = rx.lo[std::size_t(ox)], x1 = rx.hi[std::size_t(ox)];
                            const double fx = rx.frac[std::size_t(ox)];
                            const double g = gobase[std::size_t(oy) * out_w + ox];
                            gxin[std::size_t(y0) * W + x0] += g * (1.0 - fy) * (1.0 - fx);
                            gxin[std::size_t(y0) * W + x1] += g * (1.0 - fy) * fx;
                            gxin[std::size_t(y1) * W + x0] += g * fy * (1.0 - fx);
                            gxin[std::size_t(y1) * W + x1] += g * fy * fx;
                        }
                    }
                }
            });
        }
    };
    return make_op("bilinear_resize", {B, C, out_h, out_w}, std::move(out), {input}, std::move(bw));
}

Tensor global_avg_pool(const Tensor& input) {
    check_defined(input, "global_avg_pool");
    if (input.rank() != 4) fail("global_avg_pool: input must be [B,C,H,W], got " + shape_str(input.shape()));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t hw = std::size_t(H) * W;
    std::vector<float> out(std::size_t(B) * C);
    const float* x = input.data().data();
    for (std::size_t p = 0; p < out.size(); ++p) {
        double acc = 0.0;
        const float* base = x + p * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += base[i];
        out[p] = float(acc / double(hw));
    }
    auto bw = [hw](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double* go = nd.grad.data();
            const double inv = 1.0 / double(hw);
            for (std::size_t p = 0; p < nd.data.size(); ++p) {
                const double g = go[p] * inv;
                double* base = gx + p * hw;
                for (std::size_t i = 0; i < hw; ++i) base[i] += g;
            }
        }
    };
    return make_op("global_avg_pool", {B, C, 1, 1}, std::move(out), {input}, std::move(bw));
}

Tensor relu(const Tensor& x) {
    return pointwise_unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    // Output is clamped a hair inside (0,1) so downstream logs stay finite.
    return pointwise_unary(
        "sigmoid", x,
        [](double v) {
            const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            return std::min(std::max(y, 1e-12), 1.0 - 1e-7);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    return pointwise_unary(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor neg(const Tensor& x) {
    return pointwise_unary(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
    if (lo > hi) fail("clamp: lo > hi");
    const double dlo = lo, dhi = hi;
    return pointwise_unary(
        "clamp", x,
        [dlo, dhi](double v) { return std::min(std::max(v, dlo), dhi); },
        [dlo, dhi](double v, double) { return (v >= dlo && v <= dhi) ? 1.0 : 0.0; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return pointwise_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return pointwise_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return pointwise_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return pointwise_binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, float s) {
    const double ds = s;
    return pointwise_unary(
        "add_scalar", x, [ds](double v) { return v + ds; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, float s) {
    const double ds = s;
    return pointwise_unary(
        "mul_scalar", x, [ds](double v) { return v * ds; },
        [ds](double, double) { return ds; });
}

Tensor mul_bc(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul_bc");
    check_defined(b, "mul_bc");
    if (a.rank() != b.rank()) fail("mul_bc: ranks must match");
    const int rank = a.rank();
    Shape out_shape(std::size_t(rank), 0);
    for (int i = 0; i < rank; ++i) {
        const int da = a.dim(i), db = b.dim(i);
        if (da != db && da != 1 && db != 1) {
            fail("mul_bc: extent mismatch on axis " + std::to_string(i) + " (" + std::to_string(da) +
                 " vs " + std::to_string(db) + ")");
        }
        out_shape[std::size_t(i)] = std::max(da, db);
    }

    auto bc_strides = [rank](const Tensor& t) {
        std::vector<std::size_t> st(std::size_t(rank), 0);
        std::size_t acc = 1;
        for (int i = rank - 1; i >= 0; --i) {
            st[std::size_t(i)] = t.dim(i) == 1 ? 0 : acc;
            acc *= std::size_t(t.dim(i));
        }
        return st;
    };
    const auto sa = bc_strides(a), sb = bc_strides(b);

    const std::size_t n = shape_numel(out_shape);
    std::vector<float> out(n);
    const float* av = a.data().data();
    const float* bv = b.data().data();
    {
        std::vector<int> idx(std::size_t(rank), 0);
        std::size_t ao = 0, bo = 0;
        for (std::size_t flat = 0; flat < n; ++flat) {
            out[flat] = av[ao] * bv[bo];
            for (int i = rank - 1; i >= 0; --i) {
                idx[std::size_t(i)]++;
                ao += sa[std::size_t(i)];
                bo += sb[std::size_t(i)];
                if (idx[std::size_t(i)] < out_shape[std::size_t(i)]) break;
                ao -= sa[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
                bo -= sb[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
                idx[std::size_t(i)] = 0;
            }
        }
    }

    auto bw = [out_shape, sa, sb, rank](Node& nd) {
        const double* go = nd.grad.data();
        const float* av = nd.parents[0]->data.data();
        const float* bv = nd.parents[1]->data.data();
        double* ga = grad_target(nd, 0);
        double* gb = grad_target(nd, 1);
        std::vector<int> idx(std::size_t(rank), 0);
        std::size_t ao = 0, bo = 0;
        for (std::size_t flat = 0; flat < nd.data.size(); ++flat) {
            if (ga) ga[ao] += go[flat] * bv[bo];
            if (gb) gb[bo] += go[flat] * av[ao];
            for (int i = rank - 1; i >= 0; --i) {
                idx[std::size_t(i)]++;
                ao += sa[std::size_t(i)];
                bo += sb[std::size_t(i)];
                if (idx[std::size_t(i)] < out_shape[std::size_t(i)]) break;
                ao -= sa[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
                bo -= sb[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
                idx[std::size_t(i)] = 0;
            }
        }
    };
    return make_op("mul_bc", std::move(out_shape), std::move(out), {a, b}, std::move(bw));
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
    if (inputs.empty()) fail("concat: needs at least one input");
    for (const Tensor& t : inputs) check_defined(t, "concat");
    const int rank = inputs[0].rank();
    axis = normalize_axis(axis, rank, "concat");

    Shape out_shape = inputs[0].shape();
    int total = 0;
    for (const Tensor& t : inputs) {
        if (t.rank() != rank) fail("concat: rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i != axis && t.dim(i) != out_shape[std::size_t(i)]) {
                fail("concat: extent mismatch on axis " + std::to_string(i) + " (" +
                     std::to_string(t.dim(i)) + " vs " + std::to_string(out_shape[std::size_t(i)]) + ")");
            }
        }
        total += t.dim(axis);
    }
    out_shape[std::size_t(axis)] = total;

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= std::size_t(out_shape[std::size_t(i)]);
    for (int i = axis + 1; i < rank; ++i) inner *= std::size_t(out_shape[std::size_t(i)]);

    std::vector<float> out(shape_numel(out_shape));
    std::vector<std::size_t> blocks;  // per input, block size along axis*inner
    blocks.reserve(inputs.size());
    const std::size_t out_block = std::size_t(total) * inner;
    std::size_t at = 0;
    for (const Tensor& t : inputs) {
        const std::size_t blk = std::size_t(t.dim(axis)) * inner;
        blocks.push_back(blk);
        const float* src = t.data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * blk, blk, out.data() + o * out_block + at);
        }
        at += blk;
    }

    std::vector<Tensor> parents(inputs.begin(), inputs.end());
    auto bw = [outer, out_block, blocks](Node& nd) {
        const double* go = nd.grad.data();
        std::size_t at = 0;
        for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
            const std::size_t blk = blocks[pi];
            if (double* gp = grad_target(nd, pi)) {
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = go + o * out_block + at;
                    double* dst = gp + o * blk;
                    for (std::size_t i = 0; i < blk; ++i) dst[i] += src[i];
                }
            }
            at += blk;
        }
    };
    return make_op("concat", std::move(out_shape), std::move(out), parents, std::move(bw));
}

Tensor concat(std::initializer_list<Tensor> inputs, int axis) {
    std::vector<Tensor> v(inputs);
    return concat(std::span<const Tensor>(v), axis);
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes) {
    check_defined(x, "split");
    const int rank = x.rank();
    axis = normalize_axis(axis, rank, "split");
    int total = 0;
    for (int s : sizes) {
        if (s <= 0) fail("split: piece sizes must be positive");
        total += s;
    }
    if (total != x.dim(axis)) {
        fail("split: piece sizes sum to " + std::to_string(total) + ", axis extent is " +
             std::to_string(x.dim(axis)));
    }

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= std::size_t(x.dim(i));
    for (int i = axis + 1; i < rank; ++i) inner *= std::size_t(x.dim(i));
    const std::size_t in_block = std::size_t(x.dim(axis)) * inner;

    std::vector<Tensor> pieces;
    pieces.reserve(sizes.size());
    std::size_t at = 0;
    const float* src = x.data().data();
    for (int s : sizes) {
        const std::size_t blk = std::size_t(s) * inner;
        Shape shape = x.shape();
        shape[std::size_t(axis)] = s;
        std::vector<float> out(outer * blk);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * in_block + at, blk, out.data() + o * blk);
        }
        const std::size_t piece_at = at;
        auto bw = [outer, in_block, blk, piece_at](Node& nd) {
            if (double* gx = grad_target(nd, 0)) {
                const double* go = nd.grad.data();
                for (std::size_t o = 0; o < outer; ++o) {
                    double* dst = gx + o * in_block + piece_at;
                    const double* s2 = go + o * blk;
                    for (std::size_t i = 0; i < blk; ++i) dst[i] += s2[i];
                }
            }
        };
        pieces.push_back(make_op("split", std::move(shape), std::move(out), {x}, std::move(bw)));
        at += blk;
    }
    return pieces;
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.size()) {
        fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<float> out(x.data().begin(), x.data().end());
    auto bw = [](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double* go = nd.grad.data();
            for (std::size_t i = 0; i < nd.data.size(); ++i) gx[i] += go[i];
        }
    };
    return make_op("reshape", std::move(shape), std::move(out), {x}, std::move(bw));
}

namespace {

std::vector<std::size_t> dense_strides(const Shape& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (int i = int(shape.size()) - 2; i >= 0; --i) {
        st[std::size_t(i)] = st[std::size_t(i) + 1] * std::size_t(shape[std::size_t(i) + 1]);
    }
    return st;
}

} // namespace

Tensor permute(const Tensor& x, const std::vector<int>& order) {
    check_defined(x, "permute");
    const int rank = x.rank();
    if (int(order.size()) != rank) fail("permute: order length must equal rank");
    std::vector<bool> used(std::size_t(rank), false);
    for (int o : order) {
        if (o < 0 || o >= rank || used[std::size_t(o)]) fail("permute: invalid axis order");
        used[std::size_t(o)] = true;
    }

    Shape out_shape(std::size_t(rank), 0);
    for (int i = 0; i < rank; ++i) out_shape[std::size_t(i)] = x.dim(order[std::size_t(i)]);
    const auto in_st = dense_strides(x.shape());

    // stride of output axis i in the input buffer
    std::vector<std::size_t> gather(std::size_t(rank), 0);
    for (int i = 0; i < rank; ++i) gather[std::size_t(i)] = in_st[std::size_t(order[std::size_t(i)])];

    const std::size_t n = x.size();
    std::vector<float> out(n);
    const float* src = x.data().data();
    std::vector<int> idx(std::size_t(rank), 0);
    std::size_t src_off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        out[flat] = src[src_off];
        for (int i = rank - 1; i >= 0; --i) {
            idx[std::size_t(i)]++;
            src_off += gather[std::size_t(i)];
            if (idx[std::size_t(i)] < out_shape[std::size_t(i)]) break;
            src_off -= gather[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
            idx[std::size_t(i)] = 0;
        }
    }

    auto bw = [out_shape, gather, rank](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double* go = nd.grad.data();
            std::vector<int> idx(std::size_t(rank), 0);
            std::size_t src_off = 0;
            for (std::size_t flat = 0; flat < nd.data.size(); ++flat) {
                gx[src_off] += go[flat];
                for (int i = rank - 1; i >= 0; --i) {
                    idx[std::size_t(i)]++;
                    src_off += gather[std::size_t(i)];
                    if (idx[std::size_t(i)] < out_shape[std::size_t(i)]) break;
                    src_off -= gather[std::size_t(i)] * std::size_t(out_shape[std::size_t(i)]);
                    idx[std::size_t(i)] = 0;
                }
            }
        }
    };
    return make_op("permute", std::move(out_shape), std::move(out), {x}, std::move(bw));
}

Tensor flip_w(const Tensor& x) {
    check_defined(x, "flip_w");
    if (x.rank() < 1) fail("flip_w: rank must be >= 1");
    const int W = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / std::size_t(W);
    std::vector<float> out(x.size());
    const float* src = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (int w = 0; w < W; ++w) {
            out[r * std::size_t(W) + std::size_t(w)] = src[r * std::size_t(W) + std::size_t(W - 1 - w)];
        }
    }
    auto bw = [W, rows](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double* go = nd.grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                for (int w = 0; w < W; ++w) {
                    gx[r * std::size_t(W) + std::size_t(W - 1 - w)] += go[r * std::size_t(W) + std::size_t(w)];
                }
            }
        }
    };
    return make_op("flip_w", x.shape(), std::move(out), {x}, std::move(bw));
}

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    auto bw = [](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double g = nd.grad[0];
            for (std::size_t i = 0; i < nd.parents[0]->data.size(); ++i) gx[i] += g;
        }
    };
    Tensor r = make_op("sum_all", {1}, {float(acc)}, {x}, std::move(bw));
    r.node()->hp_value = acc;
    r.node()->has_hp = true;
    return r;
}

Tensor mean_all(const Tensor& x) {
    check_defined(x, "mean_all");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const double inv = 1.0 / double(x.size());
    auto bw = [inv](Node& nd) {
        if (double* gx = grad_target(nd, 0)) {
            const double g = nd.grad[0] * inv;
            for (std::size_t i = 0; i < nd.parents[0]->data.size(); ++i) gx[i] += g;
        }
    };
    Tensor r = make_op("mean_all", {1}, {float(acc * inv)}, {x}, std::move(bw));
    r.node()->hp_value = acc * inv;
    r.node()->has_hp = true;
    return r;
}

} // namespace vsod
