#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/gradcheck.hpp"
#include "core/ops.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace vsod;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float scale = 1.0f, bool track = true) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = float(rng.uniform(-scale, scale));
    Tensor t = Tensor::from_data(std::move(shape), std::move(v));
    t.set_requires_grad(track);
    return t;
}

} // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    std::vector<float> k(9, 0.0f);
    k[4] = 1.0f;  // center tap
    Tensor w = Tensor::from_data({1, 1, 3, 3}, k);
    Tensor y = conv2d(x, w, Tensor(), 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(1.0f));
}

TEST_CASE("conv2d full-window sum") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(10.0f));
}

TEST_CASE("conv2d rejects mismatched channel dimension") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor w = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1, 1),
                         doctest::Contains("input-channel"), std::invalid_argument);
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, Tensor(), 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d gradients match central differences") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        Rng rng(seed);
        const int B = rng.uniform_int(1, 2), C = rng.uniform_int(1, 3);
        const int H = rng.uniform_int(3, 6), W = rng.uniform_int(3, 6);
        const int Cout = rng.uniform_int(1, 3);
        Tensor x = random_tensor({B, C, H, W}, rng);
        Tensor w = random_tensor({Cout, C, 3, 3}, rng, 0.5f);
        Tensor b = random_tensor({Cout}, rng, 0.5f);
        auto fn = [&] { return sum_all(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{x, w, b}, 6, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x = Tensor::zeros({4});
    Tensor y = softmax(x, 0);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[std::size_t(i)] == doctest::Approx(0.25f));
}

TEST_CASE("softmax analytic two-way case") {
    Tensor x = Tensor::from_data({2}, {0.0f, std::log(2.0f)});
    Tensor y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(1.0f / 3.0f));
    CHECK(y.data()[1] == doctest::Approx(2.0f / 3.0f));
}

TEST_CASE("softmax slices sum to one even for huge logits") {
    Rng rng(5);
    Tensor x = random_tensor({3, 7}, rng, 1e4f, false);
    Tensor y = softmax(x, 1);
    for (int r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += y.data()[std::size_t(r * 7 + c)];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("softmax gradients match central differences") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 5, 3}, rng, 2.0f);
        Tensor v = random_tensor({2, 5, 3}, rng, 1.0f, false);
        auto fn = [&] { return sum_all(mul(softmax(x, 1), v)); };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{x}, 10, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("matmul by identity is the identity") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng, 1.0f, false);
    std::vector<float> eye(16, 0.0f);
    for (int i = 0; i < 4; ++i) eye[std::size_t(i * 4 + i)] = 1.0f;
    Tensor y = matmul(a, Tensor::from_data({4, 4}, eye));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(y.data()[i] == a.data()[i]);
}

TEST_CASE("matmul 1x1 case") {
    Tensor y = matmul(Tensor::from_data({1, 1}, {2.0f}), Tensor::from_data({1, 1}, {3.0f}));
    CHECK(y.item() == doctest::Approx(6.0f));
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({3, 4}), Tensor::zeros({5, 2})), std::invalid_argument);
}

TEST_CASE("matmul matches the naive triple loop") {
    Rng rng(9);
    Tensor a = random_tensor({3, 4}, rng, 1.0f, false);
    Tensor b = random_tensor({4, 2}, rng, 1.0f, false);
    Tensor y = matmul(a, b);
    for (int m = 0; m < 3; ++m) {
        for (int n = 0; n < 2; ++n) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) {
                acc += double(a.data()[std::size_t(m * 4 + k)]) * double(b.data()[std::size_t(k * 2 + n)]);
            }
            CHECK(std::abs(double(y.data()[std::size_t(m * 2 + n)]) - acc) < 1e-5);
        }
    }
}

TEST_CASE("matmul gradients with broadcast batch dims") {
    for (std::uint64_t seed : {31u, 32u, 33u}) {
        Rng rng(seed);
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        auto fn = [&] { return sum_all(mul(matmul(a, b), matmul(a, b))); };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{a, b}, 6, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("bilinear resize preserves constants") {
    Tensor x = Tensor::full({1, 2, 3, 5}, 0.7f);
    Tensor y = bilinear_resize(x, 9, 4);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.7f));
}

TEST_CASE("bilinear resize half-pixel row case") {
    Tensor x = Tensor::from_data({1, 1, 1, 2}, {1.0f, 3.0f});
    Tensor y = bilinear_resize(x, 1, 4);
    const float expect[4] = {1.0f, 1.5f, 2.5f, 3.0f};
    for (int i = 0; i < 4; ++i) CHECK(y.data()[std::size_t(i)] == doctest::Approx(expect[i]));
}

TEST_CASE("bilinear resize gradients match central differences") {
    for (std::uint64_t seed : {41u, 42u, 43u}) {
        Rng rng(seed);
        Tensor x = random_tensor({1, 1, 2, 3}, rng);
        Tensor v = random_tensor({1, 1, 4, 6}, rng, 1.0f, false);
        auto fn = [&] { return sum_all(mul(bilinear_resize(x, 4, 6), v)); };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{x}, 6, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("global average pool") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 3, 5, 7});
    CHECK(global_avg_pool(x).item() == doctest::Approx(4.0f));

    Tensor c = Tensor::full({2, 3, 4, 4}, 0.25f);
    Tensor pooled = global_avg_pool(c);
    for (float v : pooled.data()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("global average pool backward distributes 1/(HW)") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    x.set_requires_grad(true);
    backward(sum_all(global_avg_pool(x)));
    for (float g : x.grad()) CHECK(g == doctest::Approx(0.25f));
}

TEST_CASE("pointwise basics") {
    Tensor z = Tensor::scalar(0.0f);
    z.set_requires_grad(true);
    Tensor s = sigmoid(z);
    CHECK(s.item() == doctest::Approx(0.5f));
    backward(sum_all(s));
    CHECK(z.grad()[0] == doctest::Approx(0.25f));

    CHECK(relu(Tensor::scalar(-2.0f)).item() == doctest::Approx(0.0f));
    CHECK(relu(Tensor::scalar(3.0f)).item() == doctest::Approx(3.0f));
}

TEST_CASE("binary pointwise ops reject shape mismatch") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), std::invalid_argument);
    CHECK_THROWS_AS(mul(Tensor::zeros({4}), Tensor::zeros({5})), std::invalid_argument);
}

TEST_CASE("pointwise composites pass the finite-difference check") {
    for (std::uint64_t seed : {51u, 52u, 53u}) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        auto fn = [&] {
            Tensor t = mul(sigmoid(a), add(b, clamp(a, -0.5f, 0.5f)));
            t = sub(t, neg(b));
            t = div(t, add_scalar(sigmoid(b), 1.0f));
            t = add(t, log(add_scalar(mul(a, a), 1.0f)));
            return mean_all(mul_scalar(t, 2.0f));
        };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{a, b}, 8, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("concat basics and backward") {
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor b = Tensor::from_data({1}, {3});
    a.set_requires_grad(true);
    b.set_requires_grad(true);

    Tensor one = concat({a}, 0);
    CHECK(one.shape() == Shape{2});
    CHECK(one.data()[0] == 1.0f);

    Tensor y = concat({a, b}, 0);
    REQUIRE(y.shape() == Shape{3});
    CHECK(y.data()[0] == 1.0f);
    CHECK(y.data()[1] == 2.0f);
    CHECK(y.data()[2] == 3.0f);

    backward(sum_all(y));
    for (float g : a.grad()) CHECK(g == doctest::Approx(1.0f));
    for (float g : b.grad()) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("concat rejects extent mismatch off the axis") {
    CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 0), std::invalid_argument);
}

TEST_CASE("concat then split round-trips bit-exactly") {
    Rng rng(61);
    Tensor x = random_tensor({2, 7, 3}, rng, 1.0f, false);
    auto pieces = split(x, 1, {2, 4, 1});
    Tensor back = concat(std::span<const Tensor>(pieces), 1);
    REQUIRE(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("flip is an involution, bit-exactly") {
    Rng rng(62);
    Tensor x = random_tensor({2, 3, 5}, rng, 1.0f, false);
    Tensor y = flip_w(flip_w(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("reshape and permute gradients") {
    for (std::uint64_t seed : {71u, 72u, 73u}) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 3, 4}, rng);
        Tensor v = random_tensor({4, 2, 3}, rng, 1.0f, false);
        auto fn = [&] {
            Tensor t = permute(x, {2, 0, 1});
            t = mul(t, v);
            t = reshape(t, {24});
            return sum_all(mul(t, t));
        };
        auto coords = sample_salient_coords(fn, std::vector<Tensor>{x}, 8, 6, rng);
        CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
    }
}

TEST_CASE("backward of sum of squares is 2x") {
    Tensor x = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f});
    x.set_requires_grad(true);
    backward(sum_all(mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0f));
    CHECK(x.grad()[1] == doctest::Approx(-4.0f));
    CHECK(x.grad()[2] == doctest::Approx(1.0f));
}

TEST_CASE("chain rule through a zero input") {
    Tensor w = Tensor::scalar(1.7f);
    w.set_requires_grad(true);
    Tensor x = Tensor::scalar(0.0f);
    backward(sum_all(sigmoid(mul(x, w))));
    CHECK(w.grad()[0] == doctest::Approx(0.0f));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::zeros({2});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("grad_check is exact for linear functions") {
    // Dyadic values and a dyadic step keep every float operation exact, so
    // central differences reproduce the gradient of a linear map verbatim.
    Rng rng(81);
    std::vector<float> xv(5), vv(5);
    for (auto& f : xv) f = float(rng.uniform_int(-64, 64)) / 64.0f;
    for (auto& f : vv) f = float(rng.uniform_int(-64, 64)) / 64.0f;
    Tensor x = Tensor::from_data({5}, xv);
    x.set_requires_grad(true);
    Tensor v = Tensor::from_data({5}, vv);
    auto fn = [&] { return sum_all(mul(x, v)); };
    auto coords = sample_coords(std::vector<Tensor>{x}, 5, rng);
    CHECK(grad_check(fn, coords, 0x1.0p-10) < 1e-6);
}

TEST_CASE("grad_check passes a conv+relu+pool stack") {
    Rng rng(82);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5f);
    Tensor b = random_tensor({3}, rng, 0.1f);
    auto fn = [&] { return sum_all(global_avg_pool(relu(conv2d(x, w, b, 1, 1)))); };
    auto coords = sample_salient_coords(fn, std::vector<Tensor>{x, w, b}, 8, 6, rng);
    CHECK(grad_check(fn, coords, 1e-3) < 1e-3);
}

TEST_CASE("grad_check flags a deliberately corrupted gradient") {
    Rng rng(83);
    Tensor x = random_tensor({4}, rng);

    // Doubles the true gradient on the way back.
    auto bad_scale = [](const Tensor& t) {
        std::vector<float> data(t.data().begin(), t.data().end());
        return detail::make_op("bad_scale", t.shape(), std::move(data), {t}, [](detail::Node& n) {
            if (n.parents[0]->requires_grad) {
                double* g = n.parents[0]->grad_data();
                for (std::size_t i = 0; i < n.data.size(); ++i) g[i] += 2.0 * n.grad[i];
            }
        });
    };
    auto fn = [&] { return sum_all(mul(bad_scale(x), bad_scale(x))); };
    auto coords = sample_salient_coords(fn, std::vector<Tensor>{x}, 4, 4, rng);
    const double err = grad_check(fn, coords, 1e-3);
    CHECK(err > 0.4);
    CHECK(err < 0.6);
}

TEST_CASE("grad_check reports non-finite intermediates with the op name") {
    Tensor x = Tensor::scalar(-1.0f);
    x.set_requires_grad(true);
    auto fn = [&] { return sum_all(log(x)); };
    std::vector<GradCheckCoord> coords{{x, 0}};
    CHECK_THROWS_WITH_AS(grad_check(fn, coords, 1e-3), doctest::Contains("log"), std::runtime_error);
}

TEST_CASE("forward results are identical across worker counts") {
    Rng rng(91);
    Tensor x = random_tensor({2, 3, 8, 8}, rng, 1.0f, false);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.5f, false);
    Tensor b = random_tensor({4}, rng, 0.1f, false);

    set_thread_count(1);
    Tensor y1 = conv2d(x, w, b, 2, 1);
    set_thread_count(4);
    Tensor y4 = conv2d(x, w, b, 2, 1);
    set_thread_count(1);

    REQUIRE(y1.size() == y4.size());
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == y4.data()[i]);
}
