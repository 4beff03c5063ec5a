#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/motion.hpp"
#include "core/rng.hpp"

using namespace vsod;

namespace {

Image binary_image(int h, int w, std::initializer_list<float> values) {
    Image img(1, h, w);
    std::size_t i = 0;
    for (float v : values) img.data[i++] = v;
    return img;
}

Image random_mask(int h, int w, Rng& rng, double p = 0.5) {
    Image img(1, h, w);
    for (auto& v : img.data) v = rng.coin(p) ? 1.0f : 0.0f;
    return img;
}

} // namespace

TEST_CASE("motion label XOR truth table") {
    Image a = binary_image(2, 2, {1, 0, 0, 0});
    Image b = binary_image(2, 2, {0, 1, 0, 0});
    Image m = motion_label(a, b);
    CHECK(m.data[0] == 1.0f);
    CHECK(m.data[1] == 1.0f);
    CHECK(m.data[2] == 0.0f);
    CHECK(m.data[3] == 0.0f);
}

TEST_CASE("motion label of identical masks is all zero") {
    Rng rng(5);
    Image a = random_mask(6, 6, rng);
    Image m = motion_label(a, a);
    for (float v : m.data) CHECK(v == 0.0f);
}

TEST_CASE("motion label of complementary masks is all one") {
    Rng rng(6);
    Image a = random_mask(6, 6, rng);
    Image b = a;
    for (auto& v : b.data) v = 1.0f - v;
    Image m = motion_label(a, b);
    for (float v : m.data) CHECK(v == 1.0f);
}

TEST_CASE("motion label is symmetric and matches the inequality oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Image a = random_mask(8, 8, rng);
        Image b = random_mask(8, 8, rng);
        Image ab = motion_label(a, b);
        Image ba = motion_label(b, a);
        for (std::size_t i = 0; i < ab.size(); ++i) {
            const float expect = a.data[i] != b.data[i] ? 1.0f : 0.0f;
            CHECK(ab.data[i] == expect);
            CHECK(ba.data[i] == expect);
        }
    }
}

TEST_CASE("motion label rejects non-binary input") {
    Image a(1, 2, 2, 0.5f);
    Image b(1, 2, 2, 0.0f);
    CHECK_THROWS_AS(motion_label(a, b), std::invalid_argument);
    CHECK_THROWS_AS(motion_label(b, a), std::invalid_argument);
}

TEST_CASE("clip motion pairs") {
    CHECK(clip_motion_pairs(4) == std::vector<std::pair<int, int>>{{1, 2}, {2, 3}, {3, 4}});
    CHECK(clip_motion_pairs(2) == std::vector<std::pair<int, int>>{{1, 2}});
    CHECK(clip_motion_pairs(1).empty());
}
