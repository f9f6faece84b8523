#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "catfa/synth.hpp"

using namespace catfa;

namespace {

double fg_fraction(const TensorT<float>& mask) {
    double s = 0;
    for (int64_t i = 0; i < mask.size(); ++i) s += mask[i];
    return s / static_cast<double>(mask.size());
}

// Mean intensity inside and outside the mask, first image channel.
std::pair<double, double> inside_outside(const SynthSample& s) {
    const int h = s.image.dim(1), w = s.image.dim(2);
    double in = 0, out = 0;
    int64_t nin = 0, nout = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (s.mask.at3(0, y, x) >= 0.5f) {
                in += s.image.at3(0, y, x);
                ++nin;
            } else {
                out += s.image.at3(0, y, x);
                ++nout;
            }
        }
    return {in / std::max<int64_t>(1, nin), out / std::max<int64_t>(1, nout)};
}

int quadrant_mass(const TensorT<float>& mask, int qy, int qx) {
    const int h = mask.dim(1), w = mask.dim(2);
    int n = 0;
    for (int y = qy * h / 2; y < (qy + 1) * h / 2; ++y)
        for (int x = qx * w / 2; x < (qx + 1) * w / 2; ++x)
            if (mask.at3(0, y, x) >= 0.5f) ++n;
    return n;
}

} // namespace

TEST_CASE("same seed reproduces the dataset bitwise; different seeds differ") {
    const auto a = make_synth_dataset(6, 64, 42);
    const auto b = make_synth_dataset(6, 64, 42);
    const auto c = make_synth_dataset(6, 64, 43);
    REQUIRE(a.size() == 6);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(bitwise_equal(a[i].image, b[i].image));
        CHECK(bitwise_equal(a[i].mask, b[i].mask));
    }
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!bitwise_equal(a[i].image, c[i].image)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("samples satisfy the documented value and coverage contracts") {
    for (SynthTask task : {SynthTask::anywhere, SynthTask::quadrant}) {
        const auto data = make_synth_dataset(40, 64, 7, task);
        for (const auto& s : data) {
            REQUIRE(s.image.shape() == std::vector<int>{3, 64, 64});
            REQUIRE(s.mask.shape() == std::vector<int>{1, 64, 64});
            float lo = 1.f, hi = 0.f;
            for (int64_t i = 0; i < s.image.size(); ++i) {
                lo = std::min(lo, s.image[i]);
                hi = std::max(hi, s.image[i]);
                REQUIRE(s.image[i] >= 0.f);
                REQUIRE(s.image[i] <= 1.f);
            }
            CHECK(hi - lo > 0.1f); // never a flat image
            for (int64_t i = 0; i < s.mask.size(); ++i)
                REQUIRE((s.mask[i] == 0.f || s.mask[i] == 1.f));
            const double frac = fg_fraction(s.mask);
            CHECK(frac >= 0.05);
            CHECK(frac <= 0.6);
        }
    }
}

TEST_CASE("foreground is consistently offset from the local background") {
    const auto data = make_synth_dataset(100, 64, 11);
    int separated = 0;
    double mean_gap = 0;
    for (const auto& s : data) {
        const auto [in, out] = inside_outside(s);
        if (std::fabs(in - out) > 0.15) ++separated;
        mean_gap += std::fabs(in - out);
    }
    // The intensity offset band guarantees strong separation; antialiased
    // borders and background texture may soften a few samples.
    CHECK(separated >= 90);
    CHECK(mean_gap / 100.0 > 0.2);
}

TEST_CASE("channels carry the same structure with fixed gains") {
    const auto data = make_synth_dataset(5, 64, 13);
    for (const auto& s : data) {
        double d01 = 0, d02 = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                d01 += s.image.at3(0, y, x) - s.image.at3(1, y, x);
                d02 += s.image.at3(0, y, x) - s.image.at3(2, y, x);
            }
        // Mean channel gaps follow the 1.0 / 0.97 / 0.94 gain ladder.
        CHECK(d01 / 4096.0 > 0.0);
        CHECK(d02 / 4096.0 > d01 / 4096.0);
    }
}

TEST_CASE("quadrant task: labels live top-left, look-alikes elsewhere") {
    const auto data = make_synth_dataset(30, 64, 17, SynthTask::quadrant);
    for (const auto& s : data) {
        const int tl = quadrant_mass(s.mask, 0, 0);
        const int rest = quadrant_mass(s.mask, 0, 1) + quadrant_mass(s.mask, 1, 0) +
                         quadrant_mass(s.mask, 1, 1);
        CHECK(tl > 0);
        CHECK(rest == 0);

        // Each quadrant contains a rendered shape: its intensity population
        // must deviate from the quadrant median the same way the target does.
        const auto [in, out] = inside_outside(s);
        const bool bright = in > out;
        for (const auto& [qy, qx] : std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 1}}) {
            float extreme = bright ? 0.f : 1.f;
            for (int y = qy * 32; y < qy * 32 + 32; ++y)
                for (int x = qx * 32; x < qx * 32 + 32; ++x) {
                    const float v = s.image.at3(0, y, x);
                    extreme = bright ? std::max(extreme, v) : std::min(extreme, v);
                }
            // A distractor of the target's intensity exists in the quadrant.
            if (bright)
                CHECK(extreme > static_cast<float>(out) + 0.15f);
            else
                CHECK(extreme < static_cast<float>(out) - 0.15f);
        }
    }
}

TEST_CASE("argument validation") {
    CHECK_THROWS_AS(make_synth_dataset(0, 64, 1), config_error);
    CHECK_THROWS_AS(make_synth_dataset(4, 48, 1), config_error);
    CHECK_THROWS_AS(make_synth_dataset(4, 0, 1), config_error);
}
