#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "catfa/metrics.hpp"

using namespace catfa;

namespace {

Mask random_mask(std::mt19937& gen, int h, int w, double fg_prob) {
    std::bernoulli_distribution coin(fg_prob);
    Mask m(static_cast<size_t>(h) * w);
    for (auto& v : m) v = coin(gen) ? 1 : 0;
    return m;
}

// Straight-line recount, structured differently from the library loop.
ConfusionCounts recount(const Mask& pred, const Mask& gt) {
    ConfusionCounts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && gt[i]) ++c.tp;
        if (pred[i] && !gt[i]) ++c.fp;
        if (!pred[i] && gt[i]) ++c.fn;
        if (!pred[i] && !gt[i]) ++c.tn;
    }
    return c;
}

// Boundary definition restated from scratch: foreground with a 4-neighbor
// that is background or off the image.
std::vector<int> slow_boundary(const Mask& m, int h, int w) {
    std::vector<int> out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m[static_cast<size_t>(y) * w + x]) continue;
            bool exposed = false;
            const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4 && !exposed; ++k) {
                const int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w ||
                    !m[static_cast<size_t>(ny) * w + nx])
                    exposed = true;
            }
            if (exposed) out.push_back(y * w + x);
        }
    return out;
}

// All-pairs directed distances in exact integer arithmetic.
double slow_hausdorff(const Mask& a, const Mask& b, int h, int w) {
    const std::vector<int> ba = slow_boundary(a, h, w);
    const std::vector<int> bb = slow_boundary(b, h, w);
    if (ba.empty() && bb.empty()) return 0.0;
    if (ba.empty() || bb.empty())
        return std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    auto directed = [&](const std::vector<int>& from, const std::vector<int>& to) {
        int64_t worst = 0;
        for (int p : from) {
            const int64_t py = p / w, px = p % w;
            int64_t best = INT64_MAX;
            for (int q : to) {
                const int64_t qy = q / w, qx = q % w;
                const int64_t d = (py - qy) * (py - qy) + (px - qx) * (px - qx);
                best = std::min(best, d);
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(static_cast<double>(std::max(directed(ba, bb), directed(bb, ba))));
}

struct SlowWilcoxon {
    double w_plus = 0;
    double p = 1;
    int n = 0;
};

// Exact signed-rank test by full enumeration of the 2^n sign assignments;
// ranks of |d| use average ranks for ties.
SlowWilcoxon enumerate_wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    const int n = static_cast<int>(d.size());
    std::vector<int> order(d.size());
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return std::fabs(d[static_cast<size_t>(i)]) <
                                         std::fabs(d[static_cast<size_t>(j)]); });
    std::vector<double> rank(d.size());
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && std::fabs(d[static_cast<size_t>(order[static_cast<size_t>(j)])]) ==
                            std::fabs(d[static_cast<size_t>(order[static_cast<size_t>(i)])]))
            ++j;
        const double avg = (i + j + 1) / 2.0; // mean of ranks i+1 .. j
        for (int k = i; k < j; ++k) rank[static_cast<size_t>(order[static_cast<size_t>(k)])] = avg;
        i = j;
    }
    SlowWilcoxon out;
    out.n = n;
    for (int k = 0; k < n; ++k)
        if (d[static_cast<size_t>(k)] > 0) out.w_plus += rank[static_cast<size_t>(k)];
    int64_t at_least = 0;
    const int64_t total = int64_t(1) << n;
    for (int64_t bits = 0; bits < total; ++bits) {
        double w = 0;
        for (int k = 0; k < n; ++k)
            if (bits & (int64_t(1) << k)) w += rank[static_cast<size_t>(k)];
        if (w >= out.w_plus) ++at_least;
    }
    out.p = static_cast<double>(at_least) / static_cast<double>(total);
    return out;
}

} // namespace

TEST_CASE("confusion counts a hand-checked pair and rejects bad input") {
    //      pred        gt
    //   1 1 0 0     1 0 0 0
    //   0 1 0 1     0 1 1 1
    const Mask pred = {1, 1, 0, 0, 0, 1, 0, 1};
    const Mask gt = {1, 0, 0, 0, 0, 1, 1, 1};
    const ConfusionCounts c = confusion(pred, gt);
    CHECK(c.tp == 3);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 3);
    CHECK(c.total() == 8);

    CHECK_THROWS_AS(confusion(Mask{1, 0}, Mask{1}), shape_error);
    CHECK_THROWS_AS(confusion(Mask{2, 0}, Mask{1, 0}), shape_error);
    CHECK_THROWS_AS(confusion(Mask{1, 0}, Mask{0, 7}), shape_error);
}

TEST_CASE("ratio metrics match their formulas on 1000 random pairs") {
    std::mt19937 gen(20240817);
    std::uniform_int_distribution<int> dim(1, 12);
    std::uniform_real_distribution<double> prob(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = dim(gen), w = dim(gen);
        const Mask gt = random_mask(gen, h, w, prob(gen));
        Mask pred = gt;
        // Correlated prediction: flip each pixel with a random per-pair rate.
        std::bernoulli_distribution flip(prob(gen) * 0.5);
        for (auto& v : pred)
            if (flip(gen)) v = static_cast<uint8_t>(1 - v);

        const ConfusionCounts c = recount(pred, gt);
        const ConfusionCounts lib = confusion(pred, gt);
        REQUIRE(lib.tp == c.tp);
        REQUIRE(lib.fp == c.fp);
        REQUIRE(lib.fn == c.fn);
        REQUIRE(lib.tn == c.tn);

        const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
                     fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
        const double dsc = (2 * tp + fp + fn) == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
        const double iou = (tp + fp + fn) == 0 ? 1.0 : tp / (tp + fp + fn);
        const double prec = (tp + fp) == 0 ? 1.0 : tp / (tp + fp);
        const double rec = (tp + fn) == 0 ? 1.0 : tp / (tp + fn);
        const double spec = (tn + fp) == 0 ? 1.0 : tn / (tn + fp);
        const double mden = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
        const double mcc = mden == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(mden);

        CHECK(std::fabs(dsc_of(c) - dsc) <= 1e-12);
        CHECK(std::fabs(iou_of(c) - iou) <= 1e-12);
        CHECK(std::fabs(precision_of(c) - prec) <= 1e-12);
        CHECK(std::fabs(recall_of(c) - rec) <= 1e-12);
        CHECK(std::fabs(specificity_of(c) - spec) <= 1e-12);
        CHECK(std::fabs(mcc_of(c) - mcc) <= 1e-12);

        // Dice and Jaccard are tied by an exact identity.
        CHECK(std::fabs(dsc_of(c) - 2 * iou_of(c) / (1 + iou_of(c))) <= 1e-12);
    }
}

TEST_CASE("mcc hits the hand value 1/3 at tp=tn=2, fp=fn=1") {
    const Mask pred = {1, 1, 1, 0, 0, 0};
    const Mask gt = {1, 1, 0, 1, 0, 0};
    const ConfusionCounts c = confusion(pred, gt);
    REQUIRE(c.tp == 2);
    REQUIRE(c.tn == 2);
    REQUIRE(c.fp == 1);
    REQUIRE(c.fn == 1);
    CHECK(mcc_of(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("degenerate masks follow the documented conventions") {
    const int h = 4, w = 5;
    const Mask empty(static_cast<size_t>(h) * w, 0);
    const Mask full(static_cast<size_t>(h) * w, 1);

    SUBCASE("both empty: nothing to get wrong") {
        const MetricsReport r = report(empty, empty, h, w);
        CHECK(r.dsc == 1.0);
        CHECK(r.iou == 1.0);
        CHECK(r.precision == 1.0);
        CHECK(r.recall == 1.0);
        CHECK(r.specificity == 1.0);
        CHECK(r.mcc == 0.0); // tp+fp = 0 factor
        CHECK(r.hd == 0.0);
    }
    SUBCASE("empty prediction against a full reference") {
        const MetricsReport r = report(empty, full, h, w);
        CHECK(r.dsc == 0.0);
        CHECK(r.recall == 0.0);
        CHECK(r.precision == 1.0); // no positive predictions to be wrong about
        CHECK(r.specificity == 1.0);
        CHECK(r.hd == doctest::Approx(std::sqrt(16.0 + 25.0)));
    }
    SUBCASE("full prediction against an empty reference") {
        const MetricsReport r = report(full, empty, h, w);
        CHECK(r.dsc == 0.0);
        CHECK(r.precision == 0.0);
        CHECK(r.recall == 1.0);
        CHECK(r.specificity == 0.0);
        CHECK(r.hd == doctest::Approx(std::sqrt(16.0 + 25.0)));
    }
}

TEST_CASE("boundary extraction marks exposed foreground only") {
    // 5x5 with a solid 3x3 block: its center is interior, the ring is boundary.
    const int h = 5, w = 5;
    Mask m(25, 0);
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) m[static_cast<size_t>(y) * 5 + x] = 1;
    const std::vector<int> exp = {6, 7, 8, 11, 13, 16, 17, 18};
    CHECK(boundary_pixels(m, h, w) == exp);

    // A pixel on the image edge is exposed through the border.
    Mask full(25, 1);
    const std::vector<int> frame = {0,  1,  2,  3,  4,  5,  9,  10, 14,
                                    15, 19, 20, 21, 22, 23, 24};
    CHECK(boundary_pixels(full, h, w) == frame);

    // Single pixel: its own boundary.
    Mask one(25, 0);
    one[12] = 1;
    CHECK(boundary_pixels(one, h, w) == std::vector<int>{12});

    CHECK(boundary_pixels(Mask(25, 0), h, w).empty());
}

TEST_CASE("squared distance map equals the all-sites minimum") {
    std::mt19937 gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 1 + static_cast<int>(gen() % 9), w = 1 + static_cast<int>(gen() % 9);
        std::vector<int> sites;
        for (int p = 0; p < h * w; ++p)
            if (gen() % 4 == 0) sites.push_back(p);
        if (sites.empty()) sites.push_back(static_cast<int>(gen() % static_cast<unsigned>(h * w)));

        const std::vector<int64_t> got = squared_distance_map(sites, h, w);
        REQUIRE(got.size() == static_cast<size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int64_t best = INT64_MAX;
                for (int s : sites) {
                    const int64_t dy = y - s / w, dx = x - s % w;
                    best = std::min(best, dy * dy + dx * dx);
                }
                CHECK(got[static_cast<size_t>(y) * w + x] == best);
            }
    }
}

TEST_CASE("hausdorff distance: known offset gives the 3-4-5 answer") {
    // Two single pixels offset by (3,4) -> distance exactly 5.
    const int h = 8, w = 8;
    Mask a(64, 0), b(64, 0);
    a[static_cast<size_t>(1) * 8 + 1] = 1;
    b[static_cast<size_t>(4) * 8 + 5] = 1;
    CHECK(hausdorff(a, b, h, w) == 5.0);
    CHECK(hausdorff(b, a, h, w) == 5.0);
    CHECK(hausdorff(a, a, h, w) == 0.0);
}

TEST_CASE("hausdorff distance agrees with brute force on random masks") {
    std::mt19937 gen(20240818);
    std::uniform_int_distribution<int> dim(1, 32);
    std::uniform_real_distribution<double> prob(0.05, 0.9);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = dim(gen), w = dim(gen);
        const Mask a = random_mask(gen, h, w, prob(gen));
        const Mask b = random_mask(gen, h, w, prob(gen));
        const double fast = hausdorff(a, b, h, w);
        const double slow = slow_hausdorff(a, b, h, w);
        // Both take sqrt of the same exact integer, so equality is bitwise.
        CHECK(fast == slow);
        CHECK(hausdorff(b, a, h, w) == fast);
    }
}

TEST_CASE("wilcoxon: six uniformly positive differences give p = 1/64") {
    const std::vector<double> a = {2, 3, 4, 5, 6, 7};
    const std::vector<double> b = {1, 2, 3, 4, 5, 6};
    // All shifts equal -> ties share average ranks, W+ is still maximal.
    const WilcoxonResult r = wilcoxon_one_tailed(a, b);
    CHECK(r.exact);
    CHECK(r.n == 6);
    CHECK(r.w_plus == doctest::Approx(21.0));
    CHECK(r.p == doctest::Approx(1.0 / 64.0));
}

TEST_CASE("wilcoxon exact p equals full sign enumeration for n <= 12") {
    std::mt19937 gen(99);
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    std::uniform_int_distribution<int> quant(1, 4);
    for (int n = 5; n <= 12; ++n) {
        for (int trial = 0; trial < 6; ++trial) {
            std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                // Quantized values produce repeated |differences| -> tied ranks.
                a[static_cast<size_t>(i)] = quant(gen) * 0.25;
                b[static_cast<size_t>(i)] = quant(gen) * 0.25;
            }
            if (a == b) a[0] += 0.25;
            const SlowWilcoxon want = enumerate_wilcoxon(a, b);
            if (want.n < 5) continue;
            const WilcoxonResult got = wilcoxon_one_tailed(a, b);
            CHECK(got.exact);
            CHECK(got.n == want.n);
            CHECK(got.w_plus == doctest::Approx(want.w_plus).epsilon(1e-14));
            CHECK(got.p == doctest::Approx(want.p).epsilon(1e-14));
        }
    }
}

TEST_CASE("wilcoxon rejects degenerate inputs") {
    CHECK_THROWS_AS(wilcoxon_one_tailed({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}), config_error);
    // Four nonzero differences are below the minimum sample size.
    CHECK_THROWS_AS(wilcoxon_one_tailed({2, 3, 4, 5}, {1, 2, 3, 4}), config_error);
    CHECK_THROWS_AS(wilcoxon_one_tailed({1, 2}, {1}), shape_error);
}

TEST_CASE("wilcoxon switches to a normal approximation above n = 12") {
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
        a[static_cast<size_t>(i)] = i + 1.0;
        b[static_cast<size_t>(i)] = i + 0.5 - 0.01 * i;
    }
    const WilcoxonResult all_up = wilcoxon_one_tailed(a, b);
    CHECK_FALSE(all_up.exact);
    CHECK(all_up.n == 20);
    CHECK(all_up.w_plus == doctest::Approx(210.0));
    CHECK(all_up.p > 0.0);
    CHECK(all_up.p < 1e-3);

    // Reversing the pairing must flip the evidence.
    const WilcoxonResult all_down = wilcoxon_one_tailed(b, a);
    CHECK_FALSE(all_down.exact);
    CHECK(all_down.p > 0.99);
    CHECK(all_down.p <= 1.0);
}

TEST_CASE("report bundles the individual metrics") {
    std::mt19937 gen(3);
    const int h = 9, w = 7;
    const Mask pred = random_mask(gen, h, w, 0.4);
    const Mask gt = random_mask(gen, h, w, 0.4);
    const MetricsReport r = report(pred, gt, h, w);
    const ConfusionCounts c = confusion(pred, gt);
    CHECK(r.dsc == dsc_of(c));
    CHECK(r.iou == iou_of(c));
    CHECK(r.precision == precision_of(c));
    CHECK(r.recall == recall_of(c));
    CHECK(r.specificity == specificity_of(c));
    CHECK(r.mcc == mcc_of(c));
    CHECK(r.hd == hausdorff(pred, gt, h, w));
}
