#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "catfa/attention.hpp"

using namespace catfa;

namespace {

TensorT<double> random_tensor(std::vector<int> shape, uint64_t seed, double lo = -1.0,
                              double hi = 1.0) {
    TensorT<double> t(std::move(shape));
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = u(gen);
    return t;
}

void randomize(ParamStore<double>& store, uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (const auto& p : store.items())
        for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] = u(gen);
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// y[n][j] = sum_i x[n][i] w[i][j] + b[j], the linear-layer convention used
// throughout ({in, out} weights).
std::vector<std::vector<double>> apply_linear(const std::vector<std::vector<double>>& x,
                                              const TensorT<double>& w,
                                              const TensorT<double>& b) {
    const int in = w.dim(0), out = w.dim(1);
    std::vector<std::vector<double>> y(x.size(), std::vector<double>(out, 0.0));
    for (size_t n = 0; n < x.size(); ++n)
        for (int j = 0; j < out; ++j) {
            double acc = b.size() ? b[j] : 0.0;
            for (int i = 0; i < in; ++i) acc += x[n][static_cast<size_t>(i)] * w.at2(i, j);
            y[n][static_cast<size_t>(j)] = acc;
        }
    return y;
}

// Monolithic multi-head attention, written once from the textbook definition:
// per-head scaled dot-product over column groups, concat, two closing linears.
TensorT<double> plain_mha(const TensorT<double>& e, const AttentionParams<double>& p) {
    const int b = e.dim(0), c = e.dim(1), h = e.dim(2), w = e.dim(3);
    const int n = h * w, heads = p.heads, d = c / heads;
    TensorT<double> out(e.shape());
    for (int bi = 0; bi < b; ++bi) {
        std::vector<std::vector<double>> x(static_cast<size_t>(n), std::vector<double>(c));
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ci = 0; ci < c; ++ci)
                    x[static_cast<size_t>(y * w + xx)][static_cast<size_t>(ci)] =
                        e.at4(bi, ci, y, xx);

        const auto q = apply_linear(x, p.wq->value, p.bq->value);
        const auto k = apply_linear(x, p.wk->value, p.bk->value);
        const auto v = apply_linear(x, p.wv->value, p.bv->value);

        std::vector<std::vector<double>> cat(static_cast<size_t>(n), std::vector<double>(c));
        for (int j = 0; j < heads; ++j) {
            const int c0 = j * d;
            for (int i = 0; i < n; ++i) {
                std::vector<double> score(static_cast<size_t>(n));
                double mx = -1e300;
                for (int m = 0; m < n; ++m) {
                    double s = 0;
                    for (int t = 0; t < d; ++t)
                        s += q[static_cast<size_t>(i)][static_cast<size_t>(c0 + t)] *
                             k[static_cast<size_t>(m)][static_cast<size_t>(c0 + t)];
                    score[static_cast<size_t>(m)] = s / std::sqrt(static_cast<double>(d));
                    mx = std::max(mx, score[static_cast<size_t>(m)]);
                }
                double z = 0;
                for (int m = 0; m < n; ++m) {
                    score[static_cast<size_t>(m)] = std::exp(score[static_cast<size_t>(m)] - mx);
                    z += score[static_cast<size_t>(m)];
                }
                for (int t = 0; t < d; ++t) {
                    double acc = 0;
                    for (int m = 0; m < n; ++m)
                        acc += score[static_cast<size_t>(m)] / z *
                               v[static_cast<size_t>(m)][static_cast<size_t>(c0 + t)];
                    cat[static_cast<size_t>(i)][static_cast<size_t>(c0 + t)] = acc;
                }
            }
        }
        const auto o = apply_linear(cat, p.wo->value, p.bo->value);
        const auto z = apply_linear(o, p.wl->value, p.bl->value);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ci = 0; ci < c; ++ci)
                    out.at4(bi, ci, y, xx) =
                        z[static_cast<size_t>(y * w + xx)][static_cast<size_t>(ci)];
    }
    return out;
}

// Configure an attention module so the two published twists vanish: R = 1
// with an identity token reduction, and a zeroed key-enrichment projection.
void neutralize_extensions(AttentionParams<double>& p) {
    REQUIRE(p.reduction == 1);
    const int c = p.channels;
    for (int64_t i = 0; i < p.cap_w2->value.size(); ++i) p.cap_w2->value[i] = 0.0;
    for (int64_t i = 0; i < p.cap_b2->value.size(); ++i) p.cap_b2->value[i] = 0.0;
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) p.sr_w->value.at2(i, j) = i == j ? 1.0 : 0.0;
    for (int64_t i = 0; i < p.sr_b->value.size(); ++i) p.sr_b->value[i] = 0.0;
}

} // namespace

TEST_CASE("token layout: site-major rows, channel columns, exact round trip") {
    const TensorT<double> x = random_tensor({2, 3, 4, 5}, 1);
    const TensorT<double> t = to_tokens(x);
    REQUIRE(t.shape() == std::vector<int>{2, 20, 3});
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int xx = 0; xx < 5; ++xx)
                    CHECK(t.at3(b, y * 5 + xx, c) == x.at4(b, c, y, xx));
    CHECK(bitwise_equal(from_tokens(t, 4, 5), x));
    CHECK_THROWS_AS(from_tokens(t, 5, 5), shape_error);
}

TEST_CASE("pooling blocks per reduction factor, larger extent on rows") {
    CHECK(reduction_factors(1) == std::pair<int, int>{1, 1});
    CHECK(reduction_factors(2) == std::pair<int, int>{2, 1});
    CHECK(reduction_factors(4) == std::pair<int, int>{2, 2});
    CHECK(reduction_factors(8) == std::pair<int, int>{4, 2});
    CHECK_THROWS_AS(reduction_factors(0), config_error);
    CHECK_THROWS_AS(reduction_factors(3), config_error);
    CHECK_THROWS_AS(reduction_factors(-2), config_error);
    CHECK_THROWS_AS(reduction_factors(12), config_error);
}

TEST_CASE("scaled dot-product attention against explicit sums") {
    const TensorT<double> q = random_tensor({3, 4}, 2);
    const TensorT<double> k = random_tensor({2, 4}, 3);
    const TensorT<double> v = random_tensor({2, 4}, 4);
    TensorT<double> weights;
    const TensorT<double> out = scaled_attention(q, k, v, &weights);
    REQUIRE(out.shape() == std::vector<int>{3, 4});
    REQUIRE(weights.shape() == std::vector<int>{3, 2});

    for (int i = 0; i < 3; ++i) {
        double s[2];
        for (int m = 0; m < 2; ++m) {
            s[m] = 0;
            for (int t = 0; t < 4; ++t) s[m] += q.at2(i, t) * k.at2(m, t);
            s[m] /= 2.0; // sqrt(d) = 2
        }
        const double mx = std::max(s[0], s[1]);
        const double e0 = std::exp(s[0] - mx), e1 = std::exp(s[1] - mx);
        const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        CHECK(weights.at2(i, 0) == doctest::Approx(a0).epsilon(1e-14));
        CHECK(weights.at2(i, 1) == doctest::Approx(a1).epsilon(1e-14));
        CHECK(weights.at2(i, 0) + weights.at2(i, 1) == doctest::Approx(1.0).epsilon(1e-14));
        for (int t = 0; t < 4; ++t)
            CHECK(out.at2(i, t) ==
                  doctest::Approx(a0 * v.at2(0, t) + a1 * v.at2(1, t)).epsilon(1e-13));
    }

    CHECK_THROWS_AS(scaled_attention(q, random_tensor({2, 3}, 5), v), shape_error);
    CHECK_THROWS_AS(scaled_attention(q, k, random_tensor({3, 4}, 6)), shape_error);
}

TEST_CASE("key enrichment equals its formula and the residual passes keys through") {
    const int n = 5, c = 3;
    const TensorT<double> k = random_tensor({n, c}, 7);
    const TensorT<double> q = random_tensor({n, c}, 8);
    const TensorT<double> w1 = random_tensor({2 * c, c}, 9, -0.6, 0.6);
    const TensorT<double> b1 = random_tensor({c}, 10);
    const TensorT<double> w2 = random_tensor({c, c}, 11, -0.6, 0.6);
    const TensorT<double> b2 = random_tensor({c}, 12);

    const TensorT<double> got = cap_enrich(k, q, w1, b1, w2, b2);
    REQUIRE(got.shape() == k.shape());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            double kp = b2[j] + k.at2(i, j);
            for (int t = 0; t < c; ++t) {
                double h1 = b1[t];
                for (int u = 0; u < c; ++u) {
                    h1 += k.at2(i, u) * w1.at2(u, t);        // first half: keys
                    h1 += q.at2(i, u) * w1.at2(c + u, t);    // second half: queries
                }
                kp += gelu_scalar(h1) * w2.at2(t, j);
            }
            CHECK(got.at2(i, j) == doctest::Approx(kp).epsilon(1e-12));
        }

    // Zeroed projection leaves exactly the residual key.
    const TensorT<double> zeros_w({c, c}), zeros_b({c});
    CHECK(bitwise_equal(cap_enrich(k, q, w1, b1, zeros_w, zeros_b), k));

    // Rank-3 batches behave like stacked rank-2 calls.
    TensorT<double> kb({2, n, c}), qb({2, n, c});
    std::copy(k.data(), k.data() + k.size(), kb.data());
    std::copy(k.data(), k.data() + k.size(), kb.data() + k.size());
    std::copy(q.data(), q.data() + q.size(), qb.data());
    std::copy(q.data(), q.data() + q.size(), qb.data() + q.size());
    const TensorT<double> got_b = cap_enrich(kb, qb, w1, b1, w2, b2);
    for (int64_t i = 0; i < got.size(); ++i) {
        CHECK(got_b[i] == got[i]);
        CHECK(got_b[got.size() + i] == got[i]);
    }
}

TEST_CASE("spatial token reduction concatenates blocks row-major then projects") {
    const int h = 4, w = 4, c = 3, r = 4;
    const TensorT<double> tokens = random_tensor({2, h * w, c}, 13);
    const TensorT<double> w_sr = random_tensor({r * c, c}, 14, -0.5, 0.5);
    const TensorT<double> b_sr = random_tensor({c}, 15);

    const TensorT<double> got = spatial_reduce(tokens, h, w, r, w_sr, b_sr);
    REQUIRE(got.shape() == std::vector<int>{2, 4, c});

    // reduction_factors(4) = 2x2 blocks; slot order is row-major in the block.
    for (int b = 0; b < 2; ++b)
        for (int by = 0; by < 2; ++by)
            for (int bx = 0; bx < 2; ++bx) {
                std::vector<double> gathered;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int tok = (by * 2 + dy) * w + bx * 2 + dx;
                        for (int ci = 0; ci < c; ++ci)
                            gathered.push_back(tokens.at3(b, tok, ci));
                    }
                for (int j = 0; j < c; ++j) {
                    double acc = b_sr[j];
                    for (int i = 0; i < r * c; ++i) acc += gathered[static_cast<size_t>(i)] *
                                                           w_sr.at2(i, j);
                    CHECK(got.at3(b, by * 2 + bx, j) == doctest::Approx(acc).epsilon(1e-12));
                }
            }

    SUBCASE("factor 8 pools 4x2 blocks") {
        const TensorT<double> t8 = random_tensor({1, 8 * 2, c}, 16);
        const TensorT<double> w8 = random_tensor({8 * c, c}, 17, -0.5, 0.5);
        const TensorT<double> got8 = spatial_reduce(t8, 8, 2, 8, w8, b_sr);
        CHECK(got8.shape() == std::vector<int>{1, 2, c});
    }
    SUBCASE("geometry violations throw") {
        CHECK_THROWS_AS(spatial_reduce(tokens, 3, 4, r, w_sr, b_sr), shape_error);
        CHECK_THROWS_AS(spatial_reduce(tokens, h, w, 8, w_sr, b_sr), shape_error);
        CHECK_THROWS_AS(spatial_reduce(tokens, h, w, r, random_tensor({r * c, c + 1}, 18), b_sr),
                        shape_error);
    }
}

TEST_CASE("with both twists neutralized the module is plain multi-head attention") {
    // R=1 plus an identity reduction weight makes pooling a no-op; a zeroed
    // enrichment projection reduces keys to the plain linear projection. What
    // remains must match a monolithic from-the-definition implementation.
    std::mt19937_64 seeds(20240819);
    for (int trial = 0; trial < 10; ++trial) {
        const int heads_options[3] = {1, 2, 4};
        const int heads = heads_options[trial % 3];
        const int c = 8, h = 3 + trial % 2, w = 4;
        ParamStore<double> store(seeds());
        AttentionParams<double> p =
            AttentionParams<double>::create(store, "a", c, heads, 1);
        randomize(store, seeds());
        neutralize_extensions(p);

        const TensorT<double> e = random_tensor({2, c, h, w}, seeds());
        const TensorT<double> got = context_addition_attention(e, p);
        const TensorT<double> want = plain_mha(e, p);
        REQUIRE(got.shape() == want.shape());
        CHECK(max_abs_diff(got, want) <= 1e-8);
    }
}

TEST_CASE("score multiply-add count follows N * (N/R) * C") {
    CHECK(attention_score_madds(4096, 64, 1) == 4096ull * 4096ull * 64ull);
    CHECK(attention_score_madds(4096, 64, 2) == 4096ull * 2048ull * 64ull);
    CHECK(attention_score_madds(4096, 64, 4) == 4096ull * 1024ull * 64ull);
    CHECK(attention_score_madds(4096, 64, 8) == 4096ull * 512ull * 64ull);
    // Exact 1/R scaling.
    for (int r : {2, 4, 8})
        CHECK(attention_score_madds(1024, 32, r) * static_cast<uint64_t>(r) ==
              attention_score_madds(1024, 32, 1));
    CHECK_THROWS_AS(attention_score_madds(100, 64, 8), config_error);
    CHECK_THROWS_AS(attention_score_madds(4096, 64, 5), config_error);
}

TEST_CASE("full module: batch independence, determinism, input validation") {
    ParamStore<double> store(37);
    AttentionParams<double> p = AttentionParams<double>::create(store, "a", 8, 2, 4);
    randomize(store, 38);
    const TensorT<double> e = random_tensor({2, 8, 4, 4}, 39);

    const TensorT<double> both = context_addition_attention(e, p);
    CHECK(bitwise_equal(both, context_addition_attention(e, p)));

    for (int bi = 0; bi < 2; ++bi) {
        TensorT<double> one({1, 8, 4, 4});
        std::copy(&e.at4(bi, 0, 0, 0), &e.at4(bi, 0, 0, 0) + one.size(), one.data());
        const TensorT<double> y1 = context_addition_attention(one, p);
        for (int64_t i = 0; i < y1.size(); ++i)
            if (both[static_cast<int64_t>(bi) * y1.size() + i] != y1[i]) {
                FAIL_CHECK("sample " << bi << " depends on its batch mates");
                break;
            }
    }

    CHECK_THROWS_AS(context_addition_attention(random_tensor({2, 4, 4, 4}, 40), p),
                    shape_error);
    CHECK_THROWS_AS(context_addition_attention(random_tensor({2, 8, 3, 4}, 41), p),
                    shape_error); // 12 tokens not divisible into 2x2 blocks
    CHECK_THROWS_AS(AttentionParams<double>::create(store, "b", 9, 2, 1), config_error);
    CHECK_THROWS_AS(AttentionParams<double>::create(store, "c", 8, 2, 3), config_error);
}

TEST_CASE("transformer block wiring: residual around attention + token mixer") {
    ParamStore<double> store(43);
    const CatBlockParams<double> p =
        CatBlockParams<double>::create(store, "blk", 8, 2, 4, 8, PadMode::zero);
    randomize(store, 44);
    const TensorT<double> t_in = random_tensor({2, 8, 4, 4}, 45);

    const TensorT<double> got = cat_block(t_in, p);
    const TensorT<double> z = context_addition_attention(t_in, p.attn);
    const TensorT<double> mixed = d_fcn(z, t_in, p.dfcn);
    const TensorT<double> want = add(t_in, mixed);
    CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("token mixer padding is the positional channel") {
    // On a spatially constant input, circular padding keeps every site
    // indistinguishable; zero padding lets the mixer see the border.
    ParamStore<double> store(47);
    const DfcnParams<double> pz = DfcnParams<double>::create(store, "z", 4, 6, PadMode::zero);
    const DfcnParams<double> pc =
        DfcnParams<double>::create(store, "c", 4, 6, PadMode::circular);
    randomize(store, 48);
    // Same weights for both modules.
    for (size_t i = 0; i < 8; ++i) {
        const auto& zi = store.items()[i];
        const auto& ci = store.items()[i + 8];
        for (int64_t j = 0; j < zi->value.size(); ++j) ci->value[j] = zi->value[j];
    }

    TensorT<double> z({1, 4, 5, 6}), t({1, 4, 5, 6});
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 30; ++s) {
            z[c * 30 + s] = 0.3 + 0.1 * c;
            t[c * 30 + s] = -0.2 + 0.05 * c;
        }

    const TensorT<double> yc = d_fcn(z, t, pc);
    const TensorT<double> yz = d_fcn(z, t, pz);

    bool circular_constant = true;
    for (int c = 0; c < 4 && circular_constant; ++c)
        for (int s = 1; s < 30; ++s)
            if (yc[c * 30 + s] != yc[c * 30]) {
                circular_constant = false;
                break;
            }
    CHECK(circular_constant);

    bool zero_pad_varies = false;
    for (int c = 0; c < 4 && !zero_pad_varies; ++c)
        for (int s = 0; s < 30; ++s)
            if (yz[c * 30 + s] != yz[c * 30 + 2 * 6 + 2]) { // vs an interior site
                zero_pad_varies = true;
                break;
            }
    CHECK(zero_pad_varies);
}
