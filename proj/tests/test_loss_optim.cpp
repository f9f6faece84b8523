#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "catfa/loss.hpp"
#include "catfa/optim.hpp"

using namespace catfa;

namespace {

TensorT<double> tensor_of(std::vector<double> v) {
    TensorT<double> t({static_cast<int>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
    return t;
}

// Loss recomputed from the written-out formula, term by term.
double loss_by_hand(const TensorT<double>& p, const TensorT<double>& r, double eps) {
    double pr = 0, p_plus_r = 0, qs = 0, q_plus_s = 0;
    for (int64_t i = 0; i < p.size(); ++i) {
        pr += p[i] * r[i];
        p_plus_r += p[i] + r[i];
        qs += (1.0 - p[i]) * (1.0 - r[i]);
        q_plus_s += (1.0 - p[i]) + (1.0 - r[i]);
    }
    return 1.0 - (pr + eps) / (p_plus_r + eps) - (qs + eps) / (q_plus_s + eps);
}

} // namespace

TEST_CASE("half-probability fixture matches direct scalar arithmetic") {
    const double eps = 1e-6;
    const TensorT<double> p = tensor_of({0.5, 0.5, 0.5, 0.5});
    const TensorT<double> r = tensor_of({1, 1, 0, 0});
    // Both overlap ratios are (1 + eps) / (4 + eps).
    const double want = 1.0 - 2.0 * (1.0 + eps) / (4.0 + eps);
    CHECK(generalized_dice_loss(p, r, eps) == doctest::Approx(want).epsilon(1e-15));
    CHECK(generalized_dice_loss(p, r, eps) == doctest::Approx(loss_by_hand(p, r, eps)).epsilon(1e-15));
}

TEST_CASE("perfect prediction tends to zero, total mismatch to one") {
    std::mt19937_64 gen(5);
    TensorT<double> r({100});
    for (int64_t i = 0; i < 100; ++i) r[i] = gen() % 2 ? 1.0 : 0.0;
    r[0] = 1.0;
    r[1] = 0.0; // both classes present
    TensorT<double> flipped(r.shape());
    for (int64_t i = 0; i < 100; ++i) flipped[i] = 1.0 - r[i];

    CHECK(std::fabs(generalized_dice_loss(r, r, 1e-6)) < 1e-3);
    CHECK(std::fabs(generalized_dice_loss(r, r, 1e-12)) < 1e-9);
    CHECK(std::fabs(generalized_dice_loss(flipped, r, 1e-6) - 1.0) < 1e-3);
}

TEST_CASE("class swap exchanges the two terms exactly on a dyadic grid") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        TensorT<double> p({64}), r({64}), ps({64}), rs({64});
        for (int64_t i = 0; i < 64; ++i) {
            p[i] = static_cast<double>(gen() % 65) / 64.0; // exact dyadics
            r[i] = gen() % 2 ? 1.0 : 0.0;
            ps[i] = 1.0 - p[i];
            rs[i] = 1.0 - r[i];
        }
        const double a = generalized_dice_loss(p, r, 1e-6);
        const double b = generalized_dice_loss(ps, rs, 1e-6);
        CHECK(a == b); // bitwise
    }
}

TEST_CASE("loss stays within the epsilon-widened unit interval") {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        TensorT<double> p({37}), r({37});
        for (int64_t i = 0; i < 37; ++i) {
            p[i] = u(gen);
            r[i] = gen() % 2 ? 1.0 : 0.0;
        }
        const double l = generalized_dice_loss(p, r, 1e-6);
        CHECK(l >= -1e-5);
        CHECK(l <= 1.0 + 1e-5);
    }
}

TEST_CASE("analytic gradient agrees with central differences") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    TensorT<double> p({40}), r({40});
    for (int64_t i = 0; i < 40; ++i) {
        p[i] = u(gen);
        r[i] = gen() % 2 ? 1.0 : 0.0;
    }
    TensorT<double> dp;
    generalized_dice_loss(p, r, 1e-6, &dp);
    REQUIRE(dp.shape() == p.shape());

    const double h = 1e-5;
    double worst = 0;
    for (int64_t i = 0; i < 40; ++i) {
        TensorT<double> pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        const double fd =
            (generalized_dice_loss(pp, r, 1e-6) - generalized_dice_loss(pm, r, 1e-6)) / (2 * h);
        worst = std::max(worst, std::fabs(fd - dp[i]) / std::max(std::fabs(dp[i]), 1e-6));
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("loss input validation") {
    const TensorT<double> ok = tensor_of({0.5, 0.5});
    const TensorT<double> r = tensor_of({1, 0});
    CHECK_THROWS_AS(generalized_dice_loss(tensor_of({-0.01, 0.5}), r, 1e-6), runtime_fault);
    CHECK_THROWS_AS(generalized_dice_loss(tensor_of({0.5, 1.5}), r, 1e-6), runtime_fault);
    TensorT<double> with_nan = tensor_of({0.5, 0.5});
    with_nan[0] = std::nan("");
    CHECK_THROWS_AS(generalized_dice_loss(with_nan, r, 1e-6), runtime_fault);
    CHECK_THROWS_AS(generalized_dice_loss(ok, tensor_of({1, 0, 1}), 1e-6), shape_error);
    CHECK_THROWS_AS(generalized_dice_loss(ok, r, 0.0), config_error);
    CHECK_THROWS_AS(generalized_dice_loss(ok, r, -1e-6), config_error);
}

TEST_CASE("optimizer follows the scalar recurrence to high precision") {
    AdamWConfig cfg; // library defaults
    ParamStore<double> store(1);
    Param<double>* p = store.create("w", {1}, Init::zeros);
    p->value[0] = 0.7;

    double theta = 0.7, m = 0, v = 0;
    for (int t = 1; t <= 10; ++t) {
        const double g = std::sin(static_cast<double>(t)) + 0.3;
        ParamStore<double>::grad_of(p)[0] = g;
        adamw_step(store, cfg);

        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mhat = m / (1 - std::pow(cfg.beta1, t));
        const double vhat = v / (1 - std::pow(cfg.beta2, t));
        theta = theta * (1 - cfg.lr * cfg.weight_decay) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        CHECK(p->value[0] == doctest::Approx(theta).epsilon(1e-12));
    }
}

TEST_CASE("zero gradient leaves parameters fixed; decay alone shrinks geometrically") {
    AdamWConfig still;
    still.weight_decay = 0.0;
    ParamStore<double> store(1);
    Param<double>* p = store.create("w", {3}, Init::trunc_normal);
    const TensorT<double> before = p->value;
    store.zero_grads();
    adamw_step(store, still);
    adamw_step(store, still);
    CHECK(bitwise_equal(p->value, before));

    AdamWConfig decay;
    decay.lr = 0.05;
    decay.weight_decay = 0.5;
    double expect[3] = {before[0], before[1], before[2]};
    for (int t = 0; t < 3; ++t) {
        adamw_step(store, decay);
        for (int i = 0; i < 3; ++i) expect[i] *= 1 - decay.lr * decay.weight_decay;
    }
    for (int i = 0; i < 3; ++i) CHECK(p->value[i] == expect[i]);
}

TEST_CASE("parameters without an allocated gradient are skipped") {
    AdamWConfig cfg;
    cfg.weight_decay = 1.0;
    cfg.lr = 0.1;
    ParamStore<double> store(2);
    Param<double>* touched = store.create("a", {1}, Init::zeros);
    Param<double>* untouched = store.create("b", {1}, Init::zeros);
    touched->value[0] = 1.0;
    untouched->value[0] = 1.0;
    ParamStore<double>::grad_of(touched)[0] = 0.0;
    adamw_step(store, cfg);
    CHECK(touched->value[0] == 1.0 - cfg.lr * cfg.weight_decay);
    CHECK(untouched->value[0] == 1.0);
}

TEST_CASE("bias correction counts steps per parameter") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    ParamStore<double> store(3);
    Param<double>* early = store.create("a", {1}, Init::zeros);
    Param<double>* late = store.create("b", {1}, Init::zeros);

    ParamStore<double>::grad_of(early)[0] = 1.0;
    adamw_step(store, cfg);
    adamw_step(store, cfg);

    // The late parameter sees its first step now; with fresh bias correction
    // the first update must be exactly the one a brand-new store would take.
    ParamStore<double>::grad_of(late)[0] = 2.0;
    adamw_step(store, cfg);

    ParamStore<double> fresh_store(4);
    Param<double>* fresh = fresh_store.create("c", {1}, Init::zeros);
    ParamStore<double>::grad_of(fresh)[0] = 2.0;
    adamw_step(fresh_store, cfg);

    CHECK(late->steps == 1);
    CHECK(early->steps == 3);
    CHECK(late->value[0] == doctest::Approx(fresh->value[0]).epsilon(1e-15));
}

TEST_CASE("optimizer configuration is validated") {
    ParamStore<double> store(1);
    Param<double>* p = store.create("w", {1}, Init::zeros);
    ParamStore<double>::grad_of(p)[0] = 1.0;
    AdamWConfig bad;
    bad.eps = 0.0;
    CHECK_THROWS_AS(adamw_step(store, bad), config_error);
    bad = AdamWConfig{};
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(adamw_step(store, bad), config_error);
    bad = AdamWConfig{};
    bad.lr = -1.0;
    CHECK_THROWS_AS(adamw_step(store, bad), config_error);
}
