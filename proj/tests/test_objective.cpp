#include "featvis/error.hpp"
#include "featvis/objective.hpp"
#include "featvis/optim.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace featvis;

namespace {

ActivationTensor act(Shape3 s, std::vector<double> v) { return {Tensor3(s, std::move(v)), "x"}; }

ChannelList all_channels(std::size_t n) {
    ChannelList c(n);
    std::iota(c.begin(), c.end(), 0);
    return c;
}

} // namespace

TEST_CASE("dot maximization") {
    auto a = act({2, 1, 2}, {1, 2, 3, 4});
    auto t = act({2, 1, 2}, {1, 0, 0, 1});
    ChannelList both{0, 1};
    CHECK(dot_maximization(a, t, both) == 5.0);
    CHECK(dot_maximization(a, a, both) == 30.0);
    CHECK(dot_maximization(a, act({2, 1, 2}, {0, 0, 0, 0}), both) == 0.0);
    ChannelList one{1};
    CHECK(dot_maximization(a, t, one) == 4.0);

    auto g = dot_maximization_gradient(t, one);
    CHECK(g == Tensor3(Shape3{2, 1, 2}, {0, 0, 0, 1}));
}

TEST_CASE("dot maximization is bilinear") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Shape3 shape{4, 3, 3};
        ActivationTensor a{testing::random_tensor(shape, s), ""};
        ActivationTensor t{testing::random_tensor(shape, s + 100), ""};
        ActivationTensor a2 = a;
        a2.data *= 4.0;
        auto ch = all_channels(4);
        CHECK(dot_maximization(a2, t, ch) == 4.0 * dot_maximization(a, t, ch));
    }
}

TEST_CASE("mdist") {
    auto t = act({2, 1, 2}, {0, 0, 0, 0});
    CHECK(mdist(t, t, all_channels(2)) == 0.0);
    CHECK(mdist(act({1, 1, 2}, {3, 4}), act({1, 1, 2}, {0, 0}), ChannelList{0}) == 5.0);
    CHECK(mdist(act({2, 1, 2}, {1, 0, 0, -1}), t, all_channels(2)) == 2.0);
    CHECK_THROWS_AS(mdist(act({1, 1, 2}, {3, 4}), act({2, 1, 1}, {0, 0}), ChannelList{0}), ValidationError);

    auto g = mdist_gradient(act({2, 1, 2}, {3, 4, 1, 1}), act({2, 1, 2}, {0, 0, 1, 1}), all_channels(2));
    CHECK(g(0, 0, 0) == doctest::Approx(0.6));
    CHECK(g(0, 0, 1) == doctest::Approx(0.8));
    CHECK(g(1, 0, 0) == 0.0);
}

TEST_CASE("adaptive distance values") {
    CHECK(adaptive_distance(2.0, RobustLossParams::fixed(1.0, 2.0)) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(adaptive_distance(1.0, RobustLossParams::fixed(1.0, 1.0)) == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-12));
    CHECK(std::abs(adaptive_distance(1.0, RobustLossParams::fixed(1.0, 1e-7)) - std::log(1.5)) < 1e-4);
    CHECK(adaptive_distance(1.0, RobustLossParams::welsch(1.0)) == doctest::Approx(1.0 - std::exp(-0.5)));
    CHECK(adaptive_distance(2.0, RobustLossParams::fixed(2.0, 2.0)) == doctest::Approx(0.5));

    CHECK(select_branch(RobustLossParams::fixed(1.0, 2.0 + 5e-7)) == AdBranch::quadratic);
    CHECK(select_branch(RobustLossParams::fixed(1.0, -5e-7)) == AdBranch::log);
    CHECK(select_branch(RobustLossParams::fixed(1.0, 1.5)) == AdBranch::general);
    CHECK(select_branch(RobustLossParams::welsch(1.0)) == AdBranch::welsch);

    for (double b : {2.0, 0.0, 1.0, 0.5, 2.5, -1.0}) {
        CHECK(adaptive_distance(0.0, RobustLossParams::fixed(1.3, b)) == 0.0);
    }
    CHECK(adaptive_distance(0.0, RobustLossParams::welsch(1.3)) == 0.0);
}

TEST_CASE("strict paper mode keeps the printed offset") {
    for (double b : {0.5, 1.0, 2.5}) {
        double offset = adaptive_distance(0.0, RobustLossParams::fixed(1.0, b), true);
        CHECK(offset == doctest::Approx(2.0 * std::abs(b - 2.0) / b).epsilon(1e-12));
        double x = 1.7;
        CHECK(adaptive_distance(x, RobustLossParams::fixed(1.0, b), true) -
                  adaptive_distance(x, RobustLossParams::fixed(1.0, b), false) ==
              doctest::Approx(offset).epsilon(1e-12));
    }
}

TEST_CASE("adaptive distance validation") {
    CHECK_THROWS_AS(adaptive_distance(-1.0, RobustLossParams::fixed(1.0, 1.0)), ValidationError);
    CHECK_THROWS_AS(adaptive_distance(1.0, RobustLossParams::fixed(0.0, 1.0)), ValidationError);
    CHECK_THROWS_AS(adaptive_distance(1.0, RobustLossParams::fixed(-2.0, 1.0)), ValidationError);
    CHECK_THROWS_AS(ad_gradients(-1.0, RobustLossParams::fixed(1.0, 1.0)), ValidationError);
}

TEST_CASE("branch continuity") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        double m = rng.uniform(0.05, 4.0);
        double r = rng.uniform(0.3, 3.0);
        double quad = adaptive_distance(m, RobustLossParams::fixed(r, 2.0));
        double logb = adaptive_distance(m, RobustLossParams::fixed(r, 0.0));
        double wel = adaptive_distance(m, RobustLossParams::welsch(r));
        // Near b = 2 the gap closes only like eps * log(x^2 / eps).
        double x = m / r;
        for (double eps : {1e-3, 1e-4, 1e-5}) {
            double bound = eps * std::log1p(x * x / eps);
            for (double b : {2.0 - eps, 2.0 + eps}) {
                auto p = RobustLossParams::fixed(r, b);
                REQUIRE(select_branch(p) == AdBranch::general);
                CHECK(testing::rel_err(adaptive_distance(m, p), quad) <= bound);
            }
        }
        double small = 0.05 * r;
        for (double b : {2.0 - 1e-3, 2.0 + 1e-3}) {
            CHECK(testing::rel_err(adaptive_distance(small, RobustLossParams::fixed(r, b)),
                                   adaptive_distance(small, RobustLossParams::fixed(r, 2.0))) < 1e-3);
        }
        for (double b : {-1e-3, 1e-3}) {
            auto p = RobustLossParams::fixed(r, b);
            REQUIRE(select_branch(p) == AdBranch::general);
            CHECK(testing::rel_err(adaptive_distance(m, p), logb) < 1e-3);
        }
        CHECK(std::abs(adaptive_distance(m, RobustLossParams::fixed(r, -1e4)) - wel) < 1e-3);
    }
}

TEST_CASE("adaptive distance is monotone in mdist") {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        double r = rng.uniform(0.1, 5.0);
        RobustLossParams p;
        switch (i % 4) {
        case 0: p = RobustLossParams::fixed(r, 2.0); break;
        case 1: p = RobustLossParams::fixed(r, 0.0); break;
        case 2: p = RobustLossParams::welsch(r); break;
        default: p = RobustLossParams::fixed(r, rng.uniform(-5.0, 2.99)); break;
        }
        double prev = adaptive_distance(0.0, p);
        CHECK(prev == 0.0);
        for (int k = 1; k <= 100; ++k) {
            double v = adaptive_distance(0.1 * k, p);
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("ad gradients at anchors") {
    for (double b : {2.0, 0.0, 1.0, 2.5}) CHECK(ad_gradients(0.0, RobustLossParams::fixed(1.0, b)).d_mdist == 0.0);
    CHECK(ad_gradients(0.0, RobustLossParams::welsch(1.0)).d_mdist == 0.0);
    CHECK(ad_gradients(3.0, RobustLossParams::fixed(1.0, 2.0)).d_mdist == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("ad gradients match finite differences") {
    Rng rng(17);
    const double h = 1e-6;
    int n = 0;
    while (n < 50) {
        double m = rng.uniform(0.05, 5.0);
        double r = rng.uniform(0.2, 3.0);
        double b = rng.uniform(0.02, 2.98);
        if (std::abs(b - 2.0) < 0.01) continue;
        ++n;
        auto p = RobustLossParams::fixed(r, b);
        auto g = ad_gradients(m, p);
        auto fm = [&](double x) { return adaptive_distance(x, p); };
        auto fr = [&](double x) { return adaptive_distance(m, RobustLossParams::fixed(x, b)); };
        auto fb = [&](double x) { return adaptive_distance(m, RobustLossParams::fixed(r, x)); };
        auto flr = [&](double x) {
            auto q = p;
            q.set_latents(x, p.b_latent());
            return adaptive_distance(m, q);
        };
        auto flb = [&](double x) {
            auto q = p;
            q.set_latents(p.r_latent(), x);
            return adaptive_distance(m, q);
        };
        CAPTURE(m);
        CAPTURE(r);
        CAPTURE(b);
        CHECK(testing::rel_err(g.d_mdist, testing::central_diff(fm, m, h), 1e-9) < 1e-4);
        CHECK(testing::rel_err(g.d_r, testing::central_diff(fr, r, h), 1e-9) < 1e-4);
        CHECK(testing::rel_err(g.d_b, testing::central_diff(fb, b, h), 1e-9) < 1e-4);
        CHECK(testing::rel_err(g.d_r_latent, testing::central_diff(flr, p.r_latent(), h), 1e-9) < 1e-4);
        CHECK(testing::rel_err(g.d_b_latent, testing::central_diff(flb, p.b_latent(), h), 1e-9) < 1e-4);
    }
    for (int i = 0; i < 20; ++i) {
        double m = rng.uniform(0.05, 5.0);
        double r = rng.uniform(0.2, 3.0);
        for (auto p : {RobustLossParams::fixed(r, 2.0), RobustLossParams::fixed(r, 0.0), RobustLossParams::welsch(r)}) {
            auto g = ad_gradients(m, p);
            auto fm = [&](double x) { return adaptive_distance(x, p); };
            auto fr = [&](double x) {
                auto q = p;
                q.r = x;
                return adaptive_distance(m, q);
            };
            CHECK(testing::rel_err(g.d_mdist, testing::central_diff(fm, m, h), 1e-9) < 1e-4);
            CHECK(testing::rel_err(g.d_r, testing::central_diff(fr, r, h), 1e-9) < 1e-4);
            CHECK(g.d_b == 0.0);
        }
    }
}

TEST_CASE("robust parameter latents") {
    auto p = RobustLossParams::trainable_default();
    CHECK(p.trainable);
    CHECK(p.r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.b == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        p.set_latents(rng.uniform(-30, 30), rng.uniform(-30, 30));
        CHECK(p.r > 0.0);
        CHECK(p.b >= kShapeLow);
        CHECK(p.b <= kShapeHigh);
    }
    auto q = RobustLossParams::fixed(2.5, 0.7);
    auto back = q;
    back.set_latents(q.r_latent(), q.b_latent());
    CHECK(back.r == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(back.b == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("l1 of the previous layer") {
    CHECK(l1_previous(act({1, 2, 2}, {0, 0, 0, 0})) == 0.0);
    CHECK(l1_previous(act({1, 2, 2}, {1, -2, 0, 3})) == 6.0);
    auto a = act({1, 2, 2}, {1, -2, 0, 3});
    a.data *= 2.5;
    CHECK(l1_previous(a) == 15.0);
    CHECK(l1_gradient(act({1, 2, 2}, {1, -2, 0, 3})) == Tensor3(Shape3{1, 2, 2}, {1, -1, 0, 1}));
}

TEST_CASE("total loss") {
    auto z = total_loss(2.0, 2.0, 0.0, 1e-3);
    CHECK(z.total == 0.0);
    auto l = total_loss(3.0, 1.0, 100.0, 1e-3);
    CHECK(l.total == doctest::Approx(-1.9).epsilon(1e-12));
    CHECK(l.dm == 3.0);
    CHECK(l.ad == 1.0);
    CHECK(l.l1_prev == 100.0);
    CHECK(l.lambda == 1e-3);
    double lambda0 = schedule_value(Schedule{1e-3, 1e-4, 100}, 0);
    CHECK(std::abs(lambda0 - 0.1 / 99.0) < 1e-15);
    CHECK(std::abs(lambda0 - 1.0101e-3) < 1e-7);

    CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, 0), ValidationError);
    CHECK_THROWS_AS(total_loss(0, INFINITY, 0, 0), ValidationError);
    CHECK_THROWS_AS(total_loss(0, 0, 1, -1e-3), ValidationError);

    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        double dm = rng.uniform(-10, 10), ad = rng.uniform(0, 10), l1 = rng.uniform(0, 100), lam = rng.uniform(0, 1);
        auto b = total_loss(dm, ad, l1, lam);
        CHECK(std::abs(b.total - (ad - dm + lam * l1)) < 1e-9);
    }
}

TEST_CASE("channel validation") {
    CHECK_NOTHROW(validate_channels(ChannelList{2, 0}, 3));
    CHECK_THROWS_AS(validate_channels(ChannelList{3}, 3), ValidationError);
    CHECK_THROWS_AS(validate_channels(ChannelList{1, 1}, 3), ValidationError);
}

TEST_CASE("facet objective gradient matches finite differences") {
    Shape3 s{4, 3, 3};
    Shape3 sp{2, 3, 3};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ActivationTensor target{testing::random_tensor(s, seed), "t"};
        ActivationTensor curr{testing::random_tensor(s, seed + 50), "t"};
        ActivationTensor prev{testing::random_tensor(sp, seed + 90), "p"};
        ChannelList top{3, 1};
        FacetObjective obj(target, top, RobustLossParams::fixed(0.8, 1.3), 0.01);
        Tensor3 gp(sp), gc(s);
        double v = obj(prev, curr, gp, gc);
        auto br = obj.last_breakdown();
        CHECK(v == br.total);
        CHECK(br.dm == dot_maximization(curr, target, top));
        CHECK(br.mdist == mdist(curr, target, top));

        const double h = 1e-6;
        for (std::size_t i = 0; i < curr.data.size(); ++i) {
            auto f = [&](double x) {
                auto c2 = curr;
                c2.data.raw()[i] = x;
                Tensor3 a(sp), b(s);
                FacetObjective o2(target, top, RobustLossParams::fixed(0.8, 1.3), 0.01);
                return o2(prev, c2, a, b);
            };
            CHECK(testing::close(gc.raw()[i], testing::central_diff(f, curr.data.raw()[i], h), 1e-4, 1e-8));
        }
        for (std::size_t i = 0; i < prev.data.size(); ++i) {
            auto f = [&](double x) {
                auto p2 = prev;
                p2.data.raw()[i] = x;
                Tensor3 a(sp), b(s);
                FacetObjective o2(target, top, RobustLossParams::fixed(0.8, 1.3), 0.01);
                return o2(p2, curr, a, b);
            };
            CHECK(testing::close(gp.raw()[i], testing::central_diff(f, prev.data.raw()[i], h), 1e-4, 1e-8));
        }
    }
}
