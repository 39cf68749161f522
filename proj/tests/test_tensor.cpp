#include "doctest.h"

#include "ifan/ops.hpp"
#include "ifan/rng.hpp"
#include "reference_kernels.hpp"
#include "support/grad_suite.hpp"

#include <algorithm>
#include <set>

using namespace ifan;

namespace {

TensorT<double> randn(const Shape& s, uint64_t seed, double scale = 1.0) {
    TensorT<double> t(s);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * scale;
    return t;
}

Tensor randnf(const Shape& s, uint64_t seed) {
    Tensor t(s);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.normal());
    return t;
}

} // namespace

TEST_CASE("elementwise examples") {
    Tensor a(Shape{2}, {1, 2}), b(Shape{2}, {3, 4});
    auto s = add(a, b);
    CHECK(s.data()[0] == 4.f);
    CHECK(s.data()[1] == 6.f);

    auto z = scale(a, 0.f);
    CHECK(z.data()[0] == 0.f);
    CHECK(z.data()[1] == 0.f);

    CHECK_THROWS_AS(add(a, Tensor(Shape{3})), std::invalid_argument);
}

TEST_CASE("backward of sum(x*x) at x=[3] gives 6") {
    ParamStoreT<double> store;
    auto& x = store.create("x", Shape{1});
    x.value.data()[0] = 3.0;
    GraphT<double> g;
    auto xl = g.leaf(x);
    auto loss = sum(mul(xl, xl));
    g.backward(loss);
    REQUIRE(g.grad(x) != nullptr);
    CHECK((*g.grad(x))[0] == doctest::Approx(6.0));
}

TEST_CASE("backward contract") {
    ParamStoreT<double> store;
    auto& x = store.create("x", Shape{2});
    auto& unused = store.create("p", Shape{2});
    x.value.data()[0] = 1.0;
    x.value.data()[1] = 2.0;
    GraphT<double> g;
    auto xl = g.leaf(x);
    g.leaf(unused);
    auto loss = sum(mul(xl, xl));
    SUBCASE("non-scalar rejected") { CHECK_THROWS_AS(g.backward(xl), std::runtime_error); }
    SUBCASE("double backward rejected; unreachable parameter has no gradient") {
        g.backward(loss);
        CHECK(g.grad(unused) == nullptr);
        CHECK_THROWS_AS(g.backward(loss), std::runtime_error);
    }
    SUBCASE("detached tensors never receive gradients") {
        auto xd = xl.detached();
        auto l2 = sum(mul(xd, xd));
        CHECK_FALSE(l2.attached());
    }
}

TEST_CASE("relu, softmax, concat examples") {
    Tensor x(Shape{3}, {-1, 0, 2});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.f);
    CHECK(y.data()[1] == 0.f);
    CHECK(y.data()[2] == 2.f);

    Tensor s(Shape{1, 2}, {0, 0});
    auto sm = softmax(s, 1);
    CHECK(sm.data()[0] == doctest::Approx(0.5));
    CHECK(sm.data()[1] == doctest::Approx(0.5));

    auto a = randnf({2, 3, 4, 4}, 1), b = randnf({2, 5, 4, 4}, 2);
    auto c = concat<float>({a, b}, 1);
    CHECK(c.shape() == Shape{2, 8, 4, 4});
    CHECK_THROWS_AS(concat<float>({a, randnf({2, 5, 3, 4}, 3)}, 1), std::invalid_argument);
}

TEST_CASE("softmax sums to one along the axis") {
    auto x = randn({3, 7, 2, 2}, 42);
    auto y = softmax(x, 1);
    for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int c = 0; c < 7; ++c) s += y.data()[(n * 7 + c) * 4 + i];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("concat then split recovers the originals exactly") {
    auto a = randnf({2, 3, 4, 4}, 10), b = randnf({2, 5, 4, 4}, 11);
    auto c = concat<float>({a, b}, 1);
    auto parts = split(c, 1, {3, 5});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(parts[0].data()[i] == a.data()[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(parts[1].data()[i] == b.data()[i]);
}

TEST_CASE("conv2d identity and zero kernels") {
    auto x = randnf({1, 1, 4, 4}, 5);
    Tensor w(Shape{1, 1, 1, 1}, {1.f});
    Tensor b(Shape{1});
    auto y = conv2d(x, w, b, 1, 0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor wz(Shape{2, 1, 3, 3});
    Tensor bz(Shape{2});
    auto z = conv2d(x, wz, bz, 1, 1);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == 0.f);
}

TEST_CASE("conv2d contract violations rejected") {
    auto x = randnf({1, 1, 4, 4}, 6);
    Tensor b1(Shape{1});
    // even kernel
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 1, 2, 2}), b1, 1, 0), std::invalid_argument);
    // non-integral output extent: (4 + 0 - 3) % 2 != 0
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 1, 3, 3}), b1, 2, 0), std::invalid_argument);
    // channel mismatch
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 3, 3}), b1, 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d matches the direct-summation reference") {
    // spec example: random 4x4 input, 3x3 kernel, pad 1
    auto x = randn({2, 3, 4, 4}, 100);
    auto w = randn({5, 3, 3, 3}, 101);
    auto b = randn({5}, 102);
    auto y = conv2d(x, w, b, 1, 1);
    std::vector<double> yr(static_cast<size_t>(y.numel()));
    ref::conv2d_forward(x.data(), w.data(), b.data(), yr.data(), 2, 3, 4, 4, 5, 3, 3, 1, 1);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(yr[static_cast<size_t>(i)]).epsilon(1e-12));

    // strided case
    auto x2 = randn({1, 2, 7, 7}, 103);
    auto w2 = randn({3, 2, 3, 3}, 104);
    auto b2 = randn({3}, 105);
    auto y2 = conv2d(x2, w2, b2, 2, 1);
    CHECK(y2.shape() == Shape{1, 3, 4, 4});
    std::vector<double> yr2(static_cast<size_t>(y2.numel()));
    ref::conv2d_forward(x2.data(), w2.data(), b2.data(), yr2.data(), 1, 2, 7, 7, 3, 3, 3, 2, 1);
    for (int64_t i = 0; i < y2.numel(); ++i) CHECK(y2.data()[i] == doctest::Approx(yr2[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("conv2d backward kernels match the reference") {
    const int n = 2, c = 3, h = 6, w = 6, f = 4;
    auto x = randn({n, c, h, w}, 110);
    auto wt = randn({f, c, 3, 3}, 111);
    auto gy = randn({n, f, h, w}, 112);
    const auto d = kern::conv_dims(n, c, h, w, f, 3, 3, 1, 1);

    std::vector<double> gx(static_cast<size_t>(n * c * h * w)), gxr(gx.size());
    kern::conv2d_backward_x(wt.data(), gy.data(), gx.data(), d);
    ref::conv2d_backward_x(wt.data(), gy.data(), gxr.data(), n, c, h, w, f, 3, 3, 1, 1);
    for (size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(gxr[i]).epsilon(1e-12));

    std::vector<double> gw(static_cast<size_t>(f * c * 9)), gwr(gw.size());
    kern::conv2d_backward_w(x.data(), gy.data(), gw.data(), d);
    ref::conv2d_backward_w(x.data(), gy.data(), gwr.data(), n, c, h, w, f, 3, 3, 1, 1);
    for (size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == doctest::Approx(gwr[i]).epsilon(1e-12));

    std::vector<double> gb(static_cast<size_t>(f)), gbr(gb.size());
    kern::conv2d_backward_b(gy.data(), gb.data(), d);
    ref::conv2d_backward_b(gy.data(), gbr.data(), n, f, d.oh, d.ow);
    for (size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == doctest::Approx(gbr[i]).epsilon(1e-12));
}

TEST_CASE("pooling examples") {
    Tensor x(Shape{1, 1, 2, 2}, {1, 3, 5, 7});
    auto a = avg_pool2(x);
    CHECK(a.shape() == Shape{1, 1, 1, 1});
    CHECK(a.data()[0] == 4.f);
    auto m = max_pool2(x);
    CHECK(m.data()[0] == 7.f);
    CHECK_THROWS_AS(avg_pool2(Tensor(Shape{1, 1, 3, 4})), std::invalid_argument);
    CHECK_THROWS_AS(max_pool2(Tensor(Shape{1, 1, 4, 3})), std::invalid_argument);
}

TEST_CASE("avg_pool2 routes a quarter of the gradient to each window cell") {
    ParamStoreT<double> store;
    auto& x = store.create("x", Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) x.value.data()[i] = i + 1.0;
    GraphT<double> g;
    auto y = sum(avg_pool2(g.leaf(x)));
    g.backward(y);
    for (int i = 0; i < 4; ++i) CHECK((*g.grad(x))[static_cast<size_t>(i)] == doctest::Approx(0.25));
}

TEST_CASE("pooling matches reference") {
    auto x = randn({2, 3, 8, 8}, 120);
    auto a = avg_pool2(x);
    auto m = max_pool2(x);
    std::vector<double> ar(static_cast<size_t>(a.numel())), mr(ar.size());
    ref::avg_pool2(x.data(), ar.data(), 2, 3, 8, 8);
    ref::max_pool2(x.data(), mr.data(), 2, 3, 8, 8);
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a.data()[i] == doctest::Approx(ar[static_cast<size_t>(i)]).epsilon(1e-12));
        CHECK(m.data()[i] == mr[static_cast<size_t>(i)]);
    }
}

TEST_CASE("pixel_shuffle") {
    SUBCASE("extent arithmetic") {
        auto x = randnf({1, 4, 2, 2}, 7);
        auto y = pixel_shuffle(x, 2);
        CHECK(y.shape() == Shape{1, 1, 4, 4});
        CHECK_THROWS_AS(pixel_shuffle(randnf({1, 6, 2, 2}, 8), 2), std::invalid_argument);
    }
    SUBCASE("element placement matches the index formula on 1x4x1x1") {
        Tensor x(Shape{1, 4, 1, 1}, {10, 20, 30, 40});
        auto y = pixel_shuffle(x, 2);
        CHECK(y.data()[0] == 10.f);
        CHECK(y.data()[1] == 20.f);
        CHECK(y.data()[2] == 30.f);
        CHECK(y.data()[3] == 40.f);
    }
    SUBCASE("bijective: unshuffle inverts, multiset preserved") {
        auto x = randnf({2, 12, 3, 5}, 9);
        auto y = pixel_shuffle(x, 2);
        std::vector<float> back(static_cast<size_t>(x.numel()));
        ref::pixel_unshuffle(y.data(), back.data(), 2, 3, 3, 5, 2);
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(back[static_cast<size_t>(i)] == x.data()[i]);
        std::multiset<float> in(x.data(), x.data() + x.numel()), out(y.data(), y.data() + y.numel());
        CHECK(in == out);
    }
    SUBCASE("matches reference") {
        auto x = randn({2, 8, 3, 4}, 121);
        auto y = pixel_shuffle(x, 2);
        std::vector<double> yr(static_cast<size_t>(y.numel()));
        ref::pixel_shuffle(x.data(), yr.data(), 2, 2, 3, 4, 2);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == yr[static_cast<size_t>(i)]);
    }
}

TEST_CASE("linear matches reference") {
    auto x = randn({4, 9}, 130);
    auto w = randn({9, 5}, 131);
    auto b = randn({5}, 132);
    auto y = linear(x, w, b);
    std::vector<double> yr(static_cast<size_t>(y.numel()));
    ref::linear(x.data(), w.data(), b.data(), yr.data(), 4, 9, 5);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(yr[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("loss examples") {
    auto x = randn({3, 4}, 140);
    CHECK(euclidean_loss(x, x).item() == 0.0);

    TensorT<double> logits(Shape{2, 5});
    CHECK(cross_entropy_loss(logits, {1, 3}, 1).item() == doctest::Approx(std::log(5.0)));
    CHECK_THROWS_AS(cross_entropy_loss(logits, {1, 7}, 1), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_loss(logits, {1}, 1), std::invalid_argument);
}

TEST_CASE("forward ops are deterministic") {
    auto x = randn({2, 4, 6, 6}, 150);
    auto w = randn({3, 4, 3, 3}, 151);
    auto b = randn({3}, 152);
    auto y1 = conv2d(x, w, b, 1, 1);
    auto y2 = conv2d(x, w, b, 1, 1);
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("gradient suite: analytic vs central differences < 1e-4") {
    for (const auto& chk : test::run_gradient_suite()) {
        INFO(chk.name);
        CHECK(chk.max_rel_err < 1e-4);
        CHECK(chk.coords > 0);
    }
}

TEST_CASE("composite chain conv-relu-pool-linear-loss gradient") {
    ParamStoreT<double> store;
    Rng rng(160);
    auto& x = store.create("x", Shape{2, 2, 6, 6});
    auto& w = store.create("w", Shape{4, 2, 3, 3});
    auto& b = store.create("b", Shape{4});
    auto& fw = store.create("fw", Shape{4 * 3 * 3, 5});
    auto& fb = store.create("fb", Shape{5});
    store.for_each([&](ParameterT<double>& p) {
        for (int64_t i = 0; i < p.value.numel(); ++i) p.value.data()[i] = rng.normal() * 0.5;
    });
    TensorT<double> target(Shape{2, 5});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.normal();

    auto run = [&](GraphT<double>& g) {
        auto h = relu(conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1, 1));
        auto p = avg_pool2(h); // [2,4,3,3]
        auto y = linear(p.reshaped({2, 4 * 3 * 3}), g.leaf(fw), g.leaf(fb));
        return euclidean_loss(y, target);
    };

    GraphT<double> g;
    auto loss = run(g);
    g.backward(loss);
    std::vector<ParameterT<double>*> ps{&x, &w, &b, &fw, &fb};
    auto rep = test::fd_check(
        store, ps, [&](const ParameterT<double>& p) { return g.grad(p); },
        [&]() {
            GraphT<double> g2;
            g2.set_recording(false);
            return run(g2).item();
        },
        8, 161);
    CHECK(rep.max_rel_err < 1e-4);
}
