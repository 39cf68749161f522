#pragma once

// Finite-difference sweep over every differentiable operation, at 64-bit.
// Shared by the unit tests and the acceptance suite.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ifan/ops.hpp"

namespace ifan::test {

struct OpCheck {
    std::string name;
    double max_rel_err;
    int coords;
};

// make_loss: (graph, attached leaves) -> scalar tensor
template <class F>
OpCheck run_op_check(const std::string& name, const std::vector<Shape>& shapes, F&& make_loss,
                     uint64_t seed, int coords_per_param = 6, double init_scale = 1.0) {
    ParamStoreT<double> store;
    Rng rng(seed);
    std::vector<ParameterT<double>*> params;
    for (size_t i = 0; i < shapes.size(); ++i) {
        auto& p = store.create("in" + std::to_string(i), shapes[i]);
        for (int64_t k = 0; k < p.value.numel(); ++k) p.value.data()[k] = rng.normal() * init_scale;
        params.push_back(&p);
    }

    auto leaves_in = [&](GraphT<double>& g) {
        std::vector<TensorT<double>> ls;
        for (auto* p : params) ls.push_back(g.leaf(*p));
        return ls;
    };

    GraphT<double> g;
    auto loss = make_loss(g, leaves_in(g));
    g.backward(loss);

    auto grad_of = [&](const ParameterT<double>& p) { return g.grad(p); };
    auto loss_fn = [&]() {
        GraphT<double> g2;
        g2.set_recording(false);
        return make_loss(g2, leaves_in(g2)).item();
    };
    auto rep = fd_check(store, params, grad_of, loss_fn, coords_per_param, seed ^ 0xabcdef);
    return OpCheck{name, rep.max_rel_err, rep.coords_checked};
}

// Random constant projection makes a scalar out of any op output with
// non-degenerate gradients everywhere.
inline TensorT<double> project(const TensorT<double>& t, uint64_t seed) {
    TensorT<double> c(t.shape());
    Rng rng(seed);
    for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = rng.normal();
    return sum(mul(t, c));
}

inline std::vector<OpCheck> run_gradient_suite() {
    std::vector<OpCheck> out;
    const uint64_t B = 0x5eed0000;

    out.push_back(run_op_check("add", {{2, 5}, {2, 5}},
        [](auto& g, auto ls) { return project(add(ls[0], ls[1]), 11); }, B + 1));
    out.push_back(run_op_check("sub", {{2, 5}, {2, 5}},
        [](auto& g, auto ls) { return project(sub(ls[0], ls[1]), 12); }, B + 2));
    out.push_back(run_op_check("mul", {{2, 5}, {2, 5}},
        [](auto& g, auto ls) { return project(mul(ls[0], ls[1]), 13); }, B + 3));
    out.push_back(run_op_check("scale", {{3, 4}},
        [](auto& g, auto ls) { return project(scale(ls[0], 2.5), 14); }, B + 4));
    out.push_back(run_op_check("relu", {{3, 7}},
        [](auto& g, auto ls) { return project(relu(ls[0]), 15); }, B + 5));
    out.push_back(run_op_check("sigmoid", {{3, 7}},
        [](auto& g, auto ls) { return project(sigmoid(ls[0]), 16); }, B + 6));
    out.push_back(run_op_check("softmax", {{2, 4, 3, 3}},
        [](auto& g, auto ls) { return project(softmax(ls[0], 1), 17); }, B + 7));
    out.push_back(run_op_check("concat", {{2, 3, 4, 4}, {2, 5, 4, 4}},
        [](auto& g, auto ls) { return project(concat<double>({ls[0], ls[1]}, 1), 18); }, B + 8));
    out.push_back(run_op_check("split", {{2, 6, 3, 3}},
        [](auto& g, auto ls) { return project(split(ls[0], 1, {2, 4})[1], 19); }, B + 9));
    out.push_back(run_op_check("linear", {{3, 7}, {7, 4}, {4}},
        [](auto& g, auto ls) { return project(linear(ls[0], ls[1], ls[2]), 20); }, B + 10));
    out.push_back(run_op_check("conv2d_s1", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
        [](auto& g, auto ls) { return project(conv2d(ls[0], ls[1], ls[2], 1, 1), 21); }, B + 11));
    out.push_back(run_op_check("conv2d_s2", {{2, 3, 7, 7}, {4, 3, 3, 3}, {4}},
        [](auto& g, auto ls) { return project(conv2d(ls[0], ls[1], ls[2], 2, 1), 22); }, B + 12));
    out.push_back(run_op_check("conv2d_1x1", {{2, 5, 4, 4}, {3, 5, 1, 1}, {3}},
        [](auto& g, auto ls) { return project(conv2d(ls[0], ls[1], ls[2], 1, 0), 23); }, B + 13));
    out.push_back(run_op_check("avg_pool2", {{2, 3, 4, 4}},
        [](auto& g, auto ls) { return project(avg_pool2(ls[0]), 24); }, B + 14));
    out.push_back(run_op_check("max_pool2", {{2, 3, 4, 4}},
        [](auto& g, auto ls) { return project(max_pool2(ls[0]), 25); }, B + 15));
    out.push_back(run_op_check("pixel_shuffle", {{1, 8, 2, 2}},
        [](auto& g, auto ls) { return project(pixel_shuffle(ls[0], 2), 26); }, B + 16));
    out.push_back(run_op_check("global_avg_pool", {{2, 3, 4, 4}},
        [](auto& g, auto ls) { return project(global_avg_pool(ls[0]), 27); }, B + 17));
    out.push_back(run_op_check("tile_spatial", {{2, 5}},
        [](auto& g, auto ls) { return project(tile_spatial(ls[0], 3), 28); }, B + 18));
    out.push_back(run_op_check("nn_resize_up", {{1, 2, 3, 3}},
        [](auto& g, auto ls) { return project(nn_resize(ls[0], 7), 29); }, B + 19));
    out.push_back(run_op_check("nn_resize_down", {{1, 2, 8, 8}},
        [](auto& g, auto ls) { return project(nn_resize(ls[0], 3), 30); }, B + 20));
    out.push_back(run_op_check("bn_train", {{4, 3, 4, 4}, {3}, {3}},
        [](auto& g, auto ls) {
            return project(bn_train(ls[0], ls[1], ls[2], 1e-5, static_cast<BnBatchStats<double>*>(nullptr)), 31);
        }, B + 21));
    out.push_back(run_op_check("bn_eval", {{4, 3, 4, 4}, {3}, {3}},
        [](auto& g, auto ls) {
            std::vector<double> rm{0.1, -0.2, 0.3}, rv{1.3, 0.7, 2.1};
            return project(bn_eval(ls[0], ls[1], ls[2], rm, rv, 1e-5), 32);
        }, B + 22));
    out.push_back(run_op_check("euclidean_loss", {{3, 10}},
        [](auto& g, auto ls) {
            TensorT<double> t(Shape{3, 10});
            Rng r(77);
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.normal();
            return euclidean_loss(ls[0], t);
        }, B + 23));
    out.push_back(run_op_check("cross_entropy_vec", {{4, 5}},
        [](auto& g, auto ls) {
            std::vector<int> tg{1, 4, 0, 2};
            return cross_entropy_loss(ls[0], tg, 1);
        }, B + 24));
    out.push_back(run_op_check("cross_entropy_map", {{2, 3, 4, 4}},
        [](auto& g, auto ls) {
            std::vector<int> tg(32);
            Rng r(88);
            for (auto& t : tg) t = static_cast<int>(r.uniform_int(3));
            return cross_entropy_loss(ls[0], tg, 1);
        }, B + 25));

    return out;
}

} // namespace ifan::test
