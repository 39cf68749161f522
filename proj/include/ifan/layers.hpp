#pragma once

// Composite layers: task-conditioned batch normalization, dense blocks,
// and the down/up transitions between resolutions.

#include <string>
#include <vector>

#include "ifan/ops.hpp"
#include "ifan/rng.hpp"
#include "ifan/tensor.hpp"

namespace ifan {

// TrainFrozen normalizes by batch statistics like Train but leaves the
// running statistics untouched; the interaction chain uses it for the
// passes that only produce feedback, so the stored statistics track the
// distribution of the loss-bearing pass.
enum class Mode { Train, TrainFrozen, Eval };
using TaskId = int;

// Fan-in-scaled normal init; each parameter draws from its own stream
// keyed by (seed, name) so values do not depend on creation order.
template <class S>
void init_fan_in_normal(ParameterT<S>& p, int fan_in, uint64_t master_seed) {
    Rng rng(seed_mix({master_seed, fnv1a64(p.name.data(), p.name.size())}));
    const double std = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < p.value.numel(); ++i) p.value.data()[i] = static_cast<S>(rng.normal() * std);
}

template <class S>
struct Conv2dT {
    ParameterT<S>* w = nullptr;
    ParameterT<S>* b = nullptr;
    int stride = 1, pad = 1;

    static Conv2dT make(ParamStoreT<S>& store, const std::string& name, int in_ch, int out_ch,
                        int k, int stride, int pad, uint64_t seed) {
        Conv2dT m;
        m.w = &store.create(name + ".weight", Shape{out_ch, in_ch, k, k});
        m.b = &store.create(name + ".bias", Shape{out_ch});
        m.stride = stride;
        m.pad = pad;
        init_fan_in_normal(*m.w, in_ch * k * k, seed);
        return m;
    }

    TensorT<S> operator()(GraphT<S>* g, const TensorT<S>& x) const {
        if (g) return conv2d(x, g->leaf(*w), g->leaf(*b), stride, pad);
        return conv2d(x, w->value.detached(), b->value.detached(), stride, pad);
    }

    int out_channels() const { return w->value.dim(0); }
};

template <class S>
struct LinearT {
    ParameterT<S>* w = nullptr;
    ParameterT<S>* b = nullptr;

    static LinearT make(ParamStoreT<S>& store, const std::string& name, int din, int dout, uint64_t seed) {
        LinearT m;
        m.w = &store.create(name + ".weight", Shape{din, dout});
        m.b = &store.create(name + ".bias", Shape{dout});
        init_fan_in_normal(*m.w, din, seed);
        return m;
    }

    TensorT<S> operator()(GraphT<S>* g, const TensorT<S>& x) const {
        if (g) return linear(x, g->leaf(*w), g->leaf(*b));
        return linear(x, w->value.detached(), b->value.detached());
    }
};

// Batch normalization with one bank of (gamma, beta, running stats) per
// task. A batch from task t reads and mutates only bank t. Constructed
// with a single bank it degrades to ordinary shared batch norm.
template <class S>
struct TaskBatchNormT {
    struct Bank {
        ParameterT<S>* gamma;
        ParameterT<S>* beta;
        ParameterT<S>* run_mean; // non-trainable state
        ParameterT<S>* run_var;
    };
    std::vector<Bank> banks;
    S momentum = S(0.9);
    S eps = S(1e-5);

    static TaskBatchNormT make(ParamStoreT<S>& store, const std::string& name, int channels,
                               int bank_count, S momentum, S eps) {
        TaskBatchNormT m;
        m.momentum = momentum;
        m.eps = eps;
        for (int t = 0; t < bank_count; ++t) {
            const std::string p = name + ".bank" + std::to_string(t);
            Bank b{};
            b.gamma = &store.create(p + ".gamma", Shape{channels});
            b.beta = &store.create(p + ".beta", Shape{channels});
            b.run_mean = &store.create(p + ".run_mean", Shape{channels}, false);
            b.run_var = &store.create(p + ".run_var", Shape{channels}, false);
            for (int i = 0; i < channels; ++i) {
                b.gamma->value.data()[i] = S(1);
                b.run_var->value.data()[i] = S(1);
            }
            m.banks.push_back(b);
        }
        return m;
    }

    TensorT<S> forward(GraphT<S>* g, const TensorT<S>& x, TaskId bank_id, Mode mode) const {
        if (bank_id < 0 || bank_id >= static_cast<int>(banks.size()))
            throw std::invalid_argument("batch norm: unknown task bank " + std::to_string(bank_id));
        const Bank& bk = banks[static_cast<size_t>(bank_id)];
        TensorT<S> gamma = g ? g->leaf(*bk.gamma) : bk.gamma->value.detached();
        TensorT<S> beta = g ? g->leaf(*bk.beta) : bk.beta->value.detached();
        if (mode == Mode::Train || mode == Mode::TrainFrozen) {
            BnBatchStats<S> stats;
            auto y = bn_train(x, gamma, beta, eps, &stats);
            if (mode == Mode::Train) {
                const int c = x.dim(1);
                S* rm = bk.run_mean->value.data();
                S* rv = bk.run_var->value.data();
                for (int i = 0; i < c; ++i) {
                    rm[i] = momentum * rm[i] + (S(1) - momentum) * stats.mean[static_cast<size_t>(i)];
                    rv[i] = momentum * rv[i] + (S(1) - momentum) * stats.var[static_cast<size_t>(i)];
                }
            }
            return y;
        }
        return bn_eval(x, gamma, beta, *bk.run_mean->value.buf(), *bk.run_var->value.buf(), eps);
    }
};

// One dense layer: BN -> ReLU -> 3x3 conv emitting growth_rate channels.
template <class S>
struct DenseLayerT {
    TaskBatchNormT<S> bn;
    Conv2dT<S> conv;

    static DenseLayerT make(ParamStoreT<S>& store, const std::string& name, int in_ch, int growth,
                            int bank_count, S momentum, S eps, uint64_t seed) {
        DenseLayerT m;
        m.bn = TaskBatchNormT<S>::make(store, name + ".bn", in_ch, bank_count, momentum, eps);
        m.conv = Conv2dT<S>::make(store, name + ".conv", in_ch, growth, 3, 1, 1, seed);
        return m;
    }

    TensorT<S> forward(GraphT<S>* g, const TensorT<S>& x, TaskId task, Mode mode) const {
        return conv(g, relu(bn.forward(g, x, task, mode)));
    }
};

// Each layer consumes the concatenation of the block input and all
// previous layer outputs; the block returns the full concatenation, so
// out_channels = in_channels + layer_count * growth.
template <class S>
struct DenseBlockT {
    std::vector<DenseLayerT<S>> layers;
    int in_ch = 0, growth = 0;

    static DenseBlockT make(ParamStoreT<S>& store, const std::string& name, int in_ch, int layer_count,
                            int growth, int bank_count, S momentum, S eps, uint64_t seed) {
        DenseBlockT m;
        m.in_ch = in_ch;
        m.growth = growth;
        for (int l = 0; l < layer_count; ++l)
            m.layers.push_back(DenseLayerT<S>::make(store, name + ".layer" + std::to_string(l),
                                                    in_ch + l * growth, growth, bank_count, momentum, eps, seed));
        return m;
    }

    int out_channels() const { return in_ch + static_cast<int>(layers.size()) * growth; }

    TensorT<S> forward(GraphT<S>* g, const TensorT<S>& x, TaskId task, Mode mode) const {
        if (x.dim(1) != in_ch)
            throw std::invalid_argument("dense block: expected " + std::to_string(in_ch) + " input channels, got " +
                                        std::to_string(x.dim(1)));
        TensorT<S> cur = x;
        for (const auto& layer : layers) {
            auto y = layer.forward(g, cur, task, mode);
            cur = concat<S>({cur, y}, 1);
        }
        return cur;
    }
};

// Average pooling halves the spatial extents; channels pass through.
template <class S>
TensorT<S> transition_down(const TensorT<S>& x) {
    return avg_pool2(x);
}

// Sub-pixel rearrangement doubles the spatial extents (channels / 4),
// then a 3x3 conv maps to the configured channel count.
template <class S>
struct TransitionUpT {
    Conv2dT<S> conv;
    int in_ch = 0;

    static TransitionUpT make(ParamStoreT<S>& store, const std::string& name, int in_ch, int out_ch, uint64_t seed) {
        if (in_ch % 4 != 0)
            throw std::invalid_argument("transition up: channels not divisible by 4 (" + std::to_string(in_ch) + ")");
        TransitionUpT m;
        m.in_ch = in_ch;
        m.conv = Conv2dT<S>::make(store, name + ".conv", in_ch / 4, out_ch, 3, 1, 1, seed);
        return m;
    }

    TensorT<S> operator()(GraphT<S>* g, const TensorT<S>& x) const {
        return conv(g, pixel_shuffle(x, 2));
    }
};

} // namespace ifan
