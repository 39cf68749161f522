#pragma once

// Differentiable operations over TensorT. Each op computes its value with
// the kernels and, when an input is attached to a recording graph, appends
// a node whose closure routes gradients to the parents.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ifan/kernels.hpp"
#include "ifan/tensor.hpp"

namespace ifan {

namespace detail {

constexpr int64_t kParallelCutoff = 1 << 14;

template <class S>
void merge_graph(GraphT<S>*& g, const TensorT<S>& t) {
    if (!t.attached()) return;
    if (g && g != t.graph()) throw std::runtime_error("operands belong to different graphs");
    g = t.graph();
}

template <class S, class... Ts>
GraphT<S>* result_graph(const Ts&... ts) {
    GraphT<S>* g = nullptr;
    (merge_graph(g, ts), ...);
    return (g && g->recording()) ? g : nullptr;
}

template <class S>
int pnode(const TensorT<S>& t, GraphT<S>* g) {
    return (g && t.attached() && t.graph() == g) ? t.node() : -1;
}

template <class S>
void accum(std::vector<S>& dst, const std::vector<S>& src) {
    const int64_t n = static_cast<int64_t>(dst.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S, class FwdFn, class BwdFn>
TensorT<S> binary_elementwise(const TensorT<S>& a, const TensorT<S>& b, const char* name, FwdFn fwd, BwdFn bwd) {
    detail::check_same_shape(a.shape(), b.shape(), name);
    TensorT<S> out(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (n > detail::kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    auto* g = detail::result_graph<S>(a, b);
    if (g) {
        const int ia = detail::pnode(a, g), ib = detail::pnode(b, g);
        const int id = g->new_node(n);
        auto ac = a.detached(), bc = b.detached();
        g->set_backward(id, [id, ia, ib, n, ac, bc, bwd](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            if (ia >= 0) {
                auto& ga = gg.acc(ia);
                for (int64_t i = 0; i < n; ++i) ga[i] += bwd(go[i], ac.data()[i], bc.data()[i], true);
            }
            if (ib >= 0) {
                auto& gb = gg.acc(ib);
                for (int64_t i = 0; i < n; ++i) gb[i] += bwd(go[i], ac.data()[i], bc.data()[i], false);
            }
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_elementwise(a, b, "add", [](S x, S y) { return x + y; },
                              [](S go, S, S, bool) { return go; });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_elementwise(a, b, "sub", [](S x, S y) { return x - y; },
                              [](S go, S, S, bool left) { return left ? go : -go; });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_elementwise(a, b, "mul", [](S x, S y) { return x * y; },
                              [](S go, S x, S y, bool left) { return left ? go * y : go * x; });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    TensorT<S> out(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (n > detail::kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    auto* g = detail::result_graph<S>(a);
    if (g) {
        const int ia = detail::pnode(a, g);
        const int id = g->new_node(n);
        g->set_backward(id, [id, ia, n, c](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& ga = gg.acc(ia);
            for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (n > detail::kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(n);
        auto oc = out.detached();
        g->set_backward(id, [id, ix, n, oc](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& gx = gg.acc(ix);
            for (int64_t i = 0; i < n; ++i)
                if (oc.data()[i] > S(0)) gx[i] += go[i];
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (n > detail::kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) po[i] = S(1) / (S(1) + std::exp(-px[i]));
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(n);
        auto oc = out.detached();
        g->set_backward(id, [id, ix, n, oc](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& gx = gg.acc(ix);
            for (int64_t i = 0; i < n; ++i) {
                const S y = oc.data()[i];
                gx[i] += go[i] * y * (S(1) - y);
            }
        });
        out.attach_(g, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input list");
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size())) throw std::invalid_argument("concat: bad axis");
    int total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != static_cast<int>(s0.size())) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < p.ndim(); ++i)
            if (i != axis && p.dim(i) != s0[static_cast<size_t>(i)])
                throw std::invalid_argument("concat: extent mismatch off the concatenation axis");
        total_axis += p.dim(axis);
    }
    Shape os = s0;
    os[static_cast<size_t>(axis)] = total_axis;
    TensorT<S> out(os);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];

    const int64_t out_row = static_cast<int64_t>(total_axis) * inner;
    int64_t off = 0;
    std::vector<int64_t> offsets(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        offsets[p] = off;
        const int64_t chunk = static_cast<int64_t>(parts[p].dim(axis)) * inner;
        const S* src = parts[p].data();
        S* dst = out.data();
#pragma omp parallel for schedule(static) if (outer * chunk > detail::kParallelCutoff)
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < chunk; ++i) dst[o * out_row + off + i] = src[o * chunk + i];
        off += chunk;
    }

    GraphT<S>* g = nullptr;
    for (const auto& p : parts) detail::merge_graph(g, p);
    if (g && g->recording()) {
        std::vector<int> pids(parts.size());
        std::vector<int64_t> chunks(parts.size());
        for (size_t p = 0; p < parts.size(); ++p) {
            pids[p] = detail::pnode(parts[p], g);
            chunks[p] = static_cast<int64_t>(parts[p].dim(axis)) * inner;
        }
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, pids, chunks, offsets, outer, out_row](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            for (size_t p = 0; p < pids.size(); ++p) {
                if (pids[p] < 0) continue;
                auto& gp = gg.acc(pids[p]);
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < chunks[p]; ++i) gp[o * chunks[p] + i] += go[o * out_row + offsets[p] + i];
            }
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
std::vector<TensorT<S>> split(const TensorT<S>& x, int axis, const std::vector<int>& sizes) {
    if (axis < 0 || axis >= x.ndim()) throw std::invalid_argument("split: bad axis");
    int total = 0;
    for (int s : sizes) total += s;
    if (total != x.dim(axis)) throw std::invalid_argument("split: sizes do not cover the axis");

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const int64_t in_row = static_cast<int64_t>(x.dim(axis)) * inner;

    auto* g = detail::result_graph<S>(x);
    const int ix = detail::pnode(x, g);

    std::vector<TensorT<S>> outs;
    int64_t off = 0;
    for (int s : sizes) {
        Shape os = x.shape();
        os[static_cast<size_t>(axis)] = s;
        TensorT<S> o(os);
        const int64_t chunk = static_cast<int64_t>(s) * inner;
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t i = 0; i < chunk; ++i) o.data()[ou * chunk + i] = x.data()[ou * in_row + off + i];
        if (g && ix >= 0) {
            const int id = g->new_node(o.numel());
            const int64_t off_c = off;
            g->set_backward(id, [id, ix, chunk, off_c, outer, in_row](GraphT<S>& gg) {
                const std::vector<S>& go = gg.grad_ref(id);
                auto& gx = gg.acc(ix);
                for (int64_t ou = 0; ou < outer; ++ou)
                    for (int64_t i = 0; i < chunk; ++i) gx[ou * in_row + off_c + i] += go[ou * chunk + i];
            });
            o.attach_(g, id);
        }
        outs.push_back(std::move(o));
        off += chunk;
    }
    return outs;
}

// ---------------------------------------------------------------------------
// dense / conv / pooling
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
        throw std::invalid_argument("linear: expects x[N,D], w[D,M], b[M]");
    const int n = x.dim(0), din = x.dim(1), dout = w.dim(1);
    if (w.dim(0) != din || b.dim(0) != dout) throw std::invalid_argument("linear: extent mismatch");
    TensorT<S> out(Shape{n, dout});
    kern::linear_forward(x.data(), w.data(), b.data(), out.data(), n, din, dout);
    auto* g = detail::result_graph<S>(x, w, b);
    if (g) {
        const int ix = detail::pnode(x, g), iw = detail::pnode(w, g), ib = detail::pnode(b, g);
        const int id = g->new_node(out.numel());
        auto xc = x.detached(), wc = w.detached();
        g->set_backward(id, [id, ix, iw, ib, n, din, dout, xc, wc](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            if (ix >= 0) {
                std::vector<S> gx(static_cast<size_t>(n) * din);
                kern::linear_backward_x(wc.data(), go.data(), gx.data(), n, din, dout);
                detail::accum(gg.acc(ix), gx);
            }
            if (iw >= 0 || ib >= 0) {
                std::vector<S> gw(static_cast<size_t>(din) * dout), gb(static_cast<size_t>(dout));
                kern::linear_backward_w(xc.data(), go.data(), gw.data(), gb.data(), n, din, dout);
                if (iw >= 0) detail::accum(gg.acc(iw), gw);
                if (ib >= 0) detail::accum(gg.acc(ib), gb);
            }
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1)
        throw std::invalid_argument("conv2d: expects x[N,C,H,W], w[F,C,kh,kw], b[F]");
    if (w.dim(1) != x.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
    if (b.dim(0) != w.dim(0)) throw std::invalid_argument("conv2d: bias extent mismatch");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) throw std::invalid_argument("conv2d: kernel extents must be odd");
    const int h = x.dim(2), wd = x.dim(3), kh = w.dim(2), kw = w.dim(3);
    if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0)
        throw std::invalid_argument("conv2d: non-integral output extent");
    if (h + 2 * pad < kh || wd + 2 * pad < kw) throw std::invalid_argument("conv2d: kernel larger than padded input");

    const auto d = kern::conv_dims(x.dim(0), x.dim(1), h, wd, w.dim(0), kh, kw, stride, pad);
    TensorT<S> out(Shape{d.n, d.f, d.oh, d.ow});
    kern::conv2d_forward(x.data(), w.data(), b.data(), out.data(), d);

    auto* g = detail::result_graph<S>(x, w, b);
    if (g) {
        const int ix = detail::pnode(x, g), iw = detail::pnode(w, g), ib = detail::pnode(b, g);
        const int id = g->new_node(out.numel());
        auto xc = x.detached(), wc = w.detached();
        g->set_backward(id, [id, ix, iw, ib, d, xc, wc](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            if (ix >= 0) {
                std::vector<S> gx(static_cast<size_t>(xc.numel()));
                kern::conv2d_backward_x(wc.data(), go.data(), gx.data(), d);
                detail::accum(gg.acc(ix), gx);
            }
            if (iw >= 0) {
                std::vector<S> gw(static_cast<size_t>(wc.numel()));
                kern::conv2d_backward_w(xc.data(), go.data(), gw.data(), d);
                detail::accum(gg.acc(iw), gw);
            }
            if (ib >= 0) {
                std::vector<S> gb(static_cast<size_t>(d.f));
                kern::conv2d_backward_b(go.data(), gb.data(), d);
                detail::accum(gg.acc(ib), gb);
            }
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> avg_pool2(const TensorT<S>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("avg_pool2: expects NCHW");
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) throw std::invalid_argument("avg_pool2: spatial extents must be even");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<S> out(Shape{n, c, h / 2, w / 2});
    kern::avg_pool2_forward(x.data(), out.data(), n, c, h, w);
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c, h, w](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(n) * c * h * w);
            kern::avg_pool2_backward(go.data(), gx.data(), n, c, h, w);
            detail::accum(gg.acc(ix), gx);
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> max_pool2(const TensorT<S>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("max_pool2: expects NCHW");
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) throw std::invalid_argument("max_pool2: spatial extents must be even");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<S> out(Shape{n, c, h / 2, w / 2});
    auto arg = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(out.numel()));
    kern::max_pool2_forward(x.data(), out.data(), arg->data(), n, c, h, w);
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c, h, w, arg](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(n) * c * h * w);
            kern::max_pool2_backward(go.data(), arg->data(), gx.data(), n, c, h, w);
            detail::accum(gg.acc(ix), gx);
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r) {
    if (x.ndim() != 4) throw std::invalid_argument("pixel_shuffle: expects NCHW");
    if (r < 1 || x.dim(1) % (r * r) != 0)
        throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    const int n = x.dim(0), c_out = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
    TensorT<S> out(Shape{n, c_out, h * r, w * r});
    kern::pixel_shuffle_forward(x.data(), out.data(), n, c_out, h, w, r);
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c_out, h, w, r](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(n) * c_out * r * r * h * w);
            kern::pixel_shuffle_backward(go.data(), gx.data(), n, c_out, h, w, r);
            detail::accum(gg.acc(ix), gx);
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: expects NCHW");
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    TensorT<S> out(Shape{n, c});
    const S* px = x.data();
    S* po = out.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(n) * c * hw > detail::kParallelCutoff)
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const S* p = px + (static_cast<int64_t>(ni) * c + ci) * hw;
            S sum = 0;
            for (int64_t i = 0; i < hw; ++i) sum += p[i];
            po[static_cast<int64_t>(ni) * c + ci] = sum / S(hw);
        }
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c, hw](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& gx = gg.acc(ix);
            for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
                const S v = go[p] / S(hw);
                for (int64_t i = 0; i < hw; ++i) gx[p * hw + i] += v;
            }
        });
        out.attach_(g, id);
    }
    return out;
}

// Broadcast a per-sample vector over an R x R spatial grid.
template <class S>
TensorT<S> tile_spatial(const TensorT<S>& x, int r) {
    if (x.ndim() != 2) throw std::invalid_argument("tile_spatial: expects [N,C]");
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(r) * r;
    TensorT<S> out(Shape{n, c, r, r});
    const S* px = x.data();
    S* po = out.data();
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p)
        for (int64_t i = 0; i < hw; ++i) po[p * hw + i] = px[p];
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c, hw](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& gx = gg.acc(ix);
            for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
                S sum = 0;
                for (int64_t i = 0; i < hw; ++i) sum += go[p * hw + i];
                gx[p] += sum;
            }
        });
        out.attach_(g, id);
    }
    return out;
}

// Nearest-neighbour resize to r x r (either direction).
template <class S>
TensorT<S> nn_resize(const TensorT<S>& x, int r) {
    if (x.ndim() != 4) throw std::invalid_argument("nn_resize: expects NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<S> out(Shape{n, c, r, r});
    const S* px = x.data();
    S* po = out.data();
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static) if (planes * r * r > detail::kParallelCutoff)
    for (int64_t p = 0; p < planes; ++p)
        for (int i = 0; i < r; ++i) {
            const int ih = static_cast<int>((static_cast<int64_t>(i) * h) / r);
            for (int j = 0; j < r; ++j) {
                const int iw = static_cast<int>((static_cast<int64_t>(j) * w) / r);
                po[p * r * r + static_cast<int64_t>(i) * r + j] = px[p * h * w + static_cast<int64_t>(ih) * w + iw];
            }
        }
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        g->set_backward(id, [id, ix, n, c, h, w, r](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            auto& gx = gg.acc(ix);
            auto ceil_div = [](int64_t a, int64_t b) { return (a + b - 1) / b; };
            for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p)
                for (int ih = 0; ih < h; ++ih) {
                    const int o0 = static_cast<int>(ceil_div(static_cast<int64_t>(ih) * r, h));
                    const int o1 = static_cast<int>(ceil_div(static_cast<int64_t>(ih + 1) * r, h));
                    for (int iw = 0; iw < w; ++iw) {
                        const int q0 = static_cast<int>(ceil_div(static_cast<int64_t>(iw) * r, w));
                        const int q1 = static_cast<int>(ceil_div(static_cast<int64_t>(iw + 1) * r, w));
                        S sum = 0;
                        for (int i = o0; i < o1; ++i)
                            for (int j = q0; j < q1; ++j) sum += go[p * r * r + static_cast<int64_t>(i) * r + j];
                        gx[p * h * w + static_cast<int64_t>(ih) * w + iw] += sum;
                    }
                }
        });
        out.attach_(g, id);
    }
    return out;
}

template <class S>
TensorT<S> softmax(const TensorT<S>& x, int axis) {
    if (axis < 0 || axis >= x.ndim()) throw std::invalid_argument("softmax: bad axis");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const int cls = x.dim(axis);
    TensorT<S> out(x.shape());
    kern::softmax_forward(x.data(), out.data(), outer, cls, inner);
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(out.numel());
        auto oc = out.detached();
        g->set_backward(id, [id, ix, outer, cls, inner, oc](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(oc.numel()));
            kern::softmax_backward(oc.data(), go.data(), gx.data(), outer, cls, inner);
            detail::accum(gg.acc(ix), gx);
        });
        out.attach_(g, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
    TensorT<S> out(Shape{1});
    const int64_t n = x.numel();
    S acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
    out.data()[0] = acc;
    auto* g = detail::result_graph<S>(x);
    if (g) {
        const int ix = detail::pnode(x, g);
        const int id = g->new_node(1);
        g->set_backward(id, [id, ix, n](GraphT<S>& gg) {
            const S go = gg.grad_ref(id)[0];
            auto& gx = gg.acc(ix);
            for (int64_t i = 0; i < n; ++i) gx[i] += go;
        });
        out.attach_(g, id);
    }
    return out;
}

// Mean of squared differences over all entries.
template <class S>
TensorT<S> euclidean_loss(const TensorT<S>& pred, const TensorT<S>& target) {
    detail::check_same_shape(pred.shape(), target.shape(), "euclidean_loss");
    const int64_t n = pred.numel();
    S acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const S d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    TensorT<S> out(Shape{1});
    out.data()[0] = acc / S(n);
    auto* g = detail::result_graph<S>(pred, target);
    if (g) {
        const int ip = detail::pnode(pred, g), it = detail::pnode(target, g);
        const int id = g->new_node(1);
        auto pc = pred.detached(), tc = target.detached();
        g->set_backward(id, [id, ip, it, n, pc, tc](GraphT<S>& gg) {
            const S go = gg.grad_ref(id)[0];
            const S k = S(2) * go / S(n);
            if (ip >= 0) {
                auto& gp = gg.acc(ip);
                for (int64_t i = 0; i < n; ++i) gp[i] += k * (pc.data()[i] - tc.data()[i]);
            }
            if (it >= 0) {
                auto& gt = gg.acc(it);
                for (int64_t i = 0; i < n; ++i) gt[i] -= k * (pc.data()[i] - tc.data()[i]);
            }
        });
        out.attach_(g, id);
    }
    return out;
}

// Mean categorical cross entropy with integer targets laid out as
// (outer, inner) positions against a class axis of the logits.
template <class S>
TensorT<S> cross_entropy_loss(const TensorT<S>& logits, const std::vector<int>& targets, int axis) {
    if (axis < 0 || axis >= logits.ndim()) throw std::invalid_argument("cross_entropy_loss: bad axis");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= logits.dim(i);
    for (int i = axis + 1; i < logits.ndim(); ++i) inner *= logits.dim(i);
    const int cls = logits.dim(axis);
    const int64_t positions = outer * inner;
    if (static_cast<int64_t>(targets.size()) != positions)
        throw std::invalid_argument("cross_entropy_loss: target count mismatch");
    for (int t : targets)
        if (t < 0 || t >= cls) throw std::invalid_argument("cross_entropy_loss: class index out of range");

    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(logits.numel()));
    kern::softmax_forward(logits.data(), probs->data(), outer, cls, inner);

    S acc = 0;
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const int t = targets[static_cast<size_t>(o * inner + i)];
            const S p = (*probs)[static_cast<size_t>(o * cls * inner + static_cast<int64_t>(t) * inner + i)];
            acc -= std::log(std::max(p, S(1e-30)));
        }
    TensorT<S> out(Shape{1});
    out.data()[0] = acc / S(positions);

    auto* g = detail::result_graph<S>(logits);
    if (g) {
        const int il = detail::pnode(logits, g);
        const int id = g->new_node(1);
        auto tg = std::make_shared<std::vector<int>>(targets);
        g->set_backward(id, [id, il, outer, cls, inner, positions, probs, tg](GraphT<S>& gg) {
            const S go = gg.grad_ref(id)[0];
            auto& gx = gg.acc(il);
            const S k = go / S(positions);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const int t = (*tg)[static_cast<size_t>(o * inner + i)];
                    for (int c = 0; c < cls; ++c) {
                        const int64_t idx = o * cls * inner + static_cast<int64_t>(c) * inner + i;
                        gx[static_cast<size_t>(idx)] += k * ((*probs)[static_cast<size_t>(idx)] - (c == t ? S(1) : S(0)));
                    }
                }
        });
        out.attach_(g, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <class S>
struct BnBatchStats {
    std::vector<S> mean;
    std::vector<S> var;
};

// Train mode: normalize by batch statistics; returns them so the caller
// can fold them into the running averages.
template <class S>
TensorT<S> bn_train(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta, S eps,
                    BnBatchStats<S>* stats_out) {
    if (x.ndim() != 4) throw std::invalid_argument("bn_train: expects NCHW");
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    if (static_cast<int64_t>(n) * hw < 2) throw std::invalid_argument("bn_train: needs at least 2 values per channel");
    if (gamma.numel() != c || beta.numel() != c) throw std::invalid_argument("bn_train: affine extent mismatch");

    auto mean = std::make_shared<std::vector<S>>(static_cast<size_t>(c));
    auto var = std::make_shared<std::vector<S>>(static_cast<size_t>(c));
    kern::bn_stats(x.data(), mean->data(), var->data(), n, c, hw);
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) (*inv_std)[static_cast<size_t>(i)] = S(1) / std::sqrt((*var)[static_cast<size_t>(i)] + eps);

    TensorT<S> out(x.shape());
    kern::bn_apply(x.data(), mean->data(), inv_std->data(), gamma.data(), beta.data(), out.data(), n, c, hw);
    if (stats_out) {
        stats_out->mean = *mean;
        stats_out->var = *var;
    }

    auto* g = detail::result_graph<S>(x, gamma, beta);
    if (g) {
        const int ix = detail::pnode(x, g), ig = detail::pnode(gamma, g), ib = detail::pnode(beta, g);
        const int id = g->new_node(out.numel());
        auto xc = x.detached(), gc = gamma.detached();
        g->set_backward(id, [id, ix, ig, ib, n, c, hw, xc, gc, mean, inv_std](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(xc.numel())), ggm(static_cast<size_t>(c)), gbt(static_cast<size_t>(c));
            kern::bn_backward_train(xc.data(), go.data(), mean->data(), inv_std->data(), gc.data(),
                                    gx.data(), ggm.data(), gbt.data(), n, c, hw);
            if (ix >= 0) detail::accum(gg.acc(ix), gx);
            if (ig >= 0) detail::accum(gg.acc(ig), ggm);
            if (ib >= 0) detail::accum(gg.acc(ib), gbt);
        });
        out.attach_(g, id);
    }
    return out;
}

// Eval mode: normalize by stored statistics (treated as constants).
template <class S>
TensorT<S> bn_eval(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                   const std::vector<S>& running_mean, const std::vector<S>& running_var, S eps) {
    if (x.ndim() != 4) throw std::invalid_argument("bn_eval: expects NCHW");
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || static_cast<int>(running_mean.size()) != c ||
        static_cast<int>(running_var.size()) != c)
        throw std::invalid_argument("bn_eval: extent mismatch");

    auto mean = std::make_shared<std::vector<S>>(running_mean);
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) (*inv_std)[static_cast<size_t>(i)] = S(1) / std::sqrt(running_var[static_cast<size_t>(i)] + eps);

    TensorT<S> out(x.shape());
    kern::bn_apply(x.data(), mean->data(), inv_std->data(), gamma.data(), beta.data(), out.data(), n, c, hw);

    auto* g = detail::result_graph<S>(x, gamma, beta);
    if (g) {
        const int ix = detail::pnode(x, g), ig = detail::pnode(gamma, g), ib = detail::pnode(beta, g);
        const int id = g->new_node(out.numel());
        auto xc = x.detached(), gc = gamma.detached();
        g->set_backward(id, [id, ix, ig, ib, n, c, hw, xc, gc, mean, inv_std](GraphT<S>& gg) {
            const std::vector<S>& go = gg.grad_ref(id);
            std::vector<S> gx(static_cast<size_t>(xc.numel())), ggm(static_cast<size_t>(c)), gbt(static_cast<size_t>(c));
            kern::bn_backward_eval(xc.data(), go.data(), mean->data(), inv_std->data(), gc.data(),
                                   gx.data(), ggm.data(), gbt.data(), n, c, hw);
            if (ix >= 0) detail::accum(gg.acc(ix), gx);
            if (ig >= 0) detail::accum(gg.acc(ig), ggm);
            if (ib >= 0) detail::accum(gg.acc(ib), gbt);
        });
        out.attach_(g, id);
    }
    return out;
}

} // namespace ifan
