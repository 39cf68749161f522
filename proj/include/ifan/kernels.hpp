#pragma once

// Data-parallel compute kernels (OpenMP). Every output element is written
// by exactly one thread and accumulated in a fixed order, so results are
// bit-identical for any thread count. ref/reference_kernels.hpp holds the
// serial naive counterparts used as test oracles and benchmark baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace ifan::kern {

struct ConvDims {
    int n, c, h, w;      // input
    int f, kh, kw;       // filters
    int stride, pad;
    int oh, ow;          // output spatial
};

inline ConvDims conv_dims(int n, int c, int h, int w, int f, int kh, int kw, int stride, int pad) {
    ConvDims d{n, c, h, w, f, kh, kw, stride, pad, 0, 0};
    d.oh = (h + 2 * pad - kh) / stride + 1;
    d.ow = (w + 2 * pad - kw) / stride + 1;
    return d;
}

template <class S>
void conv2d_forward(const S* x, const S* w, const S* b, S* y, const ConvDims& d) {
    const int64_t xcs = static_cast<int64_t>(d.h) * d.w;
    const int64_t xns = static_cast<int64_t>(d.c) * xcs;
    const int64_t ycs = static_cast<int64_t>(d.oh) * d.ow;
    const int64_t yns = static_cast<int64_t>(d.f) * ycs;
    const int64_t wfs = static_cast<int64_t>(d.c) * d.kh * d.kw;

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n) {
        for (int f = 0; f < d.f; ++f) {
            const S* xn = x + n * xns;
            const S* wf = w + f * wfs;
            S* yrow0 = y + n * yns + f * ycs;
            for (int oh = 0; oh < d.oh; ++oh) {
                S* yr = yrow0 + static_cast<int64_t>(oh) * d.ow;
                const S bias = b ? b[f] : S(0);
                for (int ow = 0; ow < d.ow; ++ow) yr[ow] = bias;
                for (int c = 0; c < d.c; ++c) {
                    const S* xc = xn + c * xcs;
                    for (int kh = 0; kh < d.kh; ++kh) {
                        const int ih = oh * d.stride - d.pad + kh;
                        if (ih < 0 || ih >= d.h) continue;
                        const S* xr = xc + static_cast<int64_t>(ih) * d.w;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            const S wv = wf[(c * d.kh + kh) * d.kw + kw];
                            // valid ow range so that iw = ow*stride - pad + kw stays in [0, w)
                            int lo = 0, hi = d.ow;
                            if (d.stride == 1) {
                                lo = std::max(0, d.pad - kw);
                                hi = std::min(d.ow, d.w + d.pad - kw);
                            } else {
                                while (lo < d.ow && lo * d.stride - d.pad + kw < 0) ++lo;
                                hi = lo;
                                while (hi < d.ow && hi * d.stride - d.pad + kw < d.w) ++hi;
                            }
                            const S* xrk = xr - d.pad + kw;
                            if (d.stride == 1) {
                                for (int ow = lo; ow < hi; ++ow) yr[ow] += wv * xrk[ow];
                            } else {
                                for (int ow = lo; ow < hi; ++ow) yr[ow] += wv * xrk[static_cast<int64_t>(ow) * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class S>
void conv2d_backward_b(const S* gy, S* gb, const ConvDims& d) {
    const int64_t ycs = static_cast<int64_t>(d.oh) * d.ow;
    const int64_t yns = static_cast<int64_t>(d.f) * ycs;
#pragma omp parallel for schedule(static)
    for (int f = 0; f < d.f; ++f) {
        S acc = 0;
        for (int n = 0; n < d.n; ++n) {
            const S* g = gy + n * yns + f * ycs;
            for (int64_t i = 0; i < ycs; ++i) acc += g[i];
        }
        gb[f] = acc;
    }
}

namespace detail {

// Fixed-order 8-lane dot product: deterministic and SIMD-friendly without
// relying on FP reassociation by the compiler.
template <class S>
S lane_dot(const S* a, const S* b, int n) {
    S acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    for (; i < n; ++i) acc[i % 8] += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

} // namespace detail

template <class S>
void conv2d_backward_w(const S* x, const S* gy, S* gw, const ConvDims& d) {
    const int64_t xcs = static_cast<int64_t>(d.h) * d.w;
    const int64_t xns = static_cast<int64_t>(d.c) * xcs;
    const int64_t ycs = static_cast<int64_t>(d.oh) * d.ow;
    const int64_t yns = static_cast<int64_t>(d.f) * ycs;
    const int64_t wfs = static_cast<int64_t>(d.c) * d.kh * d.kw;

#pragma omp parallel for collapse(2) schedule(static)
    for (int f = 0; f < d.f; ++f) {
        for (int c = 0; c < d.c; ++c) {
            S* wfc = gw + f * wfs + static_cast<int64_t>(c) * d.kh * d.kw;
            for (int64_t i = 0; i < static_cast<int64_t>(d.kh) * d.kw; ++i) wfc[i] = 0;
            for (int n = 0; n < d.n; ++n) {
                const S* xc = x + n * xns + c * xcs;
                const S* gf = gy + n * yns + f * ycs;
                for (int kh = 0; kh < d.kh; ++kh) {
                    for (int kw = 0; kw < d.kw; ++kw) {
                        S acc = 0;
                        if (d.stride == 1) {
                            const int lo = std::max(0, d.pad - kw);
                            const int hi = std::min(d.ow, d.w + d.pad - kw);
                            for (int oh = 0; oh < d.oh; ++oh) {
                                const int ih = oh - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                acc += detail::lane_dot(gf + static_cast<int64_t>(oh) * d.ow + lo,
                                                        xc + static_cast<int64_t>(ih) * d.w + lo - d.pad + kw,
                                                        hi - lo);
                            }
                        } else {
                            for (int oh = 0; oh < d.oh; ++oh) {
                                const int ih = oh * d.stride - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                const S* xr = xc + static_cast<int64_t>(ih) * d.w;
                                const S* gr = gf + static_cast<int64_t>(oh) * d.ow;
                                for (int ow = 0; ow < d.ow; ++ow) {
                                    const int iw = ow * d.stride - d.pad + kw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    acc += gr[ow] * xr[iw];
                                }
                            }
                        }
                        wfc[kh * d.kw + kw] += acc;
                    }
                }
            }
        }
    }
}

template <class S>
void conv2d_backward_x(const S* w, const S* gy, S* gx, const ConvDims& d) {
    const int64_t xcs = static_cast<int64_t>(d.h) * d.w;
    const int64_t xns = static_cast<int64_t>(d.c) * xcs;
    const int64_t ycs = static_cast<int64_t>(d.oh) * d.ow;
    const int64_t yns = static_cast<int64_t>(d.f) * ycs;
    const int64_t wfs = static_cast<int64_t>(d.c) * d.kh * d.kw;

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n) {
        for (int c = 0; c < d.c; ++c) {
            S* gxc = gx + n * xns + c * xcs;
            for (int64_t i = 0; i < xcs; ++i) gxc[i] = 0;
            for (int f = 0; f < d.f; ++f) {
                const S* gf = gy + n * yns + f * ycs;
                const S* wfc = w + f * wfs + static_cast<int64_t>(c) * d.kh * d.kw;
                for (int kh = 0; kh < d.kh; ++kh) {
                    for (int kw = 0; kw < d.kw; ++kw) {
                        const S wv = wfc[kh * d.kw + kw];
                        if (d.stride == 1) {
                            // iw = ow - pad + kw; saxpy over the valid span
                            const int lo = std::max(0, d.pad - kw);
                            const int hi = std::min(d.ow, d.w + d.pad - kw);
                            for (int oh = 0; oh < d.oh; ++oh) {
                                const int ih = oh - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                S* gxr = gxc + static_cast<int64_t>(ih) * d.w - d.pad + kw;
                                const S* gr = gf + static_cast<int64_t>(oh) * d.ow;
                                for (int ow = lo; ow < hi; ++ow) gxr[ow] += wv * gr[ow];
                            }
                        } else {
                            for (int oh = 0; oh < d.oh; ++oh) {
                                const int ih = oh * d.stride - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                S* gxr = gxc + static_cast<int64_t>(ih) * d.w;
                                const S* gr = gf + static_cast<int64_t>(oh) * d.ow;
                                for (int ow = 0; ow < d.ow; ++ow) {
                                    const int iw = ow * d.stride - d.pad + kw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    gxr[iw] += wv * gr[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class S>
void linear_forward(const S* x, const S* w, const S* b, S* y, int n, int din, int dout) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const S* xi = x + static_cast<int64_t>(i) * din;
        S* yi = y + static_cast<int64_t>(i) * dout;
        for (int j = 0; j < dout; ++j) yi[j] = b ? b[j] : S(0);
        for (int k = 0; k < din; ++k) {
            const S xv = xi[k];
            const S* wr = w + static_cast<int64_t>(k) * dout;
            for (int j = 0; j < dout; ++j) yi[j] += xv * wr[j];
        }
    }
}

template <class S>
void linear_backward_x(const S* w, const S* gy, S* gx, int n, int din, int dout) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const S* gi = gy + static_cast<int64_t>(i) * dout;
        S* gxi = gx + static_cast<int64_t>(i) * din;
        for (int k = 0; k < din; ++k) {
            const S* wr = w + static_cast<int64_t>(k) * dout;
            S acc = 0;
            for (int j = 0; j < dout; ++j) acc += gi[j] * wr[j];
            gxi[k] = acc;
        }
    }
}

template <class S>
void linear_backward_w(const S* x, const S* gy, S* gw, S* gb, int n, int din, int dout) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < din; ++k) {
        S* gwr = gw + static_cast<int64_t>(k) * dout;
        for (int j = 0; j < dout; ++j) gwr[j] = 0;
        for (int i = 0; i < n; ++i) {
            const S xv = x[static_cast<int64_t>(i) * din + k];
            const S* gi = gy + static_cast<int64_t>(i) * dout;
            for (int j = 0; j < dout; ++j) gwr[j] += xv * gi[j];
        }
    }
    if (gb) {
        for (int j = 0; j < dout; ++j) gb[j] = 0;
        for (int i = 0; i < n; ++i) {
            const S* gi = gy + static_cast<int64_t>(i) * dout;
            for (int j = 0; j < dout; ++j) gb[j] += gi[j];
        }
    }
}

// 2x2 window, stride 2
template <class S>
void avg_pool2_forward(const S* x, S* y, int n, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const S* xp = x + p * h * w;
        S* yp = y + p * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const S* r0 = xp + static_cast<int64_t>(2 * i) * w + 2 * j;
                const S* r1 = r0 + w;
                yp[static_cast<int64_t>(i) * ow + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * S(0.25);
            }
    }
}

template <class S>
void avg_pool2_backward(const S* gy, S* gx, int n, int c, int h, int w) {
    const int ow = w / 2;
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const S* gp = gy + p * (h / 2) * ow;
        S* xp = gx + p * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                xp[static_cast<int64_t>(i) * w + j] = gp[static_cast<int64_t>(i / 2) * ow + j / 2] * S(0.25);
    }
}

template <class S>
void max_pool2_forward(const S* x, S* y, int32_t* arg, int n, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const S* xp = x + p * h * w;
        S* yp = y + p * oh * ow;
        int32_t* ap = arg + p * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const int base = 2 * i * w + 2 * j;
                int best = base;
                S bv = xp[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int k = 0; k < 3; ++k)
                    if (xp[cand[k]] > bv) {
                        bv = xp[cand[k]];
                        best = cand[k];
                    }
                yp[static_cast<int64_t>(i) * ow + j] = bv;
                ap[static_cast<int64_t>(i) * ow + j] = best;
            }
    }
}

template <class S>
void max_pool2_backward(const S* gy, const int32_t* arg, S* gx, int n, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        S* xp = gx + p * h * w;
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) xp[i] = 0;
        const S* gp = gy + p * oh * ow;
        const int32_t* ap = arg + p * oh * ow;
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) xp[ap[i]] += gp[i];
    }
}

// out[n, c, oh, ow] = in[n, c*r*r + (oh%r)*r + (ow%r), oh/r, ow/r]
template <class S>
void pixel_shuffle_forward(const S* x, S* y, int n, int c_out, int h, int w, int r) {
    const int oh = h * r, ow = w * r;
    const int c_in = c_out * r * r;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int c = 0; c < c_out; ++c) {
            S* yp = y + (static_cast<int64_t>(ni) * c_out + c) * oh * ow;
            for (int dh = 0; dh < r; ++dh)
                for (int dw = 0; dw < r; ++dw) {
                    const S* xp = x + (static_cast<int64_t>(ni) * c_in + c * r * r + dh * r + dw) * h * w;
                    for (int i = 0; i < h; ++i) {
                        S* yr = yp + static_cast<int64_t>(i * r + dh) * ow + dw;
                        const S* xr = xp + static_cast<int64_t>(i) * w;
                        for (int j = 0; j < w; ++j) yr[static_cast<int64_t>(j) * r] = xr[j];
                    }
                }
        }
    }
}

template <class S>
void pixel_shuffle_backward(const S* gy, S* gx, int n, int c_out, int h, int w, int r) {
    const int oh = h * r, ow = w * r;
    const int c_in = c_out * r * r;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int c = 0; c < c_out; ++c) {
            const S* gp = gy + (static_cast<int64_t>(ni) * c_out + c) * oh * ow;
            for (int dh = 0; dh < r; ++dh)
                for (int dw = 0; dw < r; ++dw) {
                    S* xp = gx + (static_cast<int64_t>(ni) * c_in + c * r * r + dh * r + dw) * h * w;
                    for (int i = 0; i < h; ++i) {
                        const S* gr = gp + static_cast<int64_t>(i * r + dh) * ow + dw;
                        S* xr = xp + static_cast<int64_t>(i) * w;
                        for (int j = 0; j < w; ++j) xr[j] = gr[static_cast<int64_t>(j) * r];
                    }
                }
        }
    }
}

// Per-channel batch statistics over (n, h, w); biased variance.
template <class S>
void bn_stats(const S* x, S* mean, S* var, int n, int c, int64_t hw) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        S sum = 0;
        for (int ni = 0; ni < n; ++ni) {
            const S* xp = x + (static_cast<int64_t>(ni) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) sum += xp[i];
        }
        const S m = sum / (S(n) * S(hw));
        S sq = 0;
        for (int ni = 0; ni < n; ++ni) {
            const S* xp = x + (static_cast<int64_t>(ni) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const S dlt = xp[i] - m;
                sq += dlt * dlt;
            }
        }
        mean[ch] = m;
        var[ch] = sq / (S(n) * S(hw));
    }
}

template <class S>
void bn_apply(const S* x, const S* mean, const S* inv_std, const S* gamma, const S* beta, S* y,
              int n, int c, int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ch = 0; ch < c; ++ch) {
            const S* xp = x + (static_cast<int64_t>(ni) * c + ch) * hw;
            S* yp = y + (static_cast<int64_t>(ni) * c + ch) * hw;
            const S m = mean[ch], is = inv_std[ch], g = gamma[ch], b = beta[ch];
            for (int64_t i = 0; i < hw; ++i) yp[i] = (xp[i] - m) * is * g + b;
        }
    }
}

// Train-mode backward through the batch statistics.
template <class S>
void bn_backward_train(const S* x, const S* gy, const S* mean, const S* inv_std, const S* gamma,
                       S* gx, S* ggamma, S* gbeta, int n, int c, int64_t hw) {
    const S m_count = S(n) * S(hw);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        S s_g = 0, s_gx = 0;
        for (int ni = 0; ni < n; ++ni) {
            const int64_t off = (static_cast<int64_t>(ni) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const S xhat = (x[off + i] - mean[ch]) * inv_std[ch];
                s_g += gy[off + i];
                s_gx += gy[off + i] * xhat;
            }
        }
        ggamma[ch] = s_gx;
        gbeta[ch] = s_g;
        const S k1 = s_g / m_count;
        const S k2 = s_gx / m_count;
        const S gis = gamma[ch] * inv_std[ch];
        for (int ni = 0; ni < n; ++ni) {
            const int64_t off = (static_cast<int64_t>(ni) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const S xhat = (x[off + i] - mean[ch]) * inv_std[ch];
                gx[off + i] = gis * (gy[off + i] - k1 - xhat * k2);
            }
        }
    }
}

// Eval-mode backward (statistics are constants).
template <class S>
void bn_backward_eval(const S* x, const S* gy, const S* mean, const S* inv_std, const S* gamma,
                      S* gx, S* ggamma, S* gbeta, int n, int c, int64_t hw) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        S s_g = 0, s_gx = 0;
        const S gis = gamma[ch] * inv_std[ch];
        for (int ni = 0; ni < n; ++ni) {
            const int64_t off = (static_cast<int64_t>(ni) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const S xhat = (x[off + i] - mean[ch]) * inv_std[ch];
                s_g += gy[off + i];
                s_gx += gy[off + i] * xhat;
                gx[off + i] = gis * gy[off + i];
            }
        }
        ggamma[ch] = s_gx;
        gbeta[ch] = s_g;
    }
}

// Softmax along a middle axis: shape viewed as (outer, cls, inner).
template <class S>
void softmax_forward(const S* x, S* y, int64_t outer, int cls, int64_t inner) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const S* xp = x + o * cls * inner + i;
            S* yp = y + o * cls * inner + i;
            S mx = xp[0];
            for (int k = 1; k < cls; ++k) mx = std::max(mx, xp[static_cast<int64_t>(k) * inner]);
            S sum = 0;
            for (int k = 0; k < cls; ++k) {
                const S e = std::exp(xp[static_cast<int64_t>(k) * inner] - mx);
                yp[static_cast<int64_t>(k) * inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (int k = 0; k < cls; ++k) yp[static_cast<int64_t>(k) * inner] *= inv;
        }
    }
}

template <class S>
void softmax_backward(const S* y, const S* gy, S* gx, int64_t outer, int cls, int64_t inner) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const S* yp = y + o * cls * inner + i;
            const S* gp = gy + o * cls * inner + i;
            S* xp = gx + o * cls * inner + i;
            S dot = 0;
            for (int k = 0; k < cls; ++k) dot += yp[static_cast<int64_t>(k) * inner] * gp[static_cast<int64_t>(k) * inner];
            for (int k = 0; k < cls; ++k)
                xp[static_cast<int64_t>(k) * inner] =
                    yp[static_cast<int64_t>(k) * inner] * (gp[static_cast<int64_t>(k) * inner] - dot);
        }
    }
}

} // namespace ifan::kern
