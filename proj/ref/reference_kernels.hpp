#pragma once

// Serial reference implementations: direct per-output summation, no
// threading, no layout tricks. These exist to check the parallel kernels
// and to give the benchmark a baseline; nothing in src/ may call them.

#include <cstdint>

namespace ifan::ref {

template <class S>
void conv2d_forward(const S* x, const S* w, const S* b, S* y,
                    int n, int c, int h, int wdt, int f, int kh, int kw, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wdt + 2 * pad - kw) / stride + 1;
    for (int ni = 0; ni < n; ++ni)
        for (int fi = 0; fi < f; ++fi)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    S sum = b ? b[fi] : S(0);
                    for (int ci = 0; ci < c; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const int ih = i * stride - pad + u;
                                const int iw = j * stride - pad + v;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wdt) continue;
                                sum += w[((static_cast<int64_t>(fi) * c + ci) * kh + u) * kw + v] *
                                       x[((static_cast<int64_t>(ni) * c + ci) * h + ih) * wdt + iw];
                            }
                    y[((static_cast<int64_t>(ni) * f + fi) * oh + i) * ow + j] = sum;
                }
}

template <class S>
void conv2d_backward_x(const S* w, const S* gy, S* gx,
                       int n, int c, int h, int wdt, int f, int kh, int kw, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wdt + 2 * pad - kw) / stride + 1;
    for (int64_t i = 0; i < static_cast<int64_t>(n) * c * h * wdt; ++i) gx[i] = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int fi = 0; fi < f; ++fi)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    const S g = gy[((static_cast<int64_t>(ni) * f + fi) * oh + i) * ow + j];
                    for (int ci = 0; ci < c; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const int ih = i * stride - pad + u;
                                const int iw = j * stride - pad + v;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wdt) continue;
                                gx[((static_cast<int64_t>(ni) * c + ci) * h + ih) * wdt + iw] +=
                                    g * w[((static_cast<int64_t>(fi) * c + ci) * kh + u) * kw + v];
                            }
                }
}

template <class S>
void conv2d_backward_w(const S* x, const S* gy, S* gw,
                       int n, int c, int h, int wdt, int f, int kh, int kw, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wdt + 2 * pad - kw) / stride + 1;
    for (int64_t i = 0; i < static_cast<int64_t>(f) * c * kh * kw; ++i) gw[i] = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int fi = 0; fi < f; ++fi)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    const S g = gy[((static_cast<int64_t>(ni) * f + fi) * oh + i) * ow + j];
                    for (int ci = 0; ci < c; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const int ih = i * stride - pad + u;
                                const int iw = j * stride - pad + v;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wdt) continue;
                                gw[((static_cast<int64_t>(fi) * c + ci) * kh + u) * kw + v] +=
                                    g * x[((static_cast<int64_t>(ni) * c + ci) * h + ih) * wdt + iw];
                            }
                }
}

template <class S>
void conv2d_backward_b(const S* gy, S* gb, int n, int f, int oh, int ow) {
    for (int fi = 0; fi < f; ++fi) gb[fi] = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int fi = 0; fi < f; ++fi)
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
                gb[fi] += gy[(static_cast<int64_t>(ni) * f + fi) * oh * ow + i];
}

template <class S>
void avg_pool2(const S* x, S* y, int n, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                S sum = 0;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v)
                        sum += x[p * h * w + static_cast<int64_t>(2 * i + u) * w + 2 * j + v];
                y[p * oh * ow + static_cast<int64_t>(i) * ow + j] = sum * S(0.25);
            }
}

template <class S>
void max_pool2(const S* x, S* y, int n, int c, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                S best = x[p * h * w + static_cast<int64_t>(2 * i) * w + 2 * j];
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) {
                        const S cand = x[p * h * w + static_cast<int64_t>(2 * i + u) * w + 2 * j + v];
                        if (cand > best) best = cand;
                    }
                y[p * oh * ow + static_cast<int64_t>(i) * ow + j] = best;
            }
}

// Direct index formula: out[n][c][i][j] = in[n][c*r*r + (i%r)*r + (j%r)][i/r][j/r]
template <class S>
void pixel_shuffle(const S* x, S* y, int n, int c_out, int h, int w, int r) {
    const int oh = h * r, ow = w * r;
    const int c_in = c_out * r * r;
    for (int ni = 0; ni < n; ++ni)
        for (int c = 0; c < c_out; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    y[((static_cast<int64_t>(ni) * c_out + c) * oh + i) * ow + j] =
                        x[((static_cast<int64_t>(ni) * c_in + c * r * r + (i % r) * r + (j % r)) * h + i / r) * w + j / r];
}

template <class S>
void pixel_unshuffle(const S* y, S* x, int n, int c_out, int h, int w, int r) {
    const int oh = h * r, ow = w * r;
    const int c_in = c_out * r * r;
    for (int ni = 0; ni < n; ++ni)
        for (int c = 0; c < c_out; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    x[((static_cast<int64_t>(ni) * c_in + c * r * r + (i % r) * r + (j % r)) * h + i / r) * w + j / r] =
                        y[((static_cast<int64_t>(ni) * c_out + c) * oh + i) * ow + j];
}

template <class S>
void linear(const S* x, const S* w, const S* b, S* y, int n, int din, int dout) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) {
            S sum = b ? b[j] : S(0);
            for (int k = 0; k < din; ++k)
                sum += x[static_cast<int64_t>(i) * din + k] * w[static_cast<int64_t>(k) * dout + j];
            y[static_cast<int64_t>(i) * dout + j] = sum;
        }
}

template <class S>
void bn_stats(const S* x, S* mean, S* var, int n, int c, int64_t hw) {
    for (int ch = 0; ch < c; ++ch) {
        S sum = 0;
        for (int ni = 0; ni < n; ++ni)
            for (int64_t i = 0; i < hw; ++i) sum += x[(static_cast<int64_t>(ni) * c + ch) * hw + i];
        const S m = sum / (S(n) * S(hw));
        S sq = 0;
        for (int ni = 0; ni < n; ++ni)
            for (int64_t i = 0; i < hw; ++i) {
                const S d = x[(static_cast<int64_t>(ni) * c + ch) * hw + i] - m;
                sq += d * d;
            }
        mean[ch] = m;
        var[ch] = sq / (S(n) * S(hw));
    }
}

} // namespace ifan::ref
