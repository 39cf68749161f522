// Benchmark: parallel kernels vs the serial reference implementation.
// Shapes mirror what the desk-scale model actually runs.
//
//   ./bench_kernels [repeats]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "ifan/kernels.hpp"
#include "ifan/rng.hpp"
#include "reference_kernels.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

using namespace ifan;

namespace {

std::vector<float> randv(size_t n, uint64_t seed) {
    std::vector<float> v(n);
    Rng rng(seed);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

template <class F>
double time_best(F&& fn, int repeats) {
    double best = 1e30;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    float m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const char* name, double serial, double parallel, double gflop, float diff) {
    std::printf("%-22s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %6.2f GFLOP/s   max|diff| %g\n",
                name, serial * 1e3, parallel * 1e3, serial / parallel, gflop / parallel, diff);
}

} // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
#if defined(_OPENMP)
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif

    // conv2d 3x3, the dominant cost: batch 10, 36->12 channels at 32x32
    {
        const int n = 10, c = 36, h = 32, w = 32, f = 12;
        auto x = randv(static_cast<size_t>(n) * c * h * w, 1);
        auto wt = randv(static_cast<size_t>(f) * c * 9, 2);
        auto b = randv(f, 3);
        std::vector<float> y1(static_cast<size_t>(n) * f * h * w), y2(y1.size());
        const auto d = kern::conv_dims(n, c, h, w, f, 3, 3, 1, 1);
        const double flops = 2.0 * n * f * h * w * c * 9 * 1e-9;
        double ts = time_best([&] { ref::conv2d_forward(x.data(), wt.data(), b.data(), y1.data(), n, c, h, w, f, 3, 3, 1, 1); }, repeats);
        double tp = time_best([&] { kern::conv2d_forward(x.data(), wt.data(), b.data(), y2.data(), d); }, repeats);
        report("conv2d fwd 3x3", ts, tp, flops, max_abs_diff(y1, y2));

        auto gy = randv(y1.size(), 4);
        std::vector<float> gx1(x.size()), gx2(x.size());
        ts = time_best([&] { ref::conv2d_backward_x(wt.data(), gy.data(), gx1.data(), n, c, h, w, f, 3, 3, 1, 1); }, repeats);
        tp = time_best([&] { kern::conv2d_backward_x(wt.data(), gy.data(), gx2.data(), d); }, repeats);
        report("conv2d bwd x", ts, tp, flops, max_abs_diff(gx1, gx2));

        std::vector<float> gw1(wt.size()), gw2(wt.size());
        ts = time_best([&] { ref::conv2d_backward_w(x.data(), gy.data(), gw1.data(), n, c, h, w, f, 3, 3, 1, 1); }, repeats);
        tp = time_best([&] { kern::conv2d_backward_w(x.data(), gy.data(), gw2.data(), d); }, repeats);
        report("conv2d bwd w", ts, tp, flops, max_abs_diff(gw1, gw2));
    }

    // pooling and shuffle at feature-map sizes
    {
        const int n = 10, c = 64, h = 32, w = 32;
        auto x = randv(static_cast<size_t>(n) * c * h * w, 5);
        std::vector<float> y1(x.size() / 4), y2(y1.size());
        const double flops = 4.0 * y1.size() * 1e-9;
        double ts = time_best([&] { ref::avg_pool2(x.data(), y1.data(), n, c, h, w); }, repeats);
        double tp = time_best([&] { kern::avg_pool2_forward(x.data(), y2.data(), n, c, h, w); }, repeats);
        report("avg_pool2", ts, tp, flops, max_abs_diff(y1, y2));

        std::vector<float> s1(x.size()), s2(x.size());
        ts = time_best([&] { ref::pixel_shuffle(x.data(), s1.data(), n, c / 4, h, w, 2); }, repeats);
        tp = time_best([&] { kern::pixel_shuffle_forward(x.data(), s2.data(), n, c / 4, h, w, 2); }, repeats);
        report("pixel_shuffle", ts, tp, x.size() * 1e-9, max_abs_diff(s1, s2));
    }

    // linear at decoder sizes
    {
        const int n = 96, din = 512, dout = 256;
        auto x = randv(static_cast<size_t>(n) * din, 6);
        auto w = randv(static_cast<size_t>(din) * dout, 7);
        auto b = randv(dout, 8);
        std::vector<float> y1(static_cast<size_t>(n) * dout), y2(y1.size());
        const double flops = 2.0 * n * din * dout * 1e-9;
        double ts = time_best([&] { ref::linear(x.data(), w.data(), b.data(), y1.data(), n, din, dout); }, repeats);
        double tp = time_best([&] { kern::linear_forward(x.data(), w.data(), b.data(), y2.data(), n, din, dout); }, repeats);
        report("linear", ts, tp, flops, max_abs_diff(y1, y2));
    }

    // batch-norm statistics
    {
        const int n = 10, c = 96, h = 32, w = 32;
        auto x = randv(static_cast<size_t>(n) * c * h * w, 9);
        std::vector<float> m1(c), v1(c), m2(c), v2(c);
        const double flops = 4.0 * x.size() * 1e-9;
        double ts = time_best([&] { ref::bn_stats(x.data(), m1.data(), v1.data(), n, c, static_cast<int64_t>(h) * w); }, repeats);
        double tp = time_best([&] { kern::bn_stats(x.data(), m2.data(), v2.data(), n, c, static_cast<int64_t>(h) * w); }, repeats);
        report("bn_stats", ts, tp, flops, std::max(max_abs_diff(m1, m2), max_abs_diff(v1, v2)));
    }

    return 0;
}
