// Times the OpenMP matmul kernels against the serial reference they are
// tested against, at the shapes the training and evaluation loops actually
// use, and verifies the outputs stay bit-identical.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tokcode/common.hpp"
#include "tokcode/kernels.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class Real>
void bench_shape(int m, int k, int n, int reps) {
    tokcode::Rng rng(42);
    std::vector<Real> a(static_cast<size_t>(m) * k);
    std::vector<Real> b(static_cast<size_t>(k) * n);
    for (auto& v : a) v = static_cast<Real>(2.0 * rng.next_double() - 1.0);
    for (auto& v : b) v = static_cast<Real>(2.0 * rng.next_double() - 1.0);
    std::vector<Real> c_ser(static_cast<size_t>(m) * n);
    std::vector<Real> c_par(static_cast<size_t>(m) * n);

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        tokcode::kern::mm_nn_serial(a.data(), b.data(), c_ser.data(), m, k, n);
    }
    const double serial_ms = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        tokcode::kern::mm_nn(a.data(), b.data(), c_par.data(), m, k, n);
    }
    const double parallel_ms = ms_since(t0) / reps;

    bool identical = true;
    for (size_t i = 0; i < c_ser.size(); ++i) identical = identical && (c_ser[i] == c_par[i]);

    const double gflops = 2.0 * m * k * n / 1e6;
    std::printf("%4dx%-4dx%-4d  serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)   "
                "speedup %.2fx   bit-identical: %s\n",
                m, k, n, serial_ms, gflops / serial_ms, parallel_ms, gflops / parallel_ms,
                serial_ms / parallel_ms, identical ? "yes" : "NO");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not available; parallel entry points fall back to serial\n");
#endif

    std::printf("\nfloat kernels\n");
    bench_shape<float>(24, 64, 64, 400);
    bench_shape<float>(24, 64, 259, 200);
    bench_shape<float>(128, 128, 128, 100);
    bench_shape<float>(256, 256, 256, 20);

    std::printf("\ndouble kernels\n");
    bench_shape<double>(24, 64, 64, 400);
    bench_shape<double>(24, 64, 259, 200);
    bench_shape<double>(128, 128, 128, 100);
    bench_shape<double>(256, 256, 256, 20);
    return 0;
}
