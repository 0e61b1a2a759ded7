// Rough single-thread GEMM throughput probe used while sizing training runs.
#include <chrono>
#include <cstdio>
#include <vector>

#include "tacoforge/rng.hpp"
#include "tacoforge/tensor.hpp"

using namespace tacoforge;

int main() {
  Rng rng(7);
  for (int64_t n : {64, 128, 256, 512}) {
    std::vector<float> a(static_cast<size_t>(n * n)), b(a.size()), c(a.size(), 0.f);
    for (auto& x : a) x = static_cast<float>(rng.normal());
    for (auto& x : b) x = static_cast<float>(rng.normal());
    const int reps = n <= 128 ? 200 : (n <= 256 ? 50 : 10);
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) detail::gemm_nn_acc(n, n, n, a.data(), b.data(), c.data());
    auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    const double gflops = 2.0 * n * n * n * reps / sec / 1e9;
    std::printf("nn  n=%4lld  %7.2f GFLOP/s\n", static_cast<long long>(n), gflops);
    auto t2 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) detail::gemm_nt_acc(n, n, n, a.data(), b.data(), c.data());
    auto t3 = std::chrono::steady_clock::now();
    const double sec2 = std::chrono::duration<double>(t3 - t2).count();
    std::printf("nt  n=%4lld  %7.2f GFLOP/s\n", static_cast<long long>(n),
                2.0 * n * n * n * reps / sec2 / 1e9);
    auto t4 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) detail::gemm_tn_acc(n, n, n, a.data(), b.data(), c.data());
    auto t5 = std::chrono::steady_clock::now();
    const double sec3 = std::chrono::duration<double>(t5 - t4).count();
    std::printf("tn  n=%4lld  %7.2f GFLOP/s\n", static_cast<long long>(n),
                2.0 * n * n * n * reps / sec3 / 1e9);
  }
  return 0;
}
