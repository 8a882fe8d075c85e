// Timing harness comparing the serial reference kernels against the
// OpenMP-parallel dispatchers on square matmuls.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <vector>

#include "sclab/kernels.hpp"

using namespace sclab;
using clock_type = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::cout << "n,serial_ms,parallel_ms,speedup,max_abs_diff\n";
  for (std::size_t n : {64ul, 128ul, 256ul, 512ul}) {
    std::vector<double> a(n * n), b(n * n), c_ser(n * n), c_par(n * n);
    for (auto& x : a) x = dist(rng);
    for (auto& x : b) x = dist(rng);
    const int reps = n <= 128 ? 20 : 5;
    const double serial = time_ms(
        [&] {
          kernels::matmul_serial(a.data(), b.data(), c_ser.data(), n, n, n);
        },
        reps);
    const double parallel = time_ms(
        [&] { kernels::matmul_omp(a.data(), b.data(), c_par.data(), n, n, n); },
        reps);
    double diff = 0.0;
    for (std::size_t i = 0; i < n * n; ++i)
      diff = std::max(diff, std::abs(c_ser[i] - c_par[i]));
    std::cout << n << ',' << serial << ',' << parallel << ','
              << serial / parallel << ',' << diff << '\n';
  }
  return 0;
}
