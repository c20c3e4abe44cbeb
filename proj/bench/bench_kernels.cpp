// Timing comparison of the OpenMP kernels against their serial reference
// twins, over shapes matching a training step on the default config.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "counting/kernels.hpp"
#include "counting/rng.hpp"

using namespace counting;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void bench_conv(const char* name, int n, int cin, int h, int w, int cout, int k, int stride, int pad, Rng& rng) {
  auto d = kernels::make_conv_dims(n, cin, h, w, cout, k, stride, pad);
  auto in = random_vec(static_cast<size_t>(n) * cin * h * w, rng);
  auto wt = random_vec(static_cast<size_t>(cout) * cin * k * k, rng);
  std::vector<float> out(static_cast<size_t>(n) * cout * d.ho * d.wo);
  std::vector<float> gin(in.size(), 0.0f), gwt(wt.size(), 0.0f);

  const double fwd_omp = time_ms([&] { kernels::conv2d_forward(in.data(), wt.data(), out.data(), d); }, 5);
  const double fwd_ser = time_ms([&] { kernels::conv2d_forward_serial(in.data(), wt.data(), out.data(), d); }, 5);
  const double bin_omp = time_ms([&] { kernels::conv2d_backward_input(out.data(), wt.data(), gin.data(), d); }, 5);
  const double bin_ser =
      time_ms([&] { kernels::conv2d_backward_input_serial(out.data(), wt.data(), gin.data(), d); }, 5);
  const double bwt_omp = time_ms([&] { kernels::conv2d_backward_weight(out.data(), in.data(), gwt.data(), d); }, 5);
  const double bwt_ser =
      time_ms([&] { kernels::conv2d_backward_weight_serial(out.data(), in.data(), gwt.data(), d); }, 5);

  std::printf("%-28s fwd %8.2f /%8.2f ms (x%.2f)   bwd-in %8.2f /%8.2f ms (x%.2f)   bwd-w %8.2f /%8.2f ms (x%.2f)\n",
              name, fwd_omp, fwd_ser, fwd_ser / fwd_omp, bin_omp, bin_ser, bin_ser / bin_omp, bwt_omp, bwt_ser,
              bwt_ser / bwt_omp);
}

void bench_elementwise(size_t n, Rng& rng) {
  auto a = random_vec(n, rng);
  auto b = random_vec(n, rng);
  std::vector<float> out(n);
  const double omp =
      time_ms([&] { kernels::binary_map(kernels::BinaryOp::Mul, a.data(), b.data(), out.data(), n); }, 20);
  const double ser =
      time_ms([&] { kernels::binary_map_serial(kernels::BinaryOp::Mul, a.data(), b.data(), out.data(), n); }, 20);
  std::printf("%-28s     %8.3f /%8.3f ms (x%.2f)\n", "elementwise mul (2M)", omp, ser, ser / omp);
}

}  // namespace

int main() {
  std::printf("threads: %d   (omp / serial, speedup)\n", omp_get_max_threads());
  Rng rng(7);
  bench_conv("backbone conv1 16x3x3 64^2", 16, 3, 64, 64, 16, 3, 1, 1, rng);
  bench_conv("backbone conv2 32x16 s2", 16, 16, 64, 64, 32, 3, 2, 1, rng);
  bench_conv("backbone conv4 32x32 16^2", 16, 32, 16, 16, 32, 3, 1, 1, rng);
  bench_conv("head 1x1 conv P=18", 16, 32, 16, 16, 18, 1, 1, 0, rng);
  bench_elementwise(2u << 20, rng);
  return 0;
}
