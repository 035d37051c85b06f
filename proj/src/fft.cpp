#include "rppg/fft.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>

#include "rppg/error.hpp"

namespace rppg::fft {
namespace {

// FFTW's planner is not re-entrant; plans are created once per (length,
// direction) under a lock and executed with the thread-safe new-array API.
struct PlanCache {
  std::mutex mu;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans;

  ~PlanCache() {
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t n, int sign) {
    std::lock_guard lock(mu);
    auto it = plans.find({n, sign});
    if (it != plans.end()) return it->second;
    auto* buf = fftw_alloc_complex(n);  // in-place plan, matching execute()
    fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    if (!p) throw Error("fftw: failed to plan length " + std::to_string(n));
    plans.emplace(std::make_pair(n, sign), p);
    return p;
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

std::vector<Complex> execute(std::vector<Complex> data, int sign) {
  const std::size_t n = data.size();
  if (n == 0) return data;
  fftw_plan plan = cache().get(n, sign);
  // std::vector storage is not guaranteed to meet FFTW's SIMD alignment, and
  // plans made with FFTW_ESTIMATE on aligned buffers may assume it.
  auto* buf = fftw_alloc_complex(n);
  std::copy(data.begin(), data.end(), reinterpret_cast<Complex*>(buf));
  fftw_execute_dft(plan, buf, buf);
  std::copy(reinterpret_cast<Complex*>(buf), reinterpret_cast<Complex*>(buf) + n, data.begin());
  fftw_free(buf);
  return data;
}

}  // namespace

std::vector<Complex> forward_real(std::span<const double> x, std::size_t length) {
  if (length < x.size()) throw Error("fft: padded length shorter than input");
  std::vector<Complex> data(length, Complex(0.0, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) data[i] = Complex(x[i], 0.0);
  return execute(std::move(data), FFTW_FORWARD);
}

std::vector<Complex> inverse(std::span<const Complex> spectrum) {
  return execute(std::vector<Complex>(spectrum.begin(), spectrum.end()), FFTW_BACKWARD);
}

}  // namespace rppg::fft
