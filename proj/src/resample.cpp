#include "rppg/resample.hpp"

#include <cmath>

#include "rppg/error.hpp"

namespace rppg::resample {
namespace {

struct Tap {
  std::size_t i0, i1;
  double a;
};

Tap tap(std::size_t i, std::size_t n, double ratio) {
  double src = static_cast<double>(i) / ratio;
  const double last = static_cast<double>(n - 1);
  if (src > last) src = last;
  const auto i0 = static_cast<std::size_t>(std::floor(src));
  return {i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw Error("resample ratio must be > 0, got " + std::to_string(ratio));
}

// Resamples `outer` independent sequences of n blocks of `inner` contiguous values.
void resample_blocks(const double* in, double* out, std::size_t outer, std::size_t n,
                     std::size_t m, std::size_t inner, double ratio) {
  for (std::size_t i = 0; i < m; ++i) {
    const Tap p = tap(i, n, ratio);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* a = in + (o * n + p.i0) * inner;
      const double* b = in + (o * n + p.i1) * inner;
      double* dst = out + (o * m + i) * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] = a[j] + p.a * (b[j] - a[j]);
    }
  }
}

void adjoint_blocks(const double* g, double* dx, std::size_t outer, std::size_t n, std::size_t m,
                    std::size_t inner, double ratio) {
  for (std::size_t i = 0; i < m; ++i) {
    const Tap p = tap(i, n, ratio);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = g + (o * m + i) * inner;
      double* a = dx + (o * n + p.i0) * inner;
      double* b = dx + (o * n + p.i1) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        a[j] += (1.0 - p.a) * src[j];
        b[j] += p.a * src[j];
      }
    }
  }
}

}  // namespace

std::size_t resampled_length(std::size_t n, double ratio) {
  check_ratio(ratio);
  const auto m = static_cast<std::size_t>(std::lround(static_cast<double>(n) * ratio));
  if (m < 2) throw Error("resampled length below 2 samples");
  return m;
}

PpgSignal resample_signal(const PpgSignal& signal, double ratio) {
  validate(signal);
  const std::size_t n = signal.size(), m = resampled_length(n, ratio);
  PpgSignal out{std::vector<double>(m), signal.fs};
  resample_blocks(signal.samples.data(), out.samples.data(), 1, n, m, 1, ratio);
  return out;
}

std::vector<double> resample_signal_adjoint(std::span<const double> grad_out, std::size_t n_in,
                                            double ratio) {
  const std::size_t m = resampled_length(n_in, ratio);
  if (grad_out.size() != m) throw Error("resample adjoint: gradient length mismatch");
  std::vector<double> dx(n_in, 0.0);
  adjoint_blocks(grad_out.data(), dx.data(), 1, n_in, m, 1, ratio);
  return dx;
}

VideoClip resample_video(const VideoClip& clip, double ratio) {
  validate(clip);
  check_ratio(ratio);
  const std::size_t m = resampled_length(clip.frames, ratio);
  VideoClip out(m, clip.height, clip.width, clip.channels, clip.fps);
  resample_blocks(clip.pixels.data(), out.pixels.data(), 1, clip.frames, m, clip.frame_size(),
                  ratio);
  return out;
}

Tensor resample_time(const Tensor& x, double ratio) {
  if (x.rank() != 4) throw Error("resample_time expects C x T x H x W");
  const std::size_t c = x.extent(0), n = x.extent(1), inner = x.extent(2) * x.extent(3);
  const std::size_t m = resampled_length(n, ratio);
  Tensor out(Shape{c, m, x.extent(2), x.extent(3)});
  resample_blocks(x.data().data(), out.data().data(), c, n, m, inner, ratio);
  return out;
}

Tensor resample_time_adjoint(const Tensor& grad_out, std::size_t t_in, double ratio) {
  if (grad_out.rank() != 4) throw Error("resample_time_adjoint expects C x T x H x W");
  const std::size_t c = grad_out.extent(0), m = grad_out.extent(1);
  const std::size_t inner = grad_out.extent(2) * grad_out.extent(3);
  if (resampled_length(t_in, ratio) != m) throw Error("resample adjoint: length mismatch");
  Tensor dx(Shape{c, t_in, grad_out.extent(2), grad_out.extent(3)});
  adjoint_blocks(grad_out.data().data(), dx.data().data(), c, t_in, m, inner, ratio);
  return dx;
}

double draw_ratio(Rng& rng, double lo, double hi) {
  if (!(lo < hi)) throw Error("draw_ratio needs lo < hi");
  return rng.uniform(lo, hi);
}

}  // namespace rppg::resample
