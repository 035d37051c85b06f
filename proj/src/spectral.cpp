#include "rppg/spectral.hpp"

#include <cmath>
#include <numeric>

#include "rppg/error.hpp"

namespace rppg {

void validate(const PpgSignal& signal) {
  if (signal.samples.size() < 2)
    throw Error("signal needs at least 2 samples, got " + std::to_string(signal.samples.size()));
  if (!(signal.fs > 0.0) || !std::isfinite(signal.fs)) throw Error("sampling rate must be > 0");
  for (double v : signal.samples)
    if (!std::isfinite(v)) throw Error("signal contains a non-finite sample");
}

}  // namespace rppg

namespace rppg::spectral {

bool Band::contains(double hz) const {
  const double eps = 1e-9 * hi_hz;
  return hz >= lo_hz - eps && hz <= hi_hz + eps;
}

double Psd::total_power() const { return std::accumulate(power.begin(), power.end(), 0.0); }

double Psd::in_band_power() const {
  double s = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k)
    if (in_band(k)) s += power[k];
  return s;
}

double energy(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

bool negligible(double power, double energy) { return !(power > 1e-24 * energy) || power <= 0.0; }

Periodogram periodogram(std::span<const double> x, double fs, std::size_t pad_factor) {
  if (pad_factor < 1) throw Error("pad factor must be >= 1");
  if (x.size() < 2) throw Error("signal needs at least 2 samples");
  const std::size_t n = x.size();
  const std::size_t m = n * pad_factor;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> centred(n);
  for (std::size_t i = 0; i < n; ++i) centred[i] = x[i] - mean;

  Periodogram out;
  out.length = n;
  out.raw_energy = energy(x);
  out.coeffs = fft::forward_real(centred, m);

  const std::size_t bins = m / 2 + 1;
  Psd& p = out.psd;
  p.resolution_hz = fs / static_cast<double>(m);
  p.power.assign(bins, 0.0);
  p.freq_hz.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    p.freq_hz[k] = static_cast<double>(k) * p.resolution_hz;
    if (k == 0) continue;
    const bool nyquist = (m % 2 == 0) && k == m / 2;
    const double w = nyquist ? 1.0 : 2.0;
    p.power[k] = w * std::norm(out.coeffs[k]) / static_cast<double>(m);
  }
  return out;
}

std::vector<double> periodogram_backward(const Periodogram& p, std::span<const double> d_power) {
  const std::size_t m = p.coeffs.size();
  const std::size_t bins = p.psd.bins();
  if (d_power.size() != bins) throw Error("periodogram_backward: gradient length mismatch");
  // d P_k / d x_n = (2 w_k / M) Re(X_k e^{+i 2 pi k n / M}); sum over k is an
  // inverse DFT of A_k = 2 w_k dP_k X_k / M placed on the one-sided bins.
  std::vector<fft::Complex> a(m, fft::Complex(0.0, 0.0));
  for (std::size_t k = 1; k < bins; ++k) {
    const bool nyquist = (m % 2 == 0) && k == m / 2;
    const double w = nyquist ? 1.0 : 2.0;
    a[k] = (2.0 * w * d_power[k] / static_cast<double>(m)) * p.coeffs[k];
  }
  const auto back = fft::inverse(a);
  std::vector<double> g(p.length);
  double mean = 0.0;
  for (std::size_t i = 0; i < p.length; ++i) mean += (g[i] = back[i].real());
  mean /= static_cast<double>(p.length);
  for (double& v : g) v -= mean;  // through the mean subtraction
  return g;
}

Psd psd(const PpgSignal& signal, std::size_t pad_factor) {
  validate(signal);
  return periodogram(signal.samples, signal.fs, pad_factor).psd;
}

Psd band_mask(const Psd& in) {
  Psd out = in;
  for (std::size_t k = 0; k < out.bins(); ++k)
    if (!out.in_band(k)) out.power[k] = 0.0;
  return out;
}

double estimate_hr(const PpgSignal& signal, std::size_t pad_factor) {
  validate(signal);
  const Periodogram p = periodogram(signal.samples, signal.fs, pad_factor);
  const Psd masked = band_mask(p.psd);
  std::size_t best = 0;
  double best_power = 0.0;
  for (std::size_t k = 0; k < masked.bins(); ++k)
    if (masked.power[k] > best_power) {
      best_power = masked.power[k];
      best = k;
    }
  if (best == 0 || negligible(masked.total_power(), p.raw_energy))
    throw DegenerateSignal("no in-band signal");
  return 60.0 * masked.freq_hz[best];
}

std::vector<bool> two_sided_band_mask(std::size_t length, double fs, const Band& band) {
  std::vector<bool> mask(length);
  for (std::size_t k = 0; k < length; ++k) {
    const std::size_t folded = std::min(k, length - k);
    mask[k] = band.contains(static_cast<double>(folded) * fs / static_cast<double>(length));
  }
  return mask;
}

}  // namespace rppg::spectral
