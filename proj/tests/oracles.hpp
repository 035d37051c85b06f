#pragma once

// Reference computations for the tests: direct O(n^2) transforms and
// time-domain sums, kept separate from the library's FFT-based code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <vector>

#include "rppg/rng.hpp"

namespace oracle {

constexpr double kLo = 40.0 / 60.0;
constexpr double kHi = 250.0 / 60.0;

inline bool in_band(double hz) {
  const double eps = 1e-9 * kHi;
  return hz >= kLo - eps && hz <= kHi + eps;
}

inline std::vector<double> centred(const std::vector<double>& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - m;
  return out;
}

inline std::vector<std::complex<double>> dft(const std::vector<double>& x, std::size_t len) {
  std::vector<std::complex<double>> out(len);
  for (std::size_t k = 0; k < len; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * n) % len) /
                       static_cast<double>(len);
      s += x[n] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = s;
  }
  return out;
}

inline std::vector<double> idft_real(const std::vector<std::complex<double>>& X) {
  const std::size_t len = X.size();
  std::vector<double> out(len);
  for (std::size_t n = 0; n < len; ++n) {
    std::complex<double> s = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>((k * n) % len) /
                       static_cast<double>(len);
      s += X[k] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[n] = s.real() / static_cast<double>(len);
  }
  return out;
}

inline double two_sided_freq(std::size_t k, std::size_t len, double fs) {
  return static_cast<double>(std::min(k, len - k)) * fs / static_cast<double>(len);
}

/// One-sided power of the centred signal zero-padded to pad * n points,
/// normalised so the bins sum to the centred energy.
inline std::vector<double> power(const std::vector<double>& x, std::size_t pad) {
  const std::size_t len = pad * x.size();
  const auto X = dft(centred(x), len);
  std::vector<double> p(len / 2 + 1);
  for (std::size_t k = 1; k < p.size(); ++k) {
    const double w = (2 * k == len) ? 1.0 : 2.0;
    p[k] = w * std::norm(X[k]) / static_cast<double>(len);
  }
  return p;
}

inline double bin_freq(std::size_t k, std::size_t len, double fs) {
  return static_cast<double>(k) * fs / static_cast<double>(len);
}

inline double ipr(const std::vector<double>& x, double fs, std::size_t pad = 2) {
  const auto p = power(x, pad);
  double total = 0.0, in = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    total += p[k];
    if (in_band(bin_freq(k, pad * x.size(), fs))) in += p[k];
  }
  return (total - in) / total;
}

inline double psd_mse(const std::vector<double>& a, const std::vector<double>& b, double fs) {
  const auto pa = power(a, 1), pb = power(b, 1);
  double sa = 0.0, sb = 0.0;
  std::size_t bins = 0;
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (in_band(bin_freq(k, a.size(), fs))) {
      sa += pa[k];
      sb += pb[k];
      ++bins;
    }
  double mse = 0.0;
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (in_band(bin_freq(k, a.size(), fs))) {
      const double d = pa[k] / sa - pb[k] / sb;
      mse += d * d;
    }
  return mse / static_cast<double>(bins);
}

inline double snr_db(const std::vector<double>& x, double fs, double hr_bpm) {
  const auto p = power(x, 1);
  const std::size_t n = x.size();
  const auto k0 = static_cast<long>(std::lround(hr_bpm / 60.0 * static_cast<double>(n) / fs));
  double sig = 0.0, other = 0.0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (std::abs(static_cast<long>(k) - k0) <= 1)
      sig += p[k];
    else
      other += p[k];
  }
  const double db = 10.0 * std::log10(sig / other);
  return std::clamp(db, -80.0, 80.0);
}

inline std::vector<double> band_passed(const std::vector<double>& x, std::size_t len, double fs) {
  auto X = dft(x, len);
  for (std::size_t k = 0; k < len; ++k)
    if (!in_band(two_sided_freq(k, len, fs))) X[k] = 0.0;
  return idft_real(X);
}

/// max over lags of the band-passed (zero-padded when linear) correlation,
/// times the in-band power fraction of yhat.
inline double mcc(const std::vector<double>& y, const std::vector<double>& yhat, double fs,
                  bool linear = true) {
  const auto yc = centred(y), hc = centred(yhat);
  const std::size_t n = y.size(), len = linear ? 2 * n : n;
  const auto b = band_passed(yc, len, fs), d = band_passed(hc, len, fs);
  double sy = 0.0, sh = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sy += yc[i] * yc[i];
    sh += hc[i] * hc[i];
  }
  double best = -1e300;
  for (std::size_t lag = 0; lag < len; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += b[(i + lag) % len] * d[i];
    best = std::max(best, s / std::sqrt(sy * sh));
  }
  const auto H = dft(hc, len);
  double tot = 0.0, in = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    tot += std::norm(H[k]);
    if (in_band(two_sided_freq(k, len, fs))) in += std::norm(H[k]);
  }
  return in / tot * best;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto x = centred(a), y = centred(b);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> tone(std::size_t n, double fs, double bpm, double phase = 0.0,
                                double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * bpm / 60.0 * static_cast<double>(i) / fs + phase);
  return x;
}

inline std::vector<double> noise(std::size_t n, rppg::Rng& rng, double std = 1.0) {
  std::vector<double> x(n);
  for (double& v : x) v = std * rng.normal();
  return x;
}

/// Random in-band signal: a few tones at random in-band rates and phases.
inline std::vector<double> in_band_signal(std::size_t n, double fs, rppg::Rng& rng) {
  std::vector<double> x(n, 0.0);
  const int tones = 1 + static_cast<int>(rng.below(3));
  for (int t = 0; t < tones; ++t) {
    const auto s = tone(n, fs, rng.uniform(50.0, 200.0), rng.uniform(0.0, 6.28),
                        rng.uniform(0.3, 1.0));
    for (std::size_t i = 0; i < n; ++i) x[i] += s[i];
  }
  return x;
}

/// Central finite-difference gradient of f at x.
template <typename F>
std::vector<double> numeric_grad(F&& f, std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x[i];
    x[i] = o + h;
    const double up = f(x);
    x[i] = o - h;
    const double down = f(x);
    x[i] = o;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) /
                                std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

}  // namespace oracle
