#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rppg/fft.hpp"

namespace rppg {

/// A uniformly sampled 1-D physiological (or predicted) signal.
struct PpgSignal {
  std::vector<double> samples;
  double fs = 30.0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / fs; }
};

/// Throws rppg::Error unless length >= 2, fs > 0 and every sample is finite.
void validate(const PpgSignal& signal);

}  // namespace rppg

namespace rppg::spectral {

inline constexpr double kBandLoHz = 40.0 / 60.0;
inline constexpr double kBandHiHz = 250.0 / 60.0;
inline constexpr std::size_t kHrPadFactor = 8;

/// Closed frequency interval treated as plausible heart rate.
struct Band {
  double lo_hz = kBandLoHz;
  double hi_hz = kBandHiHz;
  bool contains(double hz) const;
};

/// One-sided power spectrum; bin k sits at k * resolution_hz.
///
/// Power is normalised so that its sum equals the energy of the
/// mean-subtracted signal (sum of squares). Bin 0 (DC) is always zero.
struct Psd {
  std::vector<double> power;
  std::vector<double> freq_hz;
  double resolution_hz = 0.0;
  Band band;

  std::size_t bins() const noexcept { return power.size(); }
  bool in_band(std::size_t k) const { return band.contains(freq_hz[k]); }
  double total_power() const;
  double in_band_power() const;
};

/// Zero-padded periodogram of the mean-subtracted signal.
Psd psd(const PpgSignal& signal, std::size_t pad_factor = 1);

/// Zeroes bins strictly outside the band; boundary bins are kept.
Psd band_mask(const Psd& psd);

/// 60 x the frequency of the strongest in-band bin (lowest frequency on ties).
/// Throws DegenerateSignal("no in-band signal") when the band holds no power.
double estimate_hr(const PpgSignal& signal, std::size_t pad_factor = kHrPadFactor);

/// True when `power` is zero up to round-off relative to `energy`, the raw
/// sum of squares of the signal it came from.
bool negligible(double power, double energy);

double energy(std::span<const double> x);

/// Periodogram plus the complex coefficients needed to back-propagate through it.
struct Periodogram {
  Psd psd;
  std::vector<fft::Complex> coeffs;  // full padded DFT of the centred signal
  std::size_t length = 0;            // unpadded length
  double raw_energy = 0.0;           // sum of squares of the raw input
};

Periodogram periodogram(std::span<const double> x, double fs, std::size_t pad_factor = 1);

/// Gradient w.r.t. the raw samples given d(loss)/d(power[k]).
std::vector<double> periodogram_backward(const Periodogram& p, std::span<const double> d_power);

/// Mask of in-band bins for a two-sided DFT of `length` points.
std::vector<bool> two_sided_band_mask(std::size_t length, double fs, const Band& band = {});

}  // namespace rppg::spectral
