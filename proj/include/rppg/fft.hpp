#pragma once

#include <complex>
#include <span>
#include <vector>

namespace rppg::fft {

using Complex = std::complex<double>;

/// Unnormalised forward DFT of `x` zero-padded to `length`:
/// X_k = sum_n x_n exp(-2 pi i k n / length).
std::vector<Complex> forward_real(std::span<const double> x, std::size_t length);

/// Unnormalised inverse DFT: y_n = sum_k X_k exp(+2 pi i k n / N).
std::vector<Complex> inverse(std::span<const Complex> spectrum);

}  // namespace rppg::fft
