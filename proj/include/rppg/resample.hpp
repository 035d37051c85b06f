#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rppg/rng.hpp"
#include "rppg/spectral.hpp"
#include "rppg/tensor.hpp"
#include "rppg/video.hpp"

// Temporal frequency resampling: a clip resampled by r has round(T * r)
// frames and every frequency in it multiplied by 1 / r. Interpolation is
// linear in time with endpoint replication.
namespace rppg::resample {

inline constexpr double kContrastiveLo = 0.66;
inline constexpr double kContrastiveHi = 0.80;

std::size_t resampled_length(std::size_t n, double ratio);

PpgSignal resample_signal(const PpgSignal& signal, double ratio);

/// Adjoint of resample_signal: maps a gradient on the output back to the input.
std::vector<double> resample_signal_adjoint(std::span<const double> grad_out, std::size_t n_in,
                                            double ratio);

VideoClip resample_video(const VideoClip& clip, double ratio);

/// Same operation on a C x T x H x W tensor (axis 1 is time), plus its adjoint.
Tensor resample_time(const Tensor& x, double ratio);
Tensor resample_time_adjoint(const Tensor& grad_out, std::size_t t_in, double ratio);

/// Uniform draw in [lo, hi].
double draw_ratio(Rng& rng, double lo = kContrastiveLo, double hi = kContrastiveHi);

}  // namespace rppg::resample
