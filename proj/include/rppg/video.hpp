#pragma once

#include <cstddef>
#include <vector>

#include "rppg/tensor.hpp"

namespace rppg {

/// T x H x W x C pixel array (row-major, channels fastest) with its frame rate.
struct VideoClip {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  double fps = 30.0;
  std::vector<double> pixels;

  VideoClip() = default;
  VideoClip(std::size_t t, std::size_t h, std::size_t w, std::size_t c, double fps,
            double fill = 0.0);

  std::size_t frame_size() const noexcept { return height * width * channels; }
  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return ((t * height + y) * width + x) * channels + c;
  }
  double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[index(t, y, x, c)];
  }
  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[index(t, y, x, c)];
  }
  double duration() const { return static_cast<double>(frames) / fps; }

  /// Time series of one pixel/channel.
  std::vector<double> trace(std::size_t y, std::size_t x, std::size_t c = 0) const;

  /// Frames [start, start + count).
  VideoClip slice(std::size_t start, std::size_t count) const;

  /// Graph layout C x T x H x W.
  Tensor to_tensor() const;
  static VideoClip from_tensor(const Tensor& t, double fps);
};

/// Throws rppg::Error unless the clip has frames, a positive rate and
/// pixel storage matching its extents.
void validate(const VideoClip& clip);

}  // namespace rppg
