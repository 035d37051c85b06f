#include "rppg/video.hpp"

#include "rppg/error.hpp"

namespace rppg {

VideoClip::VideoClip(std::size_t t, std::size_t h, std::size_t w, std::size_t c, double rate,
                     double fill)
    : frames(t), height(h), width(w), channels(c), fps(rate), pixels(t * h * w * c, fill) {}

void validate(const VideoClip& clip) {
  if (clip.frames < 1) throw Error("video clip has no frames");
  if (!(clip.fps > 0.0)) throw Error("video frame rate must be > 0");
  if (clip.height == 0 || clip.width == 0 || clip.channels == 0)
    throw Error("video clip has an empty frame");
  if (clip.pixels.size() != clip.frames * clip.frame_size())
    throw Error("video pixel storage does not match its extents");
}

std::vector<double> VideoClip::trace(std::size_t y, std::size_t x, std::size_t c) const {
  std::vector<double> out(frames);
  for (std::size_t t = 0; t < frames; ++t) out[t] = at(t, y, x, c);
  return out;
}

VideoClip VideoClip::slice(std::size_t start, std::size_t count) const {
  if (start + count > frames) throw Error("clip slice out of range");
  VideoClip out(count, height, width, channels, fps);
  std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(start * frame_size()),
              count * frame_size(), out.pixels.begin());
  return out;
}

Tensor VideoClip::to_tensor() const {
  Tensor t(Shape{channels, frames, height, width});
  const std::size_t plane = height * width;
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < channels; ++c)
        t[(c * frames + f) * plane + p] = pixels[(f * plane + p) * channels + c];
  return t;
}

VideoClip VideoClip::from_tensor(const Tensor& t, double fps) {
  if (t.rank() != 4) throw Error("video tensor must be C x T x H x W");
  const std::size_t c = t.extent(0), f = t.extent(1), h = t.extent(2), w = t.extent(3);
  VideoClip out(f, h, w, c, fps);
  const std::size_t plane = h * w;
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        out.pixels[(k * plane + p) * c + ch] = t[(ch * f + k) * plane + p];
  return out;
}

}  // namespace rppg
