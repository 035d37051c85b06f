#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rppg/graph.hpp"
#include "rppg/rng.hpp"
#include "rppg/tensor.hpp"
#include "rppg/video.hpp"

namespace rppg::saliency {

/// Per-frame spatial distribution over an h x w grid of cells.
struct SaliencyMap {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // frame-major, then row-major cells

  SaliencyMap() = default;
  SaliencyMap(std::size_t d, std::size_t h, std::size_t w, double fill = 0.0);

  std::size_t cells() const noexcept { return height * width; }
  double& at(std::size_t t, std::size_t y, std::size_t x) {
    return values[(t * height + y) * width + x];
  }
  double at(std::size_t t, std::size_t y, std::size_t x) const {
    return values[(t * height + y) * width + x];
  }

  static SaliencyMap uniform(std::size_t d, std::size_t h, std::size_t w);
  /// From a 1 x D x h x w graph output.
  static SaliencyMap from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  /// Per-frame sums equal 1 within `tol` and entries are non-negative.
  bool normalised(double tol = 1e-9) const;
};

struct SaliencyWeights {
  double w_s = 1.0;
  double w_t = 1.0;
};

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t hidden = 4;
};

/// Two stride-2 (1,3,3) convolutions with an ELU between them and a spatial
/// softmax on top; the map is a quarter of the frame size on each axis.
graph::Graph build_net(const NetConfig& config, Rng& rng);

SaliencyMap compute_map(const graph::Graph& net, const VideoClip& clip);

double sparsity_loss(const SaliencyMap& map);
double temporal_loss(const SaliencyMap& map);

struct MapGrad {
  double value = 0.0;
  std::vector<double> d;  // same layout as SaliencyMap::values
};
MapGrad sparsity_grad(const SaliencyMap& map);
MapGrad temporal_grad(const SaliencyMap& map);

/// w_s * sparsity + w_t * temporal.
double saliency_loss(const SaliencyMap& map, const SaliencyWeights& w);
MapGrad saliency_grad(const SaliencyMap& map, const SaliencyWeights& w);

/// Default attraction-field width: a quarter of the map width, in cells.
double default_sigma(const SaliencyMap& map);

/// Source coordinates (pixels) read by each output pixel of every frame.
struct SamplingGrid {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<double> x;  // frame-major, row-major pixels
  std::vector<double> y;
};

/// Sampling grid of the Gaussian attraction-field warp. Each output cell reads
/// from the saliency-weighted mean of the cell-centre coordinates around it;
/// the cell grid is then linearly extended to pixel resolution.
SamplingGrid sampling_grid(const SaliencyMap& map, std::size_t height, std::size_t width,
                           double sigma);

VideoClip warp(const VideoClip& clip, const SaliencyMap& map, double sigma);

/// Differentiable warp on C x T x H x W tensors.
class Warp {
 public:
  explicit Warp(double sigma) : sigma_(sigma) {}

  Tensor forward(const Tensor& clip, const SaliencyMap& map);

  struct Grads {
    Tensor d_clip;
    std::vector<double> d_map;  // SaliencyMap::values layout
  };
  /// Gradient of the last forward pass.
  Grads backward(const Tensor& grad_out) const;

 private:
  double sigma_;
  Tensor input_;
  SaliencyMap map_;
};

/// Mass of each frame's map inside a pixel rectangle, averaged over frames.
/// Cells are spread uniformly over the pixels they cover.
double region_mass(const SaliencyMap& map, std::size_t frame_h, std::size_t frame_w,
                   std::size_t x, std::size_t y, std::size_t w, std::size_t h);

/// Appends `<dir>/<clip_id>.plck` and one row per frame to `<dir>/index.csv`
/// (clip_id,frame,entropy).
void dump_map(const std::filesystem::path& dir, const std::string& clip_id,
              const SaliencyMap& map);

}  // namespace rppg::saliency
