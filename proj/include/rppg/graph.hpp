#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rppg/rng.hpp"
#include "rppg/tensor.hpp"

// Minimal reverse-mode engine over a single chain of spatiotemporal layers.
//
// Every tensor flowing through a graph has layout C x T x H x W. The graph is
// a straight line (single input, single output); that is all the estimator
// and the saliency net need.
namespace rppg::graph {

enum class LayerKind {
  conv3d,
  avgpool3d,
  adaptive_avgpool_spatial,
  elu,
  channel_affine_norm,
  upsample_temporal_linear,
  softmax_spatial,
  add,
  scale,
  weighted_spatial_pool,
};

std::string_view kind_name(LayerKind kind);

struct Triple {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Triple&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::elu;
  std::size_t in_channels = 0;   // conv3d, channel_affine_norm
  std::size_t out_channels = 0;  // conv3d
  Triple kernel;                 // conv3d, avgpool3d
  Triple stride;                 // conv3d, avgpool3d
  Triple pad{0, 0, 0};           // conv3d
  std::size_t factor = 2;        // upsample_temporal_linear
  std::size_t height = 0;        // weighted_spatial_pool
  std::size_t width = 0;         // weighted_spatial_pool

  static LayerSpec conv3d(std::size_t in, std::size_t out, Triple kernel, Triple stride = {},
                          Triple pad = {0, 0, 0});
  static LayerSpec avgpool3d(Triple kernel, Triple stride);
  static LayerSpec avgpool3d(Triple kernel) { return avgpool3d(kernel, kernel); }
  static LayerSpec adaptive_avgpool_spatial();
  static LayerSpec elu();
  static LayerSpec channel_affine_norm(std::size_t channels);
  static LayerSpec upsample_temporal_linear(std::size_t factor);
  static LayerSpec softmax_spatial();
  static LayerSpec add();
  static LayerSpec scale();
  static LayerSpec weighted_spatial_pool(std::size_t height, std::size_t width);
};

/// Per-layer state saved by forward for use by backward.
struct LayerCache {
  Tensor input;
  Tensor output;
  std::vector<double> aux;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Throws rppg::Error describing the mismatch when `input` is unsupported.
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual Tensor forward(const Tensor& x, LayerCache& cache) const = 0;

  /// Returns d(loss)/d(input) and accumulates parameter gradients into
  /// `param_grads` (one entry per parameter, same order as params()).
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                          std::span<Tensor> param_grads) const = 0;

  virtual void init(Rng&) {}

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  virtual std::vector<std::string> param_names() const { return {}; }

 protected:
  std::vector<Tensor> params_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

/// Activation record of one forward pass.
struct Tape {
  std::vector<LayerCache> caches;
  Shape input_shape;
  Shape output_shape;
  bool ready() const { return !caches.empty(); }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Gradients {
  std::vector<NamedTensor> params;
  Tensor input;

  const Tensor& param(std::string_view name) const;
};

class Graph {
 public:
  /// `input_shape` is C x T x H x W; an extent of 0 accepts any size on that axis.
  Graph(Shape input_shape, const std::vector<LayerSpec>& layers);

  Graph(const Graph& other);
  Graph& operator=(const Graph& other);
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  /// Output shape for a concrete input shape; throws ShapeError naming the layer.
  Shape output_shape(const Shape& input) const;

  /// Zero-mean uniform initialisation scaled by fan-in.
  void init(Rng& rng);

  std::vector<std::string> param_names() const;
  std::size_t param_count() const;
  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;
  std::vector<Tensor*> param_ptrs();
  std::vector<Tensor> param_values() const;
  void set_param_values(const std::vector<Tensor>& values);
  std::vector<NamedTensor> named_params() const;
  void load_params(const std::vector<NamedTensor>& params);

  /// Zero tensors shaped like the parameters (accumulator for backward).
  std::vector<Tensor> zero_grads() const;

  /// Forward/backward using the graph's own activation cache.
  Tensor forward(const Tensor& input);
  Gradients backward(const Tensor& output_grad);

  /// Forward/backward with a caller-owned tape, for several passes through one
  /// set of weights before a single update. Parameter gradients accumulate.
  Tensor forward(const Tensor& input, Tape& tape) const;
  Tensor backward(const Tape& tape, const Tensor& output_grad,
                  std::vector<Tensor>& param_grads) const;

  /// Forward without recording activations.
  Tensor evaluate(const Tensor& input) const;

 private:
  void check_input(const Shape& input) const;

  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Tape tape_;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double input_max_rel_error = 0.0;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Relative error used by all finite-difference checks:
/// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares backward against central finite differences (step `step`) of the
/// scalar loss <forward(input), probe> with a fixed random probe. Every
/// parameter entry is perturbed; input entries are checked up to
/// `max_input_checks` (evenly strided).
GradCheckReport grad_check(Graph& graph, const Tensor& input, double tol, std::uint64_t seed = 1,
                           double step = 1e-5, std::size_t max_input_checks = 4096);

// Parameter checkpoint file ("PLCK").
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace rppg::graph
