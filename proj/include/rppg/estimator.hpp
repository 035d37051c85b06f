#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rppg/graph.hpp"
#include "rppg/rng.hpp"
#include "rppg/spectral.hpp"
#include "rppg/video.hpp"

namespace rppg::estimator {

enum class Variant { physnet_mini, spatial_pool };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct EstimatorConfig {
  Variant variant = Variant::physnet_mini;
  std::size_t channels = 8;  // 64 reproduces the full-width network
  std::size_t blocks = 2;    // encoder blocks, 2..4
  std::size_t in_channels = 1;
  std::size_t frames = 0;  // 0 accepts any clip length (multiple of temporal_multiple())
  std::size_t height = 64;
  std::size_t width = 64;

  /// Clip lengths must be a multiple of this (4 for physnet_mini).
  std::size_t temporal_multiple() const;
  void validate() const;
};

/// Builds and initialises the estimator graph.
///
/// physnet_mini follows the modified PhysNet encoder/decoder: conv+norm+ELU
/// blocks with average pooling, two {x2 temporal upsample, (3,1,1) conv}
/// decoder stages, spatial collapse and a final 1x1x1 conv to one channel.
/// spatial_pool is a single learnable softmax-weighted spatial mean.
graph::Graph build(const EstimatorConfig& config, Rng& rng);

PpgSignal predict_ppg(const graph::Graph& model, const VideoClip& clip);

/// spatial_pool only: the per-pixel weights (non-negative, sum 1).
std::vector<double> spatial_weights(const graph::Graph& model);

/// spatial_pool only: installs a non-negative weight map (normalised
/// internally); zero entries receive no mass at all.
void set_spatial_weights(graph::Graph& model, std::span<const double> weights);

/// Writes `<stem>.plck` and `<stem>.cfg` (key=value lines).
void save_model(const std::filesystem::path& stem, const graph::Graph& model,
                const EstimatorConfig& config);

struct LoadedModel {
  EstimatorConfig config;
  graph::Graph model;
};
LoadedModel load_model(const std::filesystem::path& stem);

std::string config_to_text(const EstimatorConfig& config);
EstimatorConfig config_from_text(const std::string& text);

}  // namespace rppg::estimator
