#include "rppg/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rppg/error.hpp"

namespace rppg::estimator {

using graph::LayerSpec;
using graph::Triple;

std::string to_string(Variant v) {
  return v == Variant::physnet_mini ? "physnet_mini" : "spatial_pool";
}

Variant parse_variant(const std::string& s) {
  if (s == "physnet_mini") return Variant::physnet_mini;
  if (s == "spatial_pool") return Variant::spatial_pool;
  throw Error("unknown estimator variant '" + s + "'");
}

std::size_t EstimatorConfig::temporal_multiple() const {
  return variant == Variant::physnet_mini ? 4 : 1;
}

void EstimatorConfig::validate() const {
  if (channels < 1) throw Error("estimator needs at least one channel");
  if (in_channels < 1 || height < 1 || width < 1) throw Error("empty estimator input");
  if (frames % temporal_multiple() != 0)
    throw Error("clip length " + std::to_string(frames) + " is not divisible by " +
                std::to_string(temporal_multiple()));
  if (variant == Variant::physnet_mini) {
    if (blocks < 2 || blocks > 4) throw Error("physnet_mini supports 2 to 4 encoder blocks");
    const std::size_t f = std::size_t{1} << blocks;
    if (height % f != 0 || width % f != 0)
      throw Error("frame size must be divisible by " + std::to_string(f) + " for " +
                  std::to_string(blocks) + " encoder blocks");
  }
}

namespace {

// Pools of the full four-block encoder are (1,2,2),(2,2,2),(2,2,2),(1,2,2).
// Shorter encoders keep both temporal pools so the two x2 decoder stages
// restore the input length.
std::vector<Triple> pool_pattern(std::size_t blocks) {
  switch (blocks) {
    case 2: return {{2, 2, 2}, {2, 2, 2}};
    case 3: return {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}};
    default: return {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 2, 2}};
  }
}

void conv_block(std::vector<LayerSpec>& layers, std::size_t in, std::size_t out, Triple k,
                Triple pad) {
  layers.push_back(LayerSpec::conv3d(in, out, k, {1, 1, 1}, pad));
  layers.push_back(LayerSpec::channel_affine_norm(out));
  layers.push_back(LayerSpec::elu());
}

}  // namespace

graph::Graph build(const EstimatorConfig& config, Rng& rng) {
  config.validate();
  const Shape input{config.in_channels, config.frames, config.height, config.width};
  std::vector<LayerSpec> layers;
  if (config.variant == Variant::spatial_pool) {
    layers.push_back(LayerSpec::weighted_spatial_pool(config.height, config.width));
  } else {
    const std::size_t c = config.channels;
    const std::size_t c1 = std::max<std::size_t>(1, c / 2);
    const auto pools = pool_pattern(config.blocks);
    for (std::size_t b = 0; b < pools.size(); ++b) {
      if (b == 0)
        conv_block(layers, config.in_channels, c1, {1, 5, 5}, {0, 2, 2});
      else
        conv_block(layers, c, c, {3, 3, 3}, {1, 1, 1});
      layers.push_back(LayerSpec::avgpool3d(pools[b]));
      conv_block(layers, b == 0 ? c1 : c, c, {3, 3, 3}, {1, 1, 1});
    }
    conv_block(layers, c, c, {3, 3, 3}, {1, 1, 1});
    for (int stage = 0; stage < 2; ++stage) {
      layers.push_back(LayerSpec::upsample_temporal_linear(2));
      conv_block(layers, c, c, {3, 1, 1}, {1, 0, 0});
    }
    layers.push_back(LayerSpec::adaptive_avgpool_spatial());
    layers.push_back(LayerSpec::conv3d(c, 1, {1, 1, 1}));
  }
  graph::Graph g(input, layers);
  g.init(rng);
  return g;
}

PpgSignal predict_ppg(const graph::Graph& model, const VideoClip& clip) {
  validate(clip);
  const Tensor out = model.evaluate(clip.to_tensor());
  if (out.rank() != 4 || out.extent(0) != 1 || out.extent(2) != 1 || out.extent(3) != 1)
    throw Error("estimator output is not a single-channel signal: " + shape_string(out.shape()));
  if (out.extent(1) != clip.frames)
    throw Error("clip of " + std::to_string(clip.frames) + " frames yields " +
                std::to_string(out.extent(1)) + " samples; length must be a multiple of 4");
  return PpgSignal{out.values(), clip.fps};
}

namespace {
graph::Layer& pool_layer(graph::Graph& model) {
  if (model.num_layers() != 1 ||
      model.layer(0).kind() != graph::LayerKind::weighted_spatial_pool)
    throw Error("model is not a spatial_pool estimator");
  return model.layer(0);
}
}  // namespace

std::vector<double> spatial_weights(const graph::Graph& model) {
  const Tensor& logits = pool_layer(const_cast<graph::Graph&>(model)).params()[0];
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  std::vector<double> w(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp(logits[i] - mx));
  for (double& v : w) v /= s;
  return w;
}

void set_spatial_weights(graph::Graph& model, std::span<const double> weights) {
  Tensor& logits = pool_layer(model).params()[0];
  if (weights.size() != logits.size()) throw Error("weight map size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw Error("spatial weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw Error("spatial weights sum to zero");
  // exp(-1000) underflows to exactly zero, so zero weights get no mass.
  for (std::size_t i = 0; i < weights.size(); ++i)
    logits[i] = weights[i] > 0.0 ? std::log(weights[i] / total) : -1000.0;
}

std::string config_to_text(const EstimatorConfig& c) {
  std::ostringstream os;
  os << "variant=" << to_string(c.variant) << "\n"
     << "channels=" << c.channels << "\n"
     << "blocks=" << c.blocks << "\n"
     << "in_channels=" << c.in_channels << "\n"
     << "frames=" << c.frames << "\n"
     << "height=" << c.height << "\n"
     << "width=" << c.width << "\n";
  return os.str();
}

EstimatorConfig config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  EstimatorConfig c;
  auto num = [&](const char* key, std::size_t& out) {
    if (auto it = kv.find(key); it != kv.end()) out = std::stoul(it->second);
  };
  if (auto it = kv.find("variant"); it != kv.end()) c.variant = parse_variant(it->second);
  num("channels", c.channels);
  num("blocks", c.blocks);
  num("in_channels", c.in_channels);
  num("frames", c.frames);
  num("height", c.height);
  num("width", c.width);
  c.validate();
  return c;
}

void save_model(const std::filesystem::path& stem, const graph::Graph& model,
                const EstimatorConfig& config) {
  graph::save_checkpoint(stem.string() + ".plck", model.named_params());
  std::ofstream os(stem.string() + ".cfg");
  if (!os) throw Error("cannot write " + stem.string() + ".cfg");
  os << config_to_text(config);
}

LoadedModel load_model(const std::filesystem::path& stem) {
  std::ifstream is(stem.string() + ".cfg");
  if (!is) throw Error("cannot open " + stem.string() + ".cfg");
  std::stringstream ss;
  ss << is.rdbuf();
  EstimatorConfig cfg = config_from_text(ss.str());
  Rng rng(0);
  graph::Graph g = build(cfg, rng);
  g.load_params(graph::load_checkpoint(stem.string() + ".plck"));
  return {cfg, std::move(g)};
}

}  // namespace rppg::estimator
