#include <algorithm>
#include <cmath>
#include <limits>

#include "rppg/error.hpp"
#include "rppg/graph.hpp"

namespace rppg::graph {
namespace {

struct Dims {
  std::size_t c, t, h, w;
};

Dims dims_of(const Shape& s, std::string_view who) {
  if (s.size() != 4)
    throw Error(std::string(who) + " expects a C x T x H x W tensor, got " + shape_string(s));
  return {s[0], s[1], s[2], s[3]};
}

std::size_t pooled_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t pad,
                          const char* axis, std::string_view who) {
  if (k == 0 || s == 0) throw Error(std::string(who) + ": zero kernel or stride");
  if (n + 2 * pad < k)
    throw Error(std::string(who) + ": " + axis + " extent " + std::to_string(n) +
                " smaller than kernel " + std::to_string(k));
  return (n + 2 * pad - k) / s + 1;
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------

class Conv3d final : public Layer {
 public:
  Conv3d(std::size_t in, std::size_t out, Triple k, Triple s, Triple p)
      : in_(in), out_(out), k_(k), s_(s), p_(p) {
    if (in == 0 || out == 0) throw Error("conv3d: channel counts must be positive");
    if (k.t == 0 || k.h == 0 || k.w == 0) throw Error("conv3d: zero kernel extent");
    if (s.t == 0 || s.h == 0 || s.w == 0) throw Error("conv3d: zero stride");
    params_.emplace_back(Shape{out, in, k.t, k.h, k.w});
    params_.emplace_back(Shape{out});
  }

  LayerKind kind() const override { return LayerKind::conv3d; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv3d>(*this); }
  std::vector<std::string> param_names() const override { return {"weight", "bias"}; }

  void init(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * k_.t * k_.h * k_.w));
    fill_uniform(params_[0], rng, bound);
    fill_uniform(params_[1], rng, bound);
  }

  Shape output_shape(const Shape& input) const override {
    const Dims d = dims_of(input, "conv3d");
    if (d.c != in_)
      throw Error("conv3d expects " + std::to_string(in_) + " input channels, got " +
                  std::to_string(d.c));
    return {out_, pooled_extent(d.t, k_.t, s_.t, p_.t, "T", "conv3d"),
            pooled_extent(d.h, k_.h, s_.h, p_.h, "H", "conv3d"),
            pooled_extent(d.w, k_.w, s_.w, p_.w, "W", "conv3d")};
  }

  // Calls fn(out_index_row, in_index_row, wo_lo, wo_hi, kw) for every
  // contributing (co, ci, kt, kh, kw, to, ho) combination; the innermost W loop
  // is left to the callback so it can be tight.
  template <typename Fn>
  void sweep(const Dims& in, const Dims& out, Fn&& fn) const {
    for (std::size_t co = 0; co < out_; ++co)
      for (std::size_t ci = 0; ci < in_; ++ci)
        for (std::size_t kt = 0; kt < k_.t; ++kt)
          for (std::size_t kh = 0; kh < k_.h; ++kh)
            for (std::size_t kw = 0; kw < k_.w; ++kw) {
              const std::size_t widx = (((co * in_ + ci) * k_.t + kt) * k_.h + kh) * k_.w + kw;
              // wi = wo*sw + kw - pw must lie in [0, W)
              const long off = static_cast<long>(kw) - static_cast<long>(p_.w);
              long lo = 0;
              if (off < 0) lo = (-off + static_cast<long>(s_.w) - 1) / static_cast<long>(s_.w);
              long hi = static_cast<long>(out.w) - 1;
              const long lim = static_cast<long>(in.w) - 1 - off;
              if (lim < 0) continue;
              hi = std::min(hi, lim / static_cast<long>(s_.w));
              if (lo > hi) continue;
              for (std::size_t to = 0; to < out.t; ++to) {
                const long ti = static_cast<long>(to * s_.t + kt) - static_cast<long>(p_.t);
                if (ti < 0 || ti >= static_cast<long>(in.t)) continue;
                for (std::size_t ho = 0; ho < out.h; ++ho) {
                  const long hi_ = static_cast<long>(ho * s_.h + kh) - static_cast<long>(p_.h);
                  if (hi_ < 0 || hi_ >= static_cast<long>(in.h)) continue;
                  const std::size_t orow = ((co * out.t + to) * out.h + ho) * out.w;
                  const std::size_t irow =
                      ((ci * in.t + static_cast<std::size_t>(ti)) * in.h +
                       static_cast<std::size_t>(hi_)) *
                      in.w;
                  fn(widx, orow, irow, static_cast<std::size_t>(lo), static_cast<std::size_t>(hi),
                     off);
                }
              }
            }
  }

  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Shape os = output_shape(x.shape());
    const Dims in = dims_of(x.shape(), "conv3d"), out = dims_of(os, "conv3d");
    Tensor y(os);
    const double* wt = params_[0].data().data();
    const double* b = params_[1].data().data();
    const std::size_t plane = out.t * out.h * out.w;
    for (std::size_t co = 0; co < out_; ++co)
      std::fill_n(y.data().data() + co * plane, plane, b[co]);
    const double* xi = x.data().data();
    double* yo = y.data().data();
    const std::size_t sw = s_.w;
    sweep(in, out,
          [&](std::size_t widx, std::size_t orow, std::size_t irow, std::size_t lo, std::size_t hi,
              long off) {
            const double w = wt[widx];
            double* dst = yo + orow;
            const double* src = xi + irow;
            if (sw == 1) {
              for (std::size_t wo = lo; wo <= hi; ++wo) dst[wo] += w * src[static_cast<long>(wo) + off];
            } else {
              for (std::size_t wo = lo; wo <= hi; ++wo)
                dst[wo] += w * src[static_cast<long>(wo * sw) + off];
            }
          });
    cache.input = x;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const Tensor& x = cache.input;
    const Dims in = dims_of(x.shape(), "conv3d"), out = dims_of(g.shape(), "conv3d");
    Tensor dx(x.shape());
    const double* wt = params_[0].data().data();
    double* dw = grads[0].data().data();
    double* db = grads[1].data().data();
    const double* gi = g.data().data();
    const double* xi = x.data().data();
    double* dxi = dx.data().data();
    const std::size_t plane = out.t * out.h * out.w;
    for (std::size_t co = 0; co < out_; ++co) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += gi[co * plane + i];
      db[co] += s;
    }
    const std::size_t sw = s_.w;
    sweep(in, out,
          [&](std::size_t widx, std::size_t orow, std::size_t irow, std::size_t lo, std::size_t hi,
              long off) {
            const double w = wt[widx];
            const double* gr = gi + orow;
            const double* src = xi + irow;
            double* dsrc = dxi + irow;
            double acc = 0.0;
            for (std::size_t wo = lo; wo <= hi; ++wo) {
              const long i = static_cast<long>(wo * sw) + off;
              acc += gr[wo] * src[i];
              dsrc[i] += w * gr[wo];
            }
            dw[widx] += acc;
          });
    return dx;
  }

 private:
  std::size_t in_, out_;
  Triple k_, s_, p_;
};

// ---------------------------------------------------------------------------

class AvgPool3d final : public Layer {
 public:
  AvgPool3d(Triple k, Triple s) : k_(k), s_(s) {}
  LayerKind kind() const override { return LayerKind::avgpool3d; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool3d>(*this); }

  Shape output_shape(const Shape& input) const override {
    const Dims d = dims_of(input, "avgpool3d");
    auto exact = [&](std::size_t n, std::size_t k, std::size_t s, const char* axis) {
      const std::size_t o = pooled_extent(n, k, s, 0, axis, "avgpool3d");
      if ((n - k) % s != 0)
        throw Error(std::string("avgpool3d: ") + axis + " extent " + std::to_string(n) +
                    " not tiled by kernel " + std::to_string(k) + " stride " + std::to_string(s));
      return o;
    };
    return {d.c, exact(d.t, k_.t, s_.t, "T"), exact(d.h, k_.h, s_.h, "H"),
            exact(d.w, k_.w, s_.w, "W")};
  }

  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Shape os = output_shape(x.shape());
    const Dims in = dims_of(x.shape(), ""), out = dims_of(os, "");
    Tensor y(os);
    const double inv = 1.0 / static_cast<double>(k_.t * k_.h * k_.w);
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t t = 0; t < out.t; ++t)
        for (std::size_t h = 0; h < out.h; ++h)
          for (std::size_t w = 0; w < out.w; ++w) {
            double s = 0.0;
            for (std::size_t a = 0; a < k_.t; ++a)
              for (std::size_t b = 0; b < k_.h; ++b)
                for (std::size_t e = 0; e < k_.w; ++e)
                  s += x[((c * in.t + t * s_.t + a) * in.h + h * s_.h + b) * in.w + w * s_.w + e];
            y[((c * out.t + t) * out.h + h) * out.w + w] = s * inv;
          }
    cache.input = Tensor(x.shape());  // only the shape is needed
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache, std::span<Tensor>) const override {
    const Dims in = dims_of(cache.input.shape(), ""), out = dims_of(g.shape(), "");
    Tensor dx(cache.input.shape());
    const double inv = 1.0 / static_cast<double>(k_.t * k_.h * k_.w);
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t t = 0; t < out.t; ++t)
        for (std::size_t h = 0; h < out.h; ++h)
          for (std::size_t w = 0; w < out.w; ++w) {
            const double v = g[((c * out.t + t) * out.h + h) * out.w + w] * inv;
            for (std::size_t a = 0; a < k_.t; ++a)
              for (std::size_t b = 0; b < k_.h; ++b)
                for (std::size_t e = 0; e < k_.w; ++e)
                  dx[((c * in.t + t * s_.t + a) * in.h + h * s_.h + b) * in.w + w * s_.w + e] += v;
          }
    return dx;
  }

 private:
  Triple k_, s_;
};

// ---------------------------------------------------------------------------

class AdaptiveAvgPoolSpatial final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::adaptive_avgpool_spatial; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<AdaptiveAvgPoolSpatial>(*this);
  }
  Shape output_shape(const Shape& input) const override {
    const Dims d = dims_of(input, "adaptive_avgpool_spatial");
    return {d.c, d.t, 1, 1};
  }
  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Dims d = dims_of(x.shape(), "");
    Tensor y(output_shape(x.shape()));
    const std::size_t n = d.h * d.w;
    for (std::size_t i = 0; i < d.c * d.t; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += x[i * n + j];
      y[i] = s / static_cast<double>(n);
    }
    cache.input = Tensor(x.shape());
    return y;
  }
  Tensor backward(const Tensor& g, const LayerCache& cache, std::span<Tensor>) const override {
    const Dims d = dims_of(cache.input.shape(), "");
    Tensor dx(cache.input.shape());
    const std::size_t n = d.h * d.w;
    for (std::size_t i = 0; i < d.c * d.t; ++i) {
      const double v = g[i] / static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = v;
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

class Elu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::elu; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Elu>(*this); }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : std::expm1(x[i]);
    cache.input = x;
    cache.output = y;
    return y;
  }
  Tensor backward(const Tensor& g, const LayerCache& cache, std::span<Tensor>) const override {
    Tensor dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      dx[i] = cache.input[i] > 0.0 ? g[i] : g[i] * (cache.output[i] + 1.0);
    return dx;
  }
};

// ---------------------------------------------------------------------------

// Per-item, per-channel standardisation over T, H, W followed by a learned
// affine map; stands in for 3-D batch normalisation.
class ChannelAffineNorm final : public Layer {
 public:
  static constexpr double kEps = 1e-5;

  explicit ChannelAffineNorm(std::size_t channels) : channels_(channels) {
    if (channels == 0) throw Error("channel_affine_norm: zero channels");
    params_.emplace_back(Shape{channels}, 1.0);
    params_.emplace_back(Shape{channels}, 0.0);
  }
  LayerKind kind() const override { return LayerKind::channel_affine_norm; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ChannelAffineNorm>(*this);
  }
  std::vector<std::string> param_names() const override { return {"gamma", "beta"}; }
  void init(Rng&) override {
    params_[0].fill(1.0);
    params_[1].fill(0.0);
  }

  Shape output_shape(const Shape& input) const override {
    const Dims d = dims_of(input, "channel_affine_norm");
    if (d.c != channels_)
      throw Error("channel_affine_norm expects " + std::to_string(channels_) + " channels, got " +
                  std::to_string(d.c));
    return input;
  }

  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Dims d = dims_of(output_shape(x.shape()), "");
    const std::size_t n = d.t * d.h * d.w;
    Tensor y(x.shape());
    cache.output = Tensor(x.shape());  // holds the standardised input
    cache.aux.assign(d.c, 0.0);        // inverse std per channel
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* xc = x.data().data() + c * n;
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += xc[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + kEps);
      cache.aux[c] = inv;
      const double gamma = params_[0][c], beta = params_[1][c];
      for (std::size_t i = 0; i < n; ++i) {
        const double xh = (xc[i] - mean) * inv;
        cache.output[c * n + i] = xh;
        y[c * n + i] = gamma * xh + beta;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const Dims d = dims_of(g.shape(), "");
    const std::size_t n = d.t * d.h * d.w;
    const double nn = static_cast<double>(n);
    Tensor dx(g.shape());
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* gc = g.data().data() + c * n;
      const double* xh = cache.output.data().data() + c * n;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += gc[i];
        sum_gx += gc[i] * xh[i];
      }
      grads[0][c] += sum_gx;
      grads[1][c] += sum_g;
      const double gamma = params_[0][c];
      const double k = gamma * cache.aux[c] / nn;
      for (std::size_t i = 0; i < n; ++i)
        dx[c * n + i] = k * (nn * gc[i] - sum_g - xh[i] * sum_gx);
    }
    return dx;
  }

 private:
  std::size_t channels_;
};

// ---------------------------------------------------------------------------

// Linear interpolation along T with half-pixel centres and endpoint
// replication.
class UpsampleTemporalLinear final : public Layer {
 public:
  explicit UpsampleTemporalLinear(std::size_t factor) : factor_(factor) {
    if (factor == 0) throw Error("upsample_temporal_linear: zero factor");
  }
  LayerKind kind() const override { return LayerKind::upsample_temporal_linear; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<UpsampleTemporalLinear>(*this);
  }
  Shape output_shape(const Shape& input) const override {
    Dims d = dims_of(input, "upsample_temporal_linear");
    return {d.c, d.t * factor_, d.h, d.w};
  }

  struct Tap {
    std::size_t i0, i1;
    double a;
  };
  Tap tap(std::size_t to, std::size_t t_in) const {
    const double f = static_cast<double>(factor_);
    double src = (static_cast<double>(to) + 0.5) / f - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(t_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, t_in - 1);
    return {i0, i1, src - static_cast<double>(i0)};
  }

  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Dims in = dims_of(x.shape(), "");
    Tensor y(output_shape(x.shape()));
    const std::size_t plane = in.h * in.w, to_n = in.t * factor_;
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t to = 0; to < to_n; ++to) {
        const Tap p = tap(to, in.t);
        const double* a = x.data().data() + (c * in.t + p.i0) * plane;
        const double* b = x.data().data() + (c * in.t + p.i1) * plane;
        double* o = y.data().data() + (c * to_n + to) * plane;
        for (std::size_t j = 0; j < plane; ++j) o[j] = (1.0 - p.a) * a[j] + p.a * b[j];
      }
    cache.input = Tensor(x.shape());
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache, std::span<Tensor>) const override {
    const Dims in = dims_of(cache.input.shape(), "");
    Tensor dx(cache.input.shape());
    const std::size_t plane = in.h * in.w, to_n = in.t * factor_;
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t to = 0; to < to_n; ++to) {
        const Tap p = tap(to, in.t);
        double* a = dx.data().data() + (c * in.t + p.i0) * plane;
        double* b = dx.data().data() + (c * in.t + p.i1) * plane;
        const double* o = g.data().data() + (c * to_n + to) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          a[j] += (1.0 - p.a) * o[j];
          b[j] += p.a * o[j];
        }
      }
    return dx;
  }

 private:
  std::size_t factor_;
};

// ---------------------------------------------------------------------------

class SoftmaxSpatial final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::softmax_spatial; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxSpatial>(*this); }
  Shape output_shape(const Shape& input) const override {
    dims_of(input, "softmax_spatial");
    return input;
  }
  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Dims d = dims_of(x.shape(), "");
    const std::size_t n = d.h * d.w;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < d.c * d.t; ++i) {
      const double* xi = x.data().data() + i * n;
      double* yi = y.data().data() + i * n;
      const double mx = *std::max_element(xi, xi + n);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (yi[j] = std::exp(xi[j] - mx));
      for (std::size_t j = 0; j < n; ++j) yi[j] /= s;
    }
    cache.output = y;
    return y;
  }
  Tensor backward(const Tensor& g, const LayerCache& cache, std::span<Tensor>) const override {
    const Dims d = dims_of(g.shape(), "");
    const std::size_t n = d.h * d.w;
    Tensor dx(g.shape());
    for (std::size_t i = 0; i < d.c * d.t; ++i) {
      const double* yi = cache.output.data().data() + i * n;
      const double* gi = g.data().data() + i * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * yi[j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = yi[j] * (gi[j] - s);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

// y = x + b with a learned scalar b.
class Add final : public Layer {
 public:
  Add() { params_.emplace_back(Shape{1}, 0.0); }
  LayerKind kind() const override { return LayerKind::add; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Add>(*this); }
  std::vector<std::string> param_names() const override { return {"b"}; }
  void init(Rng&) override { params_[0].fill(0.0); }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, LayerCache&) const override {
    Tensor y = x;
    for (double& v : y.data()) v += params_[0][0];
    return y;
  }
  Tensor backward(const Tensor& g, const LayerCache&, std::span<Tensor> grads) const override {
    double s = 0.0;
    for (double v : g.data()) s += v;
    grads[0][0] += s;
    return g;
  }
};

// y = a * x with a learned scalar a.
class Scale final : public Layer {
 public:
  Scale() { params_.emplace_back(Shape{1}, 1.0); }
  LayerKind kind() const override { return LayerKind::scale; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Scale>(*this); }
  std::vector<std::string> param_names() const override { return {"a"}; }
  void init(Rng&) override { params_[0].fill(1.0); }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    cache.input = x;
    return x * params_[0][0];
  }
  Tensor backward(const Tensor& g, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    grads[0][0] += dot(g, cache.input);
    return g * params_[0][0];
  }
};

// ---------------------------------------------------------------------------

// Per-frame weighted spatial mean with softmax-normalised learned weights,
// averaged over channels: C x T x H x W -> 1 x T x 1 x 1.
class WeightedSpatialPool final : public Layer {
 public:
  WeightedSpatialPool(std::size_t h, std::size_t w) : h_(h), w_(w) {
    if (h == 0 || w == 0) throw Error("weighted_spatial_pool: empty weight map");
    params_.emplace_back(Shape{h, w}, 0.0);
  }
  LayerKind kind() const override { return LayerKind::weighted_spatial_pool; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<WeightedSpatialPool>(*this);
  }
  std::vector<std::string> param_names() const override { return {"logits"}; }
  void init(Rng& rng) override {
    fill_uniform(params_[0], rng, 1.0 / std::sqrt(static_cast<double>(h_ * w_)));
  }

  Shape output_shape(const Shape& input) const override {
    const Dims d = dims_of(input, "weighted_spatial_pool");
    if (d.h != h_ || d.w != w_)
      throw Error("weighted_spatial_pool expects " + std::to_string(h_) + "x" +
                  std::to_string(w_) + " frames, got " + std::to_string(d.h) + "x" +
                  std::to_string(d.w));
    return {1, d.t, 1, 1};
  }

  std::vector<double> weights() const {
    const auto& l = params_[0];
    const double mx = *std::max_element(l.data().begin(), l.data().end());
    std::vector<double> w(l.size());
    double s = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) s += (w[j] = std::exp(l[j] - mx));
    for (double& v : w) v /= s;
    return w;
  }

  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    const Dims d = dims_of(output_shape(x.shape()), "");
    const Dims in = dims_of(x.shape(), "");
    (void)d;
    const std::vector<double> wt = weights();
    const std::size_t n = h_ * w_;
    Tensor y(Shape{1, in.t, 1, 1});
    const double inv_c = 1.0 / static_cast<double>(in.c);
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t t = 0; t < in.t; ++t) {
        const double* xi = x.data().data() + (c * in.t + t) * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += wt[j] * xi[j];
        y[t] += s * inv_c;
      }
    cache.input = x;
    cache.aux = wt;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const Tensor& x = cache.input;
    const Dims in = dims_of(x.shape(), "");
    const std::size_t n = h_ * w_;
    const std::vector<double>& wt = cache.aux;
    const double inv_c = 1.0 / static_cast<double>(in.c);
    Tensor dx(x.shape());
    std::vector<double> dw(n, 0.0);
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t t = 0; t < in.t; ++t) {
        const double gt = g[t] * inv_c;
        const double* xi = x.data().data() + (c * in.t + t) * n;
        double* di = dx.data().data() + (c * in.t + t) * n;
        for (std::size_t j = 0; j < n; ++j) {
          di[j] = gt * wt[j];
          dw[j] += gt * xi[j];
        }
      }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += dw[j] * wt[j];
    for (std::size_t j = 0; j < n; ++j) grads[0][j] += wt[j] * (dw[j] - s);
    return dx;
  }

 private:
  std::size_t h_, w_;
};

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::avgpool3d: return "avgpool3d";
    case LayerKind::adaptive_avgpool_spatial: return "adaptive_avgpool_spatial";
    case LayerKind::elu: return "elu";
    case LayerKind::channel_affine_norm: return "channel_affine_norm";
    case LayerKind::upsample_temporal_linear: return "upsample_temporal_linear";
    case LayerKind::softmax_spatial: return "softmax_spatial";
    case LayerKind::add: return "add";
    case LayerKind::scale: return "scale";
    case LayerKind::weighted_spatial_pool: return "weighted_spatial_pool";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv3d(std::size_t in, std::size_t out, Triple kernel, Triple stride,
                            Triple pad) {
  LayerSpec s;
  s.kind = LayerKind::conv3d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::avgpool3d(Triple kernel, Triple stride) {
  LayerSpec s;
  s.kind = LayerKind::avgpool3d;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::adaptive_avgpool_spatial() {
  LayerSpec s;
  s.kind = LayerKind::adaptive_avgpool_spatial;
  return s;
}

LayerSpec LayerSpec::elu() { return LayerSpec{}; }

LayerSpec LayerSpec::channel_affine_norm(std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::channel_affine_norm;
  s.in_channels = channels;
  return s;
}

LayerSpec LayerSpec::upsample_temporal_linear(std::size_t factor) {
  LayerSpec s;
  s.kind = LayerKind::upsample_temporal_linear;
  s.factor = factor;
  return s;
}

LayerSpec LayerSpec::softmax_spatial() {
  LayerSpec s;
  s.kind = LayerKind::softmax_spatial;
  return s;
}

LayerSpec LayerSpec::add() {
  LayerSpec s;
  s.kind = LayerKind::add;
  return s;
}

LayerSpec LayerSpec::scale() {
  LayerSpec s;
  s.kind = LayerKind::scale;
  return s;
}

LayerSpec LayerSpec::weighted_spatial_pool(std::size_t height, std::size_t width) {
  LayerSpec s;
  s.kind = LayerKind::weighted_spatial_pool;
  s.height = height;
  s.width = width;
  return s;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::conv3d:
      return std::make_unique<Conv3d>(s.in_channels, s.out_channels, s.kernel, s.stride, s.pad);
    case LayerKind::avgpool3d: return std::make_unique<AvgPool3d>(s.kernel, s.stride);
    case LayerKind::adaptive_avgpool_spatial: return std::make_unique<AdaptiveAvgPoolSpatial>();
    case LayerKind::elu: return std::make_unique<Elu>();
    case LayerKind::channel_affine_norm: return std::make_unique<ChannelAffineNorm>(s.in_channels);
    case LayerKind::upsample_temporal_linear:
      return std::make_unique<UpsampleTemporalLinear>(s.factor);
    case LayerKind::softmax_spatial: return std::make_unique<SoftmaxSpatial>();
    case LayerKind::add: return std::make_unique<Add>();
    case LayerKind::scale: return std::make_unique<Scale>();
    case LayerKind::weighted_spatial_pool:
      return std::make_unique<WeightedSpatialPool>(s.height, s.width);
  }
  throw Error("unknown layer kind");
}

}  // namespace rppg::graph
