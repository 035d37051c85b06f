#include "rppg/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rppg/error.hpp"

namespace rppg::saliency {

SaliencyMap::SaliencyMap(std::size_t d, std::size_t h, std::size_t w, double fill)
    : frames(d), height(h), width(w), values(d * h * w, fill) {}

SaliencyMap SaliencyMap::uniform(std::size_t d, std::size_t h, std::size_t w) {
  return SaliencyMap(d, h, w, 1.0 / static_cast<double>(h * w));
}

SaliencyMap SaliencyMap::from_tensor(const Tensor& t) {
  if (t.rank() != 4 || t.extent(0) != 1)
    throw Error("saliency net output must be 1 x D x h x w, got " + shape_string(t.shape()));
  SaliencyMap m(t.extent(1), t.extent(2), t.extent(3));
  m.values = t.values();
  return m;
}

Tensor SaliencyMap::to_tensor() const { return Tensor({1, frames, height, width}, values); }

bool SaliencyMap::normalised(double tol) const {
  for (std::size_t t = 0; t < frames; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < cells(); ++j) {
      const double v = values[t * cells() + j];
      if (v < 0.0) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

graph::Graph build_net(const NetConfig& c, Rng& rng) {
  if (c.height % 4 != 0 || c.width % 4 != 0)
    throw Error("saliency net needs frame sides divisible by 4");
  using graph::LayerSpec;
  std::vector<LayerSpec> layers{
      LayerSpec::conv3d(c.in_channels, c.hidden, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}),
      LayerSpec::elu(),
      LayerSpec::conv3d(c.hidden, 1, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}),
      LayerSpec::softmax_spatial(),
  };
  graph::Graph g({c.in_channels, 0, c.height, c.width}, layers);
  g.init(rng);
  return g;
}

SaliencyMap compute_map(const graph::Graph& net, const VideoClip& clip) {
  validate(clip);
  return SaliencyMap::from_tensor(net.evaluate(clip.to_tensor()));
}

namespace {

void check_map(const SaliencyMap& m) {
  if (m.frames == 0 || m.cells() == 0 || m.values.size() != m.frames * m.cells())
    throw Error("malformed saliency map");
}

}  // namespace

MapGrad sparsity_grad(const SaliencyMap& m) {
  check_map(m);
  const double scale = 1.0 / static_cast<double>(m.cells() * m.frames);
  MapGrad out{0.0, std::vector<double>(m.values.size(), 0.0)};
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double s = m.values[i];
    if (s < 0.0 || !std::isfinite(s)) throw Error("saliency map has a negative entry");
    if (s > 0.0) out.value -= scale * s * std::log(s);
    out.d[i] = -scale * (std::log(std::max(s, 1e-300)) + 1.0);
  }
  return out;
}

double sparsity_loss(const SaliencyMap& m) { return sparsity_grad(m).value; }

MapGrad temporal_grad(const SaliencyMap& m) {
  check_map(m);
  if (m.frames < 2) throw Error("temporal loss needs at least two frames");
  const std::size_t n = m.cells();
  const double scale = 1.0 / static_cast<double>(n * (m.frames - 1));
  MapGrad out{0.0, std::vector<double>(m.values.size(), 0.0)};
  for (std::size_t t = 0; t + 1 < m.frames; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = m.values[(t + 1) * n + j] - m.values[t * n + j];
      out.value += scale * diff * diff;
      out.d[(t + 1) * n + j] += 2.0 * scale * diff;
      out.d[t * n + j] -= 2.0 * scale * diff;
    }
  return out;
}

double temporal_loss(const SaliencyMap& m) { return temporal_grad(m).value; }

MapGrad saliency_grad(const SaliencyMap& m, const SaliencyWeights& w) {
  if (w.w_s < 0.0 || w.w_t < 0.0) throw Error("saliency weights must be non-negative");
  MapGrad out{0.0, std::vector<double>(m.values.size(), 0.0)};
  if (w.w_s != 0.0) {
    const MapGrad s = sparsity_grad(m);
    out.value += w.w_s * s.value;
    for (std::size_t i = 0; i < out.d.size(); ++i) out.d[i] += w.w_s * s.d[i];
  }
  if (w.w_t != 0.0) {
    const MapGrad t = temporal_grad(m);
    out.value += w.w_t * t.value;
    for (std::size_t i = 0; i < out.d.size(); ++i) out.d[i] += w.w_t * t.d[i];
  }
  return out;
}

double saliency_loss(const SaliencyMap& m, const SaliencyWeights& w) {
  return saliency_grad(m, w).value;
}

double default_sigma(const SaliencyMap& m) { return 0.25 * static_cast<double>(m.width); }

// ---------------------------------------------------------------------------
// Warp

namespace {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

// a * b, with either operand optionally transposed.
Mat mul(const Mat& a, bool ta, const Mat& b, bool tb) {
  const std::size_t n = ta ? a.cols : a.rows;
  const std::size_t k = ta ? a.rows : a.cols;
  const std::size_t m = tb ? b.rows : b.cols;
  if ((tb ? b.cols : b.rows) != k) throw Error("matrix size mismatch");
  Mat out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = ta ? a(p, i) : a(i, p);
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += x * (tb ? b(j, p) : b(p, j));
    }
  return out;
}

double cell_centre(long j, std::size_t n) {
  return (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(n) - 1.0;
}

// Per-axis operators. With E the replicate-padding map and K the Gaussian,
// A = K E and B = K diag(u) E, where u holds the (padded) cell centres.
struct Axis {
  Mat a, b, up;
  std::size_t pixels;

  Axis(std::size_t n, std::size_t pixels_, double sigma)
      : a(n, n), b(n, n), up(pixels_, n), pixels(pixels_) {
    if (pixels % n != 0) throw Error("saliency grid must divide the frame size");
    const long r = std::max<long>(static_cast<long>(n), static_cast<long>(std::ceil(4.0 * sigma)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t i = 0; i < n; ++i)
      for (long j = -r; j < static_cast<long>(n) + r; ++j) {
        const double d = static_cast<double>(static_cast<long>(i) - j);
        const double k = std::exp(-d * d * inv2s2);
        const auto src = static_cast<std::size_t>(std::clamp<long>(j, 0, static_cast<long>(n) - 1));
        a(i, src) += k;
        b(i, src) += k * cell_centre(j, n);
      }
    // Linear interpolation between cell centres, extended linearly past the
    // outermost centres so an evenly spaced grid maps to every pixel centre.
    for (std::size_t p = 0; p < pixels; ++p) {
      if (n == 1) {
        up(p, 0) = 1.0;
        continue;
      }
      const double q = (static_cast<double>(p) + 0.5) * static_cast<double>(n) /
                           static_cast<double>(pixels) - 0.5;
      const auto i0 = static_cast<std::size_t>(
          std::clamp<long>(static_cast<long>(std::floor(q)), 0, static_cast<long>(n) - 2));
      const double f = q - static_cast<double>(i0);
      up(p, i0) = 1.0 - f;
      up(p, i0 + 1) = f;
    }
  }
};

struct FrameGrid {
  Mat den, gx, gy;  // cell resolution
  Mat px, py;       // pixel coordinates at frame resolution
};

FrameGrid frame_grid(const Mat& s, const Axis& ay, const Axis& ax) {
  const Mat as = mul(ay.a, false, s, false);
  FrameGrid g{mul(as, false, ax.a, true), mul(as, false, ax.b, true),
              mul(mul(ay.b, false, s, false), false, ax.a, true), Mat(0, 0), Mat(0, 0)};
  for (std::size_t i = 0; i < g.den.v.size(); ++i) {
    const double d = g.den.v[i];
    if (!(d > 1e-300) || !std::isfinite(d))
      throw DegenerateSignal("saliency warp denominator vanished");
    g.gx.v[i] /= d;
    g.gy.v[i] /= d;
  }
  g.px = mul(mul(ay.up, false, g.gx, false), false, ax.up, true);
  g.py = mul(mul(ay.up, false, g.gy, false), false, ax.up, true);
  const double w = static_cast<double>(ax.pixels), h = static_cast<double>(ay.pixels);
  for (double& v : g.px.v) v = ((v + 1.0) * w - 1.0) / 2.0;
  for (double& v : g.py.v) v = ((v + 1.0) * h - 1.0) / 2.0;
  return g;
}

struct Tap {
  std::size_t x0, x1, y0, y1;
  double ax, ay;
  bool x_inside, y_inside;  // false when the coordinate was clamped
};

Tap tap(double x, double y, std::size_t w, std::size_t h) {
  Tap t{};
  auto axis = [](double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& f,
                 bool& inside) {
    const double hi = static_cast<double>(n - 1);
    inside = c >= 0.0 && c <= hi;
    c = std::clamp(c, 0.0, hi);
    if (n == 1) {
      i0 = i1 = 0;
      f = 0.0;
      return;
    }
    i0 = std::min(static_cast<std::size_t>(c), n - 2);
    i1 = i0 + 1;
    f = c - static_cast<double>(i0);
  };
  axis(x, w, t.x0, t.x1, t.ax, t.x_inside);
  axis(y, h, t.y0, t.y1, t.ay, t.y_inside);
  return t;
}

Mat frame_of(const SaliencyMap& m, std::size_t t) {
  Mat s(m.height, m.width);
  std::copy_n(m.values.begin() + static_cast<long>(t * m.cells()), m.cells(), s.v.begin());
  return s;
}

void check_warp_inputs(const Shape& shape, const SaliencyMap& m, double sigma) {
  check_map(m);
  if (shape.size() != 4) throw Error("warp input must be C x T x H x W");
  if (shape[1] != m.frames)
    throw Error("saliency map has " + std::to_string(m.frames) + " frames, clip has " +
                std::to_string(shape[1]));
  if (shape[2] % m.height != 0 || shape[3] % m.width != 0)
    throw Error("saliency grid must divide the frame size");
  if (!(sigma > 0.0)) throw Error("warp sigma must be positive");
}

}  // namespace

SamplingGrid sampling_grid(const SaliencyMap& m, std::size_t height, std::size_t width,
                           double sigma) {
  check_warp_inputs({1, m.frames, height, width}, m, sigma);
  const Axis ay(m.height, height, sigma), ax(m.width, width, sigma);
  SamplingGrid out{m.frames, height, width, {}, {}};
  for (std::size_t t = 0; t < m.frames; ++t) {
    const FrameGrid g = frame_grid(frame_of(m, t), ay, ax);
    out.x.insert(out.x.end(), g.px.v.begin(), g.px.v.end());
    out.y.insert(out.y.end(), g.py.v.begin(), g.py.v.end());
  }
  return out;
}

Tensor Warp::forward(const Tensor& clip, const SaliencyMap& map) {
  check_warp_inputs(clip.shape(), map, sigma_);
  input_ = clip;
  map_ = map;
  const std::size_t c = clip.extent(0), d = clip.extent(1), h = clip.extent(2),
                    w = clip.extent(3);
  const Axis ay(map.height, h, sigma_), ax(map.width, w, sigma_);
  Tensor out(clip.shape());
  for (std::size_t t = 0; t < d; ++t) {
    const FrameGrid g = frame_grid(frame_of(map, t), ay, ax);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = clip.data().data() + (ch * d + t) * h * w;
      double* dst = out.data().data() + (ch * d + t) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) {
        const Tap k = tap(g.px.v[p], g.py.v[p], w, h);
        const double top = src[k.y0 * w + k.x0] * (1 - k.ax) + src[k.y0 * w + k.x1] * k.ax;
        const double bot = src[k.y1 * w + k.x0] * (1 - k.ax) + src[k.y1 * w + k.x1] * k.ax;
        dst[p] = top * (1 - k.ay) + bot * k.ay;
      }
    }
  }
  return out;
}

Warp::Grads Warp::backward(const Tensor& grad_out) const {
  if (input_.empty()) throw Error("warp backward called before forward");
  if (grad_out.shape() != input_.shape()) throw Error("warp gradient shape mismatch");
  const std::size_t c = input_.extent(0), d = input_.extent(1), h = input_.extent(2),
                    w = input_.extent(3);
  const Axis ay(map_.height, h, sigma_), ax(map_.width, w, sigma_);
  Grads out{Tensor(input_.shape()), std::vector<double>(map_.values.size(), 0.0)};
  for (std::size_t t = 0; t < d; ++t) {
    const Mat s = frame_of(map_, t);
    const FrameGrid g = frame_grid(s, ay, ax);
    Mat dpx(h, w), dpy(h, w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = input_.data().data() + (ch * d + t) * h * w;
      const double* go = grad_out.data().data() + (ch * d + t) * h * w;
      double* gi = out.d_clip.data().data() + (ch * d + t) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) {
        const Tap k = tap(g.px.v[p], g.py.v[p], w, h);
        const double v00 = src[k.y0 * w + k.x0], v01 = src[k.y0 * w + k.x1];
        const double v10 = src[k.y1 * w + k.x0], v11 = src[k.y1 * w + k.x1];
        gi[k.y0 * w + k.x0] += go[p] * (1 - k.ax) * (1 - k.ay);
        gi[k.y0 * w + k.x1] += go[p] * k.ax * (1 - k.ay);
        gi[k.y1 * w + k.x0] += go[p] * (1 - k.ax) * k.ay;
        gi[k.y1 * w + k.x1] += go[p] * k.ax * k.ay;
        if (k.x_inside) dpx.v[p] += go[p] * ((v01 - v00) * (1 - k.ay) + (v11 - v10) * k.ay);
        if (k.y_inside) dpy.v[p] += go[p] * ((v10 - v00) * (1 - k.ax) + (v11 - v01) * k.ax);
      }
    }
    // Pixel coordinates are affine in the normalised grid.
    for (double& v : dpx.v) v *= static_cast<double>(w) / 2.0;
    for (double& v : dpy.v) v *= static_cast<double>(h) / 2.0;
    Mat dgx = mul(mul(ay.up, true, dpx, false), false, ax.up, false);
    Mat dgy = mul(mul(ay.up, true, dpy, false), false, ax.up, false);
    Mat dden(map_.height, map_.width);
    for (std::size_t i = 0; i < dden.v.size(); ++i) {
      dden.v[i] = -(dgx.v[i] * g.gx.v[i] + dgy.v[i] * g.gy.v[i]) / g.den.v[i];
      dgx.v[i] /= g.den.v[i];
      dgy.v[i] /= g.den.v[i];
    }
    const Mat ds1 = mul(mul(ay.a, true, dden, false), false, ax.a, false);
    const Mat ds2 = mul(mul(ay.a, true, dgx, false), false, ax.b, false);
    const Mat ds3 = mul(mul(ay.b, true, dgy, false), false, ax.a, false);
    for (std::size_t i = 0; i < map_.cells(); ++i)
      out.d_map[t * map_.cells() + i] = ds1.v[i] + ds2.v[i] + ds3.v[i];
  }
  return out;
}

VideoClip warp(const VideoClip& clip, const SaliencyMap& map, double sigma) {
  validate(clip);
  Warp w(sigma);
  return VideoClip::from_tensor(w.forward(clip.to_tensor(), map), clip.fps);
}

double region_mass(const SaliencyMap& m, std::size_t frame_h, std::size_t frame_w,
                   std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  check_map(m);
  if (frame_h % m.height != 0 || frame_w % m.width != 0)
    throw Error("saliency grid must divide the frame size");
  const std::size_t ch = frame_h / m.height, cw = frame_w / m.width;
  auto overlap = [](std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
    const std::size_t lo = std::max(a0, b0), hi = std::min(a1, b1);
    return hi > lo ? hi - lo : std::size_t{0};
  };
  double total = 0.0;
  for (std::size_t t = 0; t < m.frames; ++t)
    for (std::size_t i = 0; i < m.height; ++i)
      for (std::size_t j = 0; j < m.width; ++j) {
        const double frac =
            static_cast<double>(overlap(i * ch, (i + 1) * ch, y, y + h) *
                                overlap(j * cw, (j + 1) * cw, x, x + w)) /
            static_cast<double>(ch * cw);
        total += frac * m.at(t, i, j);
      }
  return total / static_cast<double>(m.frames);
}

void dump_map(const std::filesystem::path& dir, const std::string& clip_id,
              const SaliencyMap& m) {
  check_map(m);
  std::filesystem::create_directories(dir);
  graph::save_checkpoint(dir / (clip_id + ".plck"),
                         {{"saliency", Tensor({m.frames, m.height, m.width}, m.values)}});
  const auto index = dir / "index.csv";
  const bool fresh = !std::filesystem::exists(index);
  std::ofstream os(index, std::ios::app);
  if (!os) throw Error("cannot write " + index.string());
  if (fresh) os << "clip_id,frame,entropy\n";
  os.precision(17);
  for (std::size_t t = 0; t < m.frames; ++t) {
    double e = 0.0;
    for (std::size_t j = 0; j < m.cells(); ++j) {
      const double s = m.values[t * m.cells() + j];
      if (s > 0.0) e -= s * std::log(s);
    }
    os << clip_id << ',' << t << ',' << e << '\n';
  }
}

}  // namespace rppg::saliency
