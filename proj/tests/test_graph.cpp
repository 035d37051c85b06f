#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rppg/error.hpp"
#include "rppg/graph.hpp"

using namespace rppg;
using namespace rppg::graph;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Graph single(const Shape& in, const LayerSpec& spec, std::uint64_t seed = 3) {
  Graph g(in, {spec});
  Rng rng(seed);
  g.init(rng);
  return g;
}

// Perturbs learned scalars/affines away from their identity init so that
// gradient checks exercise them.
void jitter(Graph& g, Rng& rng) {
  for (Tensor* p : g.param_ptrs())
    for (double& v : p->data()) v += rng.uniform(-0.3, 0.3);
}

}  // namespace

TEST_CASE("elu matches its definition") {
  Graph g = single({1, 3, 1, 1}, LayerSpec::elu());
  const Tensor y = g.forward(Tensor({1, 3, 1, 1}, {-1.0, 0.0, 1.0}));
  CHECK(y[0] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 1.0);
}

TEST_CASE("avgpool of a constant keeps the constant and halves H and W") {
  Graph g = single({2, 3, 4, 6}, LayerSpec::avgpool3d({1, 2, 2}));
  const Tensor y = g.forward(Tensor({2, 3, 4, 6}, 2.5));
  CHECK(y.shape() == Shape{2, 3, 2, 3});
  for (double v : y.data()) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("1x1x1 conv with unit weight and zero bias is the identity") {
  Graph g = single({1, 4, 3, 3}, LayerSpec::conv3d(1, 1, {1, 1, 1}));
  g.param("0.conv3d.weight").fill(1.0);
  g.param("0.conv3d.bias").fill(0.0);
  Rng rng(1);
  const Tensor x = random_tensor({1, 4, 3, 3}, rng);
  const Tensor y = g.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("scale gradient is the sum of grad times input") {
  Graph g = single({1, 5, 1, 1}, LayerSpec::scale());
  g.param("0.scale.a")[0] = 1.7;
  Rng rng(2);
  const Tensor x = random_tensor({1, 5, 1, 1}, rng);
  const Tensor gout = random_tensor({1, 5, 1, 1}, rng);
  g.forward(x);
  const Gradients grads = g.backward(gout);
  CHECK(grads.param("0.scale.a")[0] == doctest::Approx(dot(gout, x)).epsilon(1e-14));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(grads.input[i] == doctest::Approx(1.7 * gout[i]).epsilon(1e-14));
}

TEST_CASE("elu passes the gradient through unchanged for positive inputs") {
  Graph g = single({1, 4, 1, 1}, LayerSpec::elu());
  g.forward(Tensor({1, 4, 1, 1}, {0.1, 0.5, 2.0, 7.0}));
  const Tensor gout({1, 4, 1, 1}, {0.3, -1.0, 2.0, 4.0});
  const Gradients grads = g.backward(gout);
  for (std::size_t i = 0; i < 4; ++i) CHECK(grads.input[i] == gout[i]);
}

TEST_CASE("backward before forward is an error") {
  Graph g = single({1, 2, 1, 1}, LayerSpec::scale());
  CHECK_THROWS_AS(g.backward(Tensor({1, 2, 1, 1})), Error);
}

TEST_CASE("output gradient with the wrong shape is rejected") {
  Graph g = single({1, 2, 1, 1}, LayerSpec::scale());
  g.forward(Tensor({1, 2, 1, 1}, 1.0));
  CHECK_THROWS_AS(g.backward(Tensor({1, 3, 1, 1})), Error);
}

TEST_CASE("shape mismatches name the offending layer") {
  SUBCASE("input does not match the declared shape") {
    Graph g = single({3, 0, 8, 8}, LayerSpec::elu());
    try {
      g.forward(Tensor({2, 4, 8, 8}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.layer() == 0);
    }
  }
  SUBCASE("inconsistent channel counts inside the chain") {
    try {
      Graph g({1, 0, 8, 8}, {LayerSpec::conv3d(1, 4, {1, 3, 3}, {}, {0, 1, 1}), LayerSpec::elu(),
                             LayerSpec::conv3d(5, 2, {1, 1, 1})});
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.layer() == 2);
    }
  }
  SUBCASE("pool that does not tile the input") {
    Graph g({1, 0, 0, 0}, {LayerSpec::elu(), LayerSpec::avgpool3d({2, 2, 2})});
    try {
      g.forward(Tensor({1, 5, 4, 4}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.layer() == 1);
    }
  }
}

TEST_CASE("random two-layer graphs match finite differences") {
  Rng rng(11);
  const std::vector<std::vector<LayerSpec>> graphs{
      {LayerSpec::conv3d(2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}), LayerSpec::elu()},
      {LayerSpec::conv3d(2, 2, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}), LayerSpec::channel_affine_norm(2)},
      {LayerSpec::avgpool3d({2, 2, 2}), LayerSpec::upsample_temporal_linear(2)},
      {LayerSpec::scale(), LayerSpec::softmax_spatial()},
      {LayerSpec::add(), LayerSpec::adaptive_avgpool_spatial()},
      {LayerSpec::elu(), LayerSpec::weighted_spatial_pool(4, 4)},
  };
  for (const auto& specs : graphs) {
    Graph g({2, 4, 4, 4}, specs);
    g.init(rng);
    jitter(g, rng);
    const Tensor x = random_tensor({2, 4, 4, 4}, rng);
    const GradCheckReport r = grad_check(g, x, 1e-4, rng.next());
    CAPTURE(kind_name(g.layer(0).kind()));
    CAPTURE(kind_name(g.layer(1).kind()));
    CHECK(r.pass);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check examples") {
  Rng rng(5);
  SUBCASE("conv3d 3x3x3 at 1e-4") {
    Graph g = single({2, 5, 5, 5}, LayerSpec::conv3d(2, 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
    CHECK(grad_check(g, random_tensor({2, 5, 5, 5}, rng), 1e-4).pass);
  }
  SUBCASE("upsample is exact at 1e-6") {
    Graph g = single({2, 5, 2, 3}, LayerSpec::upsample_temporal_linear(2));
    CHECK(grad_check(g, random_tensor({2, 5, 2, 3}, rng), 1e-6).pass);
  }
  SUBCASE("elu restricted to x > 0.1 at 1e-6") {
    Graph g({1, 6, 2, 2}, {LayerSpec::scale(), LayerSpec::elu()});
    g.init(rng);
    CHECK(grad_check(g, random_tensor({1, 6, 2, 2}, rng, 0.1, 2.0), 1e-6).pass);
  }
}

TEST_CASE("grad_check refuses oversized graphs and non-finite forwards") {
  Graph big = single({1, 1, 8, 8}, LayerSpec::conv3d(1, 400, {1, 5, 5}, {}, {0, 2, 2}));
  CHECK(big.param_count() > 10000);
  CHECK_THROWS_AS(grad_check(big, Tensor({1, 1, 8, 8}), 1e-4), Error);

  Graph g = single({1, 2, 1, 1}, LayerSpec::scale());
  Tensor x({1, 2, 1, 1}, 1.0);
  x[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(grad_check(g, x, 1e-4), Error);
}

TEST_CASE("graphs without elu or softmax are linear in their input") {
  Rng rng(8);
  Graph g({2, 8, 4, 4},
          {LayerSpec::conv3d(2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}),
           LayerSpec::avgpool3d({2, 2, 2}), LayerSpec::upsample_temporal_linear(2),
           LayerSpec::scale(), LayerSpec::conv3d(3, 1, {1, 1, 1}),
           LayerSpec::adaptive_avgpool_spatial()});
  g.init(rng);
  // Biases make the map affine; remove them to test pure linearity.
  g.param("0.conv3d.bias").fill(0.0);
  g.param("4.conv3d.bias").fill(0.0);
  const Tensor x = random_tensor({2, 8, 4, 4}, rng), y = random_tensor({2, 8, 4, 4}, rng);
  const double a = 0.7, b = -1.9;
  const Tensor lhs = g.evaluate(x * a + y * b);
  const Tensor rhs = g.evaluate(x) * a + g.evaluate(y) * b;
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) < 1e-10);
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  auto run = [] {
    Rng rng(42);
    Graph g({1, 4, 4, 4}, {LayerSpec::conv3d(1, 2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}),
                           LayerSpec::channel_affine_norm(2), LayerSpec::elu()});
    g.init(rng);
    const Tensor x = random_tensor({1, 4, 4, 4}, rng);
    const Tensor y = g.forward(x);
    const Gradients gr = g.backward(y);
    return std::pair{y.values(), gr.param("0.conv3d.weight").values()};
  };
  CHECK(run() == run());
}

TEST_CASE("channel norm standardises each channel of an item") {
  Rng rng(9);
  Graph g = single({3, 4, 5, 5}, LayerSpec::channel_affine_norm(3));
  const Tensor y = g.forward(random_tensor({3, 4, 5, 5}, rng, -3.0, 5.0));
  const std::size_t n = 4 * 5 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += y[c * n + i] / n;
    for (std::size_t i = 0; i < n; ++i) v += (y[c * n + i] - m) * (y[c * n + i] - m) / n;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("spatial softmax sums to one per channel and frame") {
  Rng rng(10);
  Graph g = single({2, 3, 4, 4}, LayerSpec::softmax_spatial());
  const Tensor y = g.forward(random_tensor({2, 3, 4, 4}, rng, -5.0, 5.0));
  for (std::size_t s = 0; s < 6; ++s) {
    double total = 0.0;
    for (std::size_t j = 0; j < 16; ++j) total += y[s * 16 + j];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("upsample doubles the temporal length with replicated ends") {
  Graph g = single({1, 3, 1, 1}, LayerSpec::upsample_temporal_linear(2));
  const Tensor y = g.forward(Tensor({1, 3, 1, 1}, {0.0, 1.0, 2.0}));
  REQUIRE(y.shape() == Shape{1, 6, 1, 1});
  // Output sample i sits at input position (i + 0.5) / 2 - 0.5.
  const std::vector<double> expect{0.0, 0.25, 0.75, 1.25, 1.75, 2.0};
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("wildcard extents accept any length") {
  Graph g = single({1, 0, 2, 2}, LayerSpec::adaptive_avgpool_spatial());
  CHECK(g.forward(Tensor({1, 7, 2, 2}, 1.0)).shape() == Shape{1, 7, 1, 1});
  CHECK(g.forward(Tensor({1, 12, 2, 2}, 1.0)).shape() == Shape{1, 12, 1, 1});
}

TEST_CASE("caller-owned tapes accumulate gradients over several passes") {
  Rng rng(12);
  Graph g({1, 0, 3, 3}, {LayerSpec::conv3d(1, 2, {1, 3, 3}, {}, {0, 1, 1}),
                         LayerSpec::adaptive_avgpool_spatial()});
  g.init(rng);
  const Tensor a = random_tensor({1, 4, 3, 3}, rng), b = random_tensor({1, 6, 3, 3}, rng);
  Tape ta, tb;
  const Tensor ya = g.forward(a, ta), yb = g.forward(b, tb);
  std::vector<Tensor> acc;
  g.backward(ta, Tensor(ya.shape(), 1.0), acc);
  g.backward(tb, Tensor(yb.shape(), 1.0), acc);

  std::vector<Tensor> sa, sb;
  g.backward(ta, Tensor(ya.shape(), 1.0), sa);
  g.backward(tb, Tensor(yb.shape(), 1.0), sb);
  for (std::size_t p = 0; p < acc.size(); ++p)
    for (std::size_t i = 0; i < acc[p].size(); ++i)
      CHECK(acc[p][i] == doctest::Approx(sa[p][i] + sb[p][i]).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip and malformed files") {
  const auto dir = std::filesystem::temp_directory_path() / "rppg_test_graph";
  std::filesystem::create_directories(dir);
  Rng rng(13);
  Graph g({1, 0, 4, 4}, {LayerSpec::conv3d(1, 2, {1, 3, 3}, {}, {0, 1, 1}),
                         LayerSpec::channel_affine_norm(2), LayerSpec::scale()});
  g.init(rng);
  jitter(g, rng);
  const auto path = dir / "model.plck";
  save_checkpoint(path, g.named_params());

  Graph h({1, 0, 4, 4}, {LayerSpec::conv3d(1, 2, {1, 3, 3}, {}, {0, 1, 1}),
                         LayerSpec::channel_affine_norm(2), LayerSpec::scale()});
  h.load_params(load_checkpoint(path));
  const auto a = g.param_values(), b = h.param_values();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values() == b[i].values());

  {
    std::ofstream os(dir / "bad.plck", std::ios::binary);
    os << "NOPE1234";
  }
  try {
    load_checkpoint(dir / "bad.plck");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("PLCK") != std::string::npos);
  }

  const auto size = std::filesystem::file_size(path);
  std::filesystem::copy_file(path, dir / "short.plck",
                             std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(dir / "short.plck", size - 5);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.plck"), FormatError);

  Graph other({1, 0, 4, 4}, {LayerSpec::conv3d(1, 3, {1, 3, 3}, {}, {0, 1, 1})});
  CHECK_THROWS_AS(other.load_params(load_checkpoint(path)), Error);
  std::filesystem::remove_all(dir);
}
