#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rppg/error.hpp"
#include "rppg/resample.hpp"

using namespace rppg;
using namespace rppg::resample;

namespace {

double inner(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("ratio one is the identity") {
  Rng rng(1);
  const PpgSignal x{oracle::noise(97, rng), 30.0};
  CHECK(resample_signal(x, 1.0).samples == x.samples);
}

TEST_CASE("lengths round to nearest") {
  CHECK(resampled_length(300, 0.8) == 240);
  CHECK(resampled_length(300, 0.66) == 198);
  CHECK(resampled_length(10, 1.25) == 13);
  CHECK_THROWS_AS(resampled_length(300, 0.0), Error);
  CHECK_THROWS_AS(resampled_length(300, -1.0), Error);
  CHECK_THROWS_AS(resampled_length(2, 0.5), Error);
}

TEST_CASE("compressing a 72 bpm tone by 0.8 reads 90 bpm") {
  const PpgSignal x{oracle::tone(300, 30.0, 72.0), 30.0};
  const PpgSignal y = resample_signal(x, 0.8);
  REQUIRE(y.size() == 240);
  const double bin = 60.0 * 30.0 / (spectral::kHrPadFactor * 240.0);
  CHECK(std::abs(spectral::estimate_hr(y) - 90.0) <= bin);
}

namespace {

double round_trip_deviation(const std::vector<double>& x, double r) {
  const auto y = resample_signal(resample_signal({x, 30.0}, r), 1.0 / r).samples;
  // The last source sample is replicated, so compare away from the tail.
  const std::size_t n = std::min(x.size(), y.size()) - 4;
  double dev = 0.0;
  for (std::size_t i = 0; i < n; ++i) dev = std::max(dev, std::abs(x[i] - y[i]));
  return dev;
}

}  // namespace

TEST_CASE("round trip of a 60 bpm tone deviates by less than 0.02") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const double r = draw_ratio(rng);
    const auto x = oracle::tone(300, 30.0, 60.0, rng.uniform(0.0, 6.28));
    CHECK(round_trip_deviation(x, r) < 0.02);
  }
}

TEST_CASE("round trip deviation stays under the linear interpolation bound") {
  // A unit tone sampled every h frames interpolates to within (w h)^2 / 8;
  // the two passes use spacings 1 and 1/r.
  Rng rng(6);
  for (int t = 0; t < 40; ++t) {
    const double r = draw_ratio(rng), bpm = rng.uniform(40.0, 250.0);
    const double w = 2.0 * M_PI * bpm / 60.0 / 30.0;
    const double bound = w * w / 8.0 * (1.0 + 1.0 / (r * r));
    CHECK(round_trip_deviation(oracle::tone(300, 30.0, bpm, rng.uniform(0.0, 6.28)), r) <= bound);
  }
}

TEST_CASE("video resampling scales every pixel trace") {
  VideoClip clip(300, 3, 4, 2, 30.0);
  const auto tone = oracle::tone(300, 30.0, 72.0);
  for (std::size_t t = 0; t < clip.frames; ++t)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        for (std::size_t c = 0; c < 2; ++c)
          clip.at(t, y, x, c) = 100.0 + static_cast<double>(y + x + c) + tone[t];
  const VideoClip out = resample_video(clip, 0.8);
  CHECK(out.frames == 240);
  CHECK(out.height == 3);
  CHECK(out.width == 4);
  CHECK(out.channels == 2);
  CHECK(out.fps == 30.0);
  const auto ref = resample_signal({clip.trace(1, 2, 1), 30.0}, 0.8).samples;
  CHECK(out.trace(1, 2, 1) == ref);
  const double bin = 60.0 * 30.0 / (spectral::kHrPadFactor * 240.0);
  CHECK(std::abs(spectral::estimate_hr({out.trace(2, 3, 0), 30.0}) - 90.0) <= bin);
}

TEST_CASE("tensor resampling matches the clip path") {
  Rng rng(3);
  VideoClip clip(40, 2, 3, 2, 30.0);
  for (double& v : clip.pixels) v = rng.normal();
  const Tensor a = resample_time(clip.to_tensor(), 0.7);
  const Tensor b = resample_video(clip, 0.7).to_tensor();
  CHECK(a.shape() == b.shape());
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));
}

TEST_CASE("adjoints satisfy the inner-product identity") {
  Rng rng(4);
  for (double r : {0.66, 0.73, 0.8, 1.0, 1.3}) {
    const auto x = oracle::noise(57, rng);
    const PpgSignal y = resample_signal({x, 30.0}, r);
    const auto g = oracle::noise(y.size(), rng);
    CHECK(inner(y.samples, g) ==
          doctest::Approx(inner(x, resample_signal_adjoint(g, x.size(), r))).epsilon(1e-12));

    Tensor xt({2, 23, 3, 2});
    for (double& v : xt.data()) v = rng.normal();
    const Tensor yt = resample_time(xt, r);
    Tensor gt(yt.shape());
    for (double& v : gt.data()) v = rng.normal();
    CHECK(dot(yt, gt) == doctest::Approx(dot(xt, resample_time_adjoint(gt, 23, r))).epsilon(1e-12));
  }
}

TEST_CASE("draw_ratio covers the contrastive range") {
  Rng rng(5);
  double lo = 1.0, hi = 0.0, mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double r = draw_ratio(rng);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    mean += r / n;
  }
  CHECK(lo >= kContrastiveLo);
  CHECK(hi <= kContrastiveHi);
  CHECK(lo < kContrastiveLo + 0.001);
  CHECK(hi > kContrastiveHi - 0.001);
  CHECK(mean == doctest::Approx(0.73).epsilon(0.005));

  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) CHECK(draw_ratio(a) == draw_ratio(b));
}
