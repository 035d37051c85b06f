#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "rppg/error.hpp"
#include "rppg/evaluation.hpp"

using namespace rppg;
using namespace rppg::evaluation;
using datasets::Recording;
namespace fs = std::filesystem;

namespace {

std::vector<Recording> drifting_set(Rng& rng, std::size_t n = 3, double duration = 40.0) {
  std::vector<Recording> out;
  for (std::size_t i = 0; i < n; ++i) {
    datasets::SynthSpec s;
    s.duration_s = duration;
    s.height = s.width = 8;
    s.region = {4, 0, 4, 8};
    s.base_hr = rng.uniform(60.0, 120.0);
    s.drift = 0.5;
    s.noise_std = 0.3;
    s.subject = "s" + std::to_string(i);
    out.push_back(datasets::synth_generate(s, rng));
  }
  return out;
}

// Ground truth per evaluation window, in evaluation order.
std::vector<double> window_truth(const std::vector<Recording>& recs) {
  std::vector<double> gt;
  for (const auto& r : recs)
    for (std::size_t s = 0; s + 300 <= r.video.frames; s += 300) {
      double m = 0.0;
      for (std::size_t k = s; k < s + 300; ++k) m += r.hr()[k] / 300.0;
      gt.push_back(m);
    }
  return gt;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("hr_correlation") {
  CHECK(hr_correlation({70, 80, 90}, {70, 80, 90}) == 1.0);
  CHECK(hr_correlation({75, 75}, {75, 75}) == 1.0);
  CHECK(hr_correlation({70, 70, 70}, {60, 80, 90}) == 0.0);
  CHECK(hr_correlation({60, 80, 90}, {70, 70, 70}) == 0.0);
  CHECK(hr_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(hr_correlation({1, 2}, {1}), Error);
}

TEST_CASE("an oracle predictor scores perfectly") {
  Rng rng(1);
  const auto recs = drifting_set(rng);
  const auto gt = window_truth(recs);
  std::size_t i = 0;
  const HrEvalResult r = eval_hr([&](const VideoClip&) { return gt[i++]; }, recs);
  REQUIRE(r.windows.size() == 12);
  CHECK(r.rmse < 1e-12);
  CHECK(r.mae < 1e-12);
  CHECK(r.pc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.failures == 0);
  CHECK(r.windows[1].start_s == 10.0);
  CHECK(r.windows[4].subject == "s1");
}

TEST_CASE("a constant predictor has no correlation and rmse equal to the truth spread") {
  Rng rng(2);
  const auto recs = drifting_set(rng);
  const auto gt = window_truth(recs);
  double mean = 0.0, var = 0.0;
  for (double g : gt) mean += g / static_cast<double>(gt.size());
  for (double g : gt) var += (g - mean) * (g - mean) / static_cast<double>(gt.size());
  const HrEvalResult r = eval_hr([&](const VideoClip&) { return mean; }, recs);
  CHECK(r.pc == 0.0);
  CHECK(r.rmse == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
  CHECK(r.rmse >= r.mae);
}

TEST_CASE("a failed window counts the far band edge") {
  Rng rng(3);
  const auto recs = drifting_set(rng, 1, 20.0);
  const auto gt = window_truth(recs);
  std::size_t i = 0;
  const HrEvalResult r = eval_hr(
      [&](const VideoClip&) -> double {
        if (i++ == 0) throw DegenerateSignal("flat");
        return gt[1];
      },
      recs);
  CHECK(r.failures == 1);
  CHECK(r.windows[0].failed);
  const double edge = spectral::kBandHiHz * 60.0;  // truth is below 145 bpm
  CHECK(r.windows[0].hr_pred == edge);
  CHECK(edge == doctest::Approx(250.0));
  CHECK(r.mae == doctest::Approx((edge - gt[0]) / 2.0).epsilon(1e-9));
}

TEST_CASE("strided windows and labels from ppg only") {
  Rng rng(4);
  auto recs = drifting_set(rng, 1, 30.0);
  CHECK(eval_hr([](const VideoClip&) { return 80.0; }, recs, 10.0, 5.0).windows.size() == 5);
  const auto p = recs[0].ppg();
  recs[0].clear_labels();
  recs[0].set_ppg(p);
  const HrEvalResult r = eval_hr([](const VideoClip&) { return 80.0; }, recs);
  CHECK(r.windows.size() == 3);
  CHECK(r.windows[0].hr_gt == spectral::estimate_hr({std::vector<double>(p.begin(), p.begin() + 300), 30.0}));
  recs[0].clear_labels();
  CHECK_THROWS_AS(eval_hr([](const VideoClip&) { return 80.0; }, recs), Error);
}

TEST_CASE("model evaluation is deterministic and writes its csv") {
  Rng rng(5);
  const auto recs = drifting_set(rng, 2, 20.0);
  estimator::EstimatorConfig ec;
  ec.variant = estimator::Variant::spatial_pool;
  ec.height = ec.width = 8;
  const training::Model model = training::Model::create(ec, false, rng);
  const HrEvalResult a = eval_hr(model, recs), b = eval_hr(model, recs);
  CHECK(a.rmse == b.rmse);
  CHECK(a.pc == b.pc);
  CHECK(a.rmse * a.rmse - a.mae * a.mae >= -1e-9);
  // Uniform pooling over a half-pulse frame tracks the tone.
  CHECK(a.mae < 3.0);

  const auto path = fs::temp_directory_path() / "rppg_hr_eval.csv";
  write_hr_eval(path, a);
  const auto l = lines(path);
  REQUIRE(l.size() == 5);
  CHECK(l[0] == "window_start_s,hr_pred,hr_gt");
  CHECK(l[2].rfind("10,", 0) == 0);
  fs::remove(path);
}

TEST_CASE("weight mass of a spatial_pool model") {
  Rng rng(6);
  estimator::EstimatorConfig ec;
  ec.variant = estimator::Variant::spatial_pool;
  ec.height = ec.width = 8;
  training::Model model = training::Model::create(ec, false, rng);
  std::vector<double> w(64, 0.0);
  w[0] = 3.0;
  w[63] = 1.0;
  estimator::set_spatial_weights(model.estimator, w);
  CHECK(model_mass(model, {}, {0, 0, 2, 2}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(model_mass(model, {}, {4, 4, 4, 4}) == doctest::Approx(0.25).epsilon(1e-12));

  training::Model with_map = training::Model::create(ec, true, rng);
  datasets::ClipSample s;
  s.clip = VideoClip(30, 8, 8, 1, 30.0);
  for (double& v : s.clip.pixels) v = rng.normal();
  CHECK(model_mass(with_map, {s}, {0, 0, 8, 8}) == doctest::Approx(1.0).epsilon(1e-12));

  estimator::EstimatorConfig phys;
  phys.height = phys.width = 8;
  const training::Model plain = training::Model::create(phys, false, rng);
  CHECK_THROWS_AS(model_mass(plain, {}, {0, 0, 2, 2}), Error);
}

TEST_CASE("desync bench with no offset reproduces plain training") {
  Rng rng(7);
  const auto train_set = drifting_set(rng, 2, 20.0), test = drifting_set(rng, 1, 20.0);
  estimator::EstimatorConfig ec;
  ec.variant = estimator::Variant::spatial_pool;
  ec.height = ec.width = 8;
  training::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 2;
  cfg.lr = 0.05;
  cfg.seed = 9;
  DesyncSpec spec;
  spec.o_max_s = {0.0, 4.0};
  spec.losses = {training::SupervisedLoss::mcc, training::SupervisedLoss::pearson};
  std::size_t seen = 0;
  const auto rows = desync_bench(train_set, {}, test, spec, cfg, ec,
                                 [&](const DesyncRow&) { ++seen; });
  REQUIRE(rows.size() == 4);
  CHECK(seen == 4);
  CHECK(rows[0].loss == training::SupervisedLoss::mcc);
  CHECK(rows[1].o_max_s == 4.0);

  Rng init(cfg.seed);
  training::Model m = training::Model::create(ec, false, init);
  training::train(m, train_set, {}, cfg);
  const HrEvalResult plain = eval_hr(m, test);
  CHECK(rows[0].rmse == plain.rmse);
  CHECK(rows[0].pc == plain.pc);

  const auto path = fs::temp_directory_path() / "rppg_desync.csv";
  write_desync(path, rows);
  const auto l = lines(path);
  REQUIRE(l.size() == 5);
  CHECK(l[0] == "loss,o_max_s,rmse,mae,pc");
  CHECK(l[3].rfind("pearson,0,", 0) == 0);
  fs::remove(path);
  spec.o_max_s = {-1.0};
  CHECK_THROWS_AS(desync_bench(train_set, {}, test, spec, cfg, ec), Error);
}

TEST_CASE("interpretability bench reports every mode") {
  InterpSetup st;
  st.base.duration_s = 12.0;
  st.base.height = st.base.width = 8;
  st.base.region = {4, 4, 4, 4};
  st.base.nuisance = datasets::Nuisance{{0, 0, 4, 4}, 60.0, 180.0, 1.0};
  st.recordings = 2;
  st.model.variant = estimator::Variant::spatial_pool;
  st.model.height = st.model.width = 8;
  st.contrastive.epochs = st.supervised.epochs = 1;
  st.contrastive.lr = st.supervised.lr = 0.01;
  const auto rows = interpretability_bench(st);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].mode == "contrastive_nuisance_only");
  CHECK(rows[3].mode == "supervised");
  CHECK(rows[6].mode == "contrastive_control");
  CHECK(rows[7].region == "pulse_area");
  CHECK(rows[7].mass == 0.25);
  for (const auto& r : rows) {
    CHECK(r.mass >= 0.0);
    CHECK(r.mass <= 1.0);
  }
  const auto path = fs::temp_directory_path() / "rppg_mass.csv";
  write_saliency_mass(path, rows);
  const auto l = lines(path);
  CHECK(l[0] == "mode,region,mass");
  CHECK(l[2] == "contrastive_nuisance_only,nuisance," + l[2].substr(l[2].rfind(',') + 1));
  fs::remove(path);
  st.base.nuisance.reset();
  CHECK_THROWS_AS(interpretability_bench(st), Error);
}
