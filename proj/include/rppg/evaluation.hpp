#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rppg/datasets.hpp"
#include "rppg/training.hpp"

namespace rppg::evaluation {

struct WindowResult {
  std::string subject;
  double start_s = 0.0;
  double hr_pred = 0.0;
  double hr_gt = 0.0;
  bool failed = false;  // no in-band prediction; hr_pred is the far band edge
};

struct HrEvalResult {
  double rmse = 0.0;
  double mae = 0.0;
  double pc = 0.0;
  std::size_t failures = 0;
  std::vector<WindowResult> windows;
};

/// Heart rate (bpm) for one window; throws DegenerateSignal when it has none.
using HrPredictor = std::function<double(const VideoClip&)>;

/// Windows of `window_s` every `stride_s` seconds. Ground truth is the mean
/// per-frame rate (or the rate of the ground-truth ppg when absent).
HrEvalResult eval_hr(const HrPredictor& predict, const std::vector<datasets::Recording>& recs,
                     double window_s = 10.0, double stride_s = 10.0);
HrEvalResult eval_hr(const training::Model& model, const std::vector<datasets::Recording>& recs,
                     double window_s = 10.0, double stride_s = 10.0);

/// Pearson correlation with the degenerate cases pinned: 1 when every
/// prediction is exact, 0 when either side is constant otherwise.
double hr_correlation(const std::vector<double>& pred, const std::vector<double>& gt);

void write_hr_eval(const std::filesystem::path& path, const HrEvalResult& r);

struct DesyncSpec {
  std::vector<double> o_max_s{0, 2, 4, 8, 16};
  std::vector<training::SupervisedLoss> losses{training::SupervisedLoss::pearson,
                                               training::SupervisedLoss::snr,
                                               training::SupervisedLoss::mcc};
};

struct DesyncRow {
  training::SupervisedLoss loss;
  double o_max_s = 0.0;
  double rmse = 0.0, mae = 0.0, pc = 0.0;
};

/// Supervised runs per loss and offset bound, evaluated on `test`. Every run
/// starts from the same seed.
std::vector<DesyncRow> desync_bench(const std::vector<datasets::Recording>& train,
                                    const std::vector<datasets::Recording>& val,
                                    const std::vector<datasets::Recording>& test,
                                    const DesyncSpec& spec, const training::TrainConfig& cfg,
                                    const estimator::EstimatorConfig& model_cfg,
                                    const std::function<void(const DesyncRow&)>& on_row = {});

void write_desync(const std::filesystem::path& path, const std::vector<DesyncRow>& rows);

/// Saliency mass (or spatial_pool weight mass) inside a pixel rectangle,
/// averaged over the given clips.
double model_mass(const training::Model& model, const std::vector<datasets::ClipSample>& clips,
                  const datasets::Rect& region);

struct InterpSetup {
  datasets::SynthSpec base;  // must carry a nuisance block
  std::size_t recordings = 12;
  double hr_lo = 60.0, hr_hi = 120.0;
  training::TrainConfig contrastive;
  training::TrainConfig supervised;
  estimator::EstimatorConfig model;
  bool saliency = false;
  std::uint64_t seed = 0;
};

struct MassRow {
  std::string mode;
  std::string region;
  double mass = 0.0;
};

/// Three runs: contrastive on nuisance-only video (pulse amplitude 0),
/// supervised on pulse + nuisance, contrastive control without nuisance.
/// Rows report mass in "pulse", "nuisance" and the "pulse_area" baseline.
std::vector<MassRow> interpretability_bench(const InterpSetup& setup);

void write_saliency_mass(const std::filesystem::path& path, const std::vector<MassRow>& rows);

}  // namespace rppg::evaluation
