#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rppg/datasets.hpp"
#include "rppg/estimator.hpp"
#include "rppg/graph.hpp"
#include "rppg/losses.hpp"
#include "rppg/optimizer.hpp"
#include "rppg/saliency.hpp"

namespace rppg::training {

enum class Mode { supervised, contrastive };
enum class SupervisedLoss { mcc, pearson, snr };

std::string to_string(Mode m);
std::string to_string(SupervisedLoss l);
Mode parse_mode(const std::string& s);
SupervisedLoss parse_loss(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::supervised;
  SupervisedLoss loss = SupervisedLoss::mcc;
  std::size_t batch = 4;
  std::size_t epochs = 100;
  double lr = 1e-5;
  double weight_decay = 0.01;
  double window_s = 10.0;
  std::size_t num_views = 4;
  double view_s = 5.0;
  double w_s = 1.0;
  double w_t = 1.0;
  bool saliency = false;
  bool augment = true;
  double stretch_probability = 0.5;
  double o_max_s = 0.0;  // label desynchronisation, uniform in [-o_max, o_max]
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
};

/// Estimator plus optional saliency sampler in front of it.
struct Model {
  estimator::EstimatorConfig config;
  graph::Graph estimator;
  std::optional<graph::Graph> saliency;
  double sigma = 0.0;  // warp width in map cells

  static Model create(const estimator::EstimatorConfig& config, bool with_saliency, Rng& rng);

  /// The clip as seen by the estimator (warped when a sampler is present).
  VideoClip sampled(const VideoClip& clip) const;
  saliency::SaliencyMap saliency_map(const VideoClip& clip) const;
  PpgSignal predict(const VideoClip& clip) const;

  void save(const std::filesystem::path& stem) const;
  static Model load(const std::filesystem::path& stem);
};

struct StepResult {
  losses::LossValue loss;  // mean over used samples
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::vector<std::string> notes;
};

/// Branch signals of one contrastive forward pass.
struct ContrastiveBranches {
  PpgSignal anchor, positive, negative;
  double ratio = 1.0;
};

class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg);

  /// Averages per-sample gradients of -metric(y~, y) (+ saliency terms) and
  /// takes one optimizer step. Samples whose loss is undefined are skipped.
  StepResult step_supervised(const std::vector<datasets::ClipSample>& batch);

  /// MVTL over anchor / positive / negative branches, one optimizer step.
  StepResult step_contrastive(const std::vector<VideoClip>& batch, Rng& rng);

  /// Forward pass of the contrastive pipeline only (no update).
  ContrastiveBranches contrastive_forward(const VideoClip& clip, double ratio) const;

  const AdamW& optimizer() const noexcept { return opt_; }

 private:
  std::vector<Tensor*> all_params();

  Model& model_;
  TrainConfig cfg_;
  AdamW opt_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_metric = 0.0;
  double train_ipr = 0.0;
  double wall_s = 0.0;
  std::size_t skipped = 0;
};

/// Epoch (1-based) with the smallest finite metric; ties go to the earlier one.
std::size_t select_model(const std::vector<EpochRecord>& history);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Full training run. Contrastive runs also train on `val` and never read
/// labels; they select by mean IPR over training windows. Supervised runs
/// select by the validation loss on fixed windows of `val`.
///
/// With a non-empty `run_dir`, writes train_log.csv, config.txt and per-epoch
/// checkpoints. The model ends up holding the selected epoch's weights.
TrainResult train(Model& model, const std::vector<datasets::Recording>& train_set,
                  const std::vector<datasets::Recording>& val_set, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir = {},
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Non-overlapping windows of `window_s` seconds over every recording.
std::vector<datasets::ClipSample> fixed_windows(const std::vector<datasets::Recording>& recs,
                                                double window_s, bool with_labels);

/// Mean IPR of the model's prediction over clips (label-free).
double mean_ipr(const Model& model, const std::vector<datasets::ClipSample>& clips);

}  // namespace rppg::training
