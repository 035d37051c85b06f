// Command-line front end: synthetic data, training, evaluation and benches.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rppg/datasets.hpp"
#include "rppg/error.hpp"
#include "rppg/evaluation.hpp"
#include "rppg/training.hpp"

namespace fs = std::filesystem;
using namespace rppg;

namespace {

constexpr int kThresholdFailure = 2;

struct SynthArgs {
  std::size_t count = 4;
  double hr_lo = 60, hr_hi = 120;
  bool nuisance = false;
  datasets::SynthSpec spec;
};

void add_synth_flags(CLI::App* app, SynthArgs& a) {
  app->add_option("--count", a.count, "number of recordings");
  app->add_option("--duration", a.spec.duration_s, "seconds per recording");
  app->add_option("--fps", a.spec.fps);
  app->add_option("--height", a.spec.height);
  app->add_option("--width", a.spec.width);
  app->add_option("--hr-lo", a.hr_lo, "lowest base heart rate (bpm)");
  app->add_option("--hr-hi", a.hr_hi, "highest base heart rate (bpm)");
  app->add_option("--drift", a.spec.drift, "bound on heart-rate slope (bpm/s)");
  app->add_option("--amplitude", a.spec.amplitude);
  app->add_option("--noise-std", a.spec.noise_std);
  app->add_flag("--nuisance", a.nuisance, "add a flashing block at 60-180 bpm");
}

// Pulse block in the centre, nuisance block in the top-left corner.
datasets::SynthSpec layout(SynthArgs a) {
  auto& s = a.spec;
  s.region = {s.width / 2, s.height / 4, s.width / 2 - s.width / 8, s.height / 2};
  if (a.nuisance) s.nuisance = datasets::Nuisance{{0, 0, s.width / 4, s.height / 4}};
  return s;
}

std::vector<datasets::Recording> generate(const SynthArgs& a, std::uint64_t seed) {
  Rng rng(seed);
  const datasets::SynthSpec base = layout(a);
  std::vector<datasets::Recording> out;
  for (std::size_t i = 0; i < a.count; ++i) {
    datasets::SynthSpec s = base;
    s.base_hr = rng.uniform(a.hr_lo, a.hr_hi);
    s.subject = "synth" + std::to_string(i);
    out.push_back(datasets::synth_generate(s, rng));
  }
  return out;
}

struct TrainArgs {
  training::TrainConfig cfg;
  estimator::EstimatorConfig model;
  std::string mode = "supervised", loss = "mcc", variant = "physnet_mini";
  bool no_augment = false;
};

void add_train_flags(CLI::App* app, TrainArgs& a) {
  app->add_option("--mode", a.mode, "supervised | contrastive");
  app->add_option("--loss", a.loss, "mcc | pearson | snr (supervised)");
  app->add_option("--batch", a.cfg.batch);
  app->add_option("--epochs", a.cfg.epochs);
  app->add_option("--lr", a.cfg.lr);
  app->add_option("--weight-decay", a.cfg.weight_decay);
  app->add_option("--window", a.cfg.window_s, "clip length W in seconds");
  app->add_option("--views", a.cfg.num_views);
  app->add_option("--view-len", a.cfg.view_s, "view length in seconds");
  app->add_option("--w-s", a.cfg.w_s, "saliency sparsity weight");
  app->add_option("--w-t", a.cfg.w_t, "saliency temporal weight");
  app->add_flag("--saliency", a.cfg.saliency, "train a saliency sampler in front");
  app->add_flag("--no-augment", a.no_augment, "disable stretch augmentation");
  app->add_option("--variant", a.variant, "physnet_mini | spatial_pool");
  app->add_option("--channels", a.model.channels);
  app->add_option("--blocks", a.model.blocks);
}

void finish_train_args(TrainArgs& a, std::uint64_t seed, const datasets::Recording& sample) {
  a.cfg.mode = training::parse_mode(a.mode);
  a.cfg.loss = training::parse_loss(a.loss);
  a.cfg.augment = !a.no_augment;
  a.cfg.seed = seed;
  a.model.variant = estimator::parse_variant(a.variant);
  a.model.height = sample.video.height;
  a.model.width = sample.video.width;
  a.model.in_channels = sample.video.channels;
}

void print_epoch(const training::EpochRecord& e) {
  std::printf("epoch %3zu  loss %+.5f  metric %+.5f  ipr %.4f  %.1fs\n", e.epoch, e.train_loss,
              e.val_metric, e.train_ipr, e.wall_s);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rPPG estimation toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  bool check = false;
  app.add_flag("--check", check, "exit with code 2 when an acceptance threshold fails");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic pulse recordings");
  SynthArgs synth_args;
  std::string synth_out;
  add_synth_flags(synth, synth_args);
  synth->add_option("--out", synth_out, "dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train an estimator");
  TrainArgs train_args;
  std::string train_data, val_data, run_dir;
  add_train_flags(train, train_args);
  train->add_option("--data", train_data, "training dataset directory")->required();
  train->add_option("--val", val_data, "validation dataset directory");
  train->add_option("--out", run_dir, "run directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "windowed heart-rate evaluation");
  std::string model_stem, eval_data, eval_out;
  double eval_window = 10, eval_stride = 10, max_mae = 3.0;
  eval->add_option("--model", model_stem, "checkpoint stem (e.g. run/best)")->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--out", eval_out, "hr_eval.csv path");
  eval->add_option("--window", eval_window);
  eval->add_option("--stride", eval_stride);
  eval->add_option("--max-mae", max_mae, "threshold for --check");

  // desync-bench
  auto* desync = app.add_subcommand("desync-bench", "label desynchronisation benchmark");
  TrainArgs desync_args;
  desync_args.variant = "spatial_pool";
  std::string desync_data, desync_val, desync_test, desync_out = "desync.csv";
  std::vector<double> o_max{0, 2, 4, 8, 16};
  std::vector<std::string> desync_losses{"pearson", "snr", "mcc"};
  add_train_flags(desync, desync_args);
  desync->add_option("--data", desync_data)->required();
  desync->add_option("--val", desync_val);
  desync->add_option("--test", desync_test)->required();
  desync->add_option("--o-max", o_max, "offset bounds in seconds");
  desync->add_option("--losses", desync_losses);
  desync->add_option("--out", desync_out);

  // interp-bench
  auto* interp = app.add_subcommand("interp-bench", "saliency mass on a nuisance benchmark");
  SynthArgs interp_synth;
  interp_synth.nuisance = true;
  TrainArgs interp_args;
  interp_args.variant = "spatial_pool";
  std::string interp_out = "saliency_mass.csv";
  add_synth_flags(interp, interp_synth);
  add_train_flags(interp, interp_args);
  interp->add_option("--out", interp_out);

  // audit-hr-stability
  auto* audit = app.add_subcommand("audit-hr-stability", "heart-rate variation quantiles");
  std::string audit_data, audit_out;
  double audit_limit = 2.5;
  audit->add_option("--data", audit_data)->required();
  audit->add_option("--out", audit_out, "CSV path");
  audit->add_option("--max-median", audit_limit, "10 s median threshold for --check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto recs = generate(synth_args, seed);
      datasets::save_dataset(synth_out, recs);
      std::printf("wrote %zu recordings to %s\n", recs.size(), synth_out.c_str());
      return 0;
    }

    if (*train) {
      const auto train_set = datasets::load_dataset(train_data);
      std::vector<datasets::Recording> val_set;
      if (!val_data.empty()) val_set = datasets::load_dataset(val_data);
      finish_train_args(train_args, seed, train_set.front());
      Rng init(seed);
      auto model = training::Model::create(train_args.model, train_args.cfg.saliency, init);
      const auto res =
          training::train(model, train_set, val_set, train_args.cfg, run_dir, print_epoch);
      std::printf("selected epoch %zu; model saved to %s\n", res.best_epoch,
                  (fs::path(run_dir) / "best").c_str());
      return 0;
    }

    if (*eval) {
      const auto model = training::Model::load(model_stem);
      const auto data = datasets::load_dataset(eval_data);
      const auto r = evaluation::eval_hr(model, data, eval_window, eval_stride);
      if (!eval_out.empty()) evaluation::write_hr_eval(eval_out, r);
      std::printf("windows %zu  rmse %.3f  mae %.3f  pc %.3f  failures %zu\n", r.windows.size(),
                  r.rmse, r.mae, r.pc, r.failures);
      if (check && !(r.mae < max_mae)) return kThresholdFailure;
      return 0;
    }

    if (*desync) {
      const auto tr = datasets::load_dataset(desync_data);
      const auto te = datasets::load_dataset(desync_test);
      std::vector<datasets::Recording> va;
      if (!desync_val.empty()) va = datasets::load_dataset(desync_val);
      finish_train_args(desync_args, seed, tr.front());
      evaluation::DesyncSpec spec;
      spec.o_max_s = o_max;
      spec.losses.clear();
      for (const auto& l : desync_losses) spec.losses.push_back(training::parse_loss(l));
      const auto rows = evaluation::desync_bench(
          tr, va, te, spec, desync_args.cfg, desync_args.model, [](const evaluation::DesyncRow& r) {
            std::printf("%-8s o_max %5.1f  rmse %.3f  mae %.3f  pc %.3f\n",
                        training::to_string(r.loss).c_str(), r.o_max_s, r.rmse, r.mae, r.pc);
            std::fflush(stdout);
          });
      evaluation::write_desync(desync_out, rows);
      if (check) {
        auto rmse = [&](training::SupervisedLoss l, double o) {
          for (const auto& r : rows)
            if (r.loss == l && r.o_max_s == o) return r.rmse;
          return std::nan("");
        };
        const double mcc_lo = rmse(training::SupervisedLoss::mcc, o_max.front());
        const double mcc_hi = rmse(training::SupervisedLoss::mcc, o_max.back());
        if (std::isfinite(mcc_lo) && std::isfinite(mcc_hi) && !(mcc_hi <= mcc_lo + 2.0))
          return kThresholdFailure;
      }
      return 0;
    }

    if (*interp) {
      evaluation::InterpSetup st;
      st.base = layout(interp_synth);
      st.recordings = interp_synth.count;
      st.hr_lo = interp_synth.hr_lo;
      st.hr_hi = interp_synth.hr_hi;
      st.seed = seed;
      datasets::Recording shape_probe;
      shape_probe.video = VideoClip(1, st.base.height, st.base.width, st.base.channels, 30);
      finish_train_args(interp_args, seed, shape_probe);
      st.model = interp_args.model;
      st.saliency = interp_args.cfg.saliency;
      st.contrastive = interp_args.cfg;
      st.supervised = interp_args.cfg;
      const auto rows = evaluation::interpretability_bench(st);
      evaluation::write_saliency_mass(interp_out, rows);
      double nuis_only = 0, sup_pulse = 0, sup_nuis = 0;
      for (const auto& r : rows) {
        std::printf("%-26s %-10s %.4f\n", r.mode.c_str(), r.region.c_str(), r.mass);
        if (r.mode == "contrastive_nuisance_only" && r.region == "nuisance") nuis_only = r.mass;
        if (r.mode == "supervised" && r.region == "pulse") sup_pulse = r.mass;
        if (r.mode == "supervised" && r.region == "nuisance") sup_nuis = r.mass;
      }
      if (check && !(nuis_only > 0.5 && sup_pulse > sup_nuis)) return kThresholdFailure;
      return 0;
    }

    if (*audit) {
      const auto data = datasets::load_dataset(audit_data);
      const auto rows = datasets::audit_hr_stability(data);
      std::FILE* csv = audit_out.empty() ? nullptr : std::fopen(audit_out.c_str(), "w");
      if (csv) std::fprintf(csv, "delta_s,count,q05,q50,q95\n");
      double median10 = std::nan("");
      for (const auto& r : rows) {
        std::printf("delta %5.1fs  n %7zu  q05 %.3f  q50 %.3f  q95 %.3f\n", r.delta_s, r.count,
                    r.q05, r.q50, r.q95);
        if (csv) std::fprintf(csv, "%g,%zu,%.6f,%.6f,%.6f\n", r.delta_s, r.count, r.q05, r.q50, r.q95);
        if (r.delta_s == 10.0) median10 = r.q50;
      }
      if (csv) std::fclose(csv);
      if (check && !(median10 <= audit_limit)) return kThresholdFailure;
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
