#include "rppg/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "rppg/error.hpp"
#include "rppg/resample.hpp"

namespace rppg::training {

namespace fs = std::filesystem;
using datasets::ClipSample;
using datasets::Recording;

std::string to_string(Mode m) { return m == Mode::supervised ? "supervised" : "contrastive"; }

std::string to_string(SupervisedLoss l) {
  switch (l) {
    case SupervisedLoss::mcc: return "mcc";
    case SupervisedLoss::pearson: return "pearson";
    default: return "snr";
  }
}

Mode parse_mode(const std::string& s) {
  if (s == "supervised") return Mode::supervised;
  if (s == "contrastive") return Mode::contrastive;
  throw Error("unknown training mode '" + s + "'");
}

SupervisedLoss parse_loss(const std::string& s) {
  if (s == "mcc") return SupervisedLoss::mcc;
  if (s == "pearson" || s == "pc") return SupervisedLoss::pearson;
  if (s == "snr") return SupervisedLoss::snr;
  throw Error("unknown supervised loss '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch < 1) throw Error("batch must be >= 1");
  if (epochs < 1) throw Error("epochs must be >= 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw Error("lr and weight_decay must be >= 0");
  if (!(window_s > 0.0)) throw Error("window must be positive");
  if (num_views < 1) throw Error("need at least one view");
  if (!(view_s > 0.0) || view_s > window_s) throw Error("view length must be in (0, W]");
  if (w_s < 0.0 || w_t < 0.0) throw Error("saliency weights must be >= 0");
  if (o_max_s < 0.0) throw Error("o_max must be >= 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "mode=" << to_string(mode) << "\nloss=" << to_string(loss) << "\nbatch=" << batch
     << "\nepochs=" << epochs << "\nlr=" << lr << "\nweight_decay=" << weight_decay
     << "\nwindow_s=" << window_s << "\nnum_views=" << num_views << "\nview_s=" << view_s
     << "\nw_s=" << w_s << "\nw_t=" << w_t << "\nsaliency=" << saliency
     << "\naugment=" << augment << "\nstretch_probability=" << stretch_probability
     << "\no_max_s=" << o_max_s << "\nseed=" << seed << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const estimator::EstimatorConfig& config, bool with_saliency, Rng& rng) {
  Model m{config, estimator::build(config, rng), std::nullopt, 0.0};
  if (with_saliency) {
    m.saliency = saliency::build_net({config.in_channels, config.height, config.width, 4}, rng);
    m.sigma = 0.25 * static_cast<double>(config.width / 4);
  }
  return m;
}

saliency::SaliencyMap Model::saliency_map(const VideoClip& clip) const {
  if (!saliency) throw Error("model has no saliency sampler");
  return saliency::compute_map(*saliency, clip);
}

VideoClip Model::sampled(const VideoClip& clip) const {
  if (!saliency) return clip;
  return saliency::warp(clip, saliency_map(clip), sigma);
}

PpgSignal Model::predict(const VideoClip& clip) const {
  return estimator::predict_ppg(estimator, sampled(clip));
}

void Model::save(const fs::path& stem) const {
  estimator::save_model(stem, estimator, config);
  if (saliency) {
    graph::save_checkpoint(stem.string() + ".saliency.plck", saliency->named_params());
    std::ofstream os(stem.string() + ".saliency.cfg");
    os.precision(17);
    os << "sigma=" << sigma << "\n";
  }
}

Model Model::load(const fs::path& stem) {
  auto loaded = estimator::load_model(stem);
  Model m{loaded.config, std::move(loaded.model), std::nullopt, 0.0};
  const fs::path sal = stem.string() + ".saliency.plck";
  if (fs::exists(sal)) {
    Rng rng(0);
    m.saliency = saliency::build_net(
        {m.config.in_channels, m.config.height, m.config.width, 4}, rng);
    m.saliency->load_params(graph::load_checkpoint(sal));
    m.sigma = 0.25 * static_cast<double>(m.config.width / 4);
    std::ifstream is(stem.string() + ".saliency.cfg");
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("sigma=", 0) == 0) m.sigma = std::stod(line.substr(6));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Steps

namespace {

// Input side of one pass: the clip tensor, optionally through the sampler.
struct InputPass {
  Tensor xs;
  graph::Tape sal_tape;
  saliency::SaliencyMap map;
  std::optional<saliency::Warp> warp;
};

InputPass input_forward(const Model& m, const VideoClip& clip) {
  validate(clip);
  InputPass p;
  Tensor x = clip.to_tensor();
  if (!m.saliency) {
    p.xs = std::move(x);
    return p;
  }
  p.map = saliency::SaliencyMap::from_tensor(m.saliency->forward(x, p.sal_tape));
  p.warp.emplace(m.sigma);
  p.xs = p.warp->forward(x, p.map);
  return p;
}

// Returns the saliency regulariser value; accumulates sampler gradients.
double input_backward(const Model& m, InputPass& p, const Tensor& d_xs,
                      const saliency::SaliencyWeights& w, std::vector<Tensor>& sal_grads) {
  if (!m.saliency) return 0.0;
  auto g = p.warp->backward(d_xs);
  const auto reg = saliency::saliency_grad(p.map, w);
  for (std::size_t i = 0; i < g.d_map.size(); ++i) g.d_map[i] += reg.d[i];
  m.saliency->backward(p.sal_tape, Tensor(p.map.to_tensor().shape(), std::move(g.d_map)),
                       sal_grads);
  return reg.value;
}

Tensor signal_grad(std::vector<double> d) {
  const std::size_t n = d.size();
  return Tensor({1, n, 1, 1}, std::move(d));
}

std::vector<double> padded(const std::vector<double>& v, std::size_t n) {
  std::vector<double> out(n, 0.0);
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

PpgSignal truncated(const PpgSignal& s, std::size_t n) {
  return {std::vector<double>(s.samples.begin(), s.samples.begin() + static_cast<long>(n)), s.fs};
}

// Crops a C x T x H x W tensor to its first `t` frames.
Tensor first_frames(const Tensor& x, std::size_t t) {
  const std::size_t c = x.extent(0), n = x.extent(1), plane = x.extent(2) * x.extent(3);
  Tensor out({c, t, x.extent(2), x.extent(3)});
  for (std::size_t ch = 0; ch < c; ++ch)
    std::copy_n(x.data().begin() + static_cast<long>(ch * n * plane), t * plane,
                out.data().begin() + static_cast<long>(ch * t * plane));
  return out;
}

Tensor pad_frames(const Tensor& x, std::size_t t) {
  const std::size_t c = x.extent(0), n = x.extent(1), plane = x.extent(2) * x.extent(3);
  Tensor out({c, t, x.extent(2), x.extent(3)});
  for (std::size_t ch = 0; ch < c; ++ch)
    std::copy_n(x.data().begin() + static_cast<long>(ch * n * plane), n * plane,
                out.data().begin() + static_cast<long>(ch * t * plane));
  return out;
}

}  // namespace

Trainer::Trainer(Model& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), opt_(cfg.lr, cfg.weight_decay) {
  cfg_.validate();
  if (cfg_.saliency && !model_.saliency) throw Error("saliency training needs a sampler");
}

std::vector<Tensor*> Trainer::all_params() {
  auto p = model_.estimator.param_ptrs();
  if (model_.saliency)
    for (Tensor* t : model_.saliency->param_ptrs()) p.push_back(t);
  return p;
}

StepResult Trainer::step_supervised(const std::vector<ClipSample>& batch) {
  StepResult res;
  std::vector<Tensor> est_grads = model_.estimator.zero_grads();
  std::vector<Tensor> sal_grads = model_.saliency ? model_.saliency->zero_grads()
                                                  : std::vector<Tensor>{};
  const saliency::SaliencyWeights w{cfg_.w_s, cfg_.w_t};
  double total = 0.0;
  for (const ClipSample& s : batch) {
    try {
      if (!s.ppg) throw Error("supervised step needs ground-truth ppg");
      InputPass in = input_forward(model_, s.clip);
      graph::Tape tape;
      const Tensor y = model_.estimator.forward(in.xs, tape);
      const PpgSignal yhat{y.values(), s.clip.fps};
      double value = 0.0;
      std::vector<double> dy;
      switch (cfg_.loss) {
        case SupervisedLoss::mcc: {
          auto g = losses::mcc_grad(*s.ppg, yhat);
          value = -g.value;
          dy = std::move(g.d_second);
          break;
        }
        case SupervisedLoss::pearson: {
          auto g = losses::pearson_grad(*s.ppg, yhat);
          value = -g.value;
          dy = std::move(g.d_second);
          break;
        }
        case SupervisedLoss::snr: {
          if (!s.hr_bpm) throw Error("snr loss needs a ground-truth rate");
          auto g = losses::snr_grad(yhat, *s.hr_bpm);
          value = -g.value;
          dy = std::move(g.d);
          break;
        }
      }
      for (double& v : dy) v = -v;
      const Tensor d_xs = model_.estimator.backward(tape, signal_grad(std::move(dy)), est_grads);
      value += input_backward(model_, in, d_xs, w, sal_grads);
      total += value;
      ++res.used;
    } catch (const DegenerateSignal& e) {
      ++res.skipped;
      res.notes.push_back(e.what());
    }
  }
  if (res.used == 0) {
    res.loss.value = std::nan("");
    return res;
  }
  const double inv = 1.0 / static_cast<double>(res.used);
  for (auto& g : sal_grads) est_grads.push_back(std::move(g));
  for (auto& g : est_grads) g *= inv;
  opt_.step(all_params(), est_grads);
  res.loss.value = total * inv;
  return res;
}

ContrastiveBranches Trainer::contrastive_forward(const VideoClip& clip, double ratio) const {
  const VideoClip xs = model_.sampled(clip);
  const std::size_t mult = model_.config.temporal_multiple();
  VideoClip neg = resample::resample_video(xs, ratio);
  neg = neg.slice(0, neg.frames - neg.frames % mult);
  ContrastiveBranches b;
  b.ratio = ratio;
  b.anchor = estimator::predict_ppg(model_.estimator, xs);
  b.negative = estimator::predict_ppg(model_.estimator, neg);
  b.positive = resample::resample_signal(b.negative, 1.0 / ratio);
  const std::size_t n = std::min({b.anchor.size(), b.negative.size(), b.positive.size()});
  b.anchor = truncated(b.anchor, n);
  b.negative = truncated(b.negative, n);
  b.positive = truncated(b.positive, n);
  return b;
}

StepResult Trainer::step_contrastive(const std::vector<VideoClip>& batch, Rng& rng) {
  StepResult res;
  std::vector<Tensor> est_grads = model_.estimator.zero_grads();
  std::vector<Tensor> sal_grads = model_.saliency ? model_.saliency->zero_grads()
                                                  : std::vector<Tensor>{};
  const saliency::SaliencyWeights w{cfg_.w_s, cfg_.w_t};
  const losses::MvtlConfig mv{cfg_.num_views, cfg_.view_s};
  const std::size_t mult = model_.config.temporal_multiple();
  double total = 0.0;
  std::map<std::string, double> comps;
  for (const VideoClip& clip : batch) {
    try {
      InputPass in = input_forward(model_, clip);
      const double r = resample::draw_ratio(rng);
      const std::size_t t = in.xs.extent(1);
      const Tensor xn_full = resample::resample_time(in.xs, r);
      const std::size_t tn_full = xn_full.extent(1);
      const std::size_t tn = tn_full - tn_full % mult;
      if (tn < 2) throw DegenerateSignal("negative branch too short");
      const Tensor xn = first_frames(xn_full, tn);

      graph::Tape tape_a, tape_n;
      const PpgSignal ya{model_.estimator.forward(in.xs, tape_a).values(), clip.fps};
      const PpgSignal yn{model_.estimator.forward(xn, tape_n).values(), clip.fps};
      const PpgSignal yp = resample::resample_signal(yn, 1.0 / r);
      const std::size_t n = std::min({ya.size(), yn.size(), yp.size()});
      const PpgSignal a = truncated(ya, n), p = truncated(yp, n), q = truncated(yn, n);

      const auto views = losses::draw_views(a, p, q, mv, rng);
      const auto g = losses::mvtl_grad(a, p, q, views);

      auto dyn = padded(g.d_negative, yn.size());
      const auto dyp = resample::resample_signal_adjoint(padded(g.d_positive, yp.size()),
                                                         yn.size(), 1.0 / r);
      for (std::size_t k = 0; k < dyn.size(); ++k) dyn[k] += dyp[k];

      Tensor d_xs = model_.estimator.backward(tape_a, signal_grad(padded(g.d_anchor, ya.size())),
                                              est_grads);
      const Tensor d_xn = model_.estimator.backward(tape_n, signal_grad(std::move(dyn)), est_grads);
      d_xs += resample::resample_time_adjoint(pad_frames(d_xn, tn_full), t, r);

      double value = g.loss.value;
      value += input_backward(model_, in, d_xs, w, sal_grads);
      total += value;
      for (const auto& [k, v] : g.loss.components) comps[k] += v;
      ++res.used;
    } catch (const DegenerateSignal& e) {
      ++res.skipped;
      res.notes.push_back(e.what());
    }
  }
  if (res.used == 0) {
    res.loss.value = std::nan("");
    return res;
  }
  const double inv = 1.0 / static_cast<double>(res.used);
  for (auto& g : sal_grads) est_grads.push_back(std::move(g));
  for (auto& g : est_grads) g *= inv;
  opt_.step(all_params(), est_grads);
  res.loss.value = total * inv;
  for (auto& [k, v] : comps) res.loss.components[k] = v * inv;
  return res;
}

// ---------------------------------------------------------------------------
// Loop

std::size_t select_model(const std::vector<EpochRecord>& history) {
  std::size_t best = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double m = history[i].val_metric;
    if (std::isfinite(m) && (best == 0 || m < best_metric)) {
      best = i + 1;
      best_metric = m;
    }
  }
  if (best == 0) throw Error("no epoch has a finite selection metric");
  return best;
}

std::vector<ClipSample> fixed_windows(const std::vector<Recording>& recs, double window_s,
                                      bool with_labels) {
  std::vector<ClipSample> out;
  for (const auto& rec : recs) {
    const auto len = static_cast<std::size_t>(std::lround(window_s * rec.video.fps));
    for (std::size_t s = 0; s + len <= rec.video.frames; s += len)
      out.push_back(datasets::extract_window(rec, s, len, len, with_labels));
  }
  return out;
}

double mean_ipr(const Model& model, const std::vector<ClipSample>& clips) {
  if (clips.empty()) return std::nan("");
  double sum = 0.0;
  for (const auto& c : clips) {
    try {
      sum += losses::ipr(model.predict(c.clip));
    } catch (const DegenerateSignal&) {
      sum += 1.0;  // a flat output carries no pulse at all
    }
  }
  return sum / static_cast<double>(clips.size());
}

namespace {

double supervised_metric(const Model& model, const std::vector<ClipSample>& windows,
                         SupervisedLoss loss) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& w : windows) {
    try {
      const PpgSignal y = model.predict(w.clip);
      double v = 0.0;
      switch (loss) {
        case SupervisedLoss::mcc: v = -losses::mcc(*w.ppg, y); break;
        case SupervisedLoss::pearson: v = -losses::pearson(*w.ppg, y); break;
        case SupervisedLoss::snr: v = -losses::snr(y, *w.hr_bpm); break;
      }
      sum += v;
      ++used;
    } catch (const DegenerateSignal&) {
    }
  }
  return used ? sum / static_cast<double>(used) : std::nan("");
}

struct Snapshot {
  std::vector<Tensor> estimator;
  std::vector<Tensor> saliency;
};

Snapshot snapshot(const Model& m) {
  return {m.estimator.param_values(),
          m.saliency ? m.saliency->param_values() : std::vector<Tensor>{}};
}

void restore(Model& m, const Snapshot& s) {
  m.estimator.set_param_values(s.estimator);
  if (m.saliency) m.saliency->set_param_values(s.saliency);
}

}  // namespace

TrainResult train(Model& model, const std::vector<Recording>& train_set,
                  const std::vector<Recording>& val_set, const TrainConfig& cfg,
                  const fs::path& run_dir, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw Error("empty training set");
  const bool contrastive = cfg.mode == Mode::contrastive;
  if (cfg.saliency && !model.saliency) throw Error("saliency training needs a sampler");

  std::vector<const Recording*> pool;
  for (const auto& r : train_set) pool.push_back(&r);
  if (contrastive)
    for (const auto& r : val_set) pool.push_back(&r);

  Rng rng(cfg.seed);
  Rng sample_rng = rng.split();
  Rng step_rng = rng.split();
  // Offsets live on their own stream so o_max = 0 leaves every other draw alone.
  Rng offset_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<ClipSample> metric_windows, ipr_windows;
  {
    std::vector<Recording> train_recs;
    for (const Recording* r : pool) train_recs.push_back(*r);
    ipr_windows = fixed_windows(train_recs, cfg.window_s, false);
    if (contrastive)
      metric_windows = ipr_windows;
    else
      metric_windows = fixed_windows(val_set.empty() ? train_set : val_set, cfg.window_s, true);
  }

  std::ofstream log;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir / "checkpoints");
    std::ofstream(run_dir / "config.txt") << cfg.to_text() << estimator::config_to_text(model.config);
    log.open(run_dir / "train_log.csv");
    log << "epoch,train_loss,val_metric,train_ipr,wall_s\n";
    log.precision(10);
  }

  datasets::SampleOptions opt;
  opt.window_s = cfg.window_s;
  opt.augment = cfg.augment;
  opt.stretch_probability = cfg.stretch_probability;
  opt.use_labels = !contrastive;

  Trainer trainer(model, cfg);
  TrainResult result;
  Snapshot best;
  double best_metric = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(sample_rng.below(i))]);

    double loss_sum = 0.0;
    std::size_t used = 0, skipped = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      std::vector<ClipSample> samples;
      for (std::size_t i = b; i < end; ++i) {
        if (!contrastive && cfg.o_max_s > 0.0)
          opt.gt_offset_frames = std::lround(offset_rng.uniform(-cfg.o_max_s, cfg.o_max_s) *
                                             pool[order[i]]->video.fps);
        try {
          samples.push_back(datasets::sample_clip(*pool[order[i]], opt, sample_rng));
        } catch (const DegenerateSignal&) {
          ++skipped;
        }
      }
      StepResult r;
      if (contrastive) {
        std::vector<VideoClip> clips;
        for (auto& s : samples) clips.push_back(std::move(s.clip));
        r = trainer.step_contrastive(clips, step_rng);
      } else {
        r = trainer.step_supervised(samples);
      }
      if (r.used) loss_sum += r.loss.value * static_cast<double>(r.used);
      used += r.used;
      skipped += r.skipped;
    }
    if (skipped * 2 > used + skipped)
      throw Error("epoch " + std::to_string(epoch) + " aborted: " + std::to_string(skipped) +
                  " of " + std::to_string(used + skipped) + " samples were degenerate");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.skipped = skipped;
    rec.train_loss = used ? loss_sum / static_cast<double>(used) : std::nan("");
    rec.train_ipr = mean_ipr(model, ipr_windows);
    rec.val_metric = contrastive ? rec.train_ipr
                                 : supervised_metric(model, metric_windows, cfg.loss);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (std::isfinite(rec.val_metric) && rec.val_metric < best_metric) {
      best_metric = rec.val_metric;
      best = snapshot(model);
    }
    if (log.is_open()) {
      log << rec.epoch << ',' << rec.train_loss << ',' << rec.val_metric << ',' << rec.train_ipr
          << ',' << rec.wall_s << '\n';
      log.flush();
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu", epoch);
      model.save(run_dir / "checkpoints" / name);
    }
    if (on_epoch) on_epoch(rec);
  }

  result.best_epoch = select_model(result.history);
  restore(model, best);
  if (!run_dir.empty()) model.save(run_dir / "best");
  return result;
}

}  // namespace rppg::training
