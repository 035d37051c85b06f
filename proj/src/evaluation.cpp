#include "rppg/evaluation.hpp"

#include <cmath>
#include <fstream>

#include "rppg/error.hpp"

namespace rppg::evaluation {

namespace fs = std::filesystem;
using datasets::Recording;

double hr_correlation(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.empty()) throw Error("hr_correlation: size mismatch");
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i] / n;
    mg += gt[i] / n;
  }
  double spg = 0.0, spp = 0.0, sgg = 0.0;
  bool exact = true;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    spg += (pred[i] - mp) * (gt[i] - mg);
    spp += (pred[i] - mp) * (pred[i] - mp);
    sgg += (gt[i] - mg) * (gt[i] - mg);
    exact = exact && pred[i] == gt[i];
  }
  if (exact) return 1.0;
  if (spp <= 0.0 || sgg <= 0.0) return 0.0;
  return spg / std::sqrt(spp * sgg);
}

HrEvalResult eval_hr(const HrPredictor& predict, const std::vector<Recording>& recs,
                     double window_s, double stride_s) {
  if (!(window_s > 0.0) || !(stride_s > 0.0)) throw Error("window and stride must be positive");
  HrEvalResult r;
  for (const auto& rec : recs) {
    const double fps = rec.video.fps;
    const auto len = static_cast<std::size_t>(std::lround(window_s * fps));
    const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(stride_s * fps)));
    for (std::size_t s = 0; s + len <= rec.video.frames; s += stride) {
      const auto w = datasets::extract_window(rec, s, len, len, true);
      if (!w.hr_bpm) throw Error("evaluation window without ground-truth heart rate");
      WindowResult row{rec.subject, static_cast<double>(s) / fps, 0.0, *w.hr_bpm, false};
      try {
        row.hr_pred = predict(w.clip);
      } catch (const DegenerateSignal&) {
        row.failed = true;
        const double lo = spectral::kBandLoHz * 60.0, hi = spectral::kBandHiHz * 60.0;
        row.hr_pred = std::abs(row.hr_gt - lo) > std::abs(row.hr_gt - hi) ? lo : hi;
        ++r.failures;
      }
      r.windows.push_back(row);
    }
  }
  if (r.windows.empty()) throw Error("no evaluation windows (recordings shorter than the window)");
  std::vector<double> pred, gt;
  double se = 0.0, ae = 0.0;
  for (const auto& w : r.windows) {
    const double e = w.hr_pred - w.hr_gt;
    se += e * e;
    ae += std::abs(e);
    pred.push_back(w.hr_pred);
    gt.push_back(w.hr_gt);
  }
  const double n = static_cast<double>(r.windows.size());
  r.rmse = std::sqrt(se / n);
  r.mae = ae / n;
  r.pc = hr_correlation(pred, gt);
  if (r.rmse * r.rmse - r.mae * r.mae < -1e-9 * (1.0 + r.rmse * r.rmse))
    throw Error("rmse below mae");
  return r;
}

HrEvalResult eval_hr(const training::Model& model, const std::vector<Recording>& recs,
                     double window_s, double stride_s) {
  return eval_hr(
      [&](const VideoClip& clip) { return spectral::estimate_hr(model.predict(clip)); }, recs,
      window_s, stride_s);
}

void write_hr_eval(const fs::path& path, const HrEvalResult& r) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "window_start_s,hr_pred,hr_gt\n";
  for (const auto& w : r.windows) os << w.start_s << ',' << w.hr_pred << ',' << w.hr_gt << '\n';
}

std::vector<DesyncRow> desync_bench(const std::vector<Recording>& train,
                                    const std::vector<Recording>& val,
                                    const std::vector<Recording>& test, const DesyncSpec& spec,
                                    const training::TrainConfig& cfg,
                                    const estimator::EstimatorConfig& model_cfg,
                                    const std::function<void(const DesyncRow&)>& on_row) {
  for (double o : spec.o_max_s)
    if (o < 0.0) throw Error("o_max must be >= 0");
  std::vector<DesyncRow> rows;
  for (auto loss : spec.losses)
    for (double o : spec.o_max_s) {
      training::TrainConfig c = cfg;
      c.mode = training::Mode::supervised;
      c.loss = loss;
      c.o_max_s = o;
      Rng init(cfg.seed);
      training::Model m = training::Model::create(model_cfg, c.saliency, init);
      training::train(m, train, val, c);
      const HrEvalResult r = eval_hr(m, test);
      rows.push_back({loss, o, r.rmse, r.mae, r.pc});
      if (on_row) on_row(rows.back());
    }
  return rows;
}

void write_desync(const fs::path& path, const std::vector<DesyncRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "loss,o_max_s,rmse,mae,pc\n";
  for (const auto& r : rows)
    os << training::to_string(r.loss) << ',' << r.o_max_s << ',' << r.rmse << ',' << r.mae << ','
       << r.pc << '\n';
}

double model_mass(const training::Model& model, const std::vector<datasets::ClipSample>& clips,
                  const datasets::Rect& region) {
  const auto& c = model.config;
  if (model.saliency) {
    if (clips.empty()) throw Error("saliency mass needs clips");
    double sum = 0.0;
    for (const auto& s : clips)
      sum += saliency::region_mass(model.saliency_map(s.clip), c.height, c.width, region.x,
                                   region.y, region.w, region.h);
    return sum / static_cast<double>(clips.size());
  }
  if (c.variant != estimator::Variant::spatial_pool)
    throw Error("region mass needs a saliency sampler or a spatial_pool estimator");
  const auto w = estimator::spatial_weights(model.estimator);
  double mass = 0.0;
  for (std::size_t y = region.y; y < region.y + region.h; ++y)
    for (std::size_t x = region.x; x < region.x + region.w; ++x) mass += w[y * c.width + x];
  return mass;
}

namespace {

std::vector<Recording> make_set(const datasets::SynthSpec& base, std::size_t n, double lo,
                                double hi, Rng& rng) {
  std::vector<Recording> out;
  for (std::size_t i = 0; i < n; ++i) {
    datasets::SynthSpec s = base;
    s.base_hr = rng.uniform(lo, hi);
    s.subject = "s" + std::to_string(i);
    out.push_back(datasets::synth_generate(s, rng));
  }
  return out;
}

}  // namespace

std::vector<MassRow> interpretability_bench(const InterpSetup& st) {
  if (!st.base.nuisance) throw Error("interpretability bench needs a nuisance block");
  const datasets::Rect pulse = st.base.region, nuis = st.base.nuisance->region;
  const double area = pulse.area() / static_cast<double>(st.base.width * st.base.height);
  Rng rng(st.seed);
  std::vector<MassRow> rows;

  auto run = [&](const std::string& mode, datasets::SynthSpec spec,
                 const training::TrainConfig& cfg, bool report_nuisance) {
    const auto data = make_set(spec, st.recordings, st.hr_lo, st.hr_hi, rng);
    Rng init = rng.split();
    training::Model m = training::Model::create(st.model, st.saliency, init);
    training::TrainConfig c = cfg;
    c.saliency = st.saliency;
    training::train(m, data, {}, c);
    const auto clips = training::fixed_windows(data, c.window_s, false);
    rows.push_back({mode, "pulse", model_mass(m, clips, pulse)});
    if (report_nuisance) rows.push_back({mode, "nuisance", model_mass(m, clips, nuis)});
    rows.push_back({mode, "pulse_area", area});
  };

  datasets::SynthSpec silent = st.base;
  silent.amplitude = 0.0;
  training::TrainConfig con = st.contrastive;
  con.mode = training::Mode::contrastive;
  run("contrastive_nuisance_only", silent, con, true);

  training::TrainConfig sup = st.supervised;
  sup.mode = training::Mode::supervised;
  run("supervised", st.base, sup, true);

  datasets::SynthSpec control = st.base;
  control.nuisance.reset();
  run("contrastive_control", control, con, false);
  return rows;
}

void write_saliency_mass(const fs::path& path, const std::vector<MassRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "mode,region,mass\n";
  for (const auto& r : rows) os << r.mode << ',' << r.region << ',' << r.mass << '\n';
}

}  // namespace rppg::evaluation
