#include "rppg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rppg/error.hpp"

namespace rppg::losses {
namespace {

using spectral::Periodogram;

struct Centred {
  std::vector<double> x;
  double sum_sq = 0.0;
};

Centred centre(const PpgSignal& s) {
  Centred c;
  const double mean =
      std::accumulate(s.samples.begin(), s.samples.end(), 0.0) / static_cast<double>(s.size());
  c.x.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    c.x[i] = s.samples[i] - mean;
    c.sum_sq += c.x[i] * c.x[i];
  }
  if (spectral::negligible(c.sum_sq, spectral::energy(s.samples)))
    throw DegenerateSignal("zero variance");
  return c;
}

void check_pair(const PpgSignal& a, const PpgSignal& b) {
  validate(a);
  validate(b);
  if (a.size() != b.size())
    throw Error("signals differ in length: " + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()));
  if (a.fs != b.fs) throw Error("signals differ in sampling rate");
}

void remove_mean(std::vector<double>& g) {
  const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
  for (double& v : g) v -= mean;
}

// Band-masked, unit-sum spectrum of one signal plus what is needed to
// back-propagate a distance computed on it.
struct Distribution {
  Periodogram pg;
  std::vector<double> p;  // normalised masked power (zero outside the band)
  double in_band = 0.0;
};

Distribution distribution(std::span<const double> x, double fs, std::size_t pad) {
  Distribution d;
  d.pg = spectral::periodogram(x, fs, pad);
  d.p.assign(d.pg.psd.bins(), 0.0);
  for (std::size_t k = 0; k < d.p.size(); ++k)
    if (d.pg.psd.in_band(k)) d.in_band += d.pg.psd.power[k];
  if (spectral::negligible(d.in_band, d.pg.raw_energy))
    throw DegenerateSignal("no in-band power");
  for (std::size_t k = 0; k < d.p.size(); ++k)
    if (d.pg.psd.in_band(k)) d.p[k] = d.pg.psd.power[k] / d.in_band;
  return d;
}

std::size_t in_band_bins(const spectral::Psd& psd) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < psd.bins(); ++k) n += psd.in_band(k) ? 1 : 0;
  return n;
}

// Adds d(mse)/d(power) of both operands to the given accumulators.
double distance_with_grad(const Distribution& a, const Distribution& b, double weight,
                          std::vector<double>* d_pa, std::vector<double>* d_pb) {
  const std::size_t bins = a.p.size();
  const auto k_in = static_cast<double>(in_band_bins(a.pg.psd));
  double mse = 0.0;
  for (std::size_t k = 0; k < bins; ++k) mse += (a.p[k] - b.p[k]) * (a.p[k] - b.p[k]);
  mse /= k_in;
  if (d_pa && d_pb) {
    // g_k = d mse / d p_k ; p_k = P_k / I  =>  dP_j = (g_j - sum_k g_k p_k) / I
    double ga_dot = 0.0, gb_dot = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double g = 2.0 * (a.p[k] - b.p[k]) / k_in;
      ga_dot += g * a.p[k];
      gb_dot += -g * b.p[k];
    }
    for (std::size_t k = 0; k < bins; ++k) {
      if (!a.pg.psd.in_band(k)) continue;
      const double g = 2.0 * (a.p[k] - b.p[k]) / k_in;
      (*d_pa)[k] += weight * (g - ga_dot) / a.in_band;
      (*d_pb)[k] += weight * (-g - gb_dot) / b.in_band;
    }
  }
  return mse;
}

struct MccParts {
  LossValue detail;
  std::vector<double> d_y, d_yhat;
};

MccParts mcc_impl(const PpgSignal& y, const PpgSignal& yhat, Correlation mode, bool want_grad) {
  check_pair(y, yhat);
  const Centred cy = centre(y);
  const Centred ch = centre(yhat);
  const std::size_t n = y.size();
  const std::size_t len = mode == Correlation::linear ? kMccPadFactor * n : n;
  const auto mask = spectral::two_sided_band_mask(len, y.fs);

  const auto fy = fft::forward_real(cy.x, len);
  const auto fh = fft::forward_real(ch.x, len);
  std::vector<fft::Complex> cross(len), band_y(len), band_h(len);
  double total_h = 0.0, in_band_h = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    const double pw = std::norm(fh[k]);
    total_h += pw;
    if (mask[k]) {
      in_band_h += pw;
      cross[k] = fy[k] * std::conj(fh[k]);
      band_y[k] = fy[k];
      band_h[k] = fh[k];
    }
  }
  const double inv_len = 1.0 / static_cast<double>(len);
  const auto corr = fft::inverse(cross);
  const double norm = std::sqrt(cy.sum_sq * ch.sum_sq);
  std::size_t lag = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < len; ++t) {
    const double r = corr[t].real() * inv_len / norm;
    if (r > best) {
      best = r;
      lag = t;
    }
  }
  const double c_pr = total_h > 0.0 ? in_band_h / total_h : 0.0;

  MccParts out;
  out.detail.value = c_pr * best;
  out.detail.components = {{"c_pr", c_pr},
                           {"max_corr", best},
                           {"lag", static_cast<double>(lag)},
                           {"sigma_y", std::sqrt(cy.sum_sq / static_cast<double>(n))},
                           {"sigma_yhat", std::sqrt(ch.sum_sq / static_cast<double>(n))}};
  if (!want_grad) return out;

  // B = band-passed y, D = band-passed yhat (both length len, real).
  const auto by = fft::inverse(band_y);
  const auto bh = fft::inverse(band_h);
  out.d_y.assign(n, 0.0);
  out.d_yhat.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double b_shift = by[(i + lag) % len].real() * inv_len;
    const double d_shift = bh[(i + len - lag) % len].real() * inv_len;
    const double d_here = bh[i].real() * inv_len;
    const double drho_dy = d_shift / norm - best * cy.x[i] / cy.sum_sq;
    const double drho_dh = b_shift / norm - best * ch.x[i] / ch.sum_sq;
    const double dc_dh = 2.0 * (d_here - c_pr * ch.x[i]) / ch.sum_sq;
    out.d_y[i] = c_pr * drho_dy;
    out.d_yhat[i] = c_pr * drho_dh + best * dc_dh;
  }
  remove_mean(out.d_y);
  remove_mean(out.d_yhat);
  return out;
}

}  // namespace

// --- Pearson ----------------------------------------------------------------

PairGrad pearson_grad(const PpgSignal& y, const PpgSignal& yhat) {
  check_pair(y, yhat);
  const Centred cy = centre(y);
  const Centred ch = centre(yhat);
  const double norm = std::sqrt(cy.sum_sq * ch.sum_sq);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += cy.x[i] * ch.x[i];
  PairGrad out;
  out.value = std::clamp(s / norm, -1.0, 1.0);
  out.d_first.resize(y.size());
  out.d_second.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.d_first[i] = ch.x[i] / norm - out.value * cy.x[i] / cy.sum_sq;
    out.d_second[i] = cy.x[i] / norm - out.value * ch.x[i] / ch.sum_sq;
  }
  remove_mean(out.d_first);
  remove_mean(out.d_second);
  return out;
}

double pearson(const PpgSignal& y, const PpgSignal& yhat) { return pearson_grad(y, yhat).value; }

// --- MCC --------------------------------------------------------------------

LossValue mcc_detail(const PpgSignal& y, const PpgSignal& yhat, Correlation mode) {
  return mcc_impl(y, yhat, mode, false).detail;
}

double mcc(const PpgSignal& y, const PpgSignal& yhat, Correlation mode) {
  return mcc_detail(y, yhat, mode).value;
}

PairGrad mcc_grad(const PpgSignal& y, const PpgSignal& yhat, Correlation mode) {
  MccParts parts = mcc_impl(y, yhat, mode, true);
  return {parts.detail.value, std::move(parts.d_y), std::move(parts.d_yhat)};
}

// --- SNR --------------------------------------------------------------------

SingleGrad snr_grad(const PpgSignal& yhat, double hr_gt_bpm) {
  validate(yhat);
  const spectral::Band band;
  if (!band.contains(hr_gt_bpm / 60.0))
    throw Error("ground-truth heart rate " + std::to_string(hr_gt_bpm) + " bpm outside band");
  centre(yhat);  // zero-variance check
  const Periodogram pg = spectral::periodogram(yhat.samples, yhat.fs, kSnrPadFactor);
  const auto& power = pg.psd.power;
  const std::size_t bins = power.size();
  const auto k0 = static_cast<std::size_t>(std::lround(hr_gt_bpm / 60.0 / pg.psd.resolution_hz));
  const std::size_t lo = std::max<std::size_t>(1, k0 == 0 ? 0 : k0 - 1);
  const std::size_t hi = std::min(bins - 1, k0 + 1);
  double signal = 0.0, total = 0.0;
  for (std::size_t k = 1; k < bins; ++k) {
    total += power[k];
    if (k >= lo && k <= hi) signal += power[k];
  }
  const double noise = total - signal;

  SingleGrad out;
  out.d.assign(yhat.size(), 0.0);
  if (!(noise > 0.0) || signal / noise >= std::pow(10.0, kSnrCapDb / 10.0)) {
    out.value = kSnrCapDb;
    return out;
  }
  if (!(signal > 0.0) || signal / noise <= std::pow(10.0, -kSnrCapDb / 10.0)) {
    out.value = -kSnrCapDb;
    return out;
  }
  out.value = 10.0 * std::log10(signal / noise);
  const double c = 10.0 / std::numbers::ln10;
  std::vector<double> d_power(bins, 0.0);
  for (std::size_t k = 1; k < bins; ++k)
    d_power[k] = (k >= lo && k <= hi) ? c / signal : -c / noise;
  out.d = spectral::periodogram_backward(pg, d_power);
  return out;
}

double snr(const PpgSignal& yhat, double hr_gt_bpm) { return snr_grad(yhat, hr_gt_bpm).value; }

// --- IPR --------------------------------------------------------------------

SingleGrad ipr_grad(const PpgSignal& yhat, std::size_t pad_factor) {
  validate(yhat);
  const Periodogram pg = spectral::periodogram(yhat.samples, yhat.fs, pad_factor);
  const double total = pg.psd.total_power();
  if (spectral::negligible(total, pg.raw_energy)) throw DegenerateSignal("zero total power");
  const double in_band = pg.psd.in_band_power();
  SingleGrad out;
  out.value = (total - in_band) / total;
  std::vector<double> d_power(pg.psd.bins(), 0.0);
  for (std::size_t k = 1; k < d_power.size(); ++k)
    d_power[k] = -((pg.psd.in_band(k) ? 1.0 : 0.0) - in_band / total) / total;
  out.d = spectral::periodogram_backward(pg, d_power);
  return out;
}

double ipr(const PpgSignal& yhat, std::size_t pad_factor) {
  validate(yhat);
  const spectral::Psd p = spectral::psd(yhat, pad_factor);
  const double total = p.total_power();
  if (spectral::negligible(total, spectral::energy(yhat.samples)))
    throw DegenerateSignal("zero total power");
  return (total - p.in_band_power()) / total;
}

// --- PSD-MSE ----------------------------------------------------------------

PairGrad psd_mse_grad(const PpgSignal& a, const PpgSignal& b, std::size_t pad_factor) {
  check_pair(a, b);
  const Distribution da = distribution(a.samples, a.fs, pad_factor);
  const Distribution db = distribution(b.samples, b.fs, pad_factor);
  std::vector<double> dpa(da.p.size(), 0.0), dpb(db.p.size(), 0.0);
  PairGrad out;
  out.value = distance_with_grad(da, db, 1.0, &dpa, &dpb);
  out.d_first = spectral::periodogram_backward(da.pg, dpa);
  out.d_second = spectral::periodogram_backward(db.pg, dpb);
  return out;
}

double psd_mse(const PpgSignal& a, const PpgSignal& b, std::size_t pad_factor) {
  check_pair(a, b);
  const Distribution da = distribution(a.samples, a.fs, pad_factor);
  const Distribution db = distribution(b.samples, b.fs, pad_factor);
  return distance_with_grad(da, db, 1.0, nullptr, nullptr);
}

// --- MVTL -------------------------------------------------------------------

namespace {

std::size_t view_length(double fs, const MvtlConfig& cfg) {
  if (cfg.num_views < 1) throw Error("mvtl needs at least one view");
  const auto len = static_cast<std::size_t>(std::lround(cfg.view_seconds * fs));
  if (len < 2) throw Error("mvtl view shorter than 2 samples");
  return len;
}

bool view_ok(const PpgSignal& s, std::size_t offset, std::size_t len) {
  try {
    distribution(std::span<const double>(s.samples).subspan(offset, len), s.fs,
                 kDistancePadFactor);
    return true;
  } catch (const DegenerateSignal&) {
    return false;
  }
}

}  // namespace

ViewPlan draw_views(std::size_t n, double fs, const MvtlConfig& cfg, Rng& rng) {
  ViewPlan plan;
  plan.length = view_length(fs, cfg);
  if (plan.length > n)
    throw Error("mvtl view of " + std::to_string(plan.length) + " samples exceeds signal of " +
                std::to_string(n));
  for (std::size_t v = 0; v < cfg.num_views; ++v)
    plan.offsets.push_back(static_cast<std::size_t>(rng.below(n - plan.length + 1)));
  return plan;
}

ViewPlan draw_views(const PpgSignal& anchor, const PpgSignal& positive,
                    const PpgSignal& negative, const MvtlConfig& cfg, Rng& rng) {
  check_pair(anchor, positive);
  check_pair(anchor, negative);
  const std::size_t n = anchor.size();
  ViewPlan plan = draw_views(n, anchor.fs, cfg, rng);
  auto ok = [&](std::size_t off) {
    return view_ok(anchor, off, plan.length) && view_ok(positive, off, plan.length) &&
           view_ok(negative, off, plan.length);
  };
  for (auto& off : plan.offsets) {
    if (ok(off)) continue;
    off = static_cast<std::size_t>(rng.below(n - plan.length + 1));
    if (!ok(off)) throw DegenerateSignal("mvtl view has no in-band power after redraw");
  }
  return plan;
}

MvtlGrad mvtl_grad(const PpgSignal& anchor, const PpgSignal& positive,
                   const PpgSignal& negative, const ViewPlan& views) {
  check_pair(anchor, positive);
  check_pair(anchor, negative);
  const std::size_t nv = views.offsets.size();
  if (nv == 0) throw Error("mvtl needs at least one view");
  for (std::size_t off : views.offsets)
    if (off + views.length > anchor.size()) throw Error("mvtl view exceeds signal");

  auto make = [&](const PpgSignal& s) {
    std::vector<Distribution> d;
    for (std::size_t off : views.offsets)
      d.push_back(distribution(std::span<const double>(s.samples).subspan(off, views.length),
                               s.fs, kDistancePadFactor));
    return d;
  };
  const auto da = make(anchor), dp = make(positive), dn = make(negative);
  const std::size_t bins = da.front().p.size();
  std::vector<std::vector<double>> ga(nv, std::vector<double>(bins, 0.0)), gp = ga, gn = ga;

  const double scale = 1.0 / static_cast<double>(nv * nv);
  double p_tot = 0.0, n_tot = 0.0;
  for (std::size_t i = 0; i < nv; ++i)
    for (std::size_t j = 0; j < nv; ++j) {
      p_tot += distance_with_grad(da[i], dp[j], scale, &ga[i], &gp[j]);
      n_tot += distance_with_grad(da[i], dn[j], -scale, &ga[i], &gn[j]);
    }

  MvtlGrad out;
  out.loss.value = (p_tot - n_tot) * scale;
  out.loss.components = {{"P_tot", p_tot}, {"N_tot", n_tot}};
  const std::size_t n = anchor.size();
  out.d_anchor.assign(n, 0.0);
  out.d_positive.assign(n, 0.0);
  out.d_negative.assign(n, 0.0);
  for (std::size_t i = 0; i < nv; ++i) {
    const std::size_t off = views.offsets[i];
    const auto a = spectral::periodogram_backward(da[i].pg, ga[i]);
    const auto p = spectral::periodogram_backward(dp[i].pg, gp[i]);
    const auto q = spectral::periodogram_backward(dn[i].pg, gn[i]);
    for (std::size_t k = 0; k < views.length; ++k) {
      out.d_anchor[off + k] += a[k];
      out.d_positive[off + k] += p[k];
      out.d_negative[off + k] += q[k];
    }
  }
  return out;
}

LossValue mvtl(const PpgSignal& anchor, const PpgSignal& positive, const PpgSignal& negative,
               const MvtlConfig& cfg, Rng& rng) {
  const ViewPlan views = draw_views(anchor, positive, negative, cfg, rng);
  return mvtl_grad(anchor, positive, negative, views).loss;
}

}  // namespace rppg::losses
