#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "rppg/rng.hpp"
#include "rppg/spectral.hpp"

// Training losses, contrastive distance and validation metrics.
//
// Every loss used for training has a *_grad form returning the value together
// with its gradient w.r.t. the raw input samples.
namespace rppg::losses {

inline constexpr std::size_t kMccPadFactor = 2;
inline constexpr std::size_t kIprPadFactor = 2;
inline constexpr std::size_t kDistancePadFactor = 1;
inline constexpr std::size_t kSnrPadFactor = 1;
inline constexpr double kSnrCapDb = 80.0;

/// Linear correlation pads both inputs to twice their length (no wraparound);
/// circular correlation uses the unpadded DFT.
enum class Correlation { linear, circular };

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;

  double component(const std::string& name) const { return components.at(name); }
};

struct PairGrad {
  double value = 0.0;
  std::vector<double> d_first;
  std::vector<double> d_second;
};

struct SingleGrad {
  double value = 0.0;
  std::vector<double> d;
};

double pearson(const PpgSignal& y, const PpgSignal& yhat);
PairGrad pearson_grad(const PpgSignal& y, const PpgSignal& yhat);

/// Maximum band-limited normalised cross-correlation over all lags, scaled by
/// the in-band power ratio of `yhat`. Components: "c_pr", "max_corr", "lag".
LossValue mcc_detail(const PpgSignal& y, const PpgSignal& yhat,
                     Correlation mode = Correlation::linear);
double mcc(const PpgSignal& y, const PpgSignal& yhat, Correlation mode = Correlation::linear);
PairGrad mcc_grad(const PpgSignal& y, const PpgSignal& yhat,
                  Correlation mode = Correlation::linear);

/// Power within +-1 bin of the ground-truth rate against all other power, in
/// dB, clamped to +-kSnrCapDb.
double snr(const PpgSignal& yhat, double hr_gt_bpm);
SingleGrad snr_grad(const PpgSignal& yhat, double hr_gt_bpm);

/// Fraction of power outside the heart-rate band.
double ipr(const PpgSignal& yhat, std::size_t pad_factor = kIprPadFactor);
SingleGrad ipr_grad(const PpgSignal& yhat, std::size_t pad_factor = kIprPadFactor);

/// MSE between unit-sum band-masked power spectra, averaged over in-band bins.
double psd_mse(const PpgSignal& a, const PpgSignal& b,
               std::size_t pad_factor = kDistancePadFactor);
PairGrad psd_mse_grad(const PpgSignal& a, const PpgSignal& b,
                      std::size_t pad_factor = kDistancePadFactor);

struct MvtlConfig {
  std::size_t num_views = 4;
  double view_seconds = 5.0;
};

/// Start offsets of the views; the same offsets are used for every branch.
struct ViewPlan {
  std::vector<std::size_t> offsets;
  std::size_t length = 0;
};

/// Uniformly placed views over signals of `n` samples.
ViewPlan draw_views(std::size_t n, double fs, const MvtlConfig& cfg, Rng& rng);

/// Draws views and redraws (once) any view where a branch has no in-band power.
ViewPlan draw_views(const PpgSignal& anchor, const PpgSignal& positive,
                    const PpgSignal& negative, const MvtlConfig& cfg, Rng& rng);

struct MvtlGrad {
  LossValue loss;  // components "P_tot", "N_tot"
  std::vector<double> d_anchor;
  std::vector<double> d_positive;
  std::vector<double> d_negative;
};

/// (P_tot - N_tot) / V_N^2 over all anchor x positive and anchor x negative view pairs.
LossValue mvtl(const PpgSignal& anchor, const PpgSignal& positive, const PpgSignal& negative,
               const MvtlConfig& cfg, Rng& rng);
MvtlGrad mvtl_grad(const PpgSignal& anchor, const PpgSignal& positive,
                   const PpgSignal& negative, const ViewPlan& views);

}  // namespace rppg::losses
