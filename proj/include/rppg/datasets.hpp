#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rppg/rng.hpp"
#include "rppg/spectral.hpp"
#include "rppg/video.hpp"

namespace rppg::datasets {

struct Rect {
  std::size_t x = 0, y = 0, w = 0, h = 0;

  bool overlaps(const Rect& o) const;
  bool contains(std::size_t px, std::size_t py) const;
  double area() const { return static_cast<double>(w * h); }
};

/// Face box in pixel coordinates (may extend past the frame).
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
};

/// A video with optional per-frame ground truth.
///
/// Ground-truth reads go through ppg()/hr(), which bump a process-wide
/// counter. Label-free code paths are audited by checking it stays put.
class Recording {
 public:
  VideoClip video;
  std::string subject;
  std::vector<Box> boxes;

  bool has_ppg() const noexcept { return ppg_.has_value(); }
  bool has_hr() const noexcept { return hr_.has_value(); }
  const std::vector<double>& ppg() const;
  const std::vector<double>& hr() const;
  void set_ppg(std::vector<double> v);
  void set_hr(std::vector<double> v);
  void clear_labels();

  static std::uint64_t label_reads();
  static void reset_label_reads();

 private:
  std::optional<std::vector<double>> ppg_;
  std::optional<std::vector<double>> hr_;
};

struct Nuisance {
  Rect region;
  double hr_lo = 60.0;
  double hr_hi = 180.0;
  double amplitude = 1.0;
};

struct SynthSpec {
  double duration_s = 60.0;
  double fps = 30.0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  Rect region{8, 8, 16, 16};
  double base_hr = 75.0;
  double drift = 0.2;          // bound on |dHR/dt| in bpm/s
  double drift_segment_s = 5;  // slope is redrawn this often
  double amplitude = 1.0;
  double noise_std = 1.0;
  double base_gray = 128.0;
  std::optional<Nuisance> nuisance;
  std::string subject = "synth";

  void validate() const;
};

/// Pulse region = base_gray + amplitude * sin(phase) + noise, noise elsewhere.
/// The heart rate follows a piecewise-linear path with slopes in
/// [-drift, drift]; ground-truth ppg is sin(phase), hr the per-frame rate.
Recording synth_generate(const SynthSpec& spec, Rng& rng);

/// Buffered boxes (1.5x scale around the raw box centre), re-centred only
/// when the raw box leaves the current buffer.
struct StickyBoxes {
  std::vector<Box> buffered;
  std::size_t updates = 0;  // re-centrings after the first frame
};
StickyBoxes sticky_boxes(const std::vector<Box>& boxes);

/// Crops each frame to its sticky box (clamped to the frame) and resizes it
/// bilinearly to size x size.
VideoClip sticky_crop(const VideoClip& frames, const std::vector<Box>& boxes,
                      std::size_t size = 64);

struct SampleOptions {
  double window_s = 10.0;
  bool augment = false;
  double stretch_probability = 0.5;
  double max_stretch = 1.5;  // sub-windows down to window / max_stretch
  bool use_labels = true;    // false: never touch ground truth (no IPR redraw)
  double ipr_threshold = 0.6;
  std::size_t max_attempts = 10;
  long gt_offset_frames = 0;  // shifts the label window against the video
};

struct ClipSample {
  VideoClip clip;
  std::optional<PpgSignal> ppg;
  std::optional<double> hr_bpm;  // mean ground-truth rate over the window
  std::size_t start = 0;         // first source frame
  std::size_t source_frames = 0; // source frames covered (before stretching)
  double stretch = 1.0;          // output frames per source frame
  std::size_t attempts = 1;
};

/// Random window of `window_s` seconds, optionally stretched from a shorter
/// sub-window. Windows whose ground-truth ppg has IPR above the threshold
/// are redrawn; DegenerateSignal("no clean window") after max_attempts.
ClipSample sample_clip(const Recording& rec, const SampleOptions& opt, Rng& rng);

/// Deterministic window [start, start + source_frames) stretched to
/// `out_frames` frames.
ClipSample extract_window(const Recording& rec, std::size_t start, std::size_t source_frames,
                          std::size_t out_frames, bool with_labels, long gt_offset_frames = 0);

// Files: video.rpv ("RPV1"), ppg.csv, meta.txt, optional boxes.csv.
void save_video(const std::filesystem::path& path, const VideoClip& clip, bool as_u8 = false);
VideoClip load_video(const std::filesystem::path& path, double fps);
void save_recording(const std::filesystem::path& dir, const Recording& rec);
Recording load_recording(const std::filesystem::path& dir);

/// Recording directories under `root`, sorted by name.
std::vector<Recording> load_dataset(const std::filesystem::path& root);
void save_dataset(const std::filesystem::path& root, const std::vector<Recording>& recs);

struct StabilityRow {
  double delta_s = 0.0;
  std::size_t count = 0;
  double q05 = 0.0, q50 = 0.0, q95 = 0.0;
};

/// Quantiles of |HR(t + delta) - HR(t)| over all recordings. Uses the hr
/// series when present, otherwise 10 s ppg windows on a 0.5 s grid.
std::vector<StabilityRow> audit_hr_stability(const std::vector<Recording>& recs,
                                             const std::vector<double>& deltas = {2.5, 5, 10,
                                                                                  15});

/// Linear-interpolated sample quantile.
double quantile(std::vector<double> v, double q);

}  // namespace rppg::datasets
