#include "rppg/datasets.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "rppg/error.hpp"
#include "rppg/losses.hpp"
#include "rppg/resample.hpp"

namespace rppg::datasets {

namespace fs = std::filesystem;

bool Rect::overlaps(const Rect& o) const {
  return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
}

bool Rect::contains(std::size_t px, std::size_t py) const {
  return px >= x && px < x + w && py >= y && py < y + h;
}

// ---------------------------------------------------------------------------
// Recording

namespace {
std::atomic<std::uint64_t> g_label_reads{0};
}

const std::vector<double>& Recording::ppg() const {
  if (!ppg_) throw Error("recording has no ground-truth ppg");
  g_label_reads.fetch_add(1, std::memory_order_relaxed);
  return *ppg_;
}

const std::vector<double>& Recording::hr() const {
  if (!hr_) throw Error("recording has no ground-truth heart rate");
  g_label_reads.fetch_add(1, std::memory_order_relaxed);
  return *hr_;
}

void Recording::set_ppg(std::vector<double> v) { ppg_ = std::move(v); }
void Recording::set_hr(std::vector<double> v) { hr_ = std::move(v); }

void Recording::clear_labels() {
  ppg_.reset();
  hr_.reset();
}

std::uint64_t Recording::label_reads() { return g_label_reads.load(); }
void Recording::reset_label_reads() { g_label_reads.store(0); }

// ---------------------------------------------------------------------------
// Synthetic recordings

void SynthSpec::validate() const {
  if (!(duration_s > 0.0) || !(fps > 0.0)) throw Error("synth: duration and fps must be > 0");
  if (std::lround(duration_s * fps) < 2) throw Error("synth: recording shorter than 2 frames");
  if (height == 0 || width == 0 || channels == 0) throw Error("synth: empty frame");
  if (base_hr < 40.0 || base_hr > 250.0) throw Error("synth: base_hr outside [40, 250] bpm");
  if (drift < 0.0 || noise_std < 0.0) throw Error("synth: drift and noise_std must be >= 0");
  if (!(drift_segment_s > 0.0)) throw Error("synth: drift_segment_s must be > 0");
  auto inside = [&](const Rect& r) { return r.x + r.w <= width && r.y + r.h <= height; };
  if (!inside(region)) throw Error("synth: pulse region exceeds the frame");
  if (nuisance) {
    if (!inside(nuisance->region)) throw Error("synth: nuisance region exceeds the frame");
    if (nuisance->region.overlaps(region))
      throw Error("synth: pulse and nuisance regions overlap");
    if (!(nuisance->hr_lo <= nuisance->hr_hi)) throw Error("synth: bad nuisance rate range");
  }
}

Recording synth_generate(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * spec.fps));
  const auto seg = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                std::lround(spec.drift_segment_s * spec.fps)));
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> hr(n), ppg(n);
  double phase = rng.uniform(0.0, two_pi);
  double slope = 0.0;
  hr[0] = spec.base_hr;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      if ((k - 1) % seg == 0) slope = rng.uniform(-spec.drift, spec.drift);
      double next = hr[k - 1] + slope / spec.fps;
      if (next < spectral::kBandLoHz * 60.0 || next > spectral::kBandHiHz * 60.0) {
        slope = -slope;
        next = hr[k - 1] + slope / spec.fps;
      }
      hr[k] = next;
      phase += two_pi * 0.5 * (hr[k - 1] + hr[k]) / 60.0 / spec.fps;
    }
    ppg[k] = std::sin(phase);
  }

  double nuis_hz = 0.0, nuis_phase = 0.0;
  if (spec.nuisance) {
    nuis_hz = rng.uniform(spec.nuisance->hr_lo, spec.nuisance->hr_hi) / 60.0;
    nuis_phase = rng.uniform(0.0, two_pi);
  }

  Recording rec;
  rec.subject = spec.subject;
  rec.video = VideoClip(n, spec.height, spec.width, spec.channels, spec.fps);
  for (std::size_t k = 0; k < n; ++k) {
    const double q =
        spec.nuisance
            ? spec.nuisance->amplitude *
                  std::sin(two_pi * nuis_hz * static_cast<double>(k) / spec.fps + nuis_phase)
            : 0.0;
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        double base = spec.base_gray;
        if (spec.region.contains(x, y)) base += spec.amplitude * ppg[k];
        if (spec.nuisance && spec.nuisance->region.contains(x, y)) base += q;
        for (std::size_t c = 0; c < spec.channels; ++c)
          rec.video.at(k, y, x, c) = base + spec.noise_std * rng.normal();
      }
  }
  rec.set_ppg(std::move(ppg));
  rec.set_hr(std::move(hr));
  return rec;
}

// ---------------------------------------------------------------------------
// Sticky crop

namespace {

Box buffer_of(const Box& b) {
  return {b.x + 0.5 * b.w - 0.75 * b.w, b.y + 0.5 * b.h - 0.75 * b.h, 1.5 * b.w, 1.5 * b.h};
}

bool inside(const Box& raw, const Box& buf) {
  return raw.x >= buf.x && raw.y >= buf.y && raw.x + raw.w <= buf.x + buf.w &&
         raw.y + raw.h <= buf.y + buf.h;
}

}  // namespace

StickyBoxes sticky_boxes(const std::vector<Box>& boxes) {
  StickyBoxes out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const Box& b = boxes[k];
    if (!(b.w > 0.0) || !(b.h > 0.0)) throw Error("face box with non-positive size");
    if (k == 0) {
      out.buffered.push_back(buffer_of(b));
    } else if (!inside(b, out.buffered.back())) {
      out.buffered.push_back(buffer_of(b));
      ++out.updates;
    } else {
      out.buffered.push_back(out.buffered.back());
    }
  }
  return out;
}

VideoClip sticky_crop(const VideoClip& frames, const std::vector<Box>& boxes, std::size_t size) {
  validate(frames);
  if (boxes.size() != frames.frames)
    throw Error("sticky_crop needs one box per frame (" + std::to_string(frames.frames) +
                "), got " + std::to_string(boxes.size()));
  if (size == 0) throw Error("crop size must be positive");
  const StickyBoxes sticky = sticky_boxes(boxes);
  const double fw = static_cast<double>(frames.width), fh = static_cast<double>(frames.height);
  VideoClip out(frames.frames, size, size, frames.channels, frames.fps);

  auto span = [](double lo, double hi, double limit) {
    lo = std::clamp(lo, 0.0, limit);
    hi = std::clamp(hi, 0.0, limit);
    if (hi - lo < 1.0) {
      lo = std::min(lo, limit - 1.0);
      hi = lo + 1.0;
    }
    return std::pair{lo, hi};
  };
  auto sample_axis = [](double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = std::min(static_cast<std::size_t>(c), n > 1 ? n - 2 : 0);
    i1 = std::min(i0 + 1, n - 1);
    f = c - static_cast<double>(i0);
  };

  for (std::size_t k = 0; k < frames.frames; ++k) {
    const Box& b = sticky.buffered[k];
    const auto [x0, x1] = span(b.x, b.x + b.w, fw);
    const auto [y0, y1] = span(b.y, b.y + b.h, fh);
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t r0, r1;
      double fy;
      sample_axis(y0 + (static_cast<double>(i) + 0.5) * (y1 - y0) / static_cast<double>(size) -
                      0.5,
                  frames.height, r0, r1, fy);
      for (std::size_t j = 0; j < size; ++j) {
        std::size_t c0, c1;
        double fx;
        sample_axis(
            x0 + (static_cast<double>(j) + 0.5) * (x1 - x0) / static_cast<double>(size) - 0.5,
            frames.width, c0, c1, fx);
        for (std::size_t c = 0; c < frames.channels; ++c) {
          const double top = frames.at(k, r0, c0, c) * (1 - fx) + frames.at(k, r0, c1, c) * fx;
          const double bot = frames.at(k, r1, c0, c) * (1 - fx) + frames.at(k, r1, c1, c) * fx;
          out.at(k, i, j, c) = top * (1 - fy) + bot * fy;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip sampling

ClipSample extract_window(const Recording& rec, std::size_t start, std::size_t source_frames,
                          std::size_t out_frames, bool with_labels, long gt_offset_frames) {
  const std::size_t n = rec.video.frames;
  if (source_frames < 2 || start + source_frames > n) throw Error("window out of range");
  ClipSample s;
  s.start = start;
  s.source_frames = source_frames;
  s.stretch = static_cast<double>(out_frames) / static_cast<double>(source_frames);
  s.clip = rec.video.slice(start, source_frames);
  if (out_frames != source_frames) {
    s.clip = resample::resample_video(s.clip, s.stretch);
    if (s.clip.frames != out_frames) throw Error("stretched window has the wrong length");
  }
  if (!with_labels) return s;

  // Label window shifted against the video, kept inside the recording.
  const long max_start = static_cast<long>(n - source_frames);
  const auto ls = static_cast<std::size_t>(
      std::clamp(static_cast<long>(start) + gt_offset_frames, 0L, max_start));
  if (rec.has_ppg()) {
    const auto& p = rec.ppg();
    PpgSignal sig{std::vector<double>(p.begin() + static_cast<long>(ls),
                                      p.begin() + static_cast<long>(ls + source_frames)),
                  rec.video.fps};
    s.ppg = out_frames == source_frames ? sig : resample::resample_signal(sig, s.stretch);
    s.ppg->fs = rec.video.fps;
  }
  if (rec.has_hr()) {
    const auto& h = rec.hr();
    double mean = 0.0;
    for (std::size_t k = ls; k < ls + source_frames; ++k) mean += h[k];
    mean /= static_cast<double>(source_frames);
    // Stretching slows every rhythm by source/out.
    s.hr_bpm = mean * static_cast<double>(source_frames) / static_cast<double>(out_frames);
  } else if (s.ppg) {
    try {
      s.hr_bpm = spectral::estimate_hr(*s.ppg);
    } catch (const DegenerateSignal&) {
    }
  }
  return s;
}

ClipSample sample_clip(const Recording& rec, const SampleOptions& opt, Rng& rng) {
  validate(rec.video);
  const std::size_t n = rec.video.frames;
  const auto wn = static_cast<std::size_t>(std::lround(opt.window_s * rec.video.fps));
  if (wn < 2) throw Error("sampling window shorter than 2 frames");
  if (!(opt.max_stretch >= 1.0)) throw Error("max_stretch must be >= 1");
  const auto min_sub = static_cast<std::size_t>(
      std::ceil(static_cast<double>(wn) / opt.max_stretch - 1e-9));
  if (!opt.augment && n < wn)
    throw Error("recording has " + std::to_string(n) + " frames, window needs " +
                std::to_string(wn));
  if (opt.augment && n < min_sub)
    throw Error("recording too short even for a stretched window");
  const bool labels = opt.use_labels && (rec.has_ppg() || rec.has_hr());
  const bool redraw = opt.use_labels && rec.has_ppg();
  const std::size_t attempts = std::max<std::size_t>(1, opt.max_attempts);

  for (std::size_t attempt = 1; attempt <= attempts; ++attempt) {
    std::size_t len = wn;
    if (opt.augment && (n < wn || rng.uniform() < opt.stretch_probability)) {
      const std::size_t hi = std::min(wn, n);
      len = min_sub + static_cast<std::size_t>(rng.below(hi - min_sub + 1));
    }
    const auto start = static_cast<std::size_t>(rng.below(n - len + 1));
    ClipSample s = extract_window(rec, start, len, wn, labels, opt.gt_offset_frames);
    s.attempts = attempt;
    if (!redraw) return s;
    try {
      if (losses::ipr(*s.ppg) <= opt.ipr_threshold) return s;
    } catch (const DegenerateSignal&) {
      // A flat label window is as unusable as a noisy one.
    }
  }
  throw DegenerateSignal("no clean window after " + std::to_string(attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Files

void save_video(const fs::path& path, const VideoClip& clip, bool as_u8) {
  validate(clip);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("RPV1", 4);
  for (std::size_t e : {clip.frames, clip.height, clip.width, clip.channels})
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  io::write_le<std::uint8_t>(os, as_u8 ? 0 : 1);
  if (as_u8) {
    std::vector<char> bytes(clip.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<char>(
          static_cast<std::uint8_t>(std::clamp(std::lround(clip.pixels[i]), 0L, 255L)));
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  } else {
    for (double v : clip.pixels) io::write_le<double>(os, v);
  }
  if (!os) throw Error("write failed: " + path.string());
}

VideoClip load_video(const fs::path& path, double fps) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::expect_magic(is, "RPV1", path.string());
  const std::string what = path.string() + " header";
  const auto t = io::read_le<std::uint32_t>(is, what);
  const auto h = io::read_le<std::uint32_t>(is, what);
  const auto w = io::read_le<std::uint32_t>(is, what);
  const auto c = io::read_le<std::uint32_t>(is, what);
  const auto dtype = io::read_le<std::uint8_t>(is, what);
  if (dtype > 1) throw FormatError(path.string() + ": unknown pixel type " + std::to_string(dtype));
  VideoClip clip(t, h, w, c, fps);
  const std::string body = path.string() + " pixels";
  if (dtype == 0) {
    std::vector<char> bytes(clip.pixels.size());
    if (!is.read(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      throw FormatError("truncated file while reading " + body);
    for (std::size_t i = 0; i < bytes.size(); ++i)
      clip.pixels[i] = static_cast<std::uint8_t>(bytes[i]);
  } else {
    for (double& v : clip.pixels) v = io::read_le<double>(is, body);
  }
  validate(clip);
  return clip;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number '" + s + "'");
  }
  if (used != s.size()) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

// Rows of a headed CSV file as name -> column.
std::map<std::string, std::vector<std::string>> read_csv(const fs::path& path,
                                                          std::size_t& rows) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  std::map<std::string, std::vector<std::string>> cols;
  rows = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw FormatError(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));
    for (std::size_t i = 0; i < header.size(); ++i) cols[header[i]].push_back(fields[i]);
    ++rows;
  }
  for (const auto& h : header) cols[h];
  return cols;
}

std::optional<std::vector<double>> numeric_column(
    const std::map<std::string, std::vector<std::string>>& cols, const std::string& name,
    const fs::path& path) {
  auto it = cols.find(name);
  if (it == cols.end()) return std::nullopt;
  const auto& raw = it->second;
  const auto blank = std::count_if(raw.begin(), raw.end(), [](auto& s) { return s.empty(); });
  if (blank == static_cast<long>(raw.size())) return std::nullopt;
  if (blank != 0) throw FormatError(path.string() + ": column '" + name + "' is partly empty");
  std::vector<double> v;
  v.reserve(raw.size());
  for (const auto& s : raw) v.push_back(parse_double(s, path.string()));
  return v;
}

}  // namespace

void save_recording(const fs::path& dir, const Recording& rec) {
  fs::create_directories(dir);
  save_video(dir / "video.rpv", rec.video);
  {
    std::ofstream os(dir / "meta.txt");
    os.precision(17);
    os << "fps=" << rec.video.fps << "\nsubject=" << rec.subject << "\n";
  }
  if (rec.has_ppg() || rec.has_hr()) {
    const std::vector<double>* p = rec.has_ppg() ? &rec.ppg() : nullptr;
    const std::vector<double>* h = rec.has_hr() ? &rec.hr() : nullptr;
    std::ofstream os(dir / "ppg.csv");
    os.precision(17);
    os << "frame,ppg,hr\n";
    for (std::size_t k = 0; k < rec.video.frames; ++k) {
      os << k << ',';
      if (p) os << (*p)[k];
      os << ',';
      if (h) os << (*h)[k];
      os << '\n';
    }
  }
  if (!rec.boxes.empty()) {
    std::ofstream os(dir / "boxes.csv");
    os.precision(17);
    os << "frame,x,y,w,h\n";
    for (std::size_t k = 0; k < rec.boxes.size(); ++k) {
      const Box& b = rec.boxes[k];
      os << k << ',' << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';
    }
  }
}

Recording load_recording(const fs::path& dir) {
  Recording rec;
  double fps = 30.0;
  if (std::ifstream meta(dir / "meta.txt"); meta) {
    std::string line;
    while (std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "fps") fps = parse_double(value, (dir / "meta.txt").string());
      if (key == "subject") rec.subject = value;
    }
  }
  rec.video = load_video(dir / "video.rpv", fps);
  const std::size_t n = rec.video.frames;
  if (fs::exists(dir / "ppg.csv")) {
    std::size_t rows = 0;
    const auto path = dir / "ppg.csv";
    const auto cols = read_csv(path, rows);
    if (rows != n)
      throw FormatError(path.string() + ": " + std::to_string(rows) + " rows for " +
                        std::to_string(n) + " frames");
    if (auto p = numeric_column(cols, "ppg", path)) rec.set_ppg(std::move(*p));
    if (auto h = numeric_column(cols, "hr", path)) rec.set_hr(std::move(*h));
  }
  if (fs::exists(dir / "boxes.csv")) {
    std::size_t rows = 0;
    const auto path = dir / "boxes.csv";
    const auto cols = read_csv(path, rows);
    std::vector<std::vector<double>> v;
    for (const char* name : {"x", "y", "w", "h"}) {
      auto c = numeric_column(cols, name, path);
      if (!c) throw FormatError(path.string() + ": missing column '" + name + "'");
      v.push_back(std::move(*c));
    }
    for (std::size_t k = 0; k < rows; ++k) rec.boxes.push_back({v[0][k], v[1][k], v[2][k], v[3][k]});
  }
  return rec;
}

std::vector<Recording> load_dataset(const fs::path& root) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "video.rpv")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw Error("no recordings under " + root.string());
  std::vector<Recording> out;
  for (const auto& d : dirs) out.push_back(load_recording(d));
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Recording>& recs) {
  for (std::size_t i = 0; i < recs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "rec_%04zu", i);
    save_recording(root / name, recs[i]);
  }
}

// ---------------------------------------------------------------------------
// Heart-rate stability audit

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<StabilityRow> audit_hr_stability(const std::vector<Recording>& recs,
                                             const std::vector<double>& deltas) {
  // Each series is (rate, sample spacing in seconds).
  std::vector<std::pair<std::vector<double>, double>> series;
  for (const auto& rec : recs) {
    if (rec.has_hr()) {
      series.emplace_back(rec.hr(), 1.0 / rec.video.fps);
    } else if (rec.has_ppg()) {
      const double step = 0.5;
      const auto& p = rec.ppg();
      const auto win = static_cast<std::size_t>(std::lround(10.0 * rec.video.fps));
      std::vector<double> hr;
      for (std::size_t j = 0;; ++j) {
        const auto s = static_cast<std::size_t>(std::lround(j * step * rec.video.fps));
        if (s + win > p.size()) break;
        PpgSignal w{std::vector<double>(p.begin() + static_cast<long>(s),
                                        p.begin() + static_cast<long>(s + win)),
                    rec.video.fps};
        hr.push_back(spectral::estimate_hr(w));
      }
      series.emplace_back(std::move(hr), step);
    }
  }
  std::vector<StabilityRow> rows;
  for (double d : deltas) {
    std::vector<double> diffs;
    for (const auto& [hr, dt] : series) {
      const auto lag = static_cast<std::size_t>(std::lround(d / dt));
      for (std::size_t k = 0; k + lag < hr.size(); ++k) diffs.push_back(std::abs(hr[k + lag] - hr[k]));
    }
    rows.push_back({d, diffs.size(), quantile(diffs, 0.05), quantile(diffs, 0.5),
                    quantile(diffs, 0.95)});
  }
  return rows;
}

}  // namespace rppg::datasets
