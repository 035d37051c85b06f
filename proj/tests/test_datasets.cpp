#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "rppg/datasets.hpp"
#include "rppg/error.hpp"
#include "rppg/losses.hpp"

using namespace rppg;
using namespace rppg::datasets;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec(double duration = 20.0) {
  SynthSpec s;
  s.duration_s = duration;
  s.height = s.width = 16;
  s.region = {4, 4, 8, 8};
  s.drift = 0.0;
  s.base_hr = 90.0;
  s.noise_std = 0.1;
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rppg_datasets_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("synthetic pulse pixels carry the embedded rate") {
  Rng rng(1);
  const Recording rec = synth_generate(small_spec(10.0), rng);
  CHECK(rec.video.frames == 300);
  const double bin = 60.0 * 30.0 / (spectral::kHrPadFactor * 300.0);
  for (std::size_t y : {4u, 8u, 11u})
    CHECK(std::abs(spectral::estimate_hr({rec.video.trace(y, 7), 30.0}) - 90.0) <= bin);
  for (double h : rec.hr()) CHECK(h == 90.0);
  CHECK(std::abs(spectral::estimate_hr({rec.ppg(), 30.0}) - 90.0) <= bin);
}

TEST_CASE("zero amplitude leaves only noise but keeps the label tone") {
  Rng rng(2);
  SynthSpec spec = small_spec(10.0);
  spec.amplitude = 0.0;
  spec.noise_std = 1.0;
  const Recording rec = synth_generate(spec, rng);
  // A noise trace spreads its power across the spectrum.
  CHECK(losses::ipr({rec.video.trace(6, 6), 30.0}) > 0.3);
  CHECK(losses::ipr({rec.ppg(), 30.0}) < 0.05);
}

TEST_CASE("heart-rate drift stays within its bound") {
  Rng rng(3);
  SynthSpec spec = small_spec(120.0);
  spec.drift = 0.25;
  for (int trial = 0; trial < 5; ++trial) {
    const Recording rec = synth_generate(spec, rng);
    const auto& hr = rec.hr();
    const std::size_t lag = 300;
    double worst = 0.0;
    for (std::size_t k = 0; k + lag < hr.size(); ++k)
      worst = std::max(worst, std::abs(hr[k + lag] - hr[k]));
    CHECK(worst <= spec.drift * 10.0 + 1e-9);
    for (double h : hr) {
      CHECK(h >= 40.0);
      CHECK(h <= 250.0);
    }
  }
}

TEST_CASE("nuisance block flashes at its own rate") {
  Rng rng(4);
  SynthSpec spec = small_spec(10.0);
  spec.nuisance = Nuisance{{0, 0, 4, 4}, 150.0, 150.0, 2.0};
  const Recording rec = synth_generate(spec, rng);
  const double bin = 60.0 * 30.0 / (spectral::kHrPadFactor * 300.0);
  CHECK(std::abs(spectral::estimate_hr({rec.video.trace(1, 1), 30.0}) - 150.0) <= bin);
  spec.nuisance->region = {10, 10, 4, 4};
  CHECK_THROWS_AS(synth_generate(spec, rng), Error);
  spec.nuisance->region = {12, 12, 8, 8};
  CHECK_THROWS_AS(synth_generate(spec, rng), Error);
  spec = small_spec();
  spec.base_hr = 300.0;
  CHECK_THROWS_AS(synth_generate(spec, rng), Error);
}

TEST_CASE("same seed gives the same recording") {
  Rng a(5), b(5);
  SynthSpec spec = small_spec(5.0);
  spec.drift = 0.3;
  const Recording ra = synth_generate(spec, a), rb = synth_generate(spec, b);
  CHECK(ra.video.pixels == rb.video.pixels);
  CHECK(ra.hr() == rb.hr());
}

TEST_CASE("sticky boxes") {
  SUBCASE("static boxes never update") {
    const std::vector<Box> boxes(50, Box{10, 10, 20, 20});
    const StickyBoxes s = sticky_boxes(boxes);
    CHECK(s.updates == 0);
    CHECK(s.buffered.front() == Box{5, 5, 30, 30});
    CHECK(s.buffered.back() == s.buffered.front());
  }
  SUBCASE("a drifting box re-centres once when it leaves the buffer") {
    std::vector<Box> boxes;
    for (int k = 0; k < 9; ++k) boxes.push_back({10.0 + k, 10, 20, 20});
    const StickyBoxes s = sticky_boxes(boxes);
    // The buffer spans x in [5, 35]; the raw box exits it at x = 16.
    CHECK(s.updates == 1);
    for (int k = 0; k < 6; ++k) CHECK(s.buffered[static_cast<std::size_t>(k)] == s.buffered[0]);
    CHECK(s.buffered[6] == Box{11, 5, 30, 30});
    CHECK(s.buffered[8] == s.buffered[6]);
  }
  SUBCASE("a jump past the buffer updates on that frame") {
    std::vector<Box> boxes(5, Box{10, 10, 20, 20});
    boxes.push_back({40, 30, 20, 20});
    const StickyBoxes s = sticky_boxes(boxes);
    CHECK(s.updates == 1);
    CHECK(s.buffered[5] == Box{35, 25, 30, 30});
  }
  CHECK_THROWS_AS(sticky_boxes({Box{0, 0, 0, 5}}), Error);
}

TEST_CASE("sticky crop ignores jitter inside the buffer") {
  Rng rng(6);
  VideoClip frames(12, 48, 64, 1, 30.0);
  for (double& v : frames.pixels) v = rng.uniform(0.0, 255.0);
  std::vector<Box> still(12, Box{20, 10, 16, 16}), jitter = still;
  for (std::size_t k = 1; k < 12; ++k) {
    jitter[k].x += rng.uniform(-3.0, 3.0);
    jitter[k].y += rng.uniform(-3.0, 3.0);
  }
  const VideoClip a = sticky_crop(frames, still), b = sticky_crop(frames, jitter);
  CHECK(a.height == 64);
  CHECK(a.width == 64);
  CHECK(a.pixels == b.pixels);
  // A box hanging off the frame is clamped rather than rejected.
  const VideoClip edge = sticky_crop(frames, std::vector<Box>(12, Box{-10, -10, 20, 20}), 8);
  CHECK(edge.height == 8);
  CHECK_THROWS_AS(sticky_crop(frames, std::vector<Box>(3, Box{0, 0, 4, 4})), Error);
}

TEST_CASE("sample_clip") {
  Rng gen(7);
  const Recording rec = synth_generate(small_spec(30.0), gen);
  Rng rng(8);

  SUBCASE("a clean tone never redraws and reads 90 bpm") {
    for (int i = 0; i < 20; ++i) {
      const ClipSample s = sample_clip(rec, {}, rng);
      CHECK(s.attempts == 1);
      CHECK(s.clip.frames == 300);
      CHECK(*s.hr_bpm == doctest::Approx(90.0).epsilon(1e-12));
      REQUIRE(s.ppg);
      CHECK(s.ppg->size() == 300);
    }
  }
  SUBCASE("unaugmented windows are bit-equal to the source") {
    for (int i = 0; i < 10; ++i) {
      const ClipSample s = sample_clip(rec, {}, rng);
      CHECK(s.stretch == 1.0);
      CHECK(s.clip.pixels == rec.video.slice(s.start, 300).pixels);
      const std::vector<double> ref(rec.ppg().begin() + static_cast<long>(s.start),
                                    rec.ppg().begin() + static_cast<long>(s.start + 300));
      CHECK(s.ppg->samples == ref);
    }
  }
  SUBCASE("the largest stretch scales the rate by exactly 2/3") {
    const ClipSample s = extract_window(rec, 17, 200, 300, true);
    CHECK(s.clip.frames == 300);
    CHECK(*s.hr_bpm == 90.0 * 2.0 / 3.0);
    const double bin = 60.0 * 30.0 / (spectral::kHrPadFactor * 300.0);
    CHECK(std::abs(spectral::estimate_hr(*s.ppg) - 60.0) <= bin);
  }
  SUBCASE("augmented draws stay within the stretch range") {
    SampleOptions opt;
    opt.augment = true;
    int stretched = 0;
    for (int i = 0; i < 200; ++i) {
      const ClipSample s = sample_clip(rec, opt, rng);
      CHECK(s.clip.frames == 300);
      CHECK(s.source_frames >= 200);
      CHECK(s.source_frames <= 300);
      CHECK(*s.hr_bpm == doctest::Approx(90.0 * s.source_frames / 300.0).epsilon(1e-12));
      stretched += s.source_frames < 300;
    }
    CHECK(stretched > 70);
    CHECK(stretched < 130);
  }
  SUBCASE("short recordings are always stretched") {
    Rng g(9);
    const Recording short_rec = synth_generate(small_spec(8.0), g);
    SampleOptions opt;
    opt.augment = true;
    for (int i = 0; i < 20; ++i) CHECK(sample_clip(short_rec, opt, rng).source_frames <= 240);
    CHECK_THROWS_AS(sample_clip(short_rec, {}, rng), Error);
  }
  SUBCASE("label windows shift with the offset") {
    const ClipSample s = extract_window(rec, 100, 300, 300, true, 45);
    const std::vector<double> ref(rec.ppg().begin() + 145, rec.ppg().begin() + 445);
    CHECK(s.ppg->samples == ref);
    CHECK(s.clip.pixels == rec.video.slice(100, 300).pixels);
  }
}

TEST_CASE("noisy labels exhaust the redraw budget") {
  Rng gen(10);
  Recording rec = synth_generate(small_spec(30.0), gen);
  std::vector<double> bad(rec.video.frames);
  const auto slow = oracle::tone(bad.size(), 30.0, 15.0), fast = oracle::tone(bad.size(), 30.0, 400.0);
  for (std::size_t k = 0; k < bad.size(); ++k) bad[k] = slow[k] + fast[k];
  rec.set_ppg(bad);
  Rng rng(11);
  try {
    sample_clip(rec, {}, rng);
    FAIL("expected DegenerateSignal");
  } catch (const DegenerateSignal& e) {
    CHECK(std::string(e.what()) == "no clean window after 10 attempts");
  }
  // Without labels in use the window is returned untouched.
  SampleOptions opt;
  opt.use_labels = false;
  Recording::reset_label_reads();
  const ClipSample s = sample_clip(rec, opt, rng);
  CHECK(!s.ppg);
  CHECK(Recording::label_reads() == 0);
}

TEST_CASE("recording files round trip") {
  Rng rng(12);
  SynthSpec spec = small_spec(2.0);
  spec.drift = 0.4;
  spec.subject = "s07";
  Recording rec = synth_generate(spec, rng);
  for (std::size_t k = 0; k < rec.video.frames; ++k)
    rec.boxes.push_back({1.5 + k, 2.25, 10.0, 11.0});
  const auto dir = scratch("roundtrip");
  save_recording(dir, rec);
  const Recording back = load_recording(dir);
  CHECK(back.video.pixels == rec.video.pixels);
  CHECK(back.video.fps == rec.video.fps);
  CHECK(back.subject == "s07");
  CHECK(back.boxes == rec.boxes);
  for (std::size_t k = 0; k < rec.video.frames; ++k) {
    CHECK(back.ppg()[k] == doctest::Approx(rec.ppg()[k]).epsilon(1e-12));
    CHECK(back.hr()[k] == doctest::Approx(rec.hr()[k]).epsilon(1e-12));
  }

  SUBCASE("8-bit pixels") {
    VideoClip clip(3, 2, 2, 3, 25.0);
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = static_cast<double>(i * 7 % 256);
    save_video(dir / "u8.rpv", clip, true);
    CHECK(load_video(dir / "u8.rpv", 25.0).pixels == clip.pixels);
  }
  SUBCASE("missing ppg file leaves labels absent") {
    fs::remove(dir / "ppg.csv");
    const Recording r = load_recording(dir);
    CHECK(!r.has_ppg());
    CHECK(!r.has_hr());
  }
  SUBCASE("hr-only labels") {
    Recording r = rec;
    r.clear_labels();
    r.set_hr(std::vector<double>(rec.video.frames, 72.0));
    const auto d2 = scratch("hr_only");
    save_recording(d2, r);
    const Recording b = load_recording(d2);
    CHECK(!b.has_ppg());
    CHECK(b.hr() == r.hr());
    fs::remove_all(d2);
  }
  SUBCASE("wrong magic names the expected one") {
    std::ofstream(dir / "video.rpv", std::ios::binary) << "RIFFxxxxxxxxxxxxxxxx";
    try {
      load_recording(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("RPV1") != std::string::npos);
    }
  }
  SUBCASE("truncated pixels") {
    const auto size = fs::file_size(dir / "video.rpv");
    fs::resize_file(dir / "video.rpv", size - 5);
    CHECK_THROWS_AS(load_recording(dir), FormatError);
  }
  SUBCASE("label rows must match frames") {
    std::ofstream(dir / "ppg.csv") << "frame,ppg,hr\n0,0.1,70\n";
    CHECK_THROWS_AS(load_recording(dir), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("datasets save as sorted recording directories") {
  Rng rng(13);
  std::vector<Recording> recs;
  for (int i = 0; i < 3; ++i) {
    SynthSpec spec = small_spec(1.0);
    spec.subject = "subject" + std::to_string(i);
    recs.push_back(synth_generate(spec, rng));
  }
  const auto dir = scratch("dataset");
  save_dataset(dir, recs);
  CHECK(fs::exists(dir / "rec_0002" / "video.rpv"));
  const auto back = load_dataset(dir);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(back[static_cast<std::size_t>(i)].subject == "subject" + std::to_string(i));
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_dataset(dir), Error);
  fs::remove_all(dir);
}

TEST_CASE("label reads are counted") {
  Rng rng(14);
  const Recording rec = synth_generate(small_spec(1.0), rng);
  Recording::reset_label_reads();
  (void)rec.ppg();
  (void)rec.hr();
  CHECK(Recording::label_reads() == 2);
  Recording::reset_label_reads();
  CHECK(Recording::label_reads() == 0);
}

TEST_CASE("heart-rate stability audit") {
  CHECK(quantile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(quantile({5}, 0.95) == 5.0);
  CHECK(quantile({0, 10}, 0.05) == doctest::Approx(0.5));

  Rng rng(15);
  std::vector<Recording> recs;
  SynthSpec spec;  // default drift
  spec.height = spec.width = 8;
  spec.region = {2, 2, 4, 4};
  for (int i = 0; i < 4; ++i) recs.push_back(synth_generate(spec, rng));
  const auto rows = audit_hr_stability(recs);
  REQUIRE(rows.size() == 4);
  CHECK(rows[2].delta_s == 10.0);
  CHECK(rows[2].q50 <= 2.5);
  for (const auto& r : rows) {
    CHECK(r.count > 0);
    CHECK(r.q05 <= r.q50);
    CHECK(r.q50 <= r.q95);
    CHECK(r.q95 <= spec.drift * r.delta_s + 1e-9);
  }
  CHECK(rows[0].q50 <= rows[3].q50);

  // Without an hr series the audit reads rates off the ppg.
  for (auto& r : recs) {
    const auto p = r.ppg();
    r.clear_labels();
    r.set_ppg(p);
  }
  const auto from_ppg = audit_hr_stability(recs);
  CHECK(from_ppg[2].count > 0);
  CHECK(from_ppg[2].q50 <= 2.5);
}
