#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "coreecg/rng.hpp"
#include "coreecg/signal.hpp"

using namespace coreecg;

namespace {

std::string tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "coreecg_signal_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

EcgRecord sine_record(double freq_hz, float fs, double seconds, double amp = 1.0) {
  EcgRecord rec;
  rec.n_leads = 1;
  rec.n_samples = static_cast<std::size_t>(seconds * fs);
  rec.fs = fs;
  rec.record_id = "sine";
  rec.samples.resize(rec.n_samples);
  for (std::size_t i = 0; i < rec.n_samples; ++i)
    rec.samples[i] =
        static_cast<float>(amp * std::sin(2.0 * M_PI * freq_hz * i / static_cast<double>(fs)));
  return rec;
}

// Peak-detection oracle: local maxima above half the global max with a
// 250 ms refractory window.
std::vector<double> detect_r_times(const float* x, std::size_t t, double fs) {
  float mx = 0;
  for (std::size_t i = 0; i < t; ++i) mx = std::max(mx, x[i]);
  const float thr = 0.5f * mx;
  const auto refractory = static_cast<std::size_t>(0.25 * fs);
  std::vector<double> peaks;
  std::size_t last = 0;
  bool has_last = false;
  for (std::size_t i = 1; i + 1 < t; ++i) {
    if (x[i] < thr || x[i] < x[i - 1] || x[i] < x[i + 1]) continue;
    if (has_last && i - last < refractory) continue;
    peaks.push_back(static_cast<double>(i) / fs);
    last = i;
    has_last = true;
  }
  return peaks;
}

}  // namespace

TEST_CASE("CECG round trip is bit exact") {
  SynthParams sp;
  sp.n_records = 1;
  sp.seed = 11;
  auto rec = generate_synthetic(sp).records[0];
  auto path = tmp_path("rt.cecg");
  write_record(rec, path, RecordFormat::cecg);
  auto back = read_record(path, RecordFormat::cecg);
  CHECK(back.n_leads == rec.n_leads);
  CHECK(back.n_samples == rec.n_samples);
  CHECK(back.fs == rec.fs);
  CHECK(back.samples == rec.samples);
  CHECK(back.record_id == rec.record_id);
  CHECK(back.label == rec.label);
}

TEST_CASE("minimal CECG file carries its samples") {
  EcgRecord rec;
  rec.n_leads = 1;
  rec.n_samples = 4;
  rec.fs = 250;
  rec.samples = {0.0f, 1.0f, 0.0f, -1.0f};
  rec.record_id = "mini";
  auto path = tmp_path("mini.cecg");
  write_record(rec, path, RecordFormat::cecg);
  auto back = read_record(path, RecordFormat::cecg);
  CHECK(back.samples == rec.samples);
  CHECK(back.fs == 250.0f);
}

TEST_CASE("CSV round trip within 1e-6 and 12-lead header") {
  SynthParams sp;
  sp.n_records = 1;
  sp.seed = 3;
  sp.duration_s = 2.0;
  auto rec = generate_synthetic(sp).records[0];
  auto path = tmp_path("rt.csv");
  write_record(rec, path, RecordFormat::csv);
  auto back = read_record(path, RecordFormat::csv);
  CHECK(back.n_leads == 12);
  CHECK(back.n_samples == rec.n_samples);
  for (std::size_t i = 0; i < rec.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - rec.samples[i]) <= 1e-6f);
}

TEST_CASE("reader rejects NaN content and bad headers") {
  EcgRecord rec;
  rec.n_leads = 1;
  rec.n_samples = 3;
  rec.fs = 250;
  rec.samples = {0.0f, std::nanf(""), 1.0f};
  rec.record_id = "bad";
  CHECK_THROWS_AS(write_record(rec, tmp_path("nan.cecg"), RecordFormat::cecg), DataError);
  auto garbled = tmp_path("garbled.cecg");
  std::FILE* f = std::fopen(garbled.c_str(), "wb");
  std::fputs("not-a-cecg-file", f);
  std::fclose(f);
  CHECK_THROWS_AS(read_record(garbled, RecordFormat::cecg), DataError);
  CHECK_THROWS_AS(read_record(tmp_path("missing.cecg"), RecordFormat::cecg), DataError);
}

TEST_CASE("unwritable path raises an I/O error") {
  SynthParams sp;
  sp.n_records = 1;
  auto rec = generate_synthetic(sp).records[0];
  CHECK_THROWS_AS(write_record(rec, "/nonexistent-dir/x.cecg", RecordFormat::cecg), DataError);
}

TEST_CASE("synthetic limb leads satisfy the Einthoven identity") {
  SynthParams sp;
  sp.n_records = 4;
  sp.seed = 7;
  auto out = generate_synthetic(sp);
  for (const auto& rec : out.records) {
    float worst = 0;
    for (std::size_t i = 0; i < rec.n_samples; ++i)
      worst = std::max(worst,
                       std::abs(rec.lead(1)[i] - (rec.lead(0)[i] + rec.lead(2)[i])));
    CHECK(worst <= 1e-6f);
  }
}

TEST_CASE("tachycardic class has mean RR below half a second") {
  SynthParams sp;
  sp.n_records = 6;
  sp.class_mix = {0.0, 1.0, 0.0, 0.0};
  sp.seed = 21;
  auto out = generate_synthetic(sp);
  for (const auto& rec : out.records) {
    auto peaks = detect_r_times(rec.lead(1), rec.n_samples, rec.fs);
    REQUIRE(peaks.size() >= 3);
    double mean_rr = (peaks.back() - peaks.front()) / static_cast<double>(peaks.size() - 1);
    CHECK(mean_rr < 0.5);
  }
}

TEST_CASE("absent-P class logs a zero P amplitude") {
  SynthParams sp;
  sp.n_records = 3;
  sp.class_mix = {0.0, 0.0, 0.0, 1.0};
  sp.seed = 5;
  auto out = generate_synthetic(sp);
  for (const auto& info : out.info) {
    CHECK(info.cls == 3);
    CHECK(info.p_amplitude == 0.0);
  }
  // and the metadata block carries it
  CHECK(out.records[0].meta_json.find("\"p_amplitude\":0.0") != std::string::npos);
}

TEST_CASE("generation is deterministic in the seed") {
  SynthParams sp;
  sp.n_records = 2;
  sp.seed = 99;
  auto a = generate_synthetic(sp);
  auto b = generate_synthetic(sp);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].samples == b.records[i].samples);
    CHECK(a.records[i].meta_json == b.records[i].meta_json);
    CHECK(a.manifest.entries[i].split == b.manifest.entries[i].split);
  }
}

TEST_CASE("class mix must sum to one") {
  SynthParams sp;
  sp.class_mix = {0.5, 0.2, 0.0, 0.0};
  CHECK_THROWS_AS(generate_synthetic(sp), ConfigError);
}

TEST_CASE("band-pass keeps 10 Hz within 1 dB") {
  auto rec = sine_record(10.0, 500.0f, 30.0);
  auto filt = bandpass_filter(rec);
  float peak = 0;
  for (std::size_t i = rec.n_samples / 3; i < 2 * rec.n_samples / 3; ++i)
    peak = std::max(peak, std::abs(filt.samples[i]));
  CHECK(peak > std::pow(10.0, -1.0 / 20.0));  // >= -1 dB
  CHECK(peak < std::pow(10.0, +1.0 / 20.0));
}

TEST_CASE("band-pass attenuates 0.1 Hz by at least 20 dB") {
  auto rec = sine_record(0.1, 500.0f, 30.0);
  auto filt = bandpass_filter(rec);
  float peak = 0;
  for (std::size_t i = rec.n_samples / 3; i < 2 * rec.n_samples / 3; ++i)
    peak = std::max(peak, std::abs(filt.samples[i]));
  CHECK(peak <= 0.1f);
}

TEST_CASE("band-pass maps zeros to zeros and validates fs") {
  EcgRecord rec;
  rec.n_leads = 2;
  rec.n_samples = 1000;
  rec.fs = 500;
  rec.record_id = "z";
  rec.samples.assign(2000, 0.0f);
  auto filt = bandpass_filter(rec);
  for (float v : filt.samples) CHECK(v == 0.0f);
  rec.fs = 60;
  CHECK_THROWS_AS(bandpass_filter(rec), DataError);
}

TEST_CASE("resample halves 500 Hz to 250 Hz") {
  auto rec = sine_record(5.0, 500.0f, 10.0);
  CHECK(rec.n_samples == 5000);
  auto down = resample(rec, 250.0);
  CHECK(down.n_samples == 2500);
  CHECK(down.fs == 250.0f);
  // on-grid picks are exact for integer decimation
  for (std::size_t i = 0; i < down.n_samples; ++i)
    CHECK(down.samples[i] == doctest::Approx(rec.samples[2 * i]).epsilon(1e-6));
  auto same = resample(down, 250.0);
  CHECK(same.samples == down.samples);
  auto cst = resample(sine_record(0.0, 500.0f, 1.0, 0.0), 250.0);
  for (float v : cst.samples) CHECK(v == 0.0f);
  CHECK_THROWS_AS(resample(rec, -1.0), ConfigError);
}

TEST_CASE("crop windows: sliding, center, random") {
  auto rec = sine_record(1.0, 250.0f, 25.0);
  auto segs = crop_windows(rec, 10.0, CropMode::sliding, 0);
  CHECK(segs.size() == 2);
  CHECK(segs[0].n_samples == 2500);
  CHECK(segs[1].crop_offset == 2500);

  auto ten = sine_record(1.0, 250.0f, 10.0);
  auto center = crop_windows(ten, 10.0, CropMode::center, 0);
  CHECK(center[0].n_samples == 2250);
  CHECK(center[0].crop_offset == 125);
  for (std::size_t i = 0; i < 2250; ++i)
    CHECK(center[0].samples[i] == ten.samples[125 + i]);

  auto rnd1 = crop_windows(ten, 10.0, CropMode::random, 42);
  auto rnd2 = crop_windows(ten, 10.0, CropMode::random, 42);
  CHECK(rnd1[0].crop_offset == rnd2[0].crop_offset);
  CHECK(rnd1[0].crop_offset <= 250);

  auto nine = sine_record(1.0, 250.0f, 9.0);
  CHECK_THROWS_AS(crop_windows(nine, 10.0, CropMode::sliding, 0), DataError);
}

TEST_CASE("sliding segment count equals floor(duration / 10)") {
  for (double secs : {10.0, 19.9, 30.0, 47.0}) {
    auto rec = sine_record(2.0, 250.0f, secs);
    auto segs = crop_windows(rec, 10.0, CropMode::sliding, 0);
    CHECK(segs.size() == static_cast<std::size_t>(secs / 10.0));
  }
}

TEST_CASE("z-score yields zero mean unit variance and guards flat leads") {
  EcgRecord rec;
  rec.n_leads = 2;
  rec.n_samples = 3;
  rec.fs = 250;
  rec.record_id = "z";
  rec.samples = {1, 2, 3, 5, 5, 5};
  auto z = zscore_normalize(rec);
  double mu = (z.samples[0] + z.samples[1] + z.samples[2]) / 3.0;
  double var = 0;
  for (int i = 0; i < 3; ++i) var += (z.samples[i] - mu) * (z.samples[i] - mu);
  CHECK(mu == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::sqrt(var / 3.0) == doctest::Approx(1.0).epsilon(1e-6));
  for (int i = 3; i < 6; ++i) CHECK(z.samples[i] == 0.0f);  // guarded divisor
  auto z2 = zscore_normalize(z);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(z2.samples[i] - z.samples[i]) <= 1e-6f);
}

TEST_CASE("patchify reshapes C x T into C x N x P") {
  EcgRecord rec;
  rec.n_leads = 12;
  rec.n_samples = 2250;
  rec.fs = 250;
  rec.record_id = "p";
  rec.samples.assign(12 * 2250, 0.5f);
  auto p = patchify(rec, 75);
  CHECK(p.C == 12);
  CHECK(p.N == 30);
  CHECK(p.P == 75);

  EcgRecord one;
  one.n_leads = 1;
  one.n_samples = 75;
  one.fs = 250;
  one.record_id = "p1";
  one.samples.assign(75, 0.0f);
  auto q = patchify(one, 75);
  CHECK(q.N == 1);

  rec.n_samples = 2251;
  rec.samples.resize(12 * 2251);
  CHECK_THROWS_AS(patchify(rec, 75), ShapeError);
}

TEST_CASE("pipeline emits [12,30,75] with no NaNs for any synthetic record") {
  SynthParams sp;
  sp.n_records = 5;
  sp.seed = 13;
  auto out = generate_synthetic(sp);
  for (const auto& rec : out.records) {
    auto crops = preprocess_record(rec, CropMode::center, 99);
    REQUIRE(crops.size() == 1);
    auto patches = patchify(crops[0], 75);
    CHECK(patches.C == 12);
    CHECK(patches.N == 30);
    CHECK(patches.P == 75);
    for (float v : patches.data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("preprocessing is deterministic given record and seed") {
  SynthParams sp;
  sp.n_records = 1;
  sp.seed = 17;
  auto rec = generate_synthetic(sp).records[0];
  auto a = preprocess_record(rec, CropMode::random, 4);
  auto b = preprocess_record(rec, CropMode::random, 4);
  REQUIRE(a.size() == b.size());
  CHECK(a[0].samples == b[0].samples);
  CHECK(a[0].crop_offset == b[0].crop_offset);
}

TEST_CASE("manifest validates split membership") {
  DatasetManifest m;
  m.class_names = {"a"};
  m.entries.push_back({"", "r1", 0, {}, "train", "p1"});
  m.entries.push_back({"", "r1", 0, {}, "test", "p1"});
  CHECK_THROWS_AS(m.validate(), DataError);
  m.entries[1].record_id = "r2";
  CHECK_THROWS_AS(m.validate(), DataError);  // same patient across splits
  m.entries[1].patient_id = "p2";
  m.validate();
  auto path = tmp_path("manifest.json");
  m.save(path);
  auto back = DatasetManifest::load(path);
  CHECK(back.entries.size() == 2);
  CHECK(back.entries[0].split == "train");
}

TEST_CASE("data cache round trips") {
  DataCache cache;
  cache.C = 2;
  cache.T = 6;
  cache.class_names = {"x", "y"};
  CachedSample s;
  s.record_id = "r0";
  s.split = "train";
  s.label = 1;
  s.crop_offset = 3;
  s.signal = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  cache.samples.push_back(s);
  auto path = tmp_path("cache.bin");
  cache.save(path);
  auto back = DataCache::load(path);
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].signal == s.signal);
  CHECK(back.samples[0].crop_offset == 3);
  CHECK(back.T == 6);
}
