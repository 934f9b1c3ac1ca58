#include "coreecg/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "coreecg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "CECG and cache formats are little-endian; big-endian hosts unsupported");

namespace coreecg {

using nlohmann::json;

const std::vector<std::string> kStandardLeads = {"I",   "II",  "III", "aVR", "aVL", "aVF",
                                                 "V1",  "V2",  "V3",  "V4",  "V5",  "V6"};

void EcgRecord::validate() const {
  if (n_leads < 1 || n_samples < 1)
    throw DataError("record '" + record_id + "': empty dimensions C=" + std::to_string(n_leads) +
                    " T=" + std::to_string(n_samples));
  if (samples.size() != n_leads * n_samples)
    throw DataError("record '" + record_id + "': sample buffer size mismatch");
  if (!(fs > 0)) throw DataError("record '" + record_id + "': non-positive sampling rate");
  for (float v : samples)
    if (!std::isfinite(v))
      throw DataError("record '" + record_id + "': NaN or Inf sample content");
}

// ---- CECG binary format -----------------------------------------------------
// magic "CECG", u16 version=1, u16 C, u32 T, f32 fs, C*T f32 little-endian
// lead-major samples, then an optional u32-length-prefixed JSON metadata block.

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("malformed header or truncated file: " + path);
  return v;
}

json record_meta(const EcgRecord& rec) {
  json meta;
  if (!rec.meta_json.empty()) meta = json::parse(rec.meta_json);
  meta["record_id"] = rec.record_id;
  if (rec.label >= 0) meta["label"] = rec.label;
  return meta;
}

std::string path_stem(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

void write_cecg(const EcgRecord& rec, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write("CECG", 4);
  put<std::uint16_t>(os, 1);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.n_leads));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(rec.n_samples));
  put<float>(os, rec.fs);
  os.write(reinterpret_cast<const char*>(rec.samples.data()),
           static_cast<std::streamsize>(rec.samples.size() * sizeof(float)));
  const std::string meta = record_meta(rec).dump();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!os) throw DataError("write failed: " + path);
}

EcgRecord read_cecg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CECG", 4) != 0)
    throw DataError("malformed header (bad magic): " + path);
  const auto version = get<std::uint16_t>(is, path);
  if (version != 1) throw DataError("unsupported CECG version " + std::to_string(version));
  EcgRecord rec;
  rec.n_leads = get<std::uint16_t>(is, path);
  rec.n_samples = get<std::uint32_t>(is, path);
  rec.fs = get<float>(is, path);
  if (rec.n_leads < 1 || rec.n_samples < 1)
    throw DataError("dimension mismatch in header: " + path);
  rec.samples.resize(rec.n_leads * rec.n_samples);
  is.read(reinterpret_cast<char*>(rec.samples.data()),
          static_cast<std::streamsize>(rec.samples.size() * sizeof(float)));
  if (!is) throw DataError("dimension mismatch: sample payload truncated in " + path);
  std::uint32_t meta_len = 0;
  is.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  if (is && meta_len > 0) {
    std::string meta(meta_len, '\0');
    is.read(meta.data(), meta_len);
    if (!is) throw DataError("metadata block truncated in " + path);
    rec.meta_json = meta;
    try {
      json m = json::parse(meta);
      if (m.contains("record_id")) rec.record_id = m["record_id"].get<std::string>();
      if (m.contains("label")) rec.label = m["label"].get<int>();
    } catch (const json::exception& e) {
      throw DataError("bad metadata JSON in " + path + ": " + e.what());
    }
  }
  if (rec.record_id.empty()) rec.record_id = path_stem(path);
  rec.validate();
  return rec;
}

// ---- CSV format: header of lead names, one sample per row, decimal text ----

std::vector<std::string> lead_names(std::size_t c) {
  if (c == 12) return kStandardLeads;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < c; ++i) names.push_back("L" + std::to_string(i + 1));
  return names;
}

void write_csv(const EcgRecord& rec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  auto names = lead_names(rec.n_leads);
  for (std::size_t c = 0; c < rec.n_leads; ++c) os << (c ? "," : "") << names[c];
  os << "\n";
  char buf[32];
  for (std::size_t t = 0; t < rec.n_samples; ++t) {
    for (std::size_t c = 0; c < rec.n_leads; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(rec.lead(c)[t]));
      os << (c ? "," : "") << buf;
    }
    os << "\n";
  }
  if (!os) throw DataError("write failed: " + path);
}

EcgRecord read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line.empty())
    throw DataError("malformed header (empty): " + path);
  std::size_t c = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<float>> cols(c);
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t got = 0;
    while (std::getline(ss, cell, ',')) {
      if (got >= c) throw DataError("dimension mismatch at row " + std::to_string(row + 2) +
                                    " of " + path);
      try {
        cols[got].push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw DataError("bad numeric cell '" + cell + "' in " + path);
      }
      ++got;
    }
    if (got != c)
      throw DataError("dimension mismatch at row " + std::to_string(row + 2) + " of " + path);
    ++row;
  }
  if (row == 0) throw DataError("no sample rows in " + path);
  EcgRecord rec;
  rec.n_leads = c;
  rec.n_samples = row;
  rec.fs = 250.0f;  // CSV carries no rate; caller overrides when known
  rec.samples.resize(c * row);
  for (std::size_t ci = 0; ci < c; ++ci)
    std::copy(cols[ci].begin(), cols[ci].end(), rec.samples.begin() + ci * row);
  rec.record_id = path_stem(path);
  rec.validate();
  return rec;
}

}  // namespace

EcgRecord read_record(const std::string& path, RecordFormat format) {
  return format == RecordFormat::cecg ? read_cecg(path) : read_csv(path);
}

void write_record(const EcgRecord& rec, const std::string& path, RecordFormat format) {
  rec.validate();
  if (format == RecordFormat::cecg)
    write_cecg(rec, path);
  else
    write_csv(rec, path);
}

// ---- manifest ---------------------------------------------------------------

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  std::map<std::string, std::string> patient_split;
  for (const auto& e : entries) {
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw DataError("manifest: bad split '" + e.split + "' for " + e.record_id);
    if (!seen.insert(e.record_id).second)
      throw DataError("manifest: record '" + e.record_id + "' appears in more than one entry");
    if (!e.patient_id.empty()) {
      auto it = patient_split.find(e.patient_id);
      if (it == patient_split.end())
        patient_split[e.patient_id] = e.split;
      else if (it->second != e.split)
        throw DataError("manifest: patient '" + e.patient_id + "' crosses splits");
    }
  }
}

void DatasetManifest::save(const std::string& path) const {
  validate();
  json j;
  j["class_names"] = class_names;
  j["multilabel"] = multilabel;
  j["records"] = json::array();
  for (const auto& e : entries) {
    json r;
    r["path"] = e.path;
    r["record_id"] = e.record_id;
    if (e.label >= 0) r["label"] = e.label;
    if (!e.multi.empty()) r["multi"] = e.multi;
    r["split"] = e.split;
    if (!e.patient_id.empty()) r["patient_id"] = e.patient_id;
    j["records"].push_back(r);
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("bad manifest JSON in " + path + ": " + e.what());
  }
  DatasetManifest m;
  m.class_names = j.value("class_names", std::vector<std::string>{});
  m.multilabel = j.value("multilabel", false);
  for (const auto& r : j.value("records", json::array())) {
    ManifestEntry e;
    e.path = r.value("path", "");
    e.record_id = r.value("record_id", "");
    e.label = r.value("label", -1);
    if (r.contains("multi")) e.multi = r["multi"].get<std::vector<std::uint8_t>>();
    e.split = r.value("split", "train");
    e.patient_id = r.value("patient_id", "");
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

// ---- synthetic generator -------------------------------------------------------

namespace {

struct Wave {
  double amp, offset, width;
};

// Accumulate Gaussian bumps centered at each beat time.
void add_waves(std::vector<double>& x, double fs, const std::vector<double>& beats,
               const std::vector<Wave>& waves, double lead_scale) {
  const auto t_len = static_cast<std::ptrdiff_t>(x.size());
  for (double tr : beats)
    for (const auto& w : waves) {
      if (w.amp == 0.0) continue;
      const double mu = tr + w.offset;
      const auto lo = static_cast<std::ptrdiff_t>(std::floor((mu - 5 * w.width) * fs));
      const auto hi = static_cast<std::ptrdiff_t>(std::ceil((mu + 5 * w.width) * fs));
      for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i <= std::min(hi, t_len - 1);
           ++i) {
        const double t = static_cast<double>(i) / fs;
        const double d = (t - mu) / w.width;
        x[static_cast<std::size_t>(i)] += lead_scale * w.amp * std::exp(-0.5 * d * d);
      }
    }
}

std::vector<double> lead_noise(std::size_t t_len, double fs, Rng& rng) {
  std::vector<double> n(t_len);
  const double wander_hz = 0.12 + 0.18 * rng.uniform();
  const double wander_amp = 0.05 + 0.04 * rng.uniform();
  const double phase = 6.283185307179586 * rng.uniform();
  for (std::size_t i = 0; i < t_len; ++i) {
    const double t = static_cast<double>(i) / fs;
    n[i] = 0.02 * rng.normal() + wander_amp * std::sin(6.283185307179586 * wander_hz * t + phase);
  }
  return n;
}

}  // namespace

SynthResult generate_synthetic(const SynthParams& params) {
  if (params.n_records < 1) throw ConfigError("generate_synthetic: n_records must be >= 1");
  if (params.class_mix.empty() || params.class_mix.size() > 4)
    throw ConfigError("generate_synthetic: class_mix must have 1..4 entries");
  double mix_sum = 0;
  for (double p : params.class_mix) {
    if (p < 0) throw ConfigError("generate_synthetic: negative class_mix entry");
    mix_sum += p;
  }
  if (std::abs(mix_sum - 1.0) > 1e-6)
    throw ConfigError("generate_synthetic: class_mix must sum to 1");

  SynthResult out;
  out.manifest.class_names = {"normal", "tachycardia", "wide_qrs", "absent_p"};
  out.manifest.class_names.resize(std::max<std::size_t>(params.class_mix.size(), 1));
  out.manifest.multilabel = false;

  const auto t_len = static_cast<std::size_t>(std::llround(params.duration_s * params.fs));
  // Precordial-ish amplitude ramp; limb leads I and III are the two generated
  // sources, II and the augmented leads are linear combinations of them.
  const double v_scale[6] = {0.35, 0.55, 0.75, 1.0, 0.85, 0.65};

  for (std::size_t r = 0; r < params.n_records; ++r) {
    Rng rng(derive_seed(params.seed, "synth", r));
    // class draw from the cumulative mix
    int cls = 0;
    {
      double u = rng.uniform(), acc = 0;
      for (std::size_t c = 0; c < params.class_mix.size(); ++c) {
        acc += params.class_mix[c];
        if (u < acc) {
          cls = static_cast<int>(c);
          break;
        }
        cls = static_cast<int>(params.class_mix.size()) - 1;
      }
    }

    GenInfo info;
    info.cls = cls;
    info.heart_rate_bpm = (cls == 1) ? 120.0 + 40.0 * rng.uniform() : 60.0 + 20.0 * rng.uniform();
    info.qrs_width_scale = (cls == 2) ? 2.5 : 1.0;
    info.p_amplitude = (cls == 3) ? 0.0 : 0.15;

    const double rr = 60.0 / info.heart_rate_bpm;
    const double cf = std::clamp(rr / 0.8, 0.55, 1.0);  // compress P/T at high rates
    const double w = info.qrs_width_scale;
    const std::vector<Wave> waves = {
        {info.p_amplitude, -0.16 * cf, 0.025},
        {-0.12, -0.028 * w, 0.010 * w},
        {1.00, 0.0, 0.012 * w},
        {-0.25, 0.032 * w, 0.012 * w},
        {0.35, 0.30 * cf, 0.060},
    };

    std::vector<double> beats;
    double tr = rng.uniform() * rr;
    while (tr < params.duration_s + 0.5) {
      beats.push_back(tr);
      double jitter = std::clamp(0.02 * rng.normal(), -0.05, 0.05);
      tr += rr * (1.0 + jitter);
    }

    EcgRecord rec;
    rec.n_leads = 12;
    rec.n_samples = t_len;
    rec.fs = params.fs;
    rec.samples.assign(12 * t_len, 0.0f);
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%05zu", r);
    rec.record_id = idbuf;
    rec.label = cls;

    std::vector<double> lead_i(t_len, 0.0), lead_iii(t_len, 0.0);
    add_waves(lead_i, params.fs, beats, waves, 0.80);
    add_waves(lead_iii, params.fs, beats, waves, 0.45);
    {
      auto n1 = lead_noise(t_len, params.fs, rng);
      auto n2 = lead_noise(t_len, params.fs, rng);
      for (std::size_t i = 0; i < t_len; ++i) {
        lead_i[i] += n1[i];
        lead_iii[i] += n2[i];
      }
    }
    float* pI = rec.lead(0);
    float* pII = rec.lead(1);
    float* pIII = rec.lead(2);
    float* pAVR = rec.lead(3);
    float* pAVL = rec.lead(4);
    float* pAVF = rec.lead(5);
    for (std::size_t i = 0; i < t_len; ++i) {
      const float fi = static_cast<float>(lead_i[i]);
      const float fiii = static_cast<float>(lead_iii[i]);
      pI[i] = fi;
      pIII[i] = fiii;
      pII[i] = fi + fiii;  // Einthoven identity, exact in float
      pAVR[i] = -0.5f * (pI[i] + pII[i]);
      pAVL[i] = 0.5f * (pI[i] - pIII[i]);
      pAVF[i] = 0.5f * (pII[i] + pIII[i]);
    }
    for (std::size_t v = 0; v < 6; ++v) {
      std::vector<double> lead(t_len, 0.0);
      add_waves(lead, params.fs, beats, waves, v_scale[v]);
      auto nz = lead_noise(t_len, params.fs, rng);
      float* dst = rec.lead(6 + v);
      for (std::size_t i = 0; i < t_len; ++i)
        dst[i] = static_cast<float>(lead[i] + nz[i]);
    }

    json gen;
    gen["class"] = info.cls;
    gen["heart_rate_bpm"] = info.heart_rate_bpm;
    gen["p_amplitude"] = info.p_amplitude;
    gen["qrs_width_scale"] = info.qrs_width_scale;
    rec.meta_json = json{{"gen", gen}}.dump();

    ManifestEntry entry;
    entry.record_id = rec.record_id;
    entry.label = cls;
    entry.patient_id = rec.record_id;  // one synthetic patient per record
    out.manifest.entries.push_back(entry);
    out.records.push_back(std::move(rec));
    out.info.push_back(info);
  }

  // 80/10/10 split over a seeded shuffle; records are their own patients.
  std::vector<std::size_t> order(params.n_records);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng srng(derive_seed(params.seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[srng.uniform_int(i)]);
  const std::size_t n_train = (params.n_records * 8) / 10;
  const std::size_t n_val = params.n_records / 10;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& e = out.manifest.entries[order[i]];
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
  }
  out.manifest.validate();
  return out;
}

// ---- Butterworth band-pass -----------------------------------------------------

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// Bilinear-transformed Butterworth second-order sections (even order only).
std::vector<Biquad> butter_sos(int order, double cutoff_hz, double fs, bool highpass) {
  const double pi = 3.141592653589793238462643383279502884;
  const double warped = 2.0 * fs * std::tan(pi * cutoff_hz / fs);
  std::vector<Biquad> out;
  for (int k = 0; k < order / 2; ++k) {
    const double theta = pi * (2.0 * k + 1.0) / (2.0 * order) + pi / 2.0;
    const std::complex<double> proto(std::cos(theta), std::sin(theta));
    const std::complex<double> ps = highpass ? warped / proto : warped * proto;
    const std::complex<double> z = (2.0 * fs + ps) / (2.0 * fs - ps);
    const double a1 = -2.0 * z.real();
    const double a2 = std::norm(z);
    const double g = highpass ? (1.0 - a1 + a2) / 4.0 : (1.0 + a1 + a2) / 4.0;
    if (highpass)
      out.push_back({g, -2.0 * g, g, a1, a2});
    else
      out.push_back({g, 2.0 * g, g, a1, a2});
  }
  return out;
}

void biquad_cascade(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const auto& q : sos) {
    double w1 = 0, w2 = 0;  // direct form II transposed
    for (auto& v : x) {
      const double y = q.b0 * v + w1;
      w1 = q.b1 * v - q.a1 * y + w2;
      w2 = q.b2 * v - q.a2 * y;
      v = y;
    }
  }
}

// Forward-backward filtering with odd-reflection padding sized to the filter
// settling time, so edge transients stay out of the retained segment.
std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             std::size_t pad) {
  const std::size_t t_len = x.size();
  pad = std::min(pad, t_len - 1);
  std::vector<double> ext;
  ext.reserve(t_len + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2 * x[0] - x[pad - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2 * x[t_len - 1] - x[t_len - 2 - i]);
  biquad_cascade(sos, ext);
  std::reverse(ext.begin(), ext.end());
  biquad_cascade(sos, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + t_len)};
}

}  // namespace

EcgRecord bandpass_filter(const EcgRecord& rec, double hp_hz, double lp_hz) {
  rec.validate();
  if (rec.fs <= 80.0f)
    throw DataError("bandpass_filter: fs=" + std::to_string(rec.fs) +
                    " too low, need fs > 80 Hz so the 40 Hz band edge is below Nyquist");
  if (rec.n_samples < 2) throw DataError("bandpass_filter: record too short");
  const auto hp = butter_sos(4, hp_hz, rec.fs, true);
  const auto lp = butter_sos(4, lp_hz, rec.fs, false);
  const auto hp_pad = static_cast<std::size_t>(std::lround(3.0 * rec.fs / hp_hz));
  const auto lp_pad =
      std::max<std::size_t>(50, static_cast<std::size_t>(std::lround(3.0 * rec.fs / lp_hz)));
  EcgRecord out = rec;
  std::vector<double> buf(rec.n_samples);
  for (std::size_t c = 0; c < rec.n_leads; ++c) {
    const float* src = rec.lead(c);
    for (std::size_t i = 0; i < rec.n_samples; ++i) buf[i] = src[i];
    buf = filtfilt(hp, buf, hp_pad);
    buf = filtfilt(lp, buf, lp_pad);
    float* dst = out.lead(c);
    for (std::size_t i = 0; i < rec.n_samples; ++i) dst[i] = static_cast<float>(buf[i]);
  }
  return out;
}

EcgRecord resample(const EcgRecord& rec, double target_fs) {
  rec.validate();
  if (target_fs <= 0) throw ConfigError("resample: target_fs must be positive");
  if (rec.fs == static_cast<float>(target_fs)) return rec;
  const auto t_new = static_cast<std::size_t>(
      std::llround(static_cast<double>(rec.n_samples) * target_fs / rec.fs));
  if (t_new < 1) throw DataError("resample: record too short for target rate");
  EcgRecord out = rec;
  out.fs = static_cast<float>(target_fs);
  out.n_samples = t_new;
  out.samples.assign(rec.n_leads * t_new, 0.0f);
  const double step = static_cast<double>(rec.fs) / target_fs;
  for (std::size_t c = 0; c < rec.n_leads; ++c) {
    const float* src = rec.lead(c);
    float* dst = out.lead(c);
    for (std::size_t i = 0; i < t_new; ++i) {
      const double pos = std::min(static_cast<double>(i) * step,
                                  static_cast<double>(rec.n_samples - 1));
      const auto i0 = static_cast<std::size_t>(pos);
      const std::size_t i1 = std::min(i0 + 1, rec.n_samples - 1);
      const double f = pos - static_cast<double>(i0);
      dst[i] = static_cast<float>((1.0 - f) * src[i0] + f * src[i1]);
    }
  }
  return out;
}

std::vector<EcgRecord> crop_windows(const EcgRecord& rec, double window_s, CropMode mode,
                                    std::uint64_t seed, std::size_t crop_len) {
  rec.validate();
  if (mode == CropMode::sliding) {
    const auto w = static_cast<std::size_t>(std::llround(window_s * rec.fs));
    const std::size_t n_seg = w ? rec.n_samples / w : 0;
    if (n_seg == 0)
      throw DataError("crop_windows: record '" + rec.record_id + "' shorter than " +
                      std::to_string(window_s) + " s window");
    std::vector<EcgRecord> out;
    for (std::size_t s = 0; s < n_seg; ++s) {
      EcgRecord seg = rec;
      seg.n_samples = w;
      seg.samples.assign(rec.n_leads * w, 0.0f);
      seg.crop_offset = rec.crop_offset + s * w;
      seg.record_id = rec.record_id + "#w" + std::to_string(s);
      for (std::size_t c = 0; c < rec.n_leads; ++c)
        std::copy(rec.lead(c) + s * w, rec.lead(c) + (s + 1) * w, seg.lead(c));
      out.push_back(std::move(seg));
    }
    return out;
  }
  if (rec.n_samples < crop_len)
    throw DataError("crop_windows: record '" + rec.record_id + "' has T=" +
                    std::to_string(rec.n_samples) + " < crop length " + std::to_string(crop_len));
  std::size_t off = (rec.n_samples - crop_len) / 2;
  if (mode == CropMode::random) {
    Rng rng(derive_seed(seed, "crop", rec.record_id));
    off = static_cast<std::size_t>(rng.uniform_int(rec.n_samples - crop_len + 1));
  }
  EcgRecord out = rec;
  out.n_samples = crop_len;
  out.samples.assign(rec.n_leads * crop_len, 0.0f);
  out.crop_offset = rec.crop_offset + off;
  for (std::size_t c = 0; c < rec.n_leads; ++c)
    std::copy(rec.lead(c) + off, rec.lead(c) + off + crop_len, out.lead(c));
  return {out};
}

EcgRecord zscore_normalize(const EcgRecord& rec) {
  rec.validate();
  EcgRecord out = rec;
  for (std::size_t c = 0; c < rec.n_leads; ++c) {
    const float* src = rec.lead(c);
    double mu = 0;
    for (std::size_t i = 0; i < rec.n_samples; ++i) mu += src[i];
    mu /= static_cast<double>(rec.n_samples);
    double var = 0;
    for (std::size_t i = 0; i < rec.n_samples; ++i) {
      const double d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(rec.n_samples);
    const double inv = 1.0 / std::max(std::sqrt(var), 1e-8);
    float* dst = out.lead(c);
    for (std::size_t i = 0; i < rec.n_samples; ++i)
      dst[i] = static_cast<float>((src[i] - mu) * inv);
  }
  return out;
}

PatchTensor patchify(const EcgRecord& rec, std::size_t patch_len) {
  rec.validate();
  if (patch_len == 0 || rec.n_samples % patch_len != 0)
    throw ShapeError("patchify: T=" + std::to_string(rec.n_samples) + " not divisible by P=" +
                     std::to_string(patch_len));
  PatchTensor p;
  p.C = rec.n_leads;
  p.N = rec.n_samples / patch_len;
  p.P = patch_len;
  p.data = rec.samples;  // [C,T] and [C,N,P] share the row-major layout
  p.record_id = rec.record_id;
  p.crop_offset = rec.crop_offset;
  return p;
}

std::vector<EcgRecord> preprocess_record(const EcgRecord& rec, CropMode crop_mode,
                                         std::uint64_t seed, const PipelineConfig& cfg) {
  EcgRecord filtered = bandpass_filter(rec, cfg.hp_hz, cfg.lp_hz);
  EcgRecord aligned = resample(filtered, cfg.target_fs);
  auto windows = crop_windows(aligned, cfg.window_s, CropMode::sliding, seed);
  std::vector<EcgRecord> out;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    auto crops =
        crop_windows(windows[wi], cfg.window_s, crop_mode, derive_seed(seed, "win", wi),
                     cfg.crop_len);
    out.push_back(zscore_normalize(crops.at(0)));
  }
  return out;
}

// ---- preprocessed sample cache ----------------------------------------------------
// magic "CPTC", u32 header length, JSON header, then float32 signal blobs in
// header order.

void DataCache::save(const std::string& path) const {
  json hdr;
  hdr["C"] = C;
  hdr["T"] = T;
  hdr["class_names"] = class_names;
  hdr["multilabel"] = multilabel;
  hdr["samples"] = json::array();
  for (const auto& s : samples) {
    if (s.signal.size() != C * T)
      throw ShapeError("cache: sample '" + s.record_id + "' has " +
                       std::to_string(s.signal.size()) + " values, want C*T");
    json e;
    e["record_id"] = s.record_id;
    e["split"] = s.split;
    e["label"] = s.label;
    if (!s.multi.empty()) e["multi"] = s.multi;
    e["crop_offset"] = s.crop_offset;
    hdr["samples"].push_back(e);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  const std::string h = hdr.dump();
  os.write("CPTC", 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& s : samples)
    os.write(reinterpret_cast<const char*>(s.signal.data()),
             static_cast<std::streamsize>(s.signal.size() * sizeof(float)));
  if (!os) throw DataError("write failed: " + path);
}

DataCache DataCache::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CPTC", 4) != 0)
    throw DataError("malformed cache header: " + path);
  const auto hlen = get<std::uint32_t>(is, path);
  std::string h(hlen, '\0');
  is.read(h.data(), hlen);
  if (!is) throw DataError("cache header truncated: " + path);
  json hdr;
  try {
    hdr = json::parse(h);
  } catch (const json::exception& e) {
    throw DataError("bad cache JSON in " + path + ": " + e.what());
  }
  DataCache cache;
  cache.C = hdr.at("C").get<std::size_t>();
  cache.T = hdr.at("T").get<std::size_t>();
  cache.class_names = hdr.value("class_names", std::vector<std::string>{});
  cache.multilabel = hdr.value("multilabel", false);
  for (const auto& e : hdr.value("samples", json::array())) {
    CachedSample s;
    s.record_id = e.value("record_id", "");
    s.split = e.value("split", "train");
    s.label = e.value("label", -1);
    if (e.contains("multi")) s.multi = e["multi"].get<std::vector<std::uint8_t>>();
    s.crop_offset = e.value("crop_offset", 0u);
    s.signal.resize(cache.C * cache.T);
    is.read(reinterpret_cast<char*>(s.signal.data()),
            static_cast<std::streamsize>(s.signal.size() * sizeof(float)));
    if (!is) throw DataError("cache payload truncated: " + path);
    cache.samples.push_back(std::move(s));
  }
  return cache;
}

}  // namespace coreecg
