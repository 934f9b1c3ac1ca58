#pragma once

// ECG ingestion, synthetic data generation, and the preprocessing pipeline
// (band-pass -> resample -> crop -> z-score -> patchify) ending in C x N x P
// patch tensors. All operations are pure given (input, seed); records are
// safe to process concurrently.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coreecg/common.hpp"

namespace coreecg {

extern const std::vector<std::string> kStandardLeads;  // I..V6

enum class RecordFormat { cecg, csv };

struct EcgRecord {
  std::size_t n_leads = 0;
  std::size_t n_samples = 0;
  float fs = 0;
  std::vector<float> samples;  // [C, T] row-major, millivolts
  std::string record_id;
  int label = -1;                         // single-class index, -1 when absent
  std::vector<std::uint8_t> multi_label;  // optional multi-hot labels
  std::string meta_json;                  // optional metadata payload (CECG)
  std::size_t crop_offset = 0;            // provenance for cropped views

  float* lead(std::size_t c) { return samples.data() + c * n_samples; }
  const float* lead(std::size_t c) const { return samples.data() + c * n_samples; }
  double duration_s() const { return static_cast<double>(n_samples) / fs; }
  void validate() const;  // dims >= 1, finite samples
};

EcgRecord read_record(const std::string& path, RecordFormat format);
void write_record(const EcgRecord& rec, const std::string& path, RecordFormat format);

// ---- dataset manifest -----------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::string record_id;
  int label = -1;
  std::vector<std::uint8_t> multi;
  std::string split;  // train | val | test
  std::string patient_id;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  bool multilabel = false;

  void validate() const;  // one split per record, per-patient disjointness
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// ---- synthetic generator ----------------------------------------------------

struct SynthParams {
  std::size_t n_records = 1;
  float fs = 500.0f;
  double duration_s = 10.0;
  std::vector<double> class_mix = {0.25, 0.25, 0.25, 0.25};
  std::uint64_t seed = 0;
};

// Knobs that make each class verifiable by construction.
struct GenInfo {
  int cls = 0;
  double heart_rate_bpm = 0;
  double p_amplitude = 0;
  double qrs_width_scale = 1.0;
};

struct SynthResult {
  std::vector<EcgRecord> records;
  DatasetManifest manifest;  // paths empty until records are written
  std::vector<GenInfo> info;
};

// Periodic sum-of-Gaussians P-QRS-T morphology. Classes: 0 normal (60-80
// bpm), 1 tachycardic (120-160 bpm), 2 wide-QRS (width x2.5), 3 absent-P.
// Limb leads are built so that Lead II = Lead I + Lead III exactly.
SynthResult generate_synthetic(const SynthParams& params);

// ---- preprocessing ------------------------------------------------------------

// Cascaded 4th-order Butterworth high-pass (0.65 Hz) and low-pass (40 Hz),
// each applied forward then backward (zero phase). Requires fs > 80 Hz.
EcgRecord bandpass_filter(const EcgRecord& rec, double hp_hz = 0.65, double lp_hz = 40.0);

// Linear interpolation onto the uniform target grid; new T = round(T*target/fs).
EcgRecord resample(const EcgRecord& rec, double target_fs = 250.0);

enum class CropMode { sliding, random, center };

// sliding: contiguous non-overlapping window_s segments, remainder discarded.
// random/center: one crop_len-sample crop (random offset at train time).
std::vector<EcgRecord> crop_windows(const EcgRecord& rec, double window_s, CropMode mode,
                                    std::uint64_t seed, std::size_t crop_len = 2250);

// Per lead: subtract temporal mean, divide by max(std, 1e-8).
EcgRecord zscore_normalize(const EcgRecord& rec);

struct PatchTensor {
  std::size_t C = 0, N = 0, P = 0;
  std::vector<float> data;  // [C, N, P]
  std::string record_id;
  std::size_t crop_offset = 0;
};

PatchTensor patchify(const EcgRecord& rec, std::size_t patch_len = 75);

struct PipelineConfig {
  double target_fs = 250.0;
  double window_s = 10.0;
  std::size_t crop_len = 2250;
  std::size_t patch_len = 75;
  double hp_hz = 0.65;
  double lp_hz = 40.0;
};

// filter -> resample -> sliding windows -> (random|center) crop -> z-score.
// One normalized [C, crop_len] record per 10 s window.
std::vector<EcgRecord> preprocess_record(const EcgRecord& rec, CropMode crop_mode,
                                         std::uint64_t seed, const PipelineConfig& cfg = {});

// ---- preprocessed sample cache --------------------------------------------------

struct CachedSample {
  std::string record_id;
  std::string split;
  int label = -1;
  std::vector<std::uint8_t> multi;
  std::size_t crop_offset = 0;
  std::vector<float> signal;  // [C, T] normalized crop
};

struct DataCache {
  std::size_t C = 12;
  std::size_t T = 2250;
  std::vector<std::string> class_names;
  bool multilabel = false;
  std::vector<CachedSample> samples;

  void save(const std::string& path) const;
  static DataCache load(const std::string& path);
};

}  // namespace coreecg
