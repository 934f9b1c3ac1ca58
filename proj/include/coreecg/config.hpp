#pragma once

// JSON run configuration: sections {data, model, train, fda, stdm,
// output_dir}. Every key is validated against the schema before any work
// starts; unknown keys are rejected with a JSON-pointer path so typos cannot
// silently fall back to defaults.

#include <string>

#include "coreecg/model.hpp"
#include "coreecg/trainer.hpp"

namespace coreecg {

struct DataConfig {
  std::string cache;     // preprocessed sample cache
  std::string manifest;  // raw dataset manifest (preprocess input)
  double data_ratio = 1.0;
  std::vector<std::int64_t> lead_subset;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  bool toy_preset = false;
  TrainConfig train;
  std::string output_dir = "out";
  std::string config_hash;  // fnv-1a of the canonical serialized form

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& origin);
  std::string canonical_json() const;
};

}  // namespace coreecg
