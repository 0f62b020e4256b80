#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "terrasafe/dataset.hpp"
#include "terrasafe/evaluate.hpp"
#include "terrasafe/labeling.hpp"

namespace terrasafe {

/// Every tunable of the pipeline. Text form is TOML-style:
///
///   seed = 7
///   [labeling]
///   theta_v = 0.01
///   [evaluate]
///   sweep = [0.1, 0.5, 0.9]
///
/// Keys are addressed as "section.key" (top-level keys have no section).
struct PipelineConfig {
  double ingest_cell = 0.10;
  LabelParams label;
  double chunk = 50.0;
  double overlap = 0.5;
  // Camera deflection bounds live in degrees here; generator_config()
  // converts them.
  GeneratorConfig generator;
  double deflection_min_deg = 0.0;
  double deflection_max_deg = 45.0;
  double safety_threshold = 0.5;
  PostProcessOptions post;
  std::vector<double> sweep = default_sweep_values();
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = all hardware threads

  /// Throws Error(config) naming the offending key.
  void validate() const;

  // generator with the deflection bounds and seed filled in.
  GeneratorConfig generator_config() const;
  Thresholds thresholds() const { return Thresholds(safety_threshold); }

  /// Sets one key from its text value. Throws Error(config) for unknown
  /// keys and unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Applies every assignment in `text` on top of the current values,
  /// then validates. Throws Error(config) with a line number on errors.
  void merge_text(const std::string& text);

  // Defaults overlaid with the file's contents.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(const std::string& text);

  // Complete resolved form; parse(to_text()) reproduces this config.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace terrasafe
