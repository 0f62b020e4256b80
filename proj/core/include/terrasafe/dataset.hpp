#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "terrasafe/labeling.hpp"
#include "terrasafe/terrain.hpp"

namespace terrasafe {

struct GeneratorConfig {
  HeightFieldParams heightfield;
  CameraBounds camera;
  int resolution = 512;
  double vfov_deg = 60.0;
  double step_fraction = 0.5;
  // Renders whose terrain coverage falls below this are redrawn.
  double min_coverage = 0.5;
  // Pose draws per sample before giving up.
  int max_attempts = 50;
  std::uint64_t seed = 0;

  void validate() const;
  // Compact JSON text with every parameter; angles in degrees.
  std::string to_json() const;
};

struct ManifestEntry {
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
  std::array<double, 9> pose{};  // CameraPose::to_array order
  int slice_id = 0;
  double coverage = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  // Compact JSON text of the generator parameters, embedded as an object.
  std::string generator_config = "{}";

  std::string to_json() const;
  // Throws Error(format) on malformed input.
  static DatasetManifest from_json(const std::string& text);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Renders n_samples image/mask pairs into out_dir/images/img_%06d.png and
/// out_dir/masks/msk_%06d.png and writes out_dir/manifest.json. Sample i
/// uses slice i % fields.size(); every pose seed is derived from
/// (config.seed, i, attempt), so output bytes do not depend on threading.
/// Throws Error(invalid_argument) for n_samples == 0 or no slices,
/// Error(retry_exhausted) if a sample finds no pose with enough coverage
/// within max_attempts, and Error(io) on write failures.
DatasetManifest generate_dataset(std::span<const HeightField> fields, std::size_t n_samples,
                                 const GeneratorConfig& config, const std::filesystem::path& out_dir);

// Builds one height field per slice, then generates as above.
DatasetManifest generate_dataset(std::span<const LabeledCloud> slices, std::size_t n_samples,
                                 const GeneratorConfig& config, const std::filesystem::path& out_dir);

/// Seeded split stratified by slice: each slice contributes
/// round(train_fraction * count) entries to the training side, adjusted by
/// one where needed so neither side is empty. Entries keep manifest order.
/// Throws Error(invalid_argument) unless 0 < train_fraction < 1 and
/// Error(data) for fewer than two entries.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction, std::uint64_t seed);

}  // namespace terrasafe
