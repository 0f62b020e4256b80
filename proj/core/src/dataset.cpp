#include "terrasafe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "terrasafe/error.hpp"
#include "terrasafe/image_io.hpp"
#include "terrasafe/parallel.hpp"
#include "terrasafe/random.hpp"

namespace terrasafe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

}  // namespace

void GeneratorConfig::validate() const {
  if (!(heightfield.cell > 0.0)) throw Error(ErrorKind::invalid_argument, "height field cell must be positive");
  camera.validate();
  if (resolution <= 0) throw Error(ErrorKind::invalid_argument, "resolution must be positive");
  if (!(vfov_deg > 0.0 && vfov_deg < 180.0)) {
    throw Error(ErrorKind::invalid_argument, "vertical field of view must lie in (0,180) degrees");
  }
  if (!(step_fraction > 0.0 && step_fraction <= 0.5)) {
    throw Error(ErrorKind::invalid_argument, "ray step fraction must lie in (0,0.5]");
  }
  if (!(min_coverage >= 0.0 && min_coverage <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "min_coverage must lie in [0,1]");
  }
  if (max_attempts <= 0) throw Error(ErrorKind::invalid_argument, "max_attempts must be positive");
}

std::string GeneratorConfig::to_json() const {
  const json j{
      {"heightfield_cell", heightfield.cell},
      {"fill_holes", heightfield.fill_holes},
      {"default_gray", heightfield.default_gray},
      {"h_min", camera.h_min},
      {"h_max", camera.h_max},
      {"deflection_min_deg", degrees(camera.deflection_min)},
      {"deflection_max_deg", degrees(camera.deflection_max)},
      {"max_rejections", camera.max_rejections},
      {"resolution", resolution},
      {"vfov_deg", vfov_deg},
      {"step_fraction", step_fraction},
      {"min_coverage", min_coverage},
      {"max_attempts", max_attempts},
      {"seed", seed},
  };
  return j.dump();
}

std::string DatasetManifest::to_json() const {
  json entries_json = json::array();
  for (const ManifestEntry& e : entries) {
    entries_json.push_back({{"image_path", e.image_path},
                            {"mask_path", e.mask_path},
                            {"pose", e.pose},
                            {"slice_id", e.slice_id},
                            {"coverage", e.coverage},
                            {"seed", e.seed}});
  }
  json config;
  try {
    config = json::parse(generator_config);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("generator config is not valid JSON: ") + e.what());
  }
  return json{{"entries", std::move(entries_json)}, {"generator_config", std::move(config)}}.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    for (const json& e : j.at("entries")) {
      ManifestEntry entry;
      entry.image_path = e.at("image_path").get<std::string>();
      entry.mask_path = e.at("mask_path").get<std::string>();
      entry.pose = e.at("pose").get<std::array<double, 9>>();
      entry.slice_id = e.at("slice_id").get<int>();
      entry.coverage = e.at("coverage").get<double>();
      entry.seed = e.at("seed").get<std::uint64_t>();
      m.entries.push_back(std::move(entry));
    }
    m.generator_config = j.at("generator_config").dump();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << manifest.to_json() << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string() + " for reading");
  std::ostringstream text;
  text << in.rdbuf();
  return DatasetManifest::from_json(text.str());
}

DatasetManifest generate_dataset(std::span<const HeightField> fields, std::size_t n_samples,
                                 const GeneratorConfig& config, const fs::path& out_dir) {
  config.validate();
  if (n_samples == 0) throw Error(ErrorKind::invalid_argument, "sample count must be positive");
  if (fields.empty()) throw Error(ErrorKind::invalid_argument, "dataset generation needs at least one slice");

  std::vector<std::optional<CameraSampler>> samplers(fields.size());
  for (std::size_t s = 0; s < fields.size(); ++s) {
    if (fields[s].valid_count() > 0) samplers[s].emplace(fields[s], config.camera);
  }

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw Error(ErrorKind::io, "cannot create dataset directories under " + out_dir.string() + ": " + ec.message());

  RenderSettings settings;
  settings.width = config.resolution;
  settings.height = config.resolution;
  settings.vfov_deg = config.vfov_deg;
  settings.step_fraction = config.step_fraction;

  DatasetManifest manifest;
  manifest.generator_config = config.to_json();
  manifest.entries.resize(n_samples);

  parallel_for(
      n_samples,
      [&](std::size_t i) {
        const std::size_t slice = i % fields.size();
        if (!samplers[slice]) {
          throw Error(ErrorKind::retry_exhausted,
                      "sample " + std::to_string(i) + ": slice " + std::to_string(slice) +
                          " has no valid terrain; retry cap exhausted");
        }
        for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
          const std::uint64_t seed = derive_seed(config.seed, i, static_cast<std::uint64_t>(attempt));
          CameraPose pose;
          try {
            pose = samplers[slice]->sample(seed);
          } catch (const Error& e) {
            if (e.kind() == ErrorKind::retry_exhausted) continue;
            throw;
          }
          RenderedSample sample = render_pair(fields[slice], pose, settings);
          if (sample.coverage < config.min_coverage) continue;

          char image_name[32];
          char mask_name[32];
          std::snprintf(image_name, sizeof(image_name), "img_%06zu.png", i);
          std::snprintf(mask_name, sizeof(mask_name), "msk_%06zu.png", i);
          ManifestEntry& entry = manifest.entries[i];
          entry.image_path = (fs::path("images") / image_name).generic_string();
          entry.mask_path = (fs::path("masks") / mask_name).generic_string();
          write_png_gray8(out_dir / entry.image_path, quantize(sample.image));
          write_png_gray8(out_dir / entry.mask_path, quantize(sample.mask));
          entry.pose = pose.to_array();
          entry.slice_id = static_cast<int>(slice);
          entry.coverage = sample.coverage;
          entry.seed = seed;
          return;
        }
        throw Error(ErrorKind::retry_exhausted,
                    "sample " + std::to_string(i) + ": no pose reached coverage " +
                        std::to_string(config.min_coverage) + " within " +
                        std::to_string(config.max_attempts) + " attempts");
      },
      1);

  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

DatasetManifest generate_dataset(std::span<const LabeledCloud> slices, std::size_t n_samples,
                                 const GeneratorConfig& config, const fs::path& out_dir) {
  std::vector<HeightField> fields;
  fields.reserve(slices.size());
  for (const LabeledCloud& slice : slices) fields.push_back(build_heightfield(slice, config.heightfield));
  return generate_dataset(std::span<const HeightField>(fields), n_samples, config, out_dir);
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "train fraction must lie in (0,1)");
  }
  const std::size_t n = manifest.entries.size();
  if (n < 2) throw Error(ErrorKind::data, "too few entries to split");

  std::map<int, std::vector<std::size_t>> by_slice;
  for (std::size_t i = 0; i < n; ++i) by_slice[manifest.entries[i].slice_id].push_back(i);

  Rng rng(seed);
  struct Group {
    std::vector<std::size_t> shuffled;
    std::size_t n_train = 0;
  };
  std::vector<Group> groups;
  std::size_t total_train = 0;
  for (auto& [slice, members] : by_slice) {
    Group g;
    g.shuffled = members;
    for (std::size_t k = g.shuffled.size(); k > 1; --k) {
      std::swap(g.shuffled[k - 1], g.shuffled[rng.below(k)]);
    }
    g.n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    total_train += g.n_train;
    groups.push_back(std::move(g));
  }
  // Keep both sides non-empty; each nudge moves a single slice by one.
  if (total_train == 0) {
    auto it = std::max_element(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
      return a.shuffled.size() < b.shuffled.size();
    });
    ++it->n_train;
  } else if (total_train == n) {
    auto it = std::max_element(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
      return a.shuffled.size() < b.shuffled.size();
    });
    --it->n_train;
  }

  std::vector<std::uint8_t> is_train(n, 0);
  for (const Group& g : groups) {
    for (std::size_t k = 0; k < g.n_train; ++k) is_train[g.shuffled[k]] = 1;
  }
  DatasetManifest train, test;
  train.generator_config = manifest.generator_config;
  test.generator_config = manifest.generator_config;
  for (std::size_t i = 0; i < n; ++i) {
    (is_train[i] ? train : test).entries.push_back(manifest.entries[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace terrasafe
