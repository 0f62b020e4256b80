#include "terrasafe_cli/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "terrasafe/cloud_io.hpp"
#include "terrasafe/config.hpp"
#include "terrasafe/dataset.hpp"
#include "terrasafe/error.hpp"
#include "terrasafe/evaluate.hpp"
#include "terrasafe/labeling.hpp"
#include "terrasafe/parallel.hpp"

namespace terrasafe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return exit_invalid_argument;
    case ErrorKind::io: return exit_io;
    case ErrorKind::format: return exit_format;
    case ErrorKind::data: return exit_data;
    case ErrorKind::config: return exit_config;
    case ErrorKind::retry_exhausted: return exit_retry_exhausted;
  }
  return exit_other;
}

// A usage mistake detected after CLI11 has accepted the arguments.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

CloudFormat format_from_flag(const std::string& name) {
  const auto f = parse_cloud_format(name);
  if (!f) throw UsageError("unknown cloud format '" + name + "' (ply_ascii, ply_binary_le, xyz_text, csv)");
  return *f;
}

// Extension-based guess; PLY files are told apart by their format line.
CloudFormat detect_format(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".csv") return CloudFormat::csv;
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz_text;
  if (ext == ".ply") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    for (int i = 0; i < 4 && std::getline(in, line); ++i) {
      if (line.rfind("format ", 0) == 0) {
        return line.find("ascii") != std::string::npos ? CloudFormat::ply_ascii : CloudFormat::ply_binary_le;
      }
    }
    throw Error(ErrorKind::format, path.string() + ": PLY header has no format line");
  }
  throw UsageError("cannot infer the format of " + path.string() + "; pass --format");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

// Resolved config beside a file output: out.ply -> out.config.toml.
fs::path config_beside(const fs::path& output) {
  fs::path p = output;
  p.replace_extension(".config.toml");
  return p;
}

json verdict_json(const ValidationVerdict& v) {
  return {{"site_id", v.site_id},
          {"truth", to_string(v.truth)},
          {"per_frame_safe", v.per_frame_safe},
          {"safety_prediction", v.safety_prediction},
          {"final", to_string(v.final)},
          {"correct", v.correct()}};
}

json options_json(const PostProcessOptions& o) {
  return {{"use_e1", o.use_e1},
          {"use_e2", o.use_e2},
          {"box_kernel", o.box_kernel},
          {"history", o.history},
          {"region_fraction", o.region_fraction}};
}

json sweep_json(const SweepTable& table) {
  json rows = json::array();
  for (const SweepRow& r : table.rows) {
    rows.push_back({{"safety_threshold", r.safety_threshold},
                    {"danger_threshold", 1.0 - r.safety_threshold},
                    {"correct", r.correct},
                    {"total", r.total},
                    {"accuracy", r.accuracy}});
  }
  const SweepRow& best = table.rows[table.best];
  return {{"rows", std::move(rows)},
          {"best", {{"safety_threshold", best.safety_threshold}, {"accuracy", best.accuracy}}}};
}

// Video directories named on the command line; a directory without
// video.json stands for its immediate subdirectories that have one.
std::vector<VideoRecord> load_videos(const std::vector<std::string>& dirs) {
  std::vector<fs::path> found;
  for (const std::string& d : dirs) {
    const fs::path dir(d);
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "not a directory: " + d);
    if (fs::exists(dir / "video.json")) {
      found.push_back(dir);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "video.json")) children.push_back(entry.path());
    }
    if (children.empty()) throw Error(ErrorKind::data, d + ": no video.json and no video subdirectories");
    std::sort(children.begin(), children.end());
    found.insert(found.end(), children.begin(), children.end());
  }
  std::vector<VideoRecord> videos;
  videos.reserve(found.size());
  for (const fs::path& p : found) videos.push_back(load_video_dir(p));
  return videos;
}

struct Invocation {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common(CLI::App* cmd, Invocation& inv) {
  cmd->add_option("--config", inv.config_path, "Configuration file (TOML-style key = value)");
  cmd->add_option("--set", inv.sets, "Override one key, e.g. --set labeling.sigma=0.3")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  inv.seed_opt = cmd->add_option("--seed", inv.seed, "Random seed");
  inv.threads_opt = cmd->add_option("--threads", inv.threads, "Worker threads (0 = all)");
}

PipelineConfig resolve(const Invocation& inv, const std::function<void(PipelineConfig&)>& flags) {
  PipelineConfig cfg = inv.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(inv.config_path);
  for (const std::string& s : inv.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, "--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (inv.seed_opt && inv.seed_opt->count()) cfg.seed = inv.seed;
  if (inv.threads_opt && inv.threads_opt->count()) cfg.threads = inv.threads;
  flags(cfg);
  cfg.validate();
  set_thread_count(cfg.threads);
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Terrain safety labeling, dataset generation and landing-site validation", "terrasafe"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "terrasafe 0.1.0");

  // ingest
  Invocation ingest_inv;
  std::string ingest_input, ingest_out, ingest_format, ingest_out_format = "ply_binary_le";
  double ingest_cell = 0.0;
  auto* ingest = app.add_subcommand("ingest", "Load a survey cloud and resample it to uniform density");
  add_common(ingest, ingest_inv);
  ingest->add_option("input", ingest_input, "Input cloud")->required();
  ingest->add_option("--out", ingest_out, "Output cloud")->required();
  ingest->add_option("--format", ingest_format, "Input format (inferred from the extension if omitted)");
  ingest->add_option("--out-format", ingest_out_format, "Output format");
  auto* ingest_cell_opt = ingest->add_option("--cell", ingest_cell, "Voxel size in meters");

  // label
  Invocation label_inv;
  std::string label_input, label_out, label_overrides, label_format;
  double theta_v = 0.0, theta_sv = 0.0, sigma = 0.0;
  auto* label = app.add_subcommand("label", "Compute features and safety labels");
  add_common(label, label_inv);
  label->add_option("input", label_input, "Resampled cloud")->required();
  label->add_option("--out", label_out, "Labeled PLY output")->required();
  label->add_option("--format", label_format, "Input format (inferred if omitted)");
  label->add_option("--overrides", label_overrides, "JSON file of manual override polygons");
  auto* theta_v_opt = label->add_option("--theta-v", theta_v, "Verticality threshold");
  auto* theta_sv_opt = label->add_option("--theta-sv", theta_sv, "Surface-variation threshold");
  auto* sigma_opt = label->add_option("--sigma", sigma, "Gaussian smoothing sigma in meters");

  // generate
  Invocation gen_inv;
  std::string gen_input, gen_out;
  std::size_t gen_n = 0;
  int gen_resolution = 0;
  double train_fraction = 0.0;
  auto* generate = app.add_subcommand("generate", "Render an image/mask dataset from a labeled cloud");
  add_common(generate, gen_inv);
  generate->add_option("input", gen_input, "Labeled PLY from the label command")->required();
  generate->add_option("--out", gen_out, "Dataset directory")->required();
  generate->add_option("-n,--samples", gen_n, "Number of image/mask pairs")->required();
  auto* res_opt = generate->add_option("--resolution", gen_resolution, "Square image size in pixels");
  auto* split_opt = generate->add_option("--train-fraction", train_fraction,
                                         "Also write train/test manifests split by slice");

  // validate and sweep share their options
  struct EvalArgs {
    Invocation inv;
    std::vector<std::string> dirs;
    std::string out;
    bool e1 = false, e2 = false;
    double theta_s = 0.0;
    std::vector<double> thetas;
    bool sweep = false;
    CLI::Option* e1_opt = nullptr;
    CLI::Option* e2_opt = nullptr;
    CLI::Option* theta_s_opt = nullptr;
    CLI::Option* thetas_opt = nullptr;
  };
  auto add_eval = [](CLI::App* cmd, EvalArgs& a, bool single) {
    add_common(cmd, a.inv);
    cmd->add_option("videos", a.dirs, "Video directories (or parents of them)")->required();
    cmd->add_option("--out", a.out, "Report JSON path")->required();
    a.e1_opt = cmd->add_flag("--e1", a.e1, "Box-blur the danger channel");
    a.e2_opt = cmd->add_flag("--e2", a.e2, "Temporal max over the danger history");
    a.thetas_opt = cmd->add_option("--thetas", a.thetas, "Comma-separated safety thresholds to sweep")
                       ->delimiter(',')
                       ->allow_extra_args(false);
    if (single) {
      a.theta_s_opt = cmd->add_option("--theta-s", a.theta_s, "Safety threshold");
      cmd->add_flag("--sweep", a.sweep, "Append a threshold sweep table");
    }
  };
  EvalArgs val_args, sweep_args;
  auto* validate = app.add_subcommand("validate", "Score prediction videos against ground truth");
  add_eval(validate, val_args, true);
  auto* sweep = app.add_subcommand("sweep", "Validation accuracy across safety thresholds");
  add_eval(sweep, sweep_args, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? exit_ok : exit_usage;
  }

  try {
    if (ingest->parsed()) {
      const PipelineConfig cfg = resolve(ingest_inv, [&](PipelineConfig& c) {
        if (ingest_cell_opt->count()) c.ingest_cell = ingest_cell;
      });
      const CloudFormat in_fmt = ingest_format.empty() ? detect_format(ingest_input) : format_from_flag(ingest_format);
      const CloudFormat out_fmt = format_from_flag(ingest_out_format);
      LoadResult loaded = load_cloud(ingest_input, in_fmt);
      PointCloud resampled = voxel_downsample(loaded.cloud, cfg.ingest_cell);
      save_cloud(resampled, ingest_out, out_fmt);
      cfg.save(config_beside(ingest_out));
      const json report{{"command", "ingest"},
                        {"load", json::parse(loaded.report.to_json())},
                        {"cell", cfg.ingest_cell},
                        {"points_out", resampled.size()},
                        {"output", ingest_out}};
      out << report.dump(2) << '\n';
      return exit_ok;
    }

    if (label->parsed()) {
      const PipelineConfig cfg = resolve(label_inv, [&](PipelineConfig& c) {
        if (theta_v_opt->count()) c.label.thresholds.verticality = theta_v;
        if (theta_sv_opt->count()) c.label.thresholds.surface_variation = theta_sv;
        if (sigma_opt->count()) c.label.sigma = sigma;
      });
      const CloudFormat in_fmt = label_format.empty() ? detect_format(label_input) : format_from_flag(label_format);
      LoadResult loaded = load_cloud(label_input, in_fmt);
      const std::vector<OverrideRegion> regions =
          label_overrides.empty() ? std::vector<OverrideRegion>{} : load_override_regions(label_overrides);
      const LabeledCloud labeled = label_cloud(loaded.cloud, cfg.label, regions);
      save_cloud(to_point_cloud(labeled), label_out, CloudFormat::ply_binary_le);
      cfg.save(config_beside(label_out));

      std::size_t safe = 0, insufficient = 0, overridden = 0;
      for (std::size_t i = 0; i < labeled.size(); ++i) {
        safe += labeled.raw_safety[i];
        insufficient += labeled.frame_valid[i] ? 0 : 1;
        overridden += labeled.base.points[i].manual_class != ManualClass::none ? 1 : 0;
      }
      const json report{{"command", "label"},
                        {"points", labeled.size()},
                        {"safe_points", safe},
                        {"unsafe_points", labeled.size() - safe},
                        {"insufficient_frames", insufficient},
                        {"override_regions", regions.size()},
                        {"overridden_points", overridden},
                        {"theta_v", cfg.label.thresholds.verticality},
                        {"theta_sv", cfg.label.thresholds.surface_variation},
                        {"sigma", cfg.label.sigma},
                        {"output", label_out}};
      out << report.dump(2) << '\n';
      return exit_ok;
    }

    if (generate->parsed()) {
      const PipelineConfig cfg = resolve(gen_inv, [&](PipelineConfig& c) {
        if (res_opt->count()) c.generator.resolution = gen_resolution;
      });
      if (split_opt->count() && !(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw UsageError("--train-fraction must lie in (0,1)");
      }
      if (gen_n == 0) throw UsageError("-n must be positive");
      const CloudFormat in_fmt = detect_format(gen_input);
      LabeledCloud labeled = from_point_cloud(load_cloud(gen_input, in_fmt).cloud);
      std::vector<TerrainSlice> tiles = slice_terrain(labeled, cfg.chunk, cfg.overlap);
      std::vector<LabeledCloud> slices;
      slices.reserve(tiles.size());
      for (TerrainSlice& t : tiles) slices.push_back(std::move(t.cloud));

      const fs::path dir(gen_out);
      const DatasetManifest manifest = generate_dataset(std::span<const LabeledCloud>(slices), gen_n,
                                                        cfg.generator_config(), dir);
      cfg.save(dir / "config.toml");
      json report{{"command", "generate"},
                  {"slices", slices.size()},
                  {"samples", manifest.entries.size()},
                  {"resolution", cfg.generator.resolution},
                  {"manifest", (dir / "manifest.json").string()}};
      if (split_opt->count()) {
        const auto [train, test] = split_dataset(manifest, train_fraction, cfg.seed);
        save_manifest(train, dir / "train_manifest.json");
        save_manifest(test, dir / "test_manifest.json");
        report["train_samples"] = train.entries.size();
        report["test_samples"] = test.entries.size();
      }
      out << report.dump(2) << '\n';
      return exit_ok;
    }

    EvalArgs& a = validate->parsed() ? val_args : sweep_args;
    const bool is_sweep = sweep->parsed();
    const PipelineConfig cfg = resolve(a.inv, [&](PipelineConfig& c) {
      if (a.e1_opt->count()) c.post.use_e1 = a.e1;
      if (a.e2_opt->count()) c.post.use_e2 = a.e2;
      if (a.theta_s_opt && a.theta_s_opt->count()) c.safety_threshold = a.theta_s;
      if (a.thetas_opt->count()) c.sweep = a.thetas;
    });
    const std::vector<VideoRecord> videos = load_videos(a.dirs);
    json report{{"command", is_sweep ? "sweep" : "validate"}, {"options", options_json(cfg.post)}};
    if (!is_sweep) {
      const Thresholds t = cfg.thresholds();
      json verdicts = json::array();
      std::size_t correct = 0;
      for (const VideoRecord& v : videos) {
        const ValidationVerdict verdict = score_video(v, t, cfg.post);
        correct += verdict.correct() ? 1 : 0;
        verdicts.push_back(verdict_json(verdict));
      }
      report["safety_threshold"] = t.safety();
      report["danger_threshold"] = t.danger();
      report["videos"] = std::move(verdicts);
      report["correct"] = correct;
      report["total"] = videos.size();
      report["accuracy"] = static_cast<double>(correct) / static_cast<double>(videos.size());
    }
    if (is_sweep || a.sweep) {
      report["sweep"] = sweep_json(sweep_thresholds(videos, cfg.sweep, cfg.post));
    }
    const fs::path report_path(a.out);
    write_text(report_path, report.dump(2) + "\n");
    cfg.save(config_beside(report_path));
    out << report.dump(2) << '\n';
    return exit_ok;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return exit_usage;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_other;
  }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace terrasafe::cli
