// Runs each acceptance criterion at its stated tolerance and time budget and
// prints one PASS/FAIL line per criterion. Exit status is nonzero on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "synthetic.hpp"
#include "terrasafe/dataset.hpp"
#include "terrasafe/error.hpp"
#include "terrasafe/evaluate.hpp"
#include "terrasafe/geometry.hpp"
#include "terrasafe/labeling.hpp"
#include "terrasafe/parallel.hpp"
#include "terrasafe/random.hpp"
#include "terrasafe/terrain.hpp"

using namespace terrasafe;
using Eigen::Vector3d;
namespace ts = terrasafe::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<void(Outcome&)> body;
};

// ---- geometry -------------------------------------------------------------

std::vector<Vector3d> plane_points(const Vector3d& n, double half, double spacing) {
  const Vector3d u = n.unitOrthogonal();
  const Vector3d v = n.cross(u).normalized();
  std::vector<Vector3d> pts;
  for (double a = -half; a <= half + 1e-12; a += spacing) {
    for (double b = -half; b <= half + 1e-12; b += spacing) pts.push_back(a * u + b * v);
  }
  return pts;
}

void features(Outcome& o) {
  const double deg = std::numbers::pi / 180.0;
  for (double angle : {0.0, 45.0, 90.0}) {
    const Vector3d n(std::sin(angle * deg), 0.0, std::cos(angle * deg));
    const NeighborIndex idx(plane_points(n, 1.0, 0.05));
    const auto f = local_frame(idx, Vector3d::Zero(), 0.5, 8);
    if (!f) {
      o.check(false, "no frame on plane");
      continue;
    }
    const double expected = 1.0 - std::cos(angle * deg);
    const double got = verticality(*f);
    o.check(std::abs(got - expected) <= 1e-6, "verticality at " + std::to_string(angle) + " deg = " + std::to_string(got));
    o.check(std::abs(surface_variation(*f)) <= 1e-6, "plane surface variation nonzero");
  }
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<Vector3d> pts;
    for (int i = 0; i < 5000; ++i) pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
    worst = std::max(worst, std::abs(surface_variation(frame_from_points(pts)) - 1.0 / 3.0));
  }
  o.check(worst <= 0.02, "blob surface variation off by " + std::to_string(worst));
  o.detail << "blob max |sv - 1/3| = " << worst;
}

// ---- labeling -------------------------------------------------------------

void classification(Outcome& o) {
  const auto tile = ts::feature_tile(16, 0.1, 3);
  const LabeledCloud lc = label_cloud(tile.cloud, {});
  // Points within one feature radius of a boundary see both regions.
  const double margin = 0.6;
  std::size_t ramp = 0, ramp_unsafe = 0, rough = 0, rough_unsafe = 0, flat = 0, flat_safe = 0;
  for (std::size_t i = 0; i < lc.size(); ++i) {
    const auto& p = lc.base.points[i];
    if (tile.ramp.contains(p.x, p.y, margin)) {
      ++ramp, ramp_unsafe += lc.raw_safety[i] == 0;
    } else if (tile.rough.contains(p.x, p.y, margin)) {
      ++rough, rough_unsafe += lc.raw_safety[i] == 0;
    } else if (tile.flat.contains(p.x, p.y, margin) && !tile.ramp.contains(p.x, p.y, -margin) &&
               !tile.rough.contains(p.x, p.y, -margin)) {
      ++flat, flat_safe += lc.raw_safety[i];
    }
  }
  o.check(ramp > 0 && ramp_unsafe == ramp, "ramp not fully unsafe");
  o.check(rough > 0 && rough_unsafe == rough, "rough patch not fully unsafe");
  const double flat_frac = flat ? static_cast<double>(flat_safe) / flat : 0.0;
  o.check(flat_frac >= 0.99, "flat safe fraction " + std::to_string(flat_frac));
  o.detail << "ramp " << ramp_unsafe << "/" << ramp << " unsafe, rough " << rough_unsafe << "/" << rough
           << " unsafe, flat " << flat_frac * 100 << "% safe";
}

// ---- terrain --------------------------------------------------------------

void sampler(Outcome& o) {
  const LabeledCloud lc = label_cloud(ts::survey_tile(60, 0.25, 8), {});
  const HeightField f = build_heightfield(lc, {});
  const CameraSampler s(f, {});
  const double eps = 1e-9;
  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const CameraPose p = s.sample(seed);
    const Vector3d v = p.look_at - p.position;
    const double h = -v.z();
    const double d = std::acos(std::clamp(-v.z() / v.norm(), -1.0, 1.0));
    if (h < 5.0 - eps || h > 20.0 + eps || d < -eps || d > std::numbers::pi / 4 + eps) ++violations;
  }
  o.check(violations == 0, std::to_string(violations) + " violations");
  o.detail << "10000 samples, " << violations << " violations";
}

// Pixels whose centers see the plane z = 0 inside [lo, hi), straight from
// the pinhole model.
BinaryMap analytic_patch(const CameraPose& pose, const RenderSettings& s, const Eigen::Vector2d& lo,
                         const Eigen::Vector2d& hi) {
  const CameraBasis b = camera_basis(pose);
  const double tan_half = std::tan(s.vfov_deg * std::numbers::pi / 360.0);
  const double aspect = static_cast<double>(s.width) / s.height;
  BinaryMap out(s.width, s.height, 0);
  for (int row = 0; row < s.height; ++row) {
    for (int col = 0; col < s.width; ++col) {
      const double sx = (2.0 * (col + 0.5) / s.width - 1.0) * tan_half * aspect;
      const double sy = (1.0 - 2.0 * (row + 0.5) / s.height) * tan_half;
      const Vector3d d = b.forward + sx * b.right + sy * b.up;
      if (d.z() >= 0) continue;
      const Vector3d p = pose.position - pose.position.z() / d.z() * d;
      out(col, row) = p.x() >= lo.x() && p.x() < hi.x() && p.y() >= lo.y() && p.y() < hi.y();
    }
  }
  return out;
}

bool near_boundary(const BinaryMap& m, int col, int row) {
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int c = col + dx, r = row + dy;
      if (c >= 0 && r >= 0 && c < m.width() && r < m.height() && m(c, r) != m(col, row)) return true;
    }
  }
  return false;
}

CameraPose aimed(const Vector3d& target, double h, double d, double az) {
  CameraPose p;
  p.look_at = target;
  p.height_above_terrain = h;
  p.deflection = d;
  p.azimuth = az;
  const double off = h * std::tan(d);
  p.position = target + Vector3d(off * std::cos(az), off * std::sin(az), h);
  return p;
}

void render_correspondence(Outcome& o) {
  const HeightField terrain = build_heightfield(label_cloud(ts::survey_tile(60, 0.25, 4), {}), {});
  const CameraSampler s(terrain, {});
  RenderSettings hits;
  hits.width = hits.height = 256;
  hits.record_hits = true;
  std::size_t mismatched = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RenderedSample r = render_pair(terrain, s.sample(seed), hits);
    if (r.image_hits != r.mask_hits) ++mismatched;
  }
  o.check(mismatched == 0, std::to_string(mismatched) + " poses with differing hit buffers");

  HeightField f = ts::uniform_field(400, 400, 0.25, 0.0, 0.5f, 1.0f);
  for (int j = 196; j < 206; ++j) {
    for (int i = 192; i < 208; ++i) f.set_cell(i, j, 0.0, 0.5f, 0.0f);
  }
  const RenderSettings full;
  std::size_t off_boundary = 0, dark = 0;
  for (const CameraPose& pose : {aimed({50, 50, 0}, 12.0, 0.0, 0.3), aimed({50, 50, 0}, 15.0, 0.5, 2.0),
                                 aimed({49, 51, 0}, 8.0, 0.7, 4.0), aimed({50.5, 50, 0}, 20.0, 0.78, 5.5)}) {
    const RenderedSample r = render_pair(f, pose, full);
    const BinaryMap expected = analytic_patch(pose, full, {48, 49}, {52, 51.5});
    for (int row = 0; row < full.height; ++row) {
      for (int col = 0; col < full.width; ++col) {
        const bool measured = r.image(col, row) > 0.0f && r.mask(col, row) < 0.5f;
        dark += measured;
        if (measured != (expected(col, row) != 0) && !near_boundary(expected, col, row)) ++off_boundary;
      }
    }
  }
  o.check(dark > 0, "patch not visible");
  o.check(off_boundary == 0, std::to_string(off_boundary) + " patch pixels more than 1 px from the projection");
  o.detail << "100 poses at 256x256 hit-equal (" << mismatched << " mismatched), " << dark
           << " patch pixels at 512x512, " << off_boundary << " beyond 1 px of the projection";
}

// ---- dataset --------------------------------------------------------------

void desk_dataset(Outcome& o) {
  const LabeledCloud lc = label_cloud(ts::survey_tile(100, 0.25, 1), {});
  std::vector<LabeledCloud> slices;
  for (TerrainSlice& t : slice_terrain(lc, 50.0, 0.5)) slices.push_back(std::move(t.cloud));
  GeneratorConfig cfg;
  cfg.seed = 2024;
  ts::TempDir a("accept_a"), b("accept_b");
  const DatasetManifest ma = generate_dataset(std::span<const LabeledCloud>(slices), 100, cfg, a.path());
  const DatasetManifest mb = generate_dataset(std::span<const LabeledCloud>(slices), 100, cfg, b.path());
  o.check(ma.entries.size() == 100, "wrong entry count");
  bool same = ts::read_file(a / "manifest.json") == ts::read_file(b / "manifest.json");
  for (const auto& e : ma.entries) {
    same = same && ts::read_file(a.path() / e.image_path) == ts::read_file(b.path() / e.image_path);
    same = same && ts::read_file(a.path() / e.mask_path) == ts::read_file(b.path() / e.mask_path);
  }
  o.check(same, "rerun differs");
  o.detail << slices.size() << " slices, " << ma.entries.size() << " pairs at 512x512, rerun "
           << (same ? "byte-identical" : "differs");
}

// ---- evaluate -------------------------------------------------------------

ScalarMap random_map(int size, std::uint64_t seed, double density = 1.0) {
  Rng rng(seed);
  ScalarMap m(size, size);
  for (float& v : m.values()) v = rng.uniform() < density ? static_cast<float>(rng.uniform()) : 0.0f;
  return m;
}

double mean(const ScalarMap& m) {
  double s = 0;
  for (float v : m.values()) s += v;
  return s / static_cast<double>(m.size());
}

void post_processing(Outcome& o) {
  double worst_rel = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double density : {1.0, 0.05}) {
      const ScalarMap m = random_map(512, seed, density);
      const double rel = std::abs(mean(box_blur(m, 15)) - mean(m)) / mean(m);
      worst_rel = std::max(worst_rel, rel);
    }
  }
  o.check(worst_rel < 0.06, "E1 mean relative error " + std::to_string(worst_rel));

  bool dominance = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::vector<ScalarMap> h;
    for (int t = 0; t < 5; ++t) h.push_back(random_map(512, seed * 10 + t, 0.1));
    const ScalarMap m = temporal_max(h, 5);
    for (std::size_t i = 0; i < m.size(); ++i) {
      for (const auto& x : h) dominance = dominance && m.values()[i] >= x.values()[i];
    }
  }
  o.check(dominance, "E2 not a pointwise upper bound");

  // Safe at a higher safety threshold must imply safe at every lower one.
  const std::vector<double> ts_values = default_sweep_values();
  std::size_t fixtures = 0, violations = 0;
  auto monotone = [&](std::span<const PredictionFrame> frames, const PostProcessOptions& opt) {
    ++fixtures;
    double prev = 1.0;
    for (double t : ts_values) {
      const double pred = score_video(frames, Verdict::safe, Thresholds(t), opt).safety_prediction;
      if (pred > prev + 1e-12) ++violations;
      prev = pred;
    }
  };
  std::vector<PostProcessOptions> variants(4);
  variants[1].use_e1 = true;
  variants[2].use_e2 = true;
  variants[3].use_e1 = variants[3].use_e2 = true;
  for (int a = 0; a <= 20; ++a) {
    for (int b = 0; b <= 20; ++b) {
      const std::vector<PredictionFrame> f{ts::constant_frame(64, 64, a / 20.0f, b / 20.0f)};
      monotone(f, variants[0]);
    }
  }
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::vector<PredictionFrame> frames;
    for (int t = 0; t < 6; ++t) {
      PredictionFrame f;
      f.p_safe = random_map(64, seed * 100 + t * 2);
      f.p_danger = random_map(64, seed * 100 + t * 2 + 1, 0.3);
      f.timestamp = t;
      frames.push_back(std::move(f));
    }
    for (const auto& v : variants) monotone(frames, v);
  }
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    PredictionFrame f;
    f.p_safe = random_map(512, 900 + seed * 2);
    f.p_danger = random_map(512, 901 + seed * 2, 0.2);
    const std::vector<PredictionFrame> one{f};
    for (const auto& v : variants) monotone(one, v);
  }
  o.check(violations == 0, std::to_string(violations) + " conservatism violations");

  const auto speckle = ts::speckle_video(128, 30, 0.05, 0.05f, 7);
  const Thresholds t(0.9);
  PostProcessOptions both;
  both.use_e1 = both.use_e2 = true;
  const ValidationVerdict raw = score_video(speckle, Verdict::unsafe, t, {});
  const ValidationVerdict filtered = score_video(speckle, Verdict::unsafe, t, both);
  o.check(raw.final == Verdict::safe, "speckle raw verdict not safe");
  o.check(filtered.final == Verdict::unsafe, "speckle E1+E2 verdict not unsafe");
  o.detail << "E1 max rel err " << worst_rel << ", " << fixtures << " conservatism fixtures, speckle "
           << raw.safety_prediction << " -> " << filtered.safety_prediction;
}

void throughput(Outcome& o) {
  set_thread_count(1);
  std::vector<PredictionFrame> frames;
  for (int t = 0; t < 40; ++t) {
    PredictionFrame f;
    f.p_safe = random_map(512, 5000 + t * 2);
    f.p_danger = random_map(512, 5001 + t * 2, 0.1);
    f.timestamp = t;
    frames.push_back(std::move(f));
  }
  PostProcessOptions opt;
  opt.use_e1 = opt.use_e2 = true;
  score_video(std::span(frames).first(3), Verdict::safe, Thresholds(0.5), opt);
  const auto start = std::chrono::steady_clock::now();
  score_video(frames, Verdict::safe, Thresholds(0.5), opt);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() / frames.size();
  set_thread_count(0);
  o.check(ms < 294.0, std::to_string(ms) + " ms/frame");
  o.detail << ms << " ms/frame single-threaded (" << 1000.0 / ms << " Hz)";
}

void metrics(Outcome& o) {
  const std::vector<PredictionFrame> uniform{ts::constant_frame(64, 64, 0.5f, 0.5f)};
  BinaryMap half(64, 64, 0);
  for (std::size_t i = 0; i < half.size(); i += 2) half.values()[i] = 1;
  const std::vector<BinaryMap> truth{half};
  const double ce = segmentation_metrics(uniform, truth).cross_entropy;
  o.check(std::abs(ce - std::log(2.0)) <= 1e-6, "uniform CE " + std::to_string(ce));
  PredictionFrame perfect = ts::constant_frame(64, 64, 0.0f, 1.0f);
  for (std::size_t i = 0; i < half.size(); ++i) {
    if (half.values()[i]) perfect.p_safe.values()[i] = 1.0f, perfect.p_danger.values()[i] = 0.0f;
  }
  const std::vector<PredictionFrame> pf{perfect};
  const double acc = segmentation_metrics(pf, truth).categorical_accuracy;
  o.check(acc == 1.0, "perfect accuracy " + std::to_string(acc));
  o.detail << "uniform CE - ln2 = " << ce - std::log(2.0) << ", perfect accuracy " << acc;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"geometric-features", 5, features},
      {"threshold-classification", 10, classification},
      {"camera-sampler", 5, sampler},
      {"render-correspondence", 60, render_correspondence},
      {"desk-dataset", 300, desk_dataset},
      {"post-processing", 30, post_processing},
      {"throughput", 60, throughput},
      {"metrics", 5, metrics},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= c.budget_s) {
      o.check(false, "took " + std::to_string(secs) + " s, budget " + std::to_string(c.budget_s) + " s");
    }
    std::printf("%s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs, o.detail.str().c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
