#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "synthetic.hpp"
#include "terrasafe/error.hpp"
#include "terrasafe/labeling.hpp"
#include "terrasafe/random.hpp"

using namespace terrasafe;
using terrasafe::testing::grid_cloud;
using terrasafe::testing::TempDir;

namespace {

LocalFrame frame_with(double verticality_value, double sv) {
  // Normal tilted so that 1 - n_z equals the requested verticality;
  // eigenvalues chosen to give the requested surface variation.
  LocalFrame f;
  const double nz = 1.0 - verticality_value;
  f.normal = Eigen::Vector3d(std::sqrt(1.0 - nz * nz), 0.0, nz);
  const double l3 = sv, rest = 1.0 - sv;
  f.eigenvalues = {rest / 2, rest / 2, l3};
  f.neighbor_count = 20;
  return f;
}

LabeledCloud labeled_from(const PointCloud& cloud, const std::vector<LocalFrame>& frames,
                          const SafetyThresholds& t = {}) {
  std::vector<std::optional<LocalFrame>> opt(frames.begin(), frames.end());
  return classify_safety(cloud, opt, t);
}

PointCloud flat(double size, double spacing) {
  return grid_cloud(0, 0, size, size, spacing, [](double, double) { return 0.0; });
}

// Brute-force even-odd test, written independently of the library.
bool in_polygon(const std::vector<Eigen::Vector2d>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > y) != (b.y() > y)) {
      const double xi = a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

TEST(ClassifySafety, DefaultThresholdExamples) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  const auto lc = labeled_from(c, {frame_with(0.02, 0.0), frame_with(0.0, 0.0), frame_with(0.005, 0.003),
                                   frame_with(0.01, 0.002)});
  EXPECT_EQ(lc.raw_safety[0], 0);
  EXPECT_EQ(lc.raw_safety[1], 1);
  EXPECT_EQ(lc.raw_safety[2], 0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(lc.smooth_safety[i], lc.raw_safety[i]);
  // Exactly at the thresholds is still safe: the rule is strictly greater.
  // Thresholds are taken from the frame itself so the comparison is exact.
  const LocalFrame edge = frame_with(0.01, 0.002);
  PointCloud one;
  one.points = {{0, 0, 0}};
  EXPECT_EQ(labeled_from(one, {edge}, {verticality(edge), surface_variation(edge)}).raw_safety[0], 1);
  EXPECT_EQ(labeled_from(one, {edge}, {std::nextafter(verticality(edge), 0.0), surface_variation(edge)})
                .raw_safety[0],
            0);
}

TEST(ClassifySafety, InsufficientAndForcedUnsafe) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  c.points[1].manual_class = ManualClass::force_unsafe;
  std::vector<std::optional<LocalFrame>> frames{std::nullopt, frame_with(0, 0), LocalFrame{}};
  const auto lc = classify_safety(c, frames, {});
  EXPECT_EQ(lc.raw_safety[0], 0);
  EXPECT_EQ(lc.frame_valid[0], 0);
  EXPECT_EQ(lc.raw_safety[1], 0);
  // All-zero eigenvalues: degenerate geometry counts as insufficient.
  EXPECT_EQ(lc.raw_safety[2], 0);
}

TEST(ClassifySafety, MissingFeaturesRejected) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(classify_safety(c, {frame_with(0, 0)}, {}), Error);
}

TEST(ClassifySafety, ThresholdValidation) {
  EXPECT_THROW((SafetyThresholds{0.0, 0.002}.validate()), Error);
  EXPECT_THROW((SafetyThresholds{0.01, 1.0}.validate()), Error);
  EXPECT_NO_THROW(SafetyThresholds{}.validate());
  EXPECT_DOUBLE_EQ(SafetyThresholds{}.verticality, 0.01);
  EXPECT_DOUBLE_EQ(SafetyThresholds{}.surface_variation, 0.002);
}

TEST(ClassifySafety, MonotoneInThresholds) {
  Rng rng(3);
  PointCloud c;
  std::vector<LocalFrame> frames;
  for (int i = 0; i < 500; ++i) {
    c.points.push_back({static_cast<double>(i), 0, 0});
    frames.push_back(frame_with(rng.uniform(0, 0.03), rng.uniform(0, 0.006)));
  }
  const auto base = labeled_from(c, frames, {0.01, 0.002});
  for (const SafetyThresholds t : {SafetyThresholds{0.02, 0.002}, SafetyThresholds{0.01, 0.004},
                                   SafetyThresholds{0.5, 0.3}}) {
    const auto raised = labeled_from(c, frames, t);
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (base.raw_safety[i]) EXPECT_EQ(raised.raw_safety[i], 1);
    }
  }
}

TEST(OverrideRegion, Validation) {
  OverrideRegion two{{{0, 0}, {1, 1}}, ManualClass::force_unsafe};
  EXPECT_THROW(two.validate(), Error);
  OverrideRegion line{{{0, 0}, {1, 1}, {2, 2}}, ManualClass::force_unsafe};
  EXPECT_THROW(line.validate(), Error);
  OverrideRegion bowtie{{{0, 0}, {1, 1}, {1, 0}, {0, 1}}, ManualClass::force_unsafe};
  EXPECT_THROW(bowtie.validate(), Error);
  OverrideRegion none{{{0, 0}, {1, 0}, {0, 1}}, ManualClass::none};
  EXPECT_THROW(none.validate(), Error);
  OverrideRegion ok{{{0, 0}, {1, 0}, {0, 1}}, ManualClass::force_safe};
  EXPECT_NO_THROW(ok.validate());
}

TEST(ApplyOverrides, EmptyListIsIdentity) {
  const PointCloud c = flat(2, 0.1);
  const auto lc = label_cloud(c, {});
  const auto same = apply_overrides(lc, {});
  EXPECT_EQ(same.raw_safety, lc.raw_safety);
  EXPECT_EQ(same.smooth_safety, lc.smooth_safety);
}

TEST(ApplyOverrides, SquareForcesInsideOnly) {
  const PointCloud c = flat(4, 0.1);
  LabelParams p;
  p.sigma = 0.0;
  const auto lc = label_cloud(c, p);
  const OverrideRegion sq{{{1, 1}, {3, 1}, {3, 3}, {1, 3}}, ManualClass::force_unsafe};
  const auto out = apply_overrides(lc, {sq});
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& pt = c.points[i];
    if (in_polygon(sq.polygon, pt.x, pt.y)) {
      EXPECT_EQ(out.raw_safety[i], 0);
      EXPECT_EQ(out.base.points[i].manual_class, ManualClass::force_unsafe);
    } else {
      EXPECT_EQ(out.raw_safety[i], lc.raw_safety[i]);
      EXPECT_EQ(out.base.points[i].manual_class, ManualClass::none);
    }
  }
}

TEST(ApplyOverrides, LaterRegionWinsAgainstOracle) {
  Rng rng(8);
  PointCloud c;
  for (int i = 0; i < 1000; ++i) c.points.push_back({rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 2)});
  std::vector<std::optional<LocalFrame>> frames(c.size(), frame_with(0.0, 0.0));
  const auto lc = classify_safety(c, frames, {});
  const OverrideRegion unsafe{{{1, 1}, {7, 1}, {7, 7}, {4, 9}, {1, 7}}, ManualClass::force_unsafe};
  const OverrideRegion safe{{{3, 3}, {9, 2}, {9, 9}, {5, 6}}, ManualClass::force_safe};
  const auto out = apply_overrides(lc, {unsafe, safe});
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& pt = c.points[i];
    const bool in_u = in_polygon(unsafe.polygon, pt.x, pt.y);
    const bool in_s = in_polygon(safe.polygon, pt.x, pt.y);
    const std::uint8_t expect = in_s ? 1 : (in_u ? 0 : lc.raw_safety[i]);
    EXPECT_EQ(out.raw_safety[i], expect) << i;
    if (!in_u && !in_s) EXPECT_EQ(out.base.points[i].manual_class, ManualClass::none);
  }
}

TEST(ApplyOverrides, ParseJson) {
  const auto regions = parse_override_regions(
      R"([{"polygon": [[0,0],[2,0],[2,2],[0,2]], "forced": "force_unsafe"},
          {"polygon": [[0,0],[1,0],[0,1]], "forced": "force_safe"}])");
  ASSERT_EQ(regions.size(), 2u);
  EXPECT_EQ(regions[0].forced, ManualClass::force_unsafe);
  EXPECT_EQ(regions[1].forced, ManualClass::force_safe);
  EXPECT_DOUBLE_EQ(regions[0].polygon[2].x(), 2.0);
  EXPECT_THROW(parse_override_regions("{}"), Error);
  EXPECT_THROW(parse_override_regions(R"([{"polygon": [[0,0]], "forced": "zap"}])"), Error);
  EXPECT_THROW(parse_override_regions("not json"), Error);
  EXPECT_THROW(parse_override_regions(R"([{"polygon": [[0,0],[1,0]], "forced": "force_safe"}])"), Error);
}

TEST(SmoothSafety, UniformFieldStaysOne) {
  const PointCloud c = flat(3, 0.1);
  LabelParams p;
  p.sigma = 0.5;
  const auto lc = label_cloud(c, p);
  for (double s : lc.smooth_safety) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(SmoothSafety, SigmaZeroIsIdentity) {
  Rng rng(1);
  PointCloud c = flat(3, 0.1);
  std::vector<std::optional<LocalFrame>> frames;
  for (std::size_t i = 0; i < c.size(); ++i) frames.push_back(frame_with(rng.uniform(0, 0.02), 0.0));
  const auto lc = classify_safety(c, frames, {});
  const auto sm = smooth_safety(lc, NeighborIndex(lc.base), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(sm.smooth_safety[i], lc.raw_safety[i]);
  EXPECT_THROW(smooth_safety(lc, NeighborIndex(lc.base), -1.0), Error);
}

TEST(SmoothSafety, SingleUnsafePointMatchesDirectSum) {
  const double spacing = 0.1, sigma = 0.5;
  PointCloud c = flat(6, spacing);
  std::size_t center = 0;
  double best = INFINITY;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = std::hypot(c.points[i].x - 3.0, c.points[i].y - 3.0);
    if (d < best) best = d, center = i;
  }
  std::vector<std::optional<LocalFrame>> frames(c.size(), frame_with(0, 0));
  frames[center] = std::nullopt;
  const auto lc = classify_safety(c, frames, {});
  ASSERT_EQ(lc.raw_safety[center], 0);
  const auto sm = smooth_safety(lc, NeighborIndex(lc.base), sigma);

  auto oracle = [&](std::size_t p) {
    double num = 0, den = 0;
    for (std::size_t q = 0; q < c.size(); ++q) {
      const double d2 = (c.points[p].position() - c.points[q].position()).squaredNorm();
      if (d2 > 9 * sigma * sigma) continue;
      const double w = std::exp(-d2 / (2 * sigma * sigma));
      num += w * lc.raw_safety[q];
      den += w;
    }
    return num / den;
  };
  // Points 0.5 m from the unsafe one, plus the point itself.
  std::size_t checked = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = (c.points[i].position() - c.points[center].position()).norm();
    if (std::abs(d - 0.5) < 1e-9 || i == center) {
      EXPECT_NEAR(sm.smooth_safety[i], oracle(i), 1e-12);
      EXPECT_LT(sm.smooth_safety[i], 1.0);
      ++checked;
    }
  }
  EXPECT_GE(checked, 5u);
}

TEST(SmoothSafety, BoundedByNeighborhoodExtremes) {
  Rng rng(77);
  PointCloud c;
  for (int i = 0; i < 800; ++i) c.points.push_back({rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(0, 0.3)});
  std::vector<std::optional<LocalFrame>> frames;
  for (std::size_t i = 0; i < c.size(); ++i) frames.push_back(frame_with(rng.uniform() < 0.3 ? 0.5 : 0.0, 0.0));
  const auto lc = classify_safety(c, frames, {});
  NeighborIndex idx(lc.base);
  const double sigma = 0.4;
  const auto sm = smooth_safety(lc, idx, sigma);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto nb = idx.radius_search(c.points[i].position(), 3 * sigma);
    std::uint8_t lo = 1, hi = 0;
    for (std::size_t q : nb) lo = std::min(lo, lc.raw_safety[q]), hi = std::max(hi, lc.raw_safety[q]);
    EXPECT_GE(sm.smooth_safety[i], lo - 1e-12);
    EXPECT_LE(sm.smooth_safety[i], hi + 1e-12);
  }
}

TEST(SliceTerrain, SmallCloudIsOneSlice) {
  const auto lc = label_cloud(flat(10, 0.25), {});
  const auto slices = slice_terrain(lc, 20.0, 0.5);
  ASSERT_EQ(slices.size(), 1u);
  EXPECT_EQ(slices[0].cloud.size(), lc.size());
  EXPECT_TRUE(std::all_of(slices[0].interior.begin(), slices[0].interior.end(), [](auto v) { return v == 1; }));
}

TEST(SliceTerrain, FourSlicesReMergeExactly) {
  const PointCloud c = terrasafe::testing::survey_tile(100, 1.0, 2);
  LabelParams p;
  p.features.radius = 2.0;
  const auto lc = label_cloud(c, p);
  const double overlap = 2.0;
  const auto slices = slice_terrain(lc, 50.0, overlap);
  ASSERT_EQ(slices.size(), 4u);

  std::map<std::tuple<double, double, double>, int> original, merged;
  for (const auto& pt : lc.base.points) ++original[{pt.x, pt.y, pt.z}];
  std::size_t interior_total = 0;
  for (const auto& s : slices) {
    ASSERT_EQ(s.interior.size(), s.cloud.size());
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
      const auto& pt = s.cloud.base.points[i];
      if (s.interior[i]) {
        ++merged[{pt.x, pt.y, pt.z}];
        ++interior_total;
      } else {
        // Margin points lie within the overlap of the interior box.
        EXPECT_GE(pt.x, s.interior_min.x() - overlap - 1e-9);
        EXPECT_LE(pt.x, s.interior_max.x() + overlap + 1e-9);
        EXPECT_GE(pt.y, s.interior_min.y() - overlap - 1e-9);
        EXPECT_LE(pt.y, s.interior_max.y() + overlap + 1e-9);
      }
    }
  }
  EXPECT_EQ(interior_total, lc.size());
  EXPECT_EQ(merged, original);
}

TEST(SliceTerrain, LabelsTravelWithPoints) {
  const auto lc = label_cloud(terrasafe::testing::survey_tile(30, 0.5, 5), {});
  for (const auto& s : slice_terrain(lc, 10.0, 0.5)) {
    ASSERT_EQ(s.cloud.smooth_safety.size(), s.cloud.size());
    ASSERT_EQ(s.cloud.raw_safety.size(), s.cloud.size());
  }
}

TEST(SliceTerrain, InvalidSizes) {
  const auto lc = label_cloud(flat(4, 0.25), {});
  EXPECT_THROW(slice_terrain(lc, 0.0, 0.5), Error);
  EXPECT_THROW(slice_terrain(lc, 0.8, 0.5), Error);
  EXPECT_NO_THROW(slice_terrain(lc, 1.0, 0.5));
}

TEST(LabeledCloudIo, PointCloudRoundTrip) {
  TempDir dir("label");
  auto lc = label_cloud(terrasafe::testing::survey_tile(10, 0.25, 1), {});
  lc = apply_overrides(lc, {OverrideRegion{{{1, 1}, {4, 1}, {4, 4}}, ManualClass::force_unsafe}});
  save_cloud(to_point_cloud(lc), dir / "l.ply", CloudFormat::ply_binary_le);
  const LabeledCloud back = from_point_cloud(load_cloud(dir / "l.ply", CloudFormat::ply_binary_le).cloud);
  ASSERT_EQ(back.size(), lc.size());
  EXPECT_EQ(back.raw_safety, lc.raw_safety);
  EXPECT_EQ(back.frame_valid, lc.frame_valid);
  for (std::size_t i = 0; i < lc.size(); ++i) {
    EXPECT_NEAR(back.smooth_safety[i], lc.smooth_safety[i], 1e-6);
    EXPECT_NEAR(back.verticality[i], lc.verticality[i], 1e-6);
    EXPECT_EQ(back.base.points[i].manual_class, lc.base.points[i].manual_class);
  }
}

TEST(LabeledCloudIo, MissingLabelsRejected) {
  PointCloud c = flat(1, 0.25);
  try {
    from_point_cloud(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(LabelCloud, FeatureTileClassification) {
  const auto tile = terrasafe::testing::feature_tile(16, 0.1, 3);
  const auto lc = label_cloud(tile.cloud, {});
  const double margin = 0.6;
  std::size_t flat_total = 0, flat_safe = 0;
  for (std::size_t i = 0; i < lc.size(); ++i) {
    const auto& p = lc.base.points[i];
    if (tile.ramp.contains(p.x, p.y, margin) || tile.rough.contains(p.x, p.y, margin)) {
      EXPECT_EQ(lc.raw_safety[i], 0) << p.x << "," << p.y;
    } else if (!tile.ramp.contains(p.x, p.y, -margin) && !tile.rough.contains(p.x, p.y, -margin)) {
      ++flat_total;
      flat_safe += lc.raw_safety[i];
    }
  }
  ASSERT_GT(flat_total, 0u);
  EXPECT_GE(static_cast<double>(flat_safe) / flat_total, 0.99);
}
