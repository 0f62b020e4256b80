#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "terrasafe/grid.hpp"

namespace terrasafe {

/// Two-channel classifier output for one video frame.
struct PredictionFrame {
  ScalarMap p_safe;
  ScalarMap p_danger;
  int timestamp = 0;

  // Throws Error(invalid_argument) on mismatched channel sizes and
  // Error(data) on values outside [0, 1].
  void validate() const;
};

/// Safety threshold; the danger threshold is always its complement.
class Thresholds {
 public:
  // Throws Error(invalid_argument) unless safety lies in (0, 1).
  explicit Thresholds(double safety = 0.5);

  double safety() const noexcept { return safety_; }
  double danger() const noexcept { return 1.0 - safety_; }

 private:
  double safety_;
};

/// 1 marks danger: p_danger >= danger threshold or p_safe < safety
/// threshold. Danger wins when both channels fire.
BinaryMap binarize(const ScalarMap& p_safe, const ScalarMap& p_danger, const Thresholds& t);
BinaryMap binarize(const PredictionFrame& frame, const Thresholds& t);

/// k x k mean filter with clamp-to-edge borders. Separable running sums,
/// O(1) per pixel in k. Throws Error(invalid_argument) for even or
/// non-positive k.
ScalarMap box_blur(const ScalarMap& map, int k = 15);

/// Per-pixel maximum over the last min(n, history.size()) maps, which keeps
/// temporally sparse danger alive. Throws Error(invalid_argument) on an
/// empty history, n < 1, or maps of different sizes.
ScalarMap temporal_max(std::span<const ScalarMap> history, std::size_t n = 5);

/// Streaming form of temporal_max holding the most recent n maps.
class TemporalMaxFilter {
 public:
  explicit TemporalMaxFilter(std::size_t n = 5);

  // Appends a map and returns the max over the retained window.
  ScalarMap push(ScalarMap map);
  void reset() noexcept { window_.clear(); }
  std::size_t size() const noexcept { return window_.size(); }

 private:
  std::size_t n_;
  std::deque<ScalarMap> window_;
};

/// Safe when strictly more than half the pixels of the centered square of
/// side floor(region_fraction * min(H, W)) are safe (value 0 in the danger
/// map). Throws Error(invalid_argument) when region_fraction is outside
/// (0, 1] or the square would be smaller than one pixel.
bool center_verdict(const BinaryMap& danger, double region_fraction = 0.25);

enum class Verdict { safe, unsafe };

const char* to_string(Verdict v) noexcept;
Verdict parse_verdict(const std::string& text);

struct PostProcessOptions {
  bool use_e1 = false;  // spatial box blur on the danger channel
  bool use_e2 = false;  // temporal max over the blurred danger history
  int box_kernel = 15;
  std::size_t history = 5;
  double region_fraction = 0.25;
};

struct ValidationVerdict {
  std::string site_id;
  Verdict truth = Verdict::safe;
  std::vector<bool> per_frame_safe;
  double safety_prediction = 0.0;  // fraction of frames judged safe
  Verdict final = Verdict::unsafe;  // safe iff safety_prediction >= 0.5

  bool correct() const noexcept { return final == truth; }
};

/// Per frame: optional box blur of p_danger, optional temporal max over the
/// (blurred) danger history, binarize, center verdict. Frames are processed
/// in order. Throws Error(invalid_argument) on an empty sequence or frames
/// of inconsistent size.
ValidationVerdict score_video(std::span<const PredictionFrame> frames, Verdict truth,
                              const Thresholds& thresholds, const PostProcessOptions& options,
                              const std::string& site_id = {});

struct SegmentationMetrics {
  double categorical_accuracy = 0.0;
  double cross_entropy = 0.0;
};

/// Pixelwise two-class metrics. truth[i] is 1 where the pixel is safe.
/// The predicted class is safe iff p_safe > p_danger. Probabilities are
/// clamped to [1e-7, 1 - 1e-7] before taking logs. Throws
/// Error(invalid_argument) if the frame and mask shapes differ or the input
/// is empty.
SegmentationMetrics segmentation_metrics(std::span<const PredictionFrame> predictions,
                                         std::span<const BinaryMap> truth);

/// A validation video: its frames and ground truth.
struct VideoRecord {
  std::string site_id;
  Verdict truth = Verdict::safe;
  double fps = 0.0;
  // Per-video override of PostProcessOptions::region_fraction; <= 0 means
  // use the options' value.
  double region_fraction = 0.0;
  std::vector<PredictionFrame> frames;
};

/// Reads safe_%06d.png / danger_%06d.png pairs (value/255 = probability)
/// and video.json {site_id, truth, fps[, region_fraction]} from `dir`.
/// Throws Error(io) for a missing directory, Error(data) for a directory
/// with no frame pairs, Error(format) on a bad video.json or a frame with
/// only one channel.
VideoRecord load_video_dir(const std::filesystem::path& dir);

/// Writes a video in the load_video_dir layout.
void save_video_dir(const VideoRecord& video, const std::filesystem::path& dir);

ValidationVerdict score_video(const VideoRecord& video, const Thresholds& thresholds,
                              PostProcessOptions options);

struct SweepRow {
  double safety_threshold = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<ValidationVerdict> verdicts;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  // Index into rows of the highest accuracy; the first such row on ties.
  std::size_t best = 0;
};

// 0.1, 0.2, ..., 0.9
std::vector<double> default_sweep_values();

/// score_video for every video at every safety threshold. Throws
/// Error(invalid_argument) on an empty threshold list or video list.
SweepTable sweep_thresholds(std::span<const VideoRecord> videos, std::span<const double> safety_values,
                            const PostProcessOptions& options);

}  // namespace terrasafe
