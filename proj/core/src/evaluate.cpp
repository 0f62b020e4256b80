#include "terrasafe/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "terrasafe/error.hpp"
#include "terrasafe/image_io.hpp"

namespace terrasafe {

namespace fs = std::filesystem;

void PredictionFrame::validate() const {
  if (!p_safe.same_shape(p_danger)) {
    throw Error(ErrorKind::invalid_argument, "safety and danger channels differ in size");
  }
  auto in_unit = [](float v) { return v >= 0.0f && v <= 1.0f; };
  if (!std::all_of(p_safe.values().begin(), p_safe.values().end(), in_unit) ||
      !std::all_of(p_danger.values().begin(), p_danger.values().end(), in_unit)) {
    throw Error(ErrorKind::data, "prediction probabilities must lie in [0,1]");
  }
}

Thresholds::Thresholds(double safety) : safety_(safety) {
  if (!(safety > 0.0 && safety < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "safety threshold must lie in (0,1)");
  }
}

BinaryMap binarize(const ScalarMap& p_safe, const ScalarMap& p_danger, const Thresholds& t) {
  if (!p_safe.same_shape(p_danger)) {
    throw Error(ErrorKind::invalid_argument, "safety and danger channels differ in size");
  }
  BinaryMap out(p_safe.width(), p_safe.height());
  const double safe_t = t.safety();
  const double danger_t = t.danger();
  const auto s = p_safe.values();
  const auto d = p_danger.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = (d[i] >= danger_t || s[i] < safe_t) ? 1 : 0;
  }
  return out;
}

BinaryMap binarize(const PredictionFrame& frame, const Thresholds& t) {
  return binarize(frame.p_safe, frame.p_danger, t);
}

namespace {

// One clamp-to-edge running-mean pass over `count` samples spaced `stride`
// apart.
void mean_pass(const float* in, float* out, int count, std::ptrdiff_t stride, int radius) {
  const double inv = 1.0 / (2 * radius + 1);
  auto at = [&](int i) { return static_cast<double>(in[std::clamp(i, 0, count - 1) * stride]); };
  double sum = 0.0;
  for (int d = -radius; d <= radius; ++d) sum += at(d);
  for (int i = 0; i < count; ++i) {
    out[i * stride] = static_cast<float>(sum * inv);
    sum += at(i + radius + 1) - at(i - radius);
  }
}

}  // namespace

ScalarMap box_blur(const ScalarMap& map, int k) {
  if (k < 1 || k % 2 == 0) throw Error(ErrorKind::invalid_argument, "box blur kernel must be odd and >= 1");
  if (k == 1 || map.empty()) return map;
  const int radius = k / 2;
  const int w = map.width();
  const int h = map.height();
  ScalarMap tmp(w, h);
  ScalarMap out(w, h);
  for (int y = 0; y < h; ++y) mean_pass(map.row(y).data(), tmp.row(y).data(), w, 1, radius);
  for (int x = 0; x < w; ++x) {
    mean_pass(tmp.values().data() + x, out.values().data() + x, h, w, radius);
  }
  return out;
}

ScalarMap temporal_max(std::span<const ScalarMap> history, std::size_t n) {
  if (history.empty()) throw Error(ErrorKind::invalid_argument, "temporal history is empty");
  if (n < 1) throw Error(ErrorKind::invalid_argument, "temporal history length must be >= 1");
  const std::size_t take = std::min(n, history.size());
  const auto window = history.subspan(history.size() - take);
  ScalarMap out = window.back();
  for (std::size_t f = 0; f + 1 < window.size(); ++f) {
    if (!window[f].same_shape(out)) {
      throw Error(ErrorKind::invalid_argument, "temporal history maps differ in size");
    }
    auto o = out.values();
    const auto v = window[f].values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(o[i], v[i]);
  }
  return out;
}

TemporalMaxFilter::TemporalMaxFilter(std::size_t n) : n_(n) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "temporal history length must be >= 1");
}

ScalarMap TemporalMaxFilter::push(ScalarMap map) {
  if (!window_.empty() && !window_.front().same_shape(map)) {
    throw Error(ErrorKind::invalid_argument, "temporal history maps differ in size");
  }
  window_.push_back(std::move(map));
  while (window_.size() > n_) window_.pop_front();
  ScalarMap out = window_.back();
  auto o = out.values();
  for (std::size_t f = 0; f + 1 < window_.size(); ++f) {
    const auto v = window_[f].values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(o[i], v[i]);
  }
  return out;
}

bool center_verdict(const BinaryMap& danger, double region_fraction) {
  if (!(region_fraction > 0.0 && region_fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "center region fraction must lie in (0,1]");
  }
  const int side = static_cast<int>(std::floor(region_fraction * std::min(danger.width(), danger.height())));
  if (side < 1) throw Error(ErrorKind::invalid_argument, "center region is smaller than one pixel");
  const int x0 = (danger.width() - side) / 2;
  const int y0 = (danger.height() - side) / 2;
  std::size_t safe = 0;
  for (int y = y0; y < y0 + side; ++y) {
    const auto row = danger.row(y);
    for (int x = x0; x < x0 + side; ++x) safe += row[static_cast<std::size_t>(x)] == 0 ? 1 : 0;
  }
  const std::size_t total = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  return 2 * safe > total;
}

const char* to_string(Verdict v) noexcept { return v == Verdict::safe ? "safe" : "unsafe"; }

Verdict parse_verdict(const std::string& text) {
  if (text == "safe") return Verdict::safe;
  if (text == "unsafe") return Verdict::unsafe;
  throw Error(ErrorKind::format, "verdict must be 'safe' or 'unsafe', got '" + text + "'");
}

ValidationVerdict score_video(std::span<const PredictionFrame> frames, Verdict truth,
                              const Thresholds& thresholds, const PostProcessOptions& options,
                              const std::string& site_id) {
  if (frames.empty()) throw Error(ErrorKind::invalid_argument, "video has no frames");
  const PredictionFrame& first = frames.front();
  TemporalMaxFilter history(options.history);
  ValidationVerdict verdict;
  verdict.site_id = site_id;
  verdict.truth = truth;
  verdict.per_frame_safe.reserve(frames.size());
  for (const PredictionFrame& frame : frames) {
    if (!frame.p_safe.same_shape(first.p_safe) || !frame.p_danger.same_shape(first.p_safe)) {
      throw Error(ErrorKind::invalid_argument, "video frames have inconsistent sizes");
    }
    ScalarMap danger = options.use_e1 ? box_blur(frame.p_danger, options.box_kernel) : frame.p_danger;
    if (options.use_e2) danger = history.push(std::move(danger));
    const BinaryMap map = binarize(frame.p_safe, danger, thresholds);
    verdict.per_frame_safe.push_back(center_verdict(map, options.region_fraction));
  }
  const auto safe_frames = std::count(verdict.per_frame_safe.begin(), verdict.per_frame_safe.end(), true);
  verdict.safety_prediction = static_cast<double>(safe_frames) / static_cast<double>(frames.size());
  verdict.final = verdict.safety_prediction >= 0.5 ? Verdict::safe : Verdict::unsafe;
  return verdict;
}

ValidationVerdict score_video(const VideoRecord& video, const Thresholds& thresholds,
                              PostProcessOptions options) {
  if (video.region_fraction > 0.0) options.region_fraction = video.region_fraction;
  return score_video(video.frames, video.truth, thresholds, options, video.site_id);
}

SegmentationMetrics segmentation_metrics(std::span<const PredictionFrame> predictions,
                                         std::span<const BinaryMap> truth) {
  if (predictions.size() != truth.size()) {
    throw Error(ErrorKind::invalid_argument, "prediction and truth mask counts differ");
  }
  constexpr double kEps = 1e-7;
  double correct = 0.0;
  double loss = 0.0;
  std::size_t pixels = 0;
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    const PredictionFrame& p = predictions[f];
    if (!p.p_safe.same_shape(p.p_danger) || !p.p_safe.same_shape(truth[f])) {
      throw Error(ErrorKind::invalid_argument, "prediction and truth mask shapes differ");
    }
    const auto s = p.p_safe.values();
    const auto d = p.p_danger.values();
    const auto t = truth[f].values();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool truth_safe = t[i] != 0;
      const bool pred_safe = s[i] > d[i];
      correct += pred_safe == truth_safe ? 1.0 : 0.0;
      const double ps = std::clamp(static_cast<double>(s[i]), kEps, 1.0 - kEps);
      const double pd = std::clamp(static_cast<double>(d[i]), kEps, 1.0 - kEps);
      loss -= truth_safe ? std::log(ps) : std::log(pd);
    }
    pixels += s.size();
  }
  if (pixels == 0) throw Error(ErrorKind::invalid_argument, "no pixels to score");
  return {correct / static_cast<double>(pixels), loss / static_cast<double>(pixels)};
}

VideoRecord load_video_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "video directory not found: " + dir.string());
  const fs::path meta_path = dir / "video.json";
  VideoRecord video;
  std::ifstream meta(meta_path);
  if (!meta) throw Error(ErrorKind::io, "missing " + meta_path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(meta);
    video.site_id = j.at("site_id").get<std::string>();
    video.truth = parse_verdict(j.at("truth").get<std::string>());
    video.fps = j.value("fps", 0.0);
    video.region_fraction = j.value("region_fraction", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "bad " + meta_path.string() + ": " + e.what());
  }

  static const std::regex pattern(R"((safe|danger)_(\d{6})\.png)");
  std::map<int, std::pair<fs::path, fs::path>> pairs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    auto& slot = pairs[std::stoi(m[2].str())];
    (m[1] == "safe" ? slot.first : slot.second) = entry.path();
  }
  if (pairs.empty()) throw Error(ErrorKind::data, "no prediction frames in " + dir.string());
  for (const auto& [index, files] : pairs) {
    if (files.first.empty() || files.second.empty()) {
      throw Error(ErrorKind::format, "frame " + std::to_string(index) + " in " + dir.string() +
                                         " lacks its safe or danger channel");
    }
    PredictionFrame frame;
    frame.p_safe = dequantize(read_png_gray8(files.first));
    frame.p_danger = dequantize(read_png_gray8(files.second));
    frame.timestamp = index;
    frame.validate();
    video.frames.push_back(std::move(frame));
  }
  return video;
}

void save_video_dir(const VideoRecord& video, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j{{"site_id", video.site_id}, {"truth", to_string(video.truth)}, {"fps", video.fps}};
  if (video.region_fraction > 0.0) j["region_fraction"] = video.region_fraction;
  std::ofstream meta(dir / "video.json");
  meta << j.dump(2) << '\n';
  if (!meta) throw Error(ErrorKind::io, "cannot write " + (dir / "video.json").string());
  char name[32];
  for (std::size_t f = 0; f < video.frames.size(); ++f) {
    const PredictionFrame& frame = video.frames[f];
    std::snprintf(name, sizeof(name), "safe_%06zu.png", f);
    write_png_gray8(dir / name, quantize(frame.p_safe));
    std::snprintf(name, sizeof(name), "danger_%06zu.png", f);
    write_png_gray8(dir / name, quantize(frame.p_danger));
  }
}

std::vector<double> default_sweep_values() {
  std::vector<double> values;
  for (int i = 1; i <= 9; ++i) values.push_back(i / 10.0);
  return values;
}

SweepTable sweep_thresholds(std::span<const VideoRecord> videos, std::span<const double> safety_values,
                            const PostProcessOptions& options) {
  if (safety_values.empty()) throw Error(ErrorKind::invalid_argument, "threshold sweep list is empty");
  if (videos.empty()) throw Error(ErrorKind::invalid_argument, "threshold sweep needs at least one video");
  SweepTable table;
  for (double value : safety_values) {
    const Thresholds t(value);
    SweepRow row;
    row.safety_threshold = value;
    row.total = videos.size();
    for (const VideoRecord& video : videos) {
      row.verdicts.push_back(score_video(video, t, options));
      row.correct += row.verdicts.back().correct() ? 1 : 0;
    }
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
    if (table.rows.empty() || row.accuracy > table.rows[table.best].accuracy) {
      table.best = table.rows.size();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace terrasafe
