#include "terrasafe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string_view>

#include "terrasafe/error.hpp"

namespace terrasafe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error(ErrorKind::config, msg); }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) fail(key + ": cannot parse '" + std::string(text) + "' as a number");
  return value;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  fail(key + ": expected true or false, got '" + std::string(text) + "'");
}

std::vector<double> parse_list(const std::string& key, std::string_view text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    fail(key + ": expected a list like [0.1, 0.2]");
  }
  std::vector<double> out;
  std::string_view body = trim(text.substr(1, text.size() - 2));
  while (!body.empty()) {
    const auto comma = body.find(',');
    out.push_back(parse_number<double>(key, trim(body.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    body = trim(body.substr(comma + 1));
    if (body.empty()) fail(key + ": trailing comma in list");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  // Keep floats recognisable as such.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number_field(std::string key, T& ref) {
  Field f;
  f.key = key;
  f.set = [key, &ref](const std::string& v) { ref = parse_number<T>(key, trim(v)); };
  f.get = [&ref] {
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(static_cast<double>(ref));
    } else {
      return std::to_string(ref);
    }
  };
  return f;
}

Field bool_field(std::string key, bool& ref) {
  return {key, [key, &ref](const std::string& v) { ref = parse_bool(key, trim(v)); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field list_field(std::string key, std::vector<double>& ref) {
  return {key, [key, &ref](const std::string& v) { ref = parse_list(key, trim(v)); },
          [&ref] {
            std::string s = "[";
            for (std::size_t i = 0; i < ref.size(); ++i) {
              if (i) s += ", ";
              s += format_double(ref[i]);
            }
            return s + "]";
          }};
}

// The single table of keys. Order here is the order of to_text().
std::vector<Field> fields(PipelineConfig& c) {
  return {
      number_field("seed", c.seed),
      number_field("threads", c.threads),
      number_field("ingest.cell", c.ingest_cell),
      number_field("features.radius", c.label.features.radius),
      number_field("features.min_neighbors", c.label.features.min_neighbors),
      number_field("labeling.theta_v", c.label.thresholds.verticality),
      number_field("labeling.theta_sv", c.label.thresholds.surface_variation),
      number_field("labeling.sigma", c.label.sigma),
      number_field("labeling.chunk", c.chunk),
      number_field("labeling.overlap", c.overlap),
      number_field("terrain.cell", c.generator.heightfield.cell),
      bool_field("terrain.fill_holes", c.generator.heightfield.fill_holes),
      number_field("terrain.default_gray", c.generator.heightfield.default_gray),
      number_field("terrain.h_min", c.generator.camera.h_min),
      number_field("terrain.h_max", c.generator.camera.h_max),
      number_field("terrain.d_min_deg", c.deflection_min_deg),
      number_field("terrain.d_max_deg", c.deflection_max_deg),
      number_field("terrain.max_rejections", c.generator.camera.max_rejections),
      number_field("terrain.vfov_deg", c.generator.vfov_deg),
      number_field("terrain.resolution", c.generator.resolution),
      number_field("terrain.step", c.generator.step_fraction),
      number_field("dataset.min_coverage", c.generator.min_coverage),
      number_field("dataset.max_attempts", c.generator.max_attempts),
      number_field("evaluate.safety_threshold", c.safety_threshold),
      number_field("evaluate.box_kernel", c.post.box_kernel),
      number_field("evaluate.history", c.post.history),
      number_field("evaluate.region_fraction", c.post.region_fraction),
      bool_field("evaluate.use_e1", c.post.use_e1),
      bool_field("evaluate.use_e2", c.post.use_e2),
      list_field("evaluate.sweep", c.sweep),
  };
}

Field* find_field(std::vector<Field>& table, const std::string& key) {
  auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
  return it == table.end() ? nullptr : &*it;
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace

void PipelineConfig::validate() const {
  require(ingest_cell > 0.0, "ingest.cell must be positive");
  require(label.features.radius > 0.0, "features.radius must be positive");
  require(label.features.min_neighbors >= 3, "features.min_neighbors must be at least 3");
  require(label.thresholds.verticality > 0.0 && label.thresholds.verticality < 1.0,
          "labeling.theta_v must lie in (0,1)");
  require(label.thresholds.surface_variation > 0.0 && label.thresholds.surface_variation < 1.0,
          "labeling.theta_sv must lie in (0,1)");
  require(label.sigma >= 0.0, "labeling.sigma must be non-negative");
  require(overlap >= 0.0, "labeling.overlap must be non-negative");
  require(chunk > 0.0 && chunk >= 2.0 * overlap, "labeling.chunk must be positive and at least twice the overlap");
  require(generator.heightfield.cell > 0.0, "terrain.cell must be positive");
  require(generator.heightfield.default_gray >= 0.0f && generator.heightfield.default_gray <= 1.0f,
          "terrain.default_gray must lie in [0,1]");
  require(generator.camera.h_min > 0.0 && generator.camera.h_min <= generator.camera.h_max,
          "terrain.h_min must be positive and not above terrain.h_max");
  require(deflection_min_deg >= 0.0 && deflection_min_deg <= deflection_max_deg && deflection_max_deg < 90.0,
          "terrain.d_min_deg and terrain.d_max_deg must satisfy 0 <= d_min <= d_max < 90");
  require(generator.camera.max_rejections > 0, "terrain.max_rejections must be positive");
  require(generator.vfov_deg > 0.0 && generator.vfov_deg < 180.0, "terrain.vfov_deg must lie in (0,180)");
  require(generator.resolution > 0, "terrain.resolution must be positive");
  require(generator.step_fraction > 0.0 && generator.step_fraction <= 0.5, "terrain.step must lie in (0,0.5]");
  require(generator.min_coverage >= 0.0 && generator.min_coverage <= 1.0, "dataset.min_coverage must lie in [0,1]");
  require(generator.max_attempts > 0, "dataset.max_attempts must be positive");
  require(safety_threshold > 0.0 && safety_threshold < 1.0, "evaluate.safety_threshold must lie in (0,1)");
  require(post.box_kernel >= 1 && post.box_kernel % 2 == 1, "evaluate.box_kernel must be odd and positive");
  require(post.history >= 1, "evaluate.history must be at least 1");
  require(post.region_fraction > 0.0 && post.region_fraction <= 1.0, "evaluate.region_fraction must lie in (0,1]");
  require(!sweep.empty(), "evaluate.sweep must not be empty");
  for (double v : sweep) require(v > 0.0 && v < 1.0, "evaluate.sweep values must lie in (0,1)");
}

GeneratorConfig PipelineConfig::generator_config() const {
  GeneratorConfig g = generator;
  g.camera.deflection_min = deflection_min_deg * std::numbers::pi / 180.0;
  g.camera.deflection_max = deflection_max_deg * std::numbers::pi / 180.0;
  g.seed = seed;
  return g;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  auto table = fields(*this);
  Field* f = find_field(table, key);
  if (!f) fail("unknown key '" + key + "'");
  f->set(value);
}

std::string PipelineConfig::get(const std::string& key) const {
  auto table = fields(const_cast<PipelineConfig&>(*this));
  Field* f = find_field(table, key);
  if (!f) fail("unknown key '" + key + "'");
  return f->get();
}

const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> names = [] {
    PipelineConfig c;
    std::vector<std::string> out;
    for (const Field& f : fields(c)) out.push_back(f.key);
    return out;
  }();
  return names;
}

void PipelineConfig::merge_text(const std::string& text) {
  auto table = fields(*this);
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) fail(where + "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(where + "expected key = value");
    const std::string name(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (name.empty()) fail(where + "missing key");
    if (value.empty()) fail(where + "missing value for '" + name + "'");
    const std::string key = section.empty() ? name : section + "." + name;
    Field* f = find_field(table, key);
    if (!f) fail(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) fail(where + "duplicate key '" + key + "'");
    try {
      f->set(value);
    } catch (const Error& e) {
      fail(where + e.what());
    }
  }
  validate();
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig c;
  c.merge_text(text);
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse(text.str());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::config) throw;
    fail(path.string() + ": " + e.what());
  }
}

std::string PipelineConfig::to_text() const {
  auto table = fields(const_cast<PipelineConfig&>(*this));
  std::string out;
  std::string section;
  for (const Field& f : table) {
    const auto dot = f.key.find('.');
    const std::string s = dot == std::string::npos ? std::string() : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (s != section) {
      out += "\n[" + s + "]\n";
      section = s;
    }
    out += name + " = " + f.get() + "\n";
  }
  return out;
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write config " + path.string());
  out << "# resolved configuration\n" << to_text();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace terrasafe
