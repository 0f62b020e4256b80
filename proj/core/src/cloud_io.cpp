#include "terrasafe/cloud_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>

#include "json.hpp"

#include "terrasafe/error.hpp"

namespace terrasafe {

namespace fs = std::filesystem;

void PointCloud::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point3& p = points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw Error(ErrorKind::data, "point " + std::to_string(i) + " has a non-finite coordinate");
    }
    if (p.gray && !(*p.gray >= 0.0 && *p.gray <= 1.0)) {
      throw Error(ErrorKind::data, "point " + std::to_string(i) + " has gray outside [0,1]");
    }
  }
  for (const auto& [name, values] : scalars) {
    if (values.size() != points.size()) {
      throw Error(ErrorKind::data, "attribute '" + name + "' has " + std::to_string(values.size()) +
                                       " values for " + std::to_string(points.size()) + " points");
    }
  }
}

std::optional<CloudFormat> parse_cloud_format(std::string_view name) {
  if (name == "ply_ascii") return CloudFormat::ply_ascii;
  if (name == "ply_binary_le" || name == "ply") return CloudFormat::ply_binary_le;
  if (name == "xyz_text" || name == "xyz") return CloudFormat::xyz_text;
  if (name == "csv") return CloudFormat::csv;
  return std::nullopt;
}

std::string_view to_string(CloudFormat format) noexcept {
  switch (format) {
    case CloudFormat::ply_ascii: return "ply_ascii";
    case CloudFormat::ply_binary_le: return "ply_binary_le";
    case CloudFormat::xyz_text: return "xyz_text";
    case CloudFormat::csv: return "csv";
  }
  return "unknown";
}

std::string LoadReport::to_json() const {
  nlohmann::json j{{"path", path},
                   {"format", std::string(to_string(format))},
                   {"rows_read", rows_read},
                   {"points_loaded", points_loaded},
                   {"dropped", dropped}};
  return j.dump();
}

double luminance(double r, double g, double b) noexcept {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

namespace {

// Column roles shared by the PLY, CSV, and XYZ readers.
enum class Role { x, y, z, red, green, blue, gray, manual_class, scalar };

Role role_for(std::string_view name) {
  if (name == "x") return Role::x;
  if (name == "y") return Role::y;
  if (name == "z") return Role::z;
  if (name == "red" || name == "r") return Role::red;
  if (name == "green" || name == "g") return Role::green;
  if (name == "blue" || name == "b") return Role::blue;
  if (name == "gray" || name == "grey") return Role::gray;
  if (name == "manual_class") return Role::manual_class;
  return Role::scalar;
}

struct Column {
  std::string name;
  Role role = Role::scalar;
  double color_scale = 1.0;  // divides raw color values into [0, 1]
};

// Accumulates rows into a cloud, applying the finite-value filter.
class CloudBuilder {
 public:
  explicit CloudBuilder(std::vector<Column> columns) : columns_(std::move(columns)) {
    bool has_x = false, has_y = false, has_z = false;
    for (const Column& c : columns_) {
      has_x |= c.role == Role::x;
      has_y |= c.role == Role::y;
      has_z |= c.role == Role::z;
      has_rgb_ |= c.role == Role::red || c.role == Role::green || c.role == Role::blue;
      if (c.role == Role::scalar) cloud_.scalars[c.name];
    }
    if (!has_x || !has_y || !has_z) throw Error(ErrorKind::format, "missing x/y/z columns");
  }

  void add_row(std::span<const double> values) {
    ++rows_;
    if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
      ++dropped_;
      return;
    }
    Point3 p;
    double rgb[3] = {0.0, 0.0, 0.0};
    std::optional<double> gray;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      const Column& c = columns_[i];
      const double v = values[i];
      switch (c.role) {
        case Role::x: p.x = v; break;
        case Role::y: p.y = v; break;
        case Role::z: p.z = v; break;
        case Role::red: rgb[0] = v / c.color_scale; break;
        case Role::green: rgb[1] = v / c.color_scale; break;
        case Role::blue: rgb[2] = v / c.color_scale; break;
        case Role::gray: gray = v; break;
        case Role::manual_class: {
          const auto code = static_cast<long>(std::lround(v));
          if (code < 0 || code > 2) {
            throw Error(ErrorKind::format, "manual_class value " + std::to_string(code) +
                                               " out of range at row " + std::to_string(rows_));
          }
          p.manual_class = static_cast<ManualClass>(code);
          break;
        }
        case Role::scalar: cloud_.scalars[c.name].push_back(v); break;
      }
    }
    if (!gray && has_rgb_) gray = luminance(rgb[0], rgb[1], rgb[2]);
    if (gray) p.gray = std::clamp(*gray, 0.0, 1.0);
    cloud_.points.push_back(p);
  }

  LoadResult finish(const fs::path& path, CloudFormat format, std::string crs_note) && {
    if (cloud_.points.empty()) {
      throw Error(ErrorKind::data, "zero valid points in " + path.string());
    }
    cloud_.crs_note = std::move(crs_note);
    LoadResult result;
    result.report.path = path.string();
    result.report.format = format;
    result.report.rows_read = rows_;
    result.report.points_loaded = cloud_.points.size();
    result.report.dropped = dropped_;
    result.cloud = std::move(cloud_);
    return result;
  }

  std::size_t column_count() const noexcept { return columns_.size(); }

 private:
  std::vector<Column> columns_;
  PointCloud cloud_;
  bool has_rgb_ = false;
  std::size_t rows_ = 0;
  std::size_t dropped_ = 0;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_double(std::string_view token, double& out) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const char* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc{} && ptr == end && !token.empty();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

// ---------------------------------------------------------------- PLY

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<PlyType> parse_ply_type(std::string_view name) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  return std::nullopt;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

double color_scale_for(PlyType t) {
  switch (t) {
    case PlyType::u8:
    case PlyType::i8: return 255.0;
    case PlyType::u16:
    case PlyType::i16: return 65535.0;
    default: return 1.0;
  }
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
  std::string crs_note;
};

PlyHeader read_ply_header(std::istream& in, const fs::path& path) {
  auto malformed = [&](const std::string& why) {
    return Error(ErrorKind::format, "malformed PLY header in " + path.string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || trim(line) != "ply") throw malformed("missing 'ply' magic");
  PlyHeader header;
  bool have_format = false;
  for (;;) {
    if (!std::getline(in, line)) throw malformed("missing end_header");
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const std::string_view key = tokens[0];
    if (key == "end_header") break;
    if (key == "comment") {
      const std::string_view body = trim(std::string_view(line).substr(line.find("comment") + 7));
      if (body.starts_with("crs:")) header.crs_note = std::string(trim(body.substr(4)));
      continue;
    }
    if (key == "obj_info") continue;
    if (key == "format") {
      if (tokens.size() < 3) throw malformed("bad format line");
      if (tokens[1] == "ascii") {
        header.binary = false;
      } else if (tokens[1] == "binary_little_endian") {
        header.binary = true;
      } else {
        throw malformed("unsupported encoding '" + std::string(tokens[1]) + "'");
      }
      have_format = true;
    } else if (key == "element") {
      if (tokens.size() != 3) throw malformed("bad element line");
      PlyElement e;
      e.name = std::string(tokens[1]);
      double count = 0;
      if (!parse_double(tokens[2], count) || count < 0) throw malformed("bad element count");
      e.count = static_cast<std::size_t>(count);
      header.elements.push_back(std::move(e));
    } else if (key == "property") {
      if (header.elements.empty()) throw malformed("property before element");
      PlyProperty prop;
      if (tokens.size() == 5 && tokens[1] == "list") {
        const auto ct = parse_ply_type(tokens[2]);
        const auto it = parse_ply_type(tokens[3]);
        if (!ct || !it) throw malformed("unknown list type");
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *it;
        prop.name = std::string(tokens[4]);
      } else if (tokens.size() == 3) {
        const auto t = parse_ply_type(tokens[1]);
        if (!t) throw malformed("unknown property type '" + std::string(tokens[1]) + "'");
        prop.type = *t;
        prop.name = std::string(tokens[2]);
      } else {
        throw malformed("bad property line");
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else {
      throw malformed("unexpected keyword '" + std::string(key) + "'");
    }
  }
  if (!have_format) throw malformed("missing format line");
  return header;
}

double read_binary_value(std::istream& in, PlyType t) {
  unsigned char buf[8];
  const std::size_t n = ply_size(t);
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) {
    throw Error(ErrorKind::format, "truncated binary PLY body");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + n);
  switch (t) {
    case PlyType::i8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
    case PlyType::u8: return buf[0];
    case PlyType::i16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::u16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::i32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::u32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::f32: { float v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::f64: { double v; std::memcpy(&v, buf, 8); return v; }
  }
  return 0.0;
}

class AsciiTokens {
 public:
  explicit AsciiTokens(std::istream& in) : in_(in) {}

  double next() {
    std::string token;
    if (!(in_ >> token)) throw Error(ErrorKind::format, "truncated ascii PLY body");
    double v = 0;
    if (!parse_double(token, v)) {
      throw Error(ErrorKind::format, "bad ascii PLY value '" + token + "'");
    }
    return v;
  }

 private:
  std::istream& in_;
};

LoadResult load_ply(const fs::path& path, CloudFormat format) {
  std::ifstream in = open_input(path);
  PlyHeader header = read_ply_header(in, path);
  if (header.binary != (format == CloudFormat::ply_binary_le)) {
    throw Error(ErrorKind::format, path.string() + " encoding does not match declared format " +
                                       std::string(to_string(format)));
  }
  const auto vertex = std::find_if(header.elements.begin(), header.elements.end(),
                                   [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex == header.elements.end()) {
    throw Error(ErrorKind::format, "malformed PLY header in " + path.string() + ": no vertex element");
  }

  std::vector<Column> columns;
  for (const PlyProperty& p : vertex->properties) {
    if (p.is_list) continue;
    Column c{p.name, role_for(p.name), 1.0};
    if (c.role == Role::red || c.role == Role::green || c.role == Role::blue) {
      c.color_scale = color_scale_for(p.type);
    }
    columns.push_back(std::move(c));
  }
  CloudBuilder builder(std::move(columns));

  AsciiTokens tokens(in);
  auto read_value = [&](PlyType t) {
    return header.binary ? read_binary_value(in, t) : tokens.next();
  };

  std::vector<double> row;
  for (const PlyElement& element : header.elements) {
    const bool is_vertex = &element == &*vertex;
    for (std::size_t i = 0; i < element.count; ++i) {
      row.clear();
      for (const PlyProperty& p : element.properties) {
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(read_value(p.count_type));
          for (std::size_t k = 0; k < n; ++k) read_value(p.type);
          continue;
        }
        const double v = read_value(p.type);
        if (is_vertex) row.push_back(v);
      }
      if (is_vertex) builder.add_row(row);
    }
    // Elements after the vertex block are irrelevant.
    if (is_vertex) break;
  }
  return std::move(builder).finish(path, format, header.crs_note);
}

// ------------------------------------------------------------ XYZ / CSV

LoadResult load_xyz(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::optional<CloudBuilder> builder;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tokens = split_ws(body);
    if (!builder) {
      std::vector<Column> columns{{"x", Role::x}, {"y", Role::y}, {"z", Role::z}};
      if (tokens.size() == 4) {
        columns.push_back({"gray", Role::gray});
      } else if (tokens.size() == 6) {
        columns.push_back({"red", Role::red, 255.0});
        columns.push_back({"green", Role::green, 255.0});
        columns.push_back({"blue", Role::blue, 255.0});
      } else if (tokens.size() != 3) {
        throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) +
                                           ": expected 3, 4, or 6 columns");
      }
      builder.emplace(std::move(columns));
    }
    if (tokens.size() != builder->column_count()) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) +
                                         ": inconsistent column count");
    }
    row.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!parse_double(tokens[i], row[i])) {
        throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) +
                                           ": bad number '" + std::string(tokens[i]) + "'");
      }
    }
    builder->add_row(row);
  }
  if (!builder) throw Error(ErrorKind::data, "zero valid points in " + path.string());
  return std::move(*builder).finish(path, CloudFormat::xyz_text, {});
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

LoadResult load_csv(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::optional<CloudBuilder> builder;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (!builder) {
      std::vector<Column> columns;
      for (std::string_view f : fields) {
        Column c{std::string(f), role_for(f), 1.0};
        if (c.role == Role::red || c.role == Role::green || c.role == Role::blue) c.color_scale = 255.0;
        columns.push_back(std::move(c));
      }
      builder.emplace(std::move(columns));
      continue;
    }
    if (fields.size() != builder->column_count()) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) +
                                         ": field count does not match header");
    }
    row.resize(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], row[i])) {
        throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) +
                                           ": bad number '" + std::string(fields[i]) + "'");
      }
    }
    builder->add_row(row);
  }
  if (!builder) throw Error(ErrorKind::format, "malformed CSV " + path.string() + ": missing header");
  return std::move(*builder).finish(path, CloudFormat::csv, {});
}

// -------------------------------------------------------------- writers

class TextWriter {
 public:
  explicit TextWriter(std::ostream& out) : out_(out) {}

  void number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out_.write(buf, ptr - buf);
  }
  void number(float v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out_.write(buf, ptr - buf);
  }
  void integer(long v) { out_ << v; }
  void sep(char c) { out_.put(c); }

 private:
  std::ostream& out_;
};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

std::uint8_t gray_byte(double gray) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(gray, 0.0, 1.0) * 255.0));
}

bool all_have_gray(const PointCloud& cloud) {
  return std::all_of(cloud.points.begin(), cloud.points.end(),
                     [](const Point3& p) { return p.gray.has_value(); });
}

bool any_manual(const PointCloud& cloud) {
  return std::any_of(cloud.points.begin(), cloud.points.end(),
                     [](const Point3& p) { return p.manual_class != ManualClass::none; });
}

void save_ply(const PointCloud& cloud, std::ostream& out, bool binary) {
  const bool gray = all_have_gray(cloud);
  const bool manual = any_manual(cloud);
  out << "ply\n" << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  if (!cloud.crs_note.empty()) out << "comment crs: " << cloud.crs_note << '\n';
  out << "element vertex " << cloud.size() << '\n'
      << "property double x\nproperty double y\nproperty double z\n";
  if (gray) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (manual) out << "property uchar manual_class\n";
  for (const auto& [name, values] : cloud.scalars) out << "property float " << name << '\n';
  out << "end_header\n";

  TextWriter text(out);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    if (binary) {
      put_le(out, p.x);
      put_le(out, p.y);
      put_le(out, p.z);
      if (gray) {
        const std::uint8_t g = gray_byte(*p.gray);
        put_le(out, g);
        put_le(out, g);
        put_le(out, g);
      }
      if (manual) put_le(out, static_cast<std::uint8_t>(p.manual_class));
      for (const auto& [name, values] : cloud.scalars) put_le(out, static_cast<float>(values[i]));
    } else {
      text.number(p.x);
      text.sep(' ');
      text.number(p.y);
      text.sep(' ');
      text.number(p.z);
      if (gray) {
        const int g = gray_byte(*p.gray);
        out << ' ' << g << ' ' << g << ' ' << g;
      }
      if (manual) out << ' ' << static_cast<int>(p.manual_class);
      for (const auto& [name, values] : cloud.scalars) {
        text.sep(' ');
        text.number(static_cast<float>(values[i]));
      }
      text.sep('\n');
    }
  }
}

void save_xyz(const PointCloud& cloud, std::ostream& out) {
  const bool gray = all_have_gray(cloud);
  TextWriter text(out);
  for (const Point3& p : cloud.points) {
    text.number(p.x);
    text.sep(' ');
    text.number(p.y);
    text.sep(' ');
    text.number(p.z);
    if (gray) {
      text.sep(' ');
      text.number(*p.gray);
    }
    text.sep('\n');
  }
}

void save_csv(const PointCloud& cloud, std::ostream& out) {
  const bool gray = all_have_gray(cloud);
  const bool manual = any_manual(cloud);
  out << "x,y,z";
  if (gray) out << ",gray";
  if (manual) out << ",manual_class";
  for (const auto& [name, values] : cloud.scalars) out << ',' << name;
  out << '\n';
  TextWriter text(out);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    text.number(p.x);
    text.sep(',');
    text.number(p.y);
    text.sep(',');
    text.number(p.z);
    if (gray) {
      text.sep(',');
      text.number(*p.gray);
    }
    if (manual) {
      text.sep(',');
      text.integer(static_cast<long>(p.manual_class));
    }
    for (const auto& [name, values] : cloud.scalars) {
      text.sep(',');
      text.number(values[i]);
    }
    text.sep('\n');
  }
}

}  // namespace

LoadResult load_cloud(const fs::path& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::ply_ascii:
    case CloudFormat::ply_binary_le: return load_ply(path, format);
    case CloudFormat::xyz_text: return load_xyz(path);
    case CloudFormat::csv: return load_csv(path);
  }
  throw Error(ErrorKind::invalid_argument, "unknown cloud format");
}

void save_cloud(const PointCloud& cloud, const fs::path& path, CloudFormat format) {
  cloud.validate();
  std::ofstream out = open_output(path);
  switch (format) {
    case CloudFormat::ply_ascii: save_ply(cloud, out, false); break;
    case CloudFormat::ply_binary_le: save_ply(cloud, out, true); break;
    case CloudFormat::xyz_text: save_xyz(cloud, out); break;
    case CloudFormat::csv: save_csv(cloud, out); break;
  }
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

PointCloud voxel_downsample(const PointCloud& cloud, double cell) {
  if (!(cell > 0.0) || !std::isfinite(cell)) {
    throw Error(ErrorKind::invalid_argument, "voxel cell must be positive");
  }
  using Key = std::array<std::int64_t, 3>;
  auto key_of = [cell](double x, double y, double z) {
    return Key{static_cast<std::int64_t>(std::floor(x / cell)),
               static_cast<std::int64_t>(std::floor(y / cell)),
               static_cast<std::int64_t>(std::floor(z / cell))};
  };

  const std::size_t n = cloud.size();
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point3& p = cloud.points[i];
    keys[i] = key_of(p.x, p.y, p.z);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  PointCloud out;
  out.crs_note = cloud.crs_note;
  for (const auto& [name, values] : cloud.scalars) out.scalars[name];

  // Moves a centroid coordinate back into its cell if rounding pushed it
  // across the lower boundary; the upper boundary cannot be crossed because
  // the mean of values below it stays below it.
  auto clamp_into = [cell](double v, std::int64_t k) {
    while (static_cast<std::int64_t>(std::floor(v / cell)) < k) {
      v = std::nextafter(v, std::numeric_limits<double>::infinity());
    }
    return v;
  };

  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin + 1;
    while (end < n && keys[order[end]] == keys[order[begin]]) ++end;
    const Key& key = keys[order[begin]];
    const double count = static_cast<double>(end - begin);

    double sx = 0, sy = 0, sz = 0, sg = 0;
    std::size_t gray_count = 0;
    bool any_unsafe = false, any_safe = false;
    for (std::size_t k = begin; k < end; ++k) {
      const Point3& p = cloud.points[order[k]];
      sx += p.x;
      sy += p.y;
      sz += p.z;
      if (p.gray) {
        sg += *p.gray;
        ++gray_count;
      }
      any_unsafe |= p.manual_class == ManualClass::force_unsafe;
      any_safe |= p.manual_class == ManualClass::force_safe;
    }
    Point3 c;
    if (end - begin == 1) {
      c = cloud.points[order[begin]];
    } else {
      c.x = clamp_into(sx / count, key[0]);
      c.y = clamp_into(sy / count, key[1]);
      c.z = clamp_into(sz / count, key[2]);
      if (gray_count > 0) c.gray = std::clamp(sg / static_cast<double>(gray_count), 0.0, 1.0);
      c.manual_class = any_unsafe ? ManualClass::force_unsafe
                       : any_safe ? ManualClass::force_safe
                                  : ManualClass::none;
    }
    out.points.push_back(c);
    for (const auto& [name, values] : cloud.scalars) {
      double s = 0;
      for (std::size_t k = begin; k < end; ++k) s += values[order[k]];
      out.scalars[name].push_back(s / count);
    }
    begin = end;
  }
  return out;
}

}  // namespace terrasafe
