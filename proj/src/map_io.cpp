#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mlidar/scene.hpp"
#include "mlidar/text.hpp"

namespace mlidar {

namespace {

void set_normal(PointCloudMap& map, std::size_t i, const Vec3& n) {
  const double len = n.norm();
  if (!(len > 0.0)) {
    map.normals[i] = Vec3::Zero();
    map.normal_valid[i] = 0;
    return;
  }
  map.normals[i] = std::abs(len - 1.0) > 1e-6 ? Vec3(n / len) : n;
  map.normal_valid[i] = 1;
}

void check_finite(const std::vector<double>& values, std::size_t line) {
  for (double v : values) {
    if (!std::isfinite(v)) throw FormatError("non-finite coordinate", line);
  }
}

PointCloudMap read_xyz(std::istream& in) {
  PointCloudMap map;
  std::string raw;
  std::vector<double> values;
  std::size_t line_no = 0;
  int columns = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!parse_doubles(line, values)) throw FormatError("unparseable number", line_no);
    if (values.size() != 3 && values.size() != 6) {
      throw FormatError("expected 3 or 6 columns, got " + std::to_string(values.size()), line_no);
    }
    const int c = static_cast<int>(values.size());
    if (columns == 0) {
      columns = c;
    } else if (columns != c) {
      throw FormatError("inconsistent column count", line_no);
    }
    check_finite(values, line_no);
    map.points.emplace_back(values[0], values[1], values[2]);
    if (c == 6) {
      map.normals.emplace_back();
      map.normal_valid.push_back(0);
      set_normal(map, map.points.size() - 1, Vec3(values[3], values[4], values[5]));
    }
  }
  return map;
}

PointCloudMap read_ply(std::istream& in) {
  std::string raw;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, raw)) return false;
    ++line_no;
    return true;
  };
  if (!next_line()) throw std::invalid_argument("load_map: empty file");
  if (trim(raw) != "ply") throw FormatError("missing 'ply' magic", line_no);

  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  int prop_count = 0;
  int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
  bool header_done = false;
  while (next_line()) {
    std::istringstream ss{std::string(trim(raw))};
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw FormatError("only ascii PLY is supported", line_no);
    } else if (word == "element") {
      std::string name;
      long long count = -1;
      ss >> name >> count;
      if (count < 0) throw FormatError("bad element count", line_no);
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw FormatError("duplicate vertex element", line_no);
        seen_vertex = true;
        vertex_count = static_cast<std::size_t>(count);
      }
    } else if (word == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ss >> type;
      if (type == "list") throw FormatError("list property on vertex element", line_no);
      ss >> name;
      const int idx = prop_count++;
      if (name == "x") ix = idx;
      else if (name == "y") iy = idx;
      else if (name == "z") iz = idx;
      else if (name == "nx") inx = idx;
      else if (name == "ny") iny = idx;
      else if (name == "nz") inz = idx;
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw FormatError("missing end_header", line_no);
  if (!seen_vertex) throw FormatError("no vertex element", line_no);
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("vertex element lacks x/y/z", line_no);
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloudMap map;
  map.points.reserve(vertex_count);
  if (with_normals) {
    map.normals.resize(vertex_count);
    map.normal_valid.resize(vertex_count, 0);
  }
  std::vector<double> values;
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!next_line()) throw FormatError("file ends before all vertices were read", line_no + 1);
    if (!parse_doubles(trim(raw), values)) throw FormatError("unparseable number", line_no);
    if (static_cast<int>(values.size()) < prop_count) {
      throw FormatError("vertex line has too few values", line_no);
    }
    check_finite(values, line_no);
    map.points.emplace_back(values[ix], values[iy], values[iz]);
    if (with_normals) set_normal(map, i, Vec3(values[inx], values[iny], values[inz]));
  }
  return map;
}

}  // namespace

MapFormat map_format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ply" ? MapFormat::ply_ascii : MapFormat::xyz;
}

PointCloudMap load_map(const std::filesystem::path& path, MapFormat format) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_map: cannot open " + path.string());
  PointCloudMap map = format == MapFormat::ply_ascii ? read_ply(in) : read_xyz(in);
  if (map.empty()) throw std::invalid_argument("load_map: no points in " + path.string());
  return map;
}

void save_map(const PointCloudMap& map, const std::filesystem::path& path, MapFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_map: cannot write " + path.string());
  const bool normals = map.has_normals();
  if (format == MapFormat::ply_ascii) {
    out << "ply\nformat ascii 1.0\nelement vertex " << map.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "end_header\n";
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    const Vec3& p = map.points[i];
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z());
    if (normals) {
      const Vec3 n = map.normal_valid[i] ? map.normals[i] : Vec3::Zero();
      out << ' ' << format_double(n.x()) << ' ' << format_double(n.y()) << ' '
          << format_double(n.z());
    }
    out << '\n';
  }
}

}  // namespace mlidar
