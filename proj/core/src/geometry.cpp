#include "anatreg/geometry.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace anatreg {

namespace {

bool all_finite(const Eigen::Matrix3d& m) { return m.allFinite(); }

void require_finite(const AffineTransform& t, const char* what) {
  if (!all_finite(t.linear) || !t.translation.allFinite())
    throw InvalidParameterError(std::string(what) + ": non-finite transform");
}

}  // namespace

Point3 PointCloud::centroid() const {
  Point3 c = Point3::Zero();
  if (points.empty()) return c;
  for (const auto& p : points) c += p;
  return c / static_cast<double>(points.size());
}

std::array<double, 12> AffineParams::as_array() const {
  return {s_x, s_y, s_z, h_xy, h_xz, h_yx, h_yz, h_zx, h_zy, d_x, d_y, d_z};
}

const std::array<const char*, 12>& AffineParams::names() {
  static const std::array<const char*, 12> n = {
      "s_x", "s_y", "s_z", "h_xy", "h_xz", "h_yx",
      "h_yz", "h_zx", "h_zy", "d_x", "d_y", "d_z"};
  return n;
}

AffineTransform compose_affine(const AffineParams& p) {
  for (double v : p.as_array())
    if (!std::isfinite(v))
      throw InvalidParameterError("compose_affine: non-finite parameter");
  if (p.s_x == 0.0 || p.s_y == 0.0 || p.s_z == 0.0)
    throw InvalidParameterError("compose_affine: zero scale");

  AffineTransform t;
  t.linear << p.s_x, p.s_x * p.h_xy, p.s_x * p.h_xz,
              p.s_y * p.h_yx, p.s_y, p.s_y * p.h_yz,
              p.s_z * p.h_zx, p.s_z * p.h_zy, p.s_z;
  t.translation << p.d_x, p.d_y, p.d_z;
  return t;
}

AffineParams decompose_affine(const AffineTransform& t) {
  require_finite(t, "decompose_affine");
  static const char* axes = "xyz";
  for (int i = 0; i < 3; ++i) {
    if (std::abs(t.linear(i, i)) <= 1e-12) {
      throw InvalidParameterError(
          std::string("decompose_affine: near-zero diagonal on axis ") +
          axes[i]);
    }
  }
  AffineParams p;
  p.s_x = t.linear(0, 0);
  p.s_y = t.linear(1, 1);
  p.s_z = t.linear(2, 2);
  p.h_xy = t.linear(0, 1) / p.s_x;
  p.h_xz = t.linear(0, 2) / p.s_x;
  p.h_yx = t.linear(1, 0) / p.s_y;
  p.h_yz = t.linear(1, 2) / p.s_y;
  p.h_zx = t.linear(2, 0) / p.s_z;
  p.h_zy = t.linear(2, 1) / p.s_z;
  p.d_x = t.translation.x();
  p.d_y = t.translation.y();
  p.d_z = t.translation.z();
  return p;
}

PointCloud apply_transform(const AffineTransform& t, const PointCloud& cloud) {
  require_finite(t, "apply_transform");
  PointCloud out;
  out.frame_label = cloud.frame_label;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points) out.points.push_back(t.apply(p));
  return out;
}

AffineTransform invert_transform(const AffineTransform& t) {
  require_finite(t, "invert_transform");
  double det = t.linear.determinant();
  if (std::abs(det) <= 1e-12)
    throw SolverError("invert_transform: singular linear part");
  AffineTransform inv;
  inv.linear = t.linear.inverse();
  inv.translation = -(inv.linear * t.translation);
  return inv;
}

AffineTransform compose(const AffineTransform& outer,
                        const AffineTransform& inner) {
  AffineTransform out;
  out.linear = outer.linear * inner.linear;
  out.translation = outer.linear * inner.translation + outer.translation;
  return out;
}

std::string transform_to_json(const AffineTransform& t) {
  nlohmann::json j;
  j["matrix"] = {{t.linear(0, 0), t.linear(0, 1), t.linear(0, 2)},
                 {t.linear(1, 0), t.linear(1, 1), t.linear(1, 2)},
                 {t.linear(2, 0), t.linear(2, 1), t.linear(2, 2)}};
  j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
  j["units"] = "mm";
  return j.dump(2) + "\n";
}

AffineTransform transform_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("transform: invalid document: ") + e.what());
  }
  if (!j.contains("matrix")) throw FormatError("transform: missing field matrix");
  if (!j.contains("translation"))
    throw FormatError("transform: missing field translation");
  const auto& m = j["matrix"];
  if (!m.is_array() || m.size() != 3)
    throw FormatError("transform: matrix must be 3 rows");
  AffineTransform t;
  for (int r = 0; r < 3; ++r) {
    if (!m[r].is_array() || m[r].size() != 3)
      throw FormatError("transform: matrix row must have 3 entries");
    for (int c = 0; c < 3; ++c) t.linear(r, c) = m[r][c].get<double>();
  }
  if (j.contains("units") && j["units"] != "mm")
    throw FormatError("transform: units must be mm");
  const auto& tr = j["translation"];
  if (!tr.is_array() || tr.size() != 3)
    throw FormatError("transform: translation must have 3 entries");
  for (int i = 0; i < 3; ++i) t.translation(i) = tr[i].get<double>();
  return t;
}

void write_transform(const AffineTransform& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("transform: cannot open " + path + " for writing");
  f << transform_to_json(t);
}

AffineTransform read_transform(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("transform: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return transform_from_json(ss.str());
}

AffineParams params_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("params: cannot open " + path);
  AffineParams p;
  std::array<double*, 12> slots = {&p.s_x, &p.s_y, &p.s_z, &p.h_xy,
                                   &p.h_xz, &p.h_yx, &p.h_yz, &p.h_zx,
                                   &p.h_zy, &p.d_x, &p.d_y, &p.d_z};
  const auto& names = AffineParams::names();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("params: expected key = value at line " +
                        std::to_string(lineno));
    std::istringstream key_ss(line.substr(0, eq));
    std::istringstream val_ss(line.substr(eq + 1));
    std::string key;
    double value;
    key_ss >> key;
    if (!(val_ss >> value))
      throw FormatError("params: bad numeric value at line " +
                        std::to_string(lineno));
    bool known = false;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (key == names[i]) {
        *slots[i] = value;
        known = true;
        break;
      }
    }
    if (!known)
      throw FormatError("params: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
  }
  return p;
}

void write_params(const AffineParams& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("params: cannot open " + path + " for writing");
  auto values = p.as_array();
  const auto& names = AffineParams::names();
  char buf[64];
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", names[i], values[i]);
    f << buf;
  }
}

}  // namespace anatreg
