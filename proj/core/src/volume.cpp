#include "anatreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace anatreg {

namespace fs = std::filesystem;

std::size_t MaskVolume::foreground_count() const {
  std::size_t n = 0;
  for (auto v : voxels) n += v != 0;
  return n;
}

bool MaskVolume::same_grid(const MaskVolume& other, double tol) const {
  return dims == other.dims &&
         (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
         (origin - other.origin).cwiseAbs().maxCoeff() <= tol;
}

MaskVolume MaskVolume::zeros(std::array<int, 3> dims, Eigen::Vector3d spacing,
                             Eigen::Vector3d origin) {
  MaskVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.origin = origin;
  v.voxels.assign(v.voxel_count(), 0);
  return v;
}

namespace {

struct MhdHeader {
  std::array<int, 3> dims;
  Eigen::Vector3d spacing;
  Eigen::Vector3d origin;
  std::string data_file;
  int ndims = 0;
};

std::vector<double> parse_numbers(const std::string& value, const char* key,
                                  std::size_t expected) {
  std::istringstream ss(value);
  std::vector<double> out;
  double x;
  while (ss >> x) out.push_back(x);
  if (out.size() != expected)
    throw FormatError(std::string("mask header: field ") + key + " needs " +
                      std::to_string(expected) + " values");
  return out;
}

MhdHeader parse_mhd(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("mask header: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      auto end = s.find_last_not_of(" \t\r");
      s.erase(end == std::string::npos ? 0 : end + 1);
    };
    trim(key);
    trim(value);
    kv[key] = value;
  }
  auto require = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      throw FormatError(std::string("mask header: missing field ") + key);
    return it->second;
  };
  if (require("ObjectType") != "Image")
    throw FormatError("mask header: field ObjectType must be Image");
  MhdHeader h;
  h.ndims = std::stoi(require("NDims"));
  if (h.ndims != 3)
    throw FormatError("mask header: field NDims must be 3");
  auto d = parse_numbers(require("DimSize"), "DimSize", 3);
  for (int i = 0; i < 3; ++i) {
    if (d[i] < 1 || d[i] != std::floor(d[i]))
      throw FormatError("mask header: field DimSize must be positive integers");
    h.dims[i] = static_cast<int>(d[i]);
  }
  auto s = parse_numbers(require("ElementSpacing"), "ElementSpacing", 3);
  for (int i = 0; i < 3; ++i) {
    if (!(s[i] > 0))
      throw FormatError("mask header: field ElementSpacing must be positive");
    h.spacing(i) = s[i];
  }
  if (kv.count("Offset")) {
    auto o = parse_numbers(kv["Offset"], "Offset", 3);
    for (int i = 0; i < 3; ++i) h.origin(i) = o[i];
  } else {
    h.origin.setZero();
  }
  if (require("ElementType") != "MET_UCHAR")
    throw FormatError("mask header: field ElementType must be MET_UCHAR");
  h.data_file = require("ElementDataFile");
  return h;
}

}  // namespace

MaskVolume read_mask(const std::string& path) {
  MhdHeader h = parse_mhd(path);
  MaskVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.origin = h.origin;

  fs::path data_path;
  if (h.data_file == "LOCAL")
    throw FormatError("mask header: field ElementDataFile LOCAL not supported");
  data_path = fs::path(path).parent_path() / h.data_file;
  std::ifstream raw(data_path, std::ios::binary);
  if (!raw)
    throw FormatError("mask payload: cannot open " + data_path.string());
  raw.seekg(0, std::ios::end);
  auto bytes = static_cast<std::size_t>(raw.tellg());
  raw.seekg(0);
  if (bytes != v.voxel_count())
    throw FormatError("mask payload: size mismatch, DimSize implies " +
                      std::to_string(v.voxel_count()) + " bytes, got " +
                      std::to_string(bytes));
  v.voxels.resize(bytes);
  raw.read(reinterpret_cast<char*>(v.voxels.data()),
           static_cast<std::streamsize>(bytes));
  for (auto& b : v.voxels) {
    if (b > 1) throw FormatError("mask payload: voxel value not in {0,1}");
  }
  return v;
}

void write_mask(const MaskVolume& v, const std::string& path) {
  fs::path header_path(path);
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");

  std::ofstream f(header_path);
  if (!f) throw FormatError("mask header: cannot open " + path + " for writing");
  char buf[256];
  f << "ObjectType = Image\n";
  f << "NDims = 3\n";
  f << "DimSize = " << v.dims[0] << " " << v.dims[1] << " " << v.dims[2]
    << "\n";
  std::snprintf(buf, sizeof(buf), "ElementSpacing = %.17g %.17g %.17g\n",
                v.spacing.x(), v.spacing.y(), v.spacing.z());
  f << buf;
  std::snprintf(buf, sizeof(buf), "Offset = %.17g %.17g %.17g\n", v.origin.x(),
                v.origin.y(), v.origin.z());
  f << buf;
  f << "ElementType = MET_UCHAR\n";
  f << "ElementDataFile = " << raw_path.filename().string() << "\n";

  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw)
    throw FormatError("mask payload: cannot open " + raw_path.string() +
                      " for writing");
  raw.write(reinterpret_cast<const char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size()));
}

MaskVolume resample_isotropic(const MaskVolume& v, double spacing_mm) {
  if (!(spacing_mm > 0))
    throw InvalidParameterError("resample_isotropic: spacing must be > 0");
  // Preserve the world extent measured corner-to-corner of the voxel grid.
  std::array<int, 3> out_dims;
  for (int i = 0; i < 3; ++i) {
    double extent = v.dims[i] * v.spacing(i);
    out_dims[i] = std::max(1, static_cast<int>(std::ceil(extent / spacing_mm -
                                                         1e-9)));
  }
  Eigen::Vector3d out_spacing(spacing_mm, spacing_mm, spacing_mm);
  Eigen::Vector3d corner = v.origin - 0.5 * v.spacing;
  MaskVolume out = MaskVolume::zeros(out_dims, out_spacing,
                                     corner + 0.5 * out_spacing);
  for (int k = 0; k < out_dims[2]; ++k)
    for (int j = 0; j < out_dims[1]; ++j)
      for (int i = 0; i < out_dims[0]; ++i) {
        Point3 p = out.voxel_center(i, j, k);
        int si = static_cast<int>(std::lround((p.x() - v.origin.x()) / v.spacing.x()));
        int sj = static_cast<int>(std::lround((p.y() - v.origin.y()) / v.spacing.y()));
        int sk = static_cast<int>(std::lround((p.z() - v.origin.z()) / v.spacing.z()));
        if (v.in_bounds(si, sj, sk))
          out.at(i, j, k) = v.at(si, sj, sk);
      }
  return out;
}

MaskVolume crop_fov(const MaskVolume& v, const FovSpec& fov) {
  if (!(fov.radius_mm > 0))
    throw InvalidParameterError("crop_fov: radius must be > 0");
  MaskVolume out = v;
  double r2 = fov.radius_mm * fov.radius_mm;
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        if (!v.at(i, j, k)) continue;
        Point3 p = v.voxel_center(i, j, k) - fov.center;
        double d2 = (fov.shape == FovShape::CylinderZ)
                        ? p.x() * p.x() + p.y() * p.y()
                        : p.squaredNorm();
        if (d2 > r2) out.at(i, j, k) = 0;
      }
  return out;
}

PointCloud extract_surface(const MaskVolume& v) {
  if (v.foreground_count() == 0)
    throw EmptyMaskError("extract_surface: mask has no foreground voxels");
  PointCloud out;
  static const int neigh[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                  {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        if (!v.at(i, j, k)) continue;
        bool exposed = false;
        for (const auto& n : neigh) {
          int ni = i + n[0], nj = j + n[1], nk = k + n[2];
          if (!v.in_bounds(ni, nj, nk) || !v.at(ni, nj, nk)) {
            exposed = true;
            break;
          }
        }
        if (exposed) out.points.push_back(v.voxel_center(i, j, k));
      }
  return out;
}

PointCloud subsample_fps(const PointCloud& cloud, std::size_t n,
                         std::uint64_t seed) {
  if (n < 1) throw InvalidParameterError("subsample_fps: n must be >= 1");
  if (cloud.size() <= n) return cloud;

  const auto& pts = cloud.points;
  std::size_t start = seed % pts.size();

  std::vector<double> best_d2(pts.size(),
                              std::numeric_limits<double>::infinity());
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  chosen.push_back(start);
  std::size_t last = start;
  while (chosen.size() < n) {
    std::size_t far_idx = 0;
    double far_d2 = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d2 = (pts[i] - pts[last]).squaredNorm();
      if (d2 < best_d2[i]) best_d2[i] = d2;
      // Ties break toward the lower index so the result is deterministic.
      if (best_d2[i] > far_d2) {
        far_d2 = best_d2[i];
        far_idx = i;
      }
    }
    chosen.push_back(far_idx);
    last = far_idx;
  }
  // Emit in original order to keep the cloud's deterministic ordering.
  std::sort(chosen.begin(), chosen.end());
  PointCloud out;
  out.frame_label = cloud.frame_label;
  out.points.reserve(n);
  for (auto idx : chosen) out.points.push_back(pts[idx]);
  return out;
}

MaskVolume warp_mask(const MaskVolume& v, const AffineTransform& t,
                     const MaskVolume& reference) {
  AffineTransform inv = invert_transform(t);  // throws on singular T
  MaskVolume out = MaskVolume::zeros(reference.dims, reference.spacing,
                                     reference.origin);
  for (int k = 0; k < out.dims[2]; ++k)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int i = 0; i < out.dims[0]; ++i) {
        Point3 q = inv.apply(out.voxel_center(i, j, k));
        int si = static_cast<int>(std::lround((q.x() - v.origin.x()) / v.spacing.x()));
        int sj = static_cast<int>(std::lround((q.y() - v.origin.y()) / v.spacing.y()));
        int sk = static_cast<int>(std::lround((q.z() - v.origin.z()) / v.spacing.z()));
        if (v.in_bounds(si, sj, sk)) out.at(i, j, k) = v.at(si, sj, sk);
      }
  return out;
}

void write_point_cloud(const PointCloud& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw FormatError("point cloud: cannot open " + path + " for writing");
  f << "x,y,z\n";
  char buf[128];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.x(), p.y(), p.z());
    f << buf;
  }
}

PointCloud read_point_cloud(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("point cloud: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("x,y,z", 0) != 0)
    throw FormatError("point cloud: missing x,y,z header line");
  PointCloud out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    Point3 p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.x(), &p.y(), &p.z()) != 3)
      throw FormatError("point cloud: bad row at line " +
                        std::to_string(lineno));
    out.points.push_back(p);
  }
  return out;
}

}  // namespace anatreg
