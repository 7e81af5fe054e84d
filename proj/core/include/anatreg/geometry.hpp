#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "anatreg/errors.hpp"

namespace anatreg {

using Point3 = Eigen::Vector3d;

struct PointCloud {
  std::vector<Point3> points;
  std::string frame_label;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  Point3 centroid() const;
};

// T(m) = A m + t, all units mm.
struct AffineTransform {
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static AffineTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return linear * p + translation; }
};

// The twelve-parameter decomposition: per-axis scales, six shears, and a
// translation, multiplying out to linear rows [s_x, s_x*h_xy, s_x*h_xz] etc.
struct AffineParams {
  double s_x = 1.0, s_y = 1.0, s_z = 1.0;
  double h_xy = 0.0, h_xz = 0.0;
  double h_yx = 0.0, h_yz = 0.0;
  double h_zx = 0.0, h_zy = 0.0;
  double d_x = 0.0, d_y = 0.0, d_z = 0.0;

  // Fixed reporting order: s_x..s_z, h_xy..h_zy, d_x..d_z.
  std::array<double, 12> as_array() const;
  static const std::array<const char*, 12>& names();
};

AffineTransform compose_affine(const AffineParams& p);
AffineParams decompose_affine(const AffineTransform& t);
PointCloud apply_transform(const AffineTransform& t, const PointCloud& cloud);
AffineTransform invert_transform(const AffineTransform& t);
AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner);

// Transform document: fields "matrix" (3x3 row-major nested arrays),
// "translation" (3-array), "units" fixed to "mm".
std::string transform_to_json(const AffineTransform& t);
AffineTransform transform_from_json(const std::string& text);
void write_transform(const AffineTransform& t, const std::string& path);
AffineTransform read_transform(const std::string& path);

// Twelve-parameter key-value document, "name = value" per line using the
// names() identifiers; omitted keys keep identity defaults.
AffineParams params_from_file(const std::string& path);
void write_params(const AffineParams& p, const std::string& path);

}  // namespace anatreg
