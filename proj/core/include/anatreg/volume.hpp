#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "anatreg/geometry.hpp"

namespace anatreg {

// Binary voxel grid with world placement. World coordinate of voxel (i,j,k)
// center is origin + (i,j,k) * spacing; storage is x-fastest.
struct MaskVolume {
  std::array<int, 3> dims = {0, 0, 0};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();  // mm/voxel
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();   // mm
  std::vector<std::uint8_t> voxels;                   // {0,1}

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(k) * dims[1] * dims[0] +
           static_cast<std::size_t>(j) * dims[0] + i;
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] &&
           k < dims[2];
  }
  std::uint8_t at(int i, int j, int k) const { return voxels[index(i, j, k)]; }
  std::uint8_t& at(int i, int j, int k) { return voxels[index(i, j, k)]; }

  Point3 voxel_center(int i, int j, int k) const {
    return origin + Eigen::Vector3d(i * spacing.x(), j * spacing.y(),
                                    k * spacing.z());
  }

  std::size_t foreground_count() const;
  bool same_grid(const MaskVolume& other, double tol = 1e-9) const;

  static MaskVolume zeros(std::array<int, 3> dims, Eigen::Vector3d spacing,
                          Eigen::Vector3d origin);
};

enum class FovShape { CylinderZ, Sphere };

struct FovSpec {
  FovShape shape = FovShape::CylinderZ;
  Point3 center = Point3::Zero();  // mm
  double radius_mm = 125.0;
};

// MetaImage-style header + raw payload. `path` names the header file; the
// payload goes to the header's ElementDataFile sibling (or the same file
// when ElementDataFile = LOCAL).
MaskVolume read_mask(const std::string& path);
void write_mask(const MaskVolume& v, const std::string& path);

MaskVolume resample_isotropic(const MaskVolume& v, double spacing_mm = 1.0);
MaskVolume crop_fov(const MaskVolume& v, const FovSpec& fov);
PointCloud extract_surface(const MaskVolume& v);
PointCloud subsample_fps(const PointCloud& cloud, std::size_t n,
                         std::uint64_t seed);
MaskVolume warp_mask(const MaskVolume& v, const AffineTransform& t,
                     const MaskVolume& reference);

// Point-cloud table: header "x,y,z", one point per line, mm.
void write_point_cloud(const PointCloud& c, const std::string& path);
PointCloud read_point_cloud(const std::string& path);

}  // namespace anatreg
