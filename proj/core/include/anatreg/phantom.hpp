#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "anatreg/geometry.hpp"
#include "anatreg/volume.hpp"

namespace anatreg {

// Superellipsoid mask: foreground where sum_i |(p_i - c_i)/a_i|^e <= 1,
// optionally with a smooth seeded radial boundary perturbation.
struct PhantomSpec {
  Eigen::Vector3d semi_axes = Eigen::Vector3d(40.0, 30.0, 35.0);  // mm
  double exponent = 2.0;  // 2 = ellipsoid, higher = boxier
  Point3 center = Point3::Zero();
  std::array<int, 3> grid_dims = {128, 128, 128};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();  // mm
  std::uint64_t seed = 0;
  double perturb_amp = 0.0;  // mm

  void validate() const;
};

struct TestCase {
  MaskVolume fixed;
  MaskVolume moving;
  AffineTransform gt_transform;
};

MaskVolume generate_phantom(const PhantomSpec& spec);

// moving = phantom; fixed = warp(phantom, compose_affine(gt)), optionally
// FOV-cropped. The composed transform is returned as exact ground truth.
TestCase make_test_case(const PhantomSpec& spec, const AffineParams& gt,
                        const std::optional<FovSpec>& fov = std::nullopt);

// Key-value spec document mirroring PhantomSpec field names.
PhantomSpec phantom_spec_from_file(const std::string& path);

}  // namespace anatreg
