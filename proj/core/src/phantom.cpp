#include "anatreg/phantom.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace anatreg {

namespace {

// Smooth direction field on the unit sphere with seeded coefficients; range
// roughly [-1, 1].
struct RadialPerturbation {
  std::array<double, 9> coeff;

  explicit RadialPerturbation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& c : coeff) c = u(rng);
  }

  // Mix of first-, second-, and third-order direction harmonics. The
  // odd-order terms matter: they break the reflection and 180-degree
  // rotation symmetries of the unperturbed superellipsoid, so the shape
  // determines its pose unambiguously.
  double operator()(const Eigen::Vector3d& dir) const {
    double x = dir.x(), y = dir.y(), z = dir.z();
    double v = coeff[0] * x + coeff[1] * y + coeff[2] * z +
               coeff[3] * x * y + coeff[4] * y * z + coeff[5] * z * x +
               coeff[6] * (x * x - y * y) +
               coeff[7] * (3 * z * z - 1) / 2.0 +
               coeff[8] * (5 * z * z - 3) * z / 2.0;
    return v / 4.0;
  }
};

}  // namespace

void PhantomSpec::validate() const {
  if (!(semi_axes.minCoeff() > 0))
    throw InvalidParameterError("phantom spec: semi_axes must be positive");
  if (!(exponent >= 1))
    throw InvalidParameterError("phantom spec: exponent must be >= 1");
  if (grid_dims[0] < 1 || grid_dims[1] < 1 || grid_dims[2] < 1)
    throw InvalidParameterError("phantom spec: grid_dims must be positive");
  if (!(spacing.minCoeff() > 0))
    throw InvalidParameterError("phantom spec: spacing must be positive");
  if (perturb_amp < 0)
    throw InvalidParameterError("phantom spec: perturb_amp must be >= 0");
  for (int i = 0; i < 3; ++i) {
    double half_extent = grid_dims[i] * spacing(i) / 2.0;
    double reach = std::abs(center(i)) + semi_axes(i) + perturb_amp;
    if (reach > half_extent - 2.0 * spacing(i))
      throw InvalidParameterError(
          "phantom spec: phantom does not fit in the grid with a 2-voxel "
          "margin");
  }
}

MaskVolume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Eigen::Vector3d origin;
  for (int i = 0; i < 3; ++i)
    origin(i) = -(spec.grid_dims[i] - 1) * spec.spacing(i) / 2.0;
  MaskVolume v = MaskVolume::zeros(spec.grid_dims, spec.spacing, origin);

  RadialPerturbation pert(spec.seed);
  double mean_axis = std::cbrt(spec.semi_axes.prod());
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        Eigen::Vector3d d = v.voxel_center(i, j, k) - spec.center;
        double rho = 0.0;
        for (int a = 0; a < 3; ++a)
          rho += std::pow(std::abs(d(a)) / spec.semi_axes(a), spec.exponent);
        double level = std::pow(rho, 1.0 / spec.exponent);
        double threshold = 1.0;
        if (spec.perturb_amp > 0 && d.norm() > 1e-12)
          threshold += spec.perturb_amp * pert(d.normalized()) / mean_axis;
        if (level <= threshold) v.at(i, j, k) = 1;
      }
  return v;
}

TestCase make_test_case(const PhantomSpec& spec, const AffineParams& gt,
                        const std::optional<FovSpec>& fov) {
  TestCase tc;
  tc.moving = generate_phantom(spec);
  tc.gt_transform = compose_affine(gt);
  // Warp into a grid that covers the transformed extent of the moving grid,
  // so the fixed mask is never clipped at a grid face (a clipped face would
  // read as object surface).
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(
      std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int corner = 0; corner < 8; ++corner) {
    Point3 p = tc.moving.voxel_center((corner & 1) ? spec.grid_dims[0] - 1 : 0,
                                      (corner & 2) ? spec.grid_dims[1] - 1 : 0,
                                      (corner & 4) ? spec.grid_dims[2] - 1 : 0);
    Point3 q = tc.gt_transform.apply(p);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  Eigen::Vector3d sp = tc.moving.spacing;
  Eigen::Vector3d ref_origin = lo - 2.0 * sp;
  std::array<int, 3> ref_dims;
  for (int a = 0; a < 3; ++a)
    ref_dims[a] =
        static_cast<int>(std::ceil((hi(a) - lo(a)) / sp(a))) + 5;
  MaskVolume ref = MaskVolume::zeros(ref_dims, sp, ref_origin);
  tc.fixed = warp_mask(tc.moving, tc.gt_transform, ref);
  if (fov) tc.fixed = crop_fov(tc.fixed, *fov);
  return tc;
}

PhantomSpec phantom_spec_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("phantom spec: cannot open " + path);
  PhantomSpec spec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("phantom spec: expected key = value at line " +
                        std::to_string(lineno));
    std::istringstream key_ss(line.substr(0, eq));
    std::istringstream val_ss(line.substr(eq + 1));
    std::string key;
    key_ss >> key;
    auto read3 = [&](auto& target) {
      double a, b, c;
      if (!(val_ss >> a >> b >> c))
        throw FormatError("phantom spec: key " + key + " needs 3 values");
      target = {a, b, c};
    };
    if (key == "semi_axes") {
      Eigen::Vector3d t;
      if (!(val_ss >> t.x() >> t.y() >> t.z()))
        throw FormatError("phantom spec: key semi_axes needs 3 values");
      spec.semi_axes = t;
    } else if (key == "center") {
      Eigen::Vector3d t;
      if (!(val_ss >> t.x() >> t.y() >> t.z()))
        throw FormatError("phantom spec: key center needs 3 values");
      spec.center = t;
    } else if (key == "spacing") {
      Eigen::Vector3d t;
      if (!(val_ss >> t.x() >> t.y() >> t.z()))
        throw FormatError("phantom spec: key spacing needs 3 values");
      spec.spacing = t;
    } else if (key == "grid_dims") {
      std::array<double, 3> t{};
      read3(t);
      for (int i = 0; i < 3; ++i) spec.grid_dims[i] = static_cast<int>(t[i]);
    } else if (key == "exponent") {
      if (!(val_ss >> spec.exponent))
        throw FormatError("phantom spec: bad exponent");
    } else if (key == "seed") {
      if (!(val_ss >> spec.seed))
        throw FormatError("phantom spec: bad seed");
    } else if (key == "perturb_amp") {
      if (!(val_ss >> spec.perturb_amp))
        throw FormatError("phantom spec: bad perturb_amp");
    } else {
      throw FormatError("phantom spec: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
    }
  }
  spec.validate();
  return spec;
}

}  // namespace anatreg
