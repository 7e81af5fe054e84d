#include "anatreg/metrics.hpp"

#include <cmath>
#include <limits>

namespace anatreg {

namespace {

Eigen::Matrix3Xd to_matrix(const PointCloud& c) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(c.size()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) m.col(i) = c.points[i];
  return m;
}

// Sum over cols of `from` of the distance to the nearest col of `to`,
// evaluated in blocks to keep the distance matrix small.
double sum_nearest_distances(const Eigen::Matrix3Xd& from,
                             const Eigen::Matrix3Xd& to) {
  const Eigen::Index block = 512;
  Eigen::VectorXd to2 = to.colwise().squaredNorm();
  double total = 0.0;
  for (Eigen::Index start = 0; start < from.cols(); start += block) {
    Eigen::Index len = std::min(block, from.cols() - start);
    auto chunk = from.middleCols(start, len);
    Eigen::MatrixXd d2 = -2.0 * (chunk.transpose() * to);
    d2.colwise() += chunk.colwise().squaredNorm().transpose();
    d2.rowwise() += to2.transpose();
    for (Eigen::Index i = 0; i < len; ++i)
      total += std::sqrt(std::max(0.0, d2.row(i).minCoeff()));
  }
  return total;
}

}  // namespace

double dsc(const MaskVolume& a, const MaskVolume& b) {
  if (!a.same_grid(b))
    throw InvalidParameterError("dsc: masks are not on the same grid");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    na += a.voxels[i] != 0;
    nb += b.voxels[i] != 0;
    inter += (a.voxels[i] != 0) && (b.voxels[i] != 0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double asd(const MaskVolume& a, const MaskVolume& b) {
  if ((a.spacing - b.spacing).cwiseAbs().maxCoeff() > 1e-9)
    throw InvalidParameterError("asd: masks must share voxel spacing");
  PointCloud sa = extract_surface(a);  // throws EmptyMaskError when empty
  PointCloud sb = extract_surface(b);
  Eigen::Matrix3Xd ma = to_matrix(sa);
  Eigen::Matrix3Xd mb = to_matrix(sb);
  double total = sum_nearest_distances(ma, mb) + sum_nearest_distances(mb, ma);
  return total / static_cast<double>(sa.size() + sb.size());
}

std::array<double, 12> param_errors(const AffineParams& est,
                                    const AffineParams& gt) {
  auto e = est.as_array();
  auto g = gt.as_array();
  std::array<double, 12> out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(e[i] - g[i]);
  return out;
}

}  // namespace anatreg
