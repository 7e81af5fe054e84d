#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "anatreg/geometry.hpp"

namespace anatreg {

// Soft correspondence matrix over moving rows x fixed columns, augmented
// with one outlier slack row and column. weights(i, N) is moving point i's
// slack mass; weights(M, j) is fixed point j's.
struct MatchMatrix {
  Eigen::MatrixXd weights;  // (M+1) x (N+1), nonnegative

  Eigen::Index moving_count() const { return weights.rows() - 1; }
  Eigen::Index fixed_count() const { return weights.cols() - 1; }

  double row_slack(Eigen::Index i) const {
    return weights(i, weights.cols() - 1);
  }
  double total_inner_weight() const {
    return weights.topLeftCorner(weights.rows() - 1, weights.cols() - 1).sum();
  }
};

struct RpmConfig {
  double alpha = 1e-2;   // transform regularization, scaled by inner weight
  std::optional<double> beta;    // correspondence bias; default t_init / 10
  std::optional<double> t_init;  // mm^2; default from cloud spread
  double t_final = 1.0;          // mm^2
  double anneal_rate = 0.93;
  int sinkhorn_iters = 30;
  int inner_iters = 5;
  double conv_tol = 1e-5;

  void validate() const;
};

struct RpmResult {
  AffineTransform transform;
  AffineParams params;
  double final_cost = 0.0;
  int temperatures_run = 0;
  MatchMatrix match;
  double inlier_fraction_moving = 0.0;
};

double rpm_cost(const MatchMatrix& mu, const PointCloud& moving,
                const PointCloud& fixed, const AffineTransform& t,
                double alpha, double beta);

MatchMatrix softassign(const PointCloud& moving_transformed,
                       const PointCloud& fixed, double temp, double beta,
                       int sinkhorn_iters);

AffineTransform update_affine(const MatchMatrix& mu, const PointCloud& moving,
                              const PointCloud& fixed, double alpha);

RpmResult rpm_solve(const PointCloud& moving, const PointCloud& fixed,
                    const RpmConfig& cfg = {});

// Key-value config document mirroring RpmConfig field names, one
// "key = value" per line; '#' starts a comment.
RpmConfig rpm_config_from_file(const std::string& path);

}  // namespace anatreg
