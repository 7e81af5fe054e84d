#include "anatreg/rpm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#ifdef __SSE2__
#include <immintrin.h>
#endif

namespace anatreg {

namespace {

// Flush-to-zero for the duration of a solve: correspondence weights in the
// denormal range are indistinguishable from zero for the algorithm but
// orders of magnitude slower to multiply.
class DenormalFlushGuard {
 public:
  DenormalFlushGuard() {
#ifdef __SSE2__
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);  // FTZ | DAZ
#endif
  }
  ~DenormalFlushGuard() {
#ifdef __SSE2__
    _mm_setcsr(saved_);
#endif
  }

 private:
  unsigned int saved_ = 0;
};

Eigen::Matrix3Xd to_matrix(const PointCloud& c) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(c.size()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) m.col(i) = c.points[i];
  return m;
}

// Squared Euclidean distances, rows = moving, cols = fixed.
Eigen::MatrixXd squared_distances(const Eigen::Matrix3Xd& moving,
                                  const Eigen::Matrix3Xd& fixed) {
  Eigen::VectorXd m2 = moving.colwise().squaredNorm();
  Eigen::VectorXd f2 = fixed.colwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (moving.transpose() * fixed);
  d2.colwise() += m2;
  d2.rowwise() += f2.transpose();
  return d2.cwiseMax(0.0);
}

// Sufficient statistics of the inner block of mu against the fixed cloud:
// w_i = sum_j mu_ij, y_i = sum_j mu_ij s_j, z_i = sum_j mu_ij |s_j|^2.
struct MatchStats {
  Eigen::VectorXd w;
  Eigen::Matrix3Xd y;
  Eigen::VectorXd z;
  double total_weight = 0.0;
};

MatchStats match_stats(const MatchMatrix& mu, const Eigen::Matrix3Xd& fixed) {
  auto m = mu.moving_count();
  auto n = mu.fixed_count();
  auto inner = mu.weights.topLeftCorner(m, n);
  MatchStats s;
  s.w = inner.rowwise().sum();
  s.y = fixed * inner.transpose();
  s.z = inner * fixed.colwise().squaredNorm().transpose();
  s.total_weight = s.w.sum();
  return s;
}

// Softassign workspace in scaling-vector form: the normalized matrix is
// diag(r) K diag(c) on the inner block, with slack column r and slack row c
// (the slack row/column scale with the passes but are never normalized
// themselves). Each sweep runs the column pass then the row pass, so
// non-slack rows leave the loop summing to 1.
//
// The solver instantiates this with Scalar = float for most of the anneal:
// the correspondence weights only need a few significant digits to steer
// the affine update, and halving the kernel's memory footprint roughly
// halves the cost of the Sinkhorn sweeps, which dominate the solve. The
// public softassign entry point and the low-temperature end of the anneal
// (where the kernel's dynamic range exceeds float) use Scalar = double.
template <typename Scalar>
struct FastAssign {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Mat3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mat3X fixed;
  Vec fixed_sqnorm;
  Mat d2;
  Mat kernel;
  Vec row_scale, col_scale;
  Vec u, v, kcf;
  Mat3X scaled_fixed;
  Mat3X y;
  // Sweep tolerance: well above the scalar type's rounding floor. The loop
  // always ends on a row pass, so non-slack rows sum to 1 regardless.
  static constexpr Scalar kSweepTol = sizeof(Scalar) == 4 ? Scalar(1e-5)
                                                          : Scalar(1e-7);
  // Cap on the kernel exponent, just below the scalar type's overflow
  // threshold. Entries near the cap already dwarf the unit slack entries by
  // many orders of magnitude, so capping does not change the assignment.
  static constexpr Scalar kMaxExponent = sizeof(Scalar) == 4 ? Scalar(88)
                                                             : Scalar(700);

  FastAssign(Eigen::Index moving_count, const Eigen::Matrix3Xd& fx)
      : fixed(fx.cast<Scalar>()),
        fixed_sqnorm(fixed.colwise().squaredNorm()),
        row_scale(Vec::Ones(moving_count)),
        col_scale(Vec::Ones(fx.cols())) {}

  // One softassign pass: kernel from the current point positions, then
  // Sinkhorn sweeps (column pass, row pass) continuing from the previous
  // scaling vectors, which stay close across consecutive solver iterations.
  void run(const Eigen::Matrix3Xd& transformed, double temp, double beta,
           int sinkhorn_iters) {
    Mat3X t = transformed.cast<Scalar>();
    d2.noalias() = Scalar(-2) * (t.transpose() * fixed);
    d2.colwise() += t.colwise().squaredNorm().transpose();
    d2.rowwise() += fixed_sqnorm.transpose();
    kernel = ((static_cast<Scalar>(beta) - d2.array().max(Scalar(0))) *
              static_cast<Scalar>(1.0 / temp))
                 .min(kMaxExponent)
                 .exp();
    for (int it = 0; it < sinkhorn_iters; ++it) {
      u.noalias() = kernel.transpose() * row_scale;
      Scalar col_dev =
          ((u.array() + Scalar(1)) * col_scale.array() - Scalar(1))
              .abs()
              .maxCoeff();
      col_scale = (u.array() + Scalar(1)).inverse();
      v.noalias() = kernel * col_scale;
      Scalar row_dev =
          ((v.array() + Scalar(1)) * row_scale.array() - Scalar(1))
              .abs()
              .maxCoeff();
      row_scale = (v.array() + Scalar(1)).inverse();
      if (col_dev < kSweepTol && row_dev < kSweepTol) break;
    }
  }

  // Sufficient statistics of the implied match matrix, promoted to double
  // for the normal-equation solve. v already holds kernel * col_scale from
  // the final row pass.
  MatchStats stats() {
    MatchStats s;
    s.w = (row_scale.array() * v.array()).template cast<double>();
    scaled_fixed = fixed.array().rowwise() * col_scale.transpose().array();
    y.noalias() = scaled_fixed * kernel.transpose();
    s.y = (y.array().rowwise() * row_scale.transpose().array())
              .matrix()
              .template cast<double>();
    kcf.noalias() =
        kernel * (col_scale.array() * fixed_sqnorm.array()).matrix();
    s.z = (row_scale.array() * kcf.array()).template cast<double>();
    s.total_weight = s.w.sum();
    return s;
  }

  // Full (M+1) x (N+1) match matrix implied by the scaling vectors.
  MatchMatrix materialize() const {
    auto m = kernel.rows();
    auto n = kernel.cols();
    MatchMatrix mu;
    mu.weights.resize(m + 1, n + 1);
    mu.weights.topLeftCorner(m, n) =
        ((kernel.array().colwise() * row_scale.array()).rowwise() *
         col_scale.transpose().array())
            .template cast<double>();
    mu.weights.col(n).head(m) = row_scale.template cast<double>();
    mu.weights.row(m).head(n) =
        col_scale.transpose().template cast<double>();
    mu.weights(m, n) = 0.0;
    return mu;
  }
};

AffineTransform solve_affine(const MatchStats& s, const Eigen::Matrix3Xd& mv,
                             double alpha) {
  if (s.total_weight <= 1e-12)
    throw SolverError("update_affine: no correspondence mass");
  Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, 3> rhs = Eigen::Matrix<double, 4, 3>::Zero();
  for (Eigen::Index i = 0; i < mv.cols(); ++i) {
    Eigen::Vector4d x(mv(0, i), mv(1, i), mv(2, i), 1.0);
    normal.noalias() += s.w(i) * (x * x.transpose());
    rhs.noalias() += x * s.y.col(i).transpose();
  }
  for (int d = 0; d < 3; ++d) normal(d, d) += alpha;

  Eigen::FullPivLU<Eigen::Matrix4d> lu(normal);
  if (!lu.isInvertible())
    throw SolverError("update_affine: singular normal system");
  AffineTransform out;
  for (int r = 0; r < 3; ++r) {
    Eigen::Vector4d b = rhs.col(r);
    b(r) += alpha;  // regularizer pulls row r of A toward e_r
    Eigen::Vector4d sol = lu.solve(b);
    out.linear.row(r) = sol.head<3>().transpose();
    out.translation(r) = sol(3);
  }
  return out;
}

// C = sum_ij mu_ij |s_j - T(m_i)|^2 + alpha |A - I|_F^2 - beta sum_ij mu_ij,
// with the data term expanded through the sufficient statistics.
double cost_from_stats(const MatchStats& s, const Eigen::Matrix3Xd& transformed,
                       const AffineTransform& t, double alpha, double beta) {
  double data = 0.0;
  for (Eigen::Index i = 0; i < transformed.cols(); ++i) {
    data += s.w(i) * transformed.col(i).squaredNorm() -
            2.0 * transformed.col(i).dot(s.y.col(i)) + s.z(i);
  }
  return data + alpha * (t.linear - Eigen::Matrix3d::Identity()).squaredNorm() -
         beta * s.total_weight;
}

}  // namespace

void RpmConfig::validate() const {
  if (!(alpha >= 0)) throw InvalidParameterError("rpm config: alpha must be >= 0");
  if (beta && !(*beta >= 0))
    throw InvalidParameterError("rpm config: beta must be >= 0");
  if (t_init && !(*t_init > 0))
    throw InvalidParameterError("rpm config: t_init must be > 0");
  if (!(t_final > 0)) throw InvalidParameterError("rpm config: t_final must be > 0");
  if (t_init && *t_init <= t_final)
    throw InvalidParameterError("rpm config: t_final must be < t_init");
  if (!(anneal_rate > 0 && anneal_rate < 1))
    throw InvalidParameterError("rpm config: anneal_rate must be in (0,1)");
  if (sinkhorn_iters < 1 || inner_iters < 1)
    throw InvalidParameterError("rpm config: iteration counts must be >= 1");
  if (!(conv_tol > 0)) throw InvalidParameterError("rpm config: conv_tol must be > 0");
}

double rpm_cost(const MatchMatrix& mu, const PointCloud& moving,
                const PointCloud& fixed, const AffineTransform& t,
                double alpha, double beta) {
  auto m = static_cast<Eigen::Index>(moving.size());
  auto n = static_cast<Eigen::Index>(fixed.size());
  if (mu.weights.rows() != m + 1 || mu.weights.cols() != n + 1)
    throw InvalidParameterError("rpm_cost: match matrix shape mismatch");

  Eigen::Matrix3Xd mt = to_matrix(apply_transform(t, moving));
  Eigen::MatrixXd d2 = squared_distances(mt, to_matrix(fixed));
  auto inner = mu.weights.topLeftCorner(m, n);
  double data_term = (inner.array() * d2.array()).sum();
  double reg_term =
      alpha * (t.linear - Eigen::Matrix3d::Identity()).squaredNorm();
  double bias_term = beta * inner.sum();
  return data_term + reg_term - bias_term;
}

MatchMatrix softassign(const PointCloud& moving_transformed,
                       const PointCloud& fixed, double temp, double beta,
                       int sinkhorn_iters) {
  if (!(temp > 0)) throw InvalidParameterError("softassign: temp must be > 0");
  DenormalFlushGuard ftz;
  Eigen::Matrix3Xd mt = to_matrix(moving_transformed);
  FastAssign<double> ws(mt.cols(), to_matrix(fixed));
  ws.run(mt, temp, beta, sinkhorn_iters);
  return ws.materialize();
}

AffineTransform update_affine(const MatchMatrix& mu, const PointCloud& moving,
                              const PointCloud& fixed, double alpha) {
  auto m = static_cast<Eigen::Index>(moving.size());
  auto n = static_cast<Eigen::Index>(fixed.size());
  if (mu.weights.rows() != m + 1 || mu.weights.cols() != n + 1)
    throw InvalidParameterError("update_affine: match matrix shape mismatch");
  MatchStats stats = match_stats(mu, to_matrix(fixed));
  return solve_affine(stats, to_matrix(moving), alpha);
}

RpmResult rpm_solve(const PointCloud& moving, const PointCloud& fixed,
                    const RpmConfig& cfg) {
  cfg.validate();
  if (moving.size() < 4 || fixed.size() < 4)
    throw SolverError("rpm_solve: need at least 4 points per cloud");

  // Pre-align centroids; the offset is folded back into the result so the
  // returned transform maps original moving coordinates onto fixed.
  Point3 shift = fixed.centroid() - moving.centroid();
  Eigen::Matrix3Xd mv = to_matrix(moving);
  mv.colwise() += shift;
  Eigen::Matrix3Xd fx = to_matrix(fixed);

  Point3 cf = fixed.centroid();
  double spread =
      ((mv.colwise() - cf).colwise().squaredNorm().sum() +
       (fx.colwise() - cf).colwise().squaredNorm().sum()) /
      static_cast<double>(mv.cols() + fx.cols());

  double t_init = cfg.t_init.value_or(spread);
  if (t_init <= cfg.t_final) t_init = 2.0 * cfg.t_final;
  double beta = cfg.beta.value_or(t_init / 10.0);

  AffineTransform current;  // identity start after centroid alignment
  MatchMatrix mu;
  double temp = t_init;
  int temps_run = 0;
  double cost = std::numeric_limits<double>::quiet_NaN();

  DenormalFlushGuard ftz;
  FastAssign<float> fast(mv.cols(), fx);
  FastAssign<double> slow(mv.cols(), fx);
  bool handed_off = false;
  while (temp >= cfg.t_final) {
    double prev_cost = std::numeric_limits<double>::infinity();
    int iters_done = 0;
    // The single-precision workspace can only represent the kernel while its
    // largest exponent stays below float overflow; the last few temperatures
    // switch to a double workspace seeded from the float scaling vectors.
    bool use_fast = beta / temp < 80.0;
    if (!use_fast && !handed_off) {
      slow.row_scale = fast.row_scale.cast<double>();
      slow.col_scale = fast.col_scale.cast<double>();
      handed_off = true;
    }
    for (int it = 0; it < cfg.inner_iters; ++it) {
      Eigen::Matrix3Xd transformed = (current.linear * mv).colwise() +
                                     current.translation;
      MatchStats stats;
      if (use_fast) {
        fast.run(transformed, temp, beta, cfg.sinkhorn_iters);
        stats = fast.stats();
      } else {
        slow.run(transformed, temp, beta, cfg.sinkhorn_iters);
        stats = slow.stats();
      }
      double alpha_eff = cfg.alpha * stats.total_weight;
      current = solve_affine(stats, mv, alpha_eff);
      transformed = (current.linear * mv).colwise() + current.translation;
      cost = cost_from_stats(stats, transformed, current, alpha_eff, beta);
      ++iters_done;
      if (std::abs(prev_cost - cost) <
          cfg.conv_tol * std::max(1.0, std::abs(prev_cost)))
        break;
      prev_cost = cost;
    }
#ifdef ANATREG_PROFILE
    std::fprintf(stderr, "temp=%.3f iters=%d cost=%.3f\n", temp, iters_done,
                 cost);
#else
    (void)iters_done;
#endif
    ++temps_run;
    temp *= cfg.anneal_rate;
  }

  // Report the correspondence state of the final transform at t_final.
  {
    Eigen::Matrix3Xd transformed = (current.linear * mv).colwise() +
                                   current.translation;
    FastAssign<double> final_ws(mv.cols(), fx);
    final_ws.run(transformed, cfg.t_final, beta, cfg.sinkhorn_iters);
    mu = final_ws.materialize();
    MatchStats stats = final_ws.stats();
    double alpha_eff = cfg.alpha * stats.total_weight;
    cost = cost_from_stats(stats, transformed, current, alpha_eff, beta);
  }

  RpmResult res;
  res.transform.linear = current.linear;
  res.transform.translation = current.linear * shift + current.translation;
  res.params = decompose_affine(res.transform);
  res.final_cost = cost;
  res.temperatures_run = temps_run;
  res.match = mu;
  double slack_mass =
      mu.weights.col(mu.fixed_count()).head(mu.moving_count()).sum();
  res.inlier_fraction_moving =
      1.0 - slack_mass / static_cast<double>(mu.moving_count());
  return res;
}

RpmConfig rpm_config_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("rpm config: cannot open " + path);
  RpmConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("rpm config: expected key = value at line " +
                        std::to_string(lineno));
    std::istringstream key_ss(line.substr(0, eq));
    std::istringstream val_ss(line.substr(eq + 1));
    std::string key;
    double value;
    key_ss >> key;
    if (!(val_ss >> value))
      throw FormatError("rpm config: bad numeric value at line " +
                        std::to_string(lineno));
    if (key == "alpha") cfg.alpha = value;
    else if (key == "beta") cfg.beta = value;
    else if (key == "t_init") cfg.t_init = value;
    else if (key == "t_final") cfg.t_final = value;
    else if (key == "anneal_rate") cfg.anneal_rate = value;
    else if (key == "sinkhorn_iters") cfg.sinkhorn_iters = static_cast<int>(value);
    else if (key == "inner_iters") cfg.inner_iters = static_cast<int>(value);
    else if (key == "conv_tol") cfg.conv_tol = value;
    else
      throw FormatError("rpm config: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
  }
  cfg.validate();
  return cfg;
}

}  // namespace anatreg
