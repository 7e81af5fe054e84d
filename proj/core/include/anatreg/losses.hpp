#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "anatreg/errors.hpp"

namespace anatreg {

using Image2D = Eigen::ArrayXXd;  // H x W intensities
using ProbMap = Eigen::ArrayXXd;  // H x W values in [0,1]

struct MindParams {
  int patch_radius = 1;  // (2r+1)^2 patch
  std::vector<std::pair<int, int>> neighborhood = {
      {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
  double eps = 1e-6;  // variance floor

  void validate() const;
};

struct LossWeights {
  double lambda1 = 10.0;  // cycle
  double lambda2 = 1.0;   // adversarial
  double lambda3 = 1.0;   // segmentation
  double lambda4 = 1.0;   // identity
  double lambda5 = 1.0;   // anatomy-preserving
  double lambda_cc = 1.0;
  double lambda_md = 1.0;
};

struct LossComponents {
  double cycle = 0.0;
  double adv = 0.0;
  double seg = 0.0;
  double idt = 0.0;
  double ap = 0.0;
};

double adv_loss(const ProbMap& d_real, const ProbMap& d_fake);
double cycle_loss(const Image2D& a, const Image2D& a_rec, const Image2D& b,
                  const Image2D& b_rec);
double seg_dice_loss(const ProbMap& pred, const Image2D& gt);
double idt_loss(const Image2D& g_of_b, const Image2D& b,
                const Image2D& g_of_a, const Image2D& a);
double cc_loss(const Image2D& x, const Image2D& y);

// One H x W plane per neighborhood offset; every pixel's max across planes
// equals 1.
std::vector<Image2D> mind_descriptor(const Image2D& img, const MindParams& p);
double mind_loss(const Image2D& a, const Image2D& b, const MindParams& p);
double ap_loss(const Image2D& x, const Image2D& y, const MindParams& p,
               const LossWeights& w);
double total_loss(const LossComponents& c, const LossWeights& w);

enum class GradLoss { Cycle, Idt, Cc, SegDice };

// Central-difference check of the analytic gradients against every entry of
// the differentiable image inputs; returns the max relative error.
double grad_check(GradLoss id, const std::vector<Image2D>& inputs,
                  double h = 1e-5);

// 2D raster I/O, MetaImage-style with NDims=2. Writes MET_DOUBLE; reads
// MET_DOUBLE, MET_FLOAT, or MET_UCHAR.
Image2D read_image2d(const std::string& path);
void write_image2d(const Image2D& img, const std::string& path);

}  // namespace anatreg
