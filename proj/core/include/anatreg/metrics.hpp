#pragma once

#include <array>

#include "anatreg/geometry.hpp"
#include "anatreg/volume.hpp"

namespace anatreg {

struct EvalReport {
  double dsc = 0.0;
  double asd_mm = 0.0;
  bool has_param_errors = false;
  std::array<double, 12> param_abs_errors = {};  // order of AffineParams::names()
};

// Dice similarity coefficient; masks must share a grid. Both empty -> 1.
double dsc(const MaskVolume& a, const MaskVolume& b);

// Average symmetric surface distance in mm: sum of nearest-neighbor
// distances from each surface to the other, divided by the total surface
// point count. Both masks must be nonempty.
double asd(const MaskVolume& a, const MaskVolume& b);

std::array<double, 12> param_errors(const AffineParams& est,
                                    const AffineParams& gt);

}  // namespace anatreg
