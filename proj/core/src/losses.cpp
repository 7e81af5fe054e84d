#include "anatreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <sstream>

namespace anatreg {

namespace fs = std::filesystem;

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kDiceEps = 1e-6;
constexpr double kSigmaEps = 1e-12;

void require_same_shape(const Image2D& a, const Image2D& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidParameterError(std::string(what) + ": shape mismatch");
}

double mse(const Image2D& x, const Image2D& ref) {
  return (x - ref).square().mean();
}

struct CcStats {
  double n, cov, sx, sy, rho;
  Image2D xc, yc;
};

CcStats cc_stats(const Image2D& x, const Image2D& y) {
  require_same_shape(x, y, "cc_loss");
  CcStats s;
  s.n = static_cast<double>(x.size());
  s.xc = x - x.mean();
  s.yc = y - y.mean();
  s.cov = (s.xc * s.yc).mean();
  s.sx = std::sqrt(s.xc.square().mean());
  s.sy = std::sqrt(s.yc.square().mean());
  if (s.sx <= kSigmaEps || s.sy <= kSigmaEps)
    throw InvalidParameterError("cc_loss: constant image has zero variance");
  s.rho = s.cov / (s.sx * s.sy);
  return s;
}

}  // namespace

void MindParams::validate() const {
  if (patch_radius < 0)
    throw InvalidParameterError("mind: patch_radius must be >= 0");
  if (neighborhood.empty())
    throw InvalidParameterError("mind: neighborhood must be nonempty");
  for (const auto& [dy, dx] : neighborhood)
    if (dy == 0 && dx == 0)
      throw InvalidParameterError("mind: neighborhood must exclude (0,0)");
  if (!(eps > 0)) throw InvalidParameterError("mind: eps must be > 0");
}

double adv_loss(const ProbMap& d_real, const ProbMap& d_fake) {
  auto real = d_real.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
  auto fake = d_fake.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
  return real.log().mean() + (1.0 - fake).log().mean();
}

double cycle_loss(const Image2D& a, const Image2D& a_rec, const Image2D& b,
                  const Image2D& b_rec) {
  require_same_shape(a, a_rec, "cycle_loss");
  require_same_shape(b, b_rec, "cycle_loss");
  return mse(a_rec, a) + mse(b_rec, b);
}

double seg_dice_loss(const ProbMap& pred, const Image2D& gt) {
  require_same_shape(pred, gt, "seg_dice_loss");
  double inter = (pred * gt).sum();
  double denom = pred.sum() + gt.sum();
  return 1.0 - (2.0 * inter + kDiceEps) / (denom + kDiceEps);
}

double idt_loss(const Image2D& g_of_b, const Image2D& b,
                const Image2D& g_of_a, const Image2D& a) {
  require_same_shape(g_of_b, b, "idt_loss");
  require_same_shape(g_of_a, a, "idt_loss");
  return mse(g_of_b, b) + mse(g_of_a, a);
}

double cc_loss(const Image2D& x, const Image2D& y) {
  return 1.0 - cc_stats(x, y).rho;
}

std::vector<Image2D> mind_descriptor(const Image2D& img, const MindParams& p) {
  p.validate();
  int r = p.patch_radius;
  int reach = 0;
  for (const auto& [dy, dx] : p.neighborhood)
    reach = std::max({reach, std::abs(dy), std::abs(dx)});
  if (img.rows() < 2 * (r + reach) + 1 || img.cols() < 2 * (r + reach) + 1)
    throw InvalidParameterError(
        "mind_descriptor: image smaller than patch + neighborhood extent");

  const auto h = img.rows();
  const auto w = img.cols();
  int pad = r + reach;
  Image2D padded(h + 2 * pad, w + 2 * pad);
  for (Eigen::Index i = 0; i < padded.rows(); ++i)
    for (Eigen::Index j = 0; j < padded.cols(); ++j) {
      Eigen::Index si = std::clamp<Eigen::Index>(i - pad, 0, h - 1);
      Eigen::Index sj = std::clamp<Eigen::Index>(j - pad, 0, w - 1);
      padded(i, j) = img(si, sj);
    }

  // Patch SSD against each neighborhood offset: squared shifted difference
  // followed by a (2r+1)^2 box sum.
  std::vector<Image2D> dist(p.neighborhood.size());
  for (std::size_t o = 0; o < p.neighborhood.size(); ++o) {
    auto [dy, dx] = p.neighborhood[o];
    Image2D diff2(h + 2 * r, w + 2 * r);
    for (Eigen::Index i = 0; i < diff2.rows(); ++i)
      for (Eigen::Index j = 0; j < diff2.cols(); ++j) {
        double d = padded(i + reach, j + reach) -
                   padded(i + reach + dy, j + reach + dx);
        diff2(i, j) = d * d;
      }
    Image2D& k = dist[o];
    k.resize(h, w);
    for (Eigen::Index i = 0; i < h; ++i)
      for (Eigen::Index j = 0; j < w; ++j) {
        double s = 0.0;
        for (int di = -r; di <= r; ++di)
          for (int dj = -r; dj <= r; ++dj) s += diff2(i + r + di, j + r + dj);
        k(i, j) = s;
      }
  }

  // Per-pixel: variance = mean of the distance vector (floored), then
  // exponentiate and rescale so the max element is exactly 1.
  std::vector<Image2D> out(dist.size());
  for (auto& o : out) o.resize(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      double v = 0.0;
      for (const auto& k : dist) v += k(i, j);
      v = std::max(v / static_cast<double>(dist.size()), p.eps);
      double kmin = dist[0](i, j);
      for (const auto& k : dist) kmin = std::min(kmin, k(i, j));
      for (std::size_t o = 0; o < dist.size(); ++o)
        out[o](i, j) = std::exp(-(dist[o](i, j) - kmin) / v);
    }
  return out;
}

double mind_loss(const Image2D& a, const Image2D& b, const MindParams& p) {
  require_same_shape(a, b, "mind_loss");
  auto fa = mind_descriptor(a, p);
  auto fb = mind_descriptor(b, p);
  double total = 0.0;
  for (std::size_t o = 0; o < fa.size(); ++o)
    total += (fa[o] - fb[o]).abs().sum();
  return total / (static_cast<double>(fa.size()) * a.size());
}

double ap_loss(const Image2D& x, const Image2D& y, const MindParams& p,
               const LossWeights& w) {
  return w.lambda_cc * cc_loss(x, y) + w.lambda_md * mind_loss(x, y, p);
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  return w.lambda1 * c.cycle + w.lambda2 * c.adv + w.lambda3 * c.seg +
         w.lambda4 * c.idt + w.lambda5 * c.ap;
}

namespace {

// Analytic gradients used by grad_check. Each returns one gradient array per
// differentiable input, in the same order as the input list.

std::vector<Image2D> pairwise_mse_grads(const std::vector<Image2D>& in) {
  // inputs {p, q, r, s} scored as mse(q, p) + mse(s, r)
  double n1 = static_cast<double>(in[0].size());
  double n2 = static_cast<double>(in[2].size());
  Image2D g1 = 2.0 * (in[1] - in[0]) / n1;
  Image2D g2 = 2.0 * (in[3] - in[2]) / n2;
  return {-g1, g1, -g2, g2};
}

std::vector<Image2D> cc_grads(const std::vector<Image2D>& in) {
  CcStats s = cc_stats(in[0], in[1]);
  Image2D gx = -(s.yc / (s.n * s.sx * s.sy) -
                 s.rho * s.xc / (s.n * s.sx * s.sx));
  Image2D gy = -(s.xc / (s.n * s.sx * s.sy) -
                 s.rho * s.yc / (s.n * s.sy * s.sy));
  return {gx, gy};
}

std::vector<Image2D> seg_dice_grads(const std::vector<Image2D>& in) {
  const Image2D& pred = in[0];
  const Image2D& gt = in[1];
  double num = 2.0 * (pred * gt).sum() + kDiceEps;
  double den = pred.sum() + gt.sum() + kDiceEps;
  Image2D g = -(2.0 * gt * den - num) / (den * den);
  return {g};
}

}  // namespace

double grad_check(GradLoss id, const std::vector<Image2D>& inputs, double h) {
  std::function<double(const std::vector<Image2D>&)> eval;
  std::vector<Image2D> analytic;
  std::size_t n_diff = 0;

  switch (id) {
    case GradLoss::Cycle:
      if (inputs.size() != 4)
        throw InvalidParameterError("grad_check: cycle needs 4 inputs");
      eval = [](const std::vector<Image2D>& in) {
        return cycle_loss(in[0], in[1], in[2], in[3]);
      };
      analytic = pairwise_mse_grads(inputs);
      n_diff = 4;
      break;
    case GradLoss::Idt:
      if (inputs.size() != 4)
        throw InvalidParameterError("grad_check: idt needs 4 inputs");
      eval = [](const std::vector<Image2D>& in) {
        return idt_loss(in[0], in[1], in[2], in[3]);
      };
      // idt pairs are (g_of_b, b) and (g_of_a, a): same mse structure with
      // the roles swapped relative to cycle.
      analytic = pairwise_mse_grads({inputs[1], inputs[0], inputs[3], inputs[2]});
      std::swap(analytic[0], analytic[1]);
      std::swap(analytic[2], analytic[3]);
      n_diff = 4;
      break;
    case GradLoss::Cc:
      if (inputs.size() != 2)
        throw InvalidParameterError("grad_check: cc needs 2 inputs");
      eval = [](const std::vector<Image2D>& in) {
        return cc_loss(in[0], in[1]);
      };
      analytic = cc_grads(inputs);
      n_diff = 2;
      break;
    case GradLoss::SegDice:
      if (inputs.size() != 2)
        throw InvalidParameterError("grad_check: seg-dice needs 2 inputs");
      eval = [](const std::vector<Image2D>& in) {
        return seg_dice_loss(in[0], in[1]);
      };
      analytic = seg_dice_grads(inputs);
      n_diff = 1;  // ground truth labels are not differentiated
      break;
  }

  std::vector<Image2D> work = inputs;
  double max_rel = 0.0;
  for (std::size_t t = 0; t < n_diff; ++t) {
    for (Eigen::Index i = 0; i < work[t].rows(); ++i)
      for (Eigen::Index j = 0; j < work[t].cols(); ++j) {
        double orig = work[t](i, j);
        work[t](i, j) = orig + h;
        double fp = eval(work);
        work[t](i, j) = orig - h;
        double fm = eval(work);
        work[t](i, j) = orig;
        double numeric = (fp - fm) / (2.0 * h);
        double a = analytic[t](i, j);
        double rel = std::abs(a - numeric) /
                     std::max({1e-6, std::abs(a), std::abs(numeric)});
        max_rel = std::max(max_rel, rel);
      }
  }
  return max_rel;
}

Image2D read_image2d(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("image header: cannot open " + path);
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
      throw FormatError(std::string("image header: missing field ") + key);
    return it->second;
  };
  if (std::stoi(require("NDims")) != 2)
    throw FormatError("image header: field NDims must be 2");
  std::istringstream dims_ss(require("DimSize"));
  Eigen::Index w = 0, hgt = 0;
  if (!(dims_ss >> w >> hgt) || w < 1 || hgt < 1)
    throw FormatError("image header: field DimSize must be 2 positive integers");
  const std::string& etype = require("ElementType");
  std::size_t elem_size;
  if (etype == "MET_DOUBLE") elem_size = 8;
  else if (etype == "MET_FLOAT") elem_size = 4;
  else if (etype == "MET_UCHAR") elem_size = 1;
  else
    throw FormatError("image header: unsupported ElementType " + etype);

  fs::path data_path =
      fs::path(path).parent_path() / require("ElementDataFile");
  std::ifstream raw(data_path, std::ios::binary);
  if (!raw)
    throw FormatError("image payload: cannot open " + data_path.string());
  raw.seekg(0, std::ios::end);
  auto bytes = static_cast<std::size_t>(raw.tellg());
  raw.seekg(0);
  std::size_t expected = static_cast<std::size_t>(w) * hgt * elem_size;
  if (bytes != expected)
    throw FormatError("image payload: size mismatch, expected " +
                      std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes));

  Image2D img(hgt, w);
  // x-fastest raster order
  for (Eigen::Index i = 0; i < hgt; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      if (etype == "MET_DOUBLE") {
        double v;
        raw.read(reinterpret_cast<char*>(&v), 8);
        img(i, j) = v;
      } else if (etype == "MET_FLOAT") {
        float v;
        raw.read(reinterpret_cast<char*>(&v), 4);
        img(i, j) = v;
      } else {
        unsigned char v;
        raw.read(reinterpret_cast<char*>(&v), 1);
        img(i, j) = v;
      }
    }
  return img;
}

void write_image2d(const Image2D& img, const std::string& path) {
  fs::path header_path(path);
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  std::ofstream f(header_path);
  if (!f)
    throw FormatError("image header: cannot open " + path + " for writing");
  f << "ObjectType = Image\n";
  f << "NDims = 2\n";
  f << "DimSize = " << img.cols() << " " << img.rows() << "\n";
  f << "ElementSpacing = 1 1\n";
  f << "ElementType = MET_DOUBLE\n";
  f << "ElementDataFile = " << raw_path.filename().string() << "\n";
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw)
    throw FormatError("image payload: cannot open " + raw_path.string() +
                      " for writing");
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (Eigen::Index j = 0; j < img.cols(); ++j) {
      double v = img(i, j);
      raw.write(reinterpret_cast<const char*>(&v), 8);
    }
}

}  // namespace anatreg
