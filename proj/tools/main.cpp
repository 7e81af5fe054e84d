// anatreg: anatomy-guided mask registration pipeline.
//
// Subcommands: phantom, crop-fov, surface, register, apply, metrics,
// losses, gradcheck. Exit codes: 0 ok, 2 format/usage error, 3 empty mask,
// 4 solver failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "anatreg/geometry.hpp"
#include "anatreg/losses.hpp"
#include "anatreg/metrics.hpp"
#include "anatreg/phantom.hpp"
#include "anatreg/rpm.hpp"
#include "anatreg/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kExitFormat = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitSolver = 4;

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "absent";
  std::ostringstream ss;
  ss << f.rdbuf();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

json params_to_json(const anatreg::AffineParams& p) {
  json j;
  auto values = p.as_array();
  const auto& names = anatreg::AffineParams::names();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = values[i];
  return j;
}

json transform_to_json_obj(const anatreg::AffineTransform& t) {
  return json::parse(anatreg::transform_to_json(t));
}

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  auto tt = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

anatreg::FovShape parse_fov_shape(const std::string& s) {
  if (s == "cylinder") return anatreg::FovShape::CylinderZ;
  if (s == "sphere") return anatreg::FovShape::Sphere;
  throw anatreg::FormatError("fov shape must be cylinder or sphere");
}

anatreg::Image2D random_image(Eigen::Index h, Eigen::Index w,
                              std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  anatreg::Image2D img(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) img(i, j) = u(rng);
  return img;
}

int run_register(const std::string& fixed_path, const std::string& moving_path,
                 const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, int points) {
  anatreg::RpmConfig cfg;
  if (!config_path.empty()) cfg = anatreg::rpm_config_from_file(config_path);

  anatreg::MaskVolume fixed = anatreg::read_mask(fixed_path);
  anatreg::MaskVolume moving = anatreg::read_mask(moving_path);
  if (fixed.foreground_count() == 0)
    throw anatreg::EmptyMaskError("register: fixed mask is empty");
  if (moving.foreground_count() == 0)
    throw anatreg::EmptyMaskError("register: moving mask is empty");

  fixed = anatreg::resample_isotropic(fixed, 1.0);
  moving = anatreg::resample_isotropic(moving, 1.0);

  anatreg::PointCloud fixed_surface = anatreg::extract_surface(fixed);
  anatreg::PointCloud moving_surface = anatreg::extract_surface(moving);
  fixed_surface.frame_label = "fixed";
  moving_surface.frame_label = "moving";
  auto fixed_sub =
      anatreg::subsample_fps(fixed_surface, static_cast<std::size_t>(points), seed);
  auto moving_sub = anatreg::subsample_fps(moving_surface,
                                           static_cast<std::size_t>(points), seed);

  anatreg::RpmResult res = anatreg::rpm_solve(moving_sub, fixed_sub, cfg);

  fs::create_directories(out_dir);
  std::string transform_path = (fs::path(out_dir) / "transform.json").string();
  anatreg::write_transform(res.transform, transform_path);
  anatreg::MaskVolume warped = anatreg::warp_mask(moving, res.transform, fixed);
  anatreg::write_mask(warped, (fs::path(out_dir) / "warped.mhd").string());

  json report;
  report["transform"] = transform_to_json_obj(res.transform);
  report["params"] = params_to_json(res.params);
  report["rpm"] = {{"final_cost", res.final_cost},
                   {"temperatures_run", res.temperatures_run},
                   {"inlier_fraction_moving", res.inlier_fraction_moving}};
  report["provenance"] = {
      {"fixed_mask", fixed_path},
      {"moving_mask", moving_path},
      {"config", config_path.empty() ? "default" : config_path},
      {"config_hash",
       config_path.empty() ? "default" : file_hash_hex(config_path)},
      {"tool_version", kToolVersion},
      {"seed", seed},
      {"point_counts",
       {{"fixed_surface", fixed_surface.size()},
        {"moving_surface", moving_surface.size()},
        {"fixed_used", fixed_sub.size()},
        {"moving_used", moving_sub.size()}}}};
  report["timestamp"] = iso_timestamp();
  std::ofstream rf(fs::path(out_dir) / "report.json", std::ios::binary);
  rf << report.dump(2) << "\n";

  std::cout << "registered: cost=" << res.final_cost
            << " temps=" << res.temperatures_run
            << " inlier_fraction=" << res.inlier_fraction_moving << "\n"
            << "transform written to " << transform_path << "\n";
  return 0;
}

int run_metrics(const std::string& path_a, const std::string& path_b,
                const std::string& transform_path,
                const std::string& gt_transform_path) {
  anatreg::MaskVolume a = anatreg::read_mask(path_a);
  anatreg::MaskVolume b = anatreg::read_mask(path_b);
  if (!transform_path.empty()) {
    anatreg::AffineTransform t = anatreg::read_transform(transform_path);
    b = anatreg::warp_mask(b, t, a);
  } else if (!b.same_grid(a)) {
    throw anatreg::InvalidParameterError("metrics: masks are not on the same grid");
  }
  json report;
  report["dsc"] = anatreg::dsc(a, b);
  report["asd_mm"] = anatreg::asd(a, b);
  if (!transform_path.empty() && !gt_transform_path.empty()) {
    auto est = anatreg::decompose_affine(anatreg::read_transform(transform_path));
    auto gt = anatreg::decompose_affine(anatreg::read_transform(gt_transform_path));
    auto errors = anatreg::param_errors(est, gt);
    json pe;
    const auto& names = anatreg::AffineParams::names();
    for (std::size_t i = 0; i < names.size(); ++i) pe[names[i]] = errors[i];
    report["param_abs_errors"] = pe;
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_losses(const std::string& loss_id,
               const std::vector<std::string>& inputs) {
  using anatreg::read_image2d;
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw anatreg::FormatError("losses: " + loss_id + " needs " +
                                 std::to_string(n) + " image inputs");
  };
  anatreg::MindParams mp;
  anatreg::LossWeights lw;
  double value;
  if (loss_id == "adv") {
    need(2);
    value = anatreg::adv_loss(read_image2d(inputs[0]), read_image2d(inputs[1]));
  } else if (loss_id == "cycle") {
    need(4);
    value = anatreg::cycle_loss(read_image2d(inputs[0]), read_image2d(inputs[1]),
                                read_image2d(inputs[2]), read_image2d(inputs[3]));
  } else if (loss_id == "seg-dice") {
    need(2);
    value = anatreg::seg_dice_loss(read_image2d(inputs[0]),
                                   read_image2d(inputs[1]));
  } else if (loss_id == "idt") {
    need(4);
    value = anatreg::idt_loss(read_image2d(inputs[0]), read_image2d(inputs[1]),
                              read_image2d(inputs[2]), read_image2d(inputs[3]));
  } else if (loss_id == "cc") {
    need(2);
    value = anatreg::cc_loss(read_image2d(inputs[0]), read_image2d(inputs[1]));
  } else if (loss_id == "mind") {
    need(2);
    value = anatreg::mind_loss(read_image2d(inputs[0]), read_image2d(inputs[1]),
                               mp);
  } else if (loss_id == "ap") {
    need(2);
    value = anatreg::ap_loss(read_image2d(inputs[0]), read_image2d(inputs[1]),
                             mp, lw);
  } else {
    throw anatreg::FormatError("losses: unknown loss id '" + loss_id + "'");
  }
  std::printf("%.17g\n", value);
  return 0;
}

int run_gradcheck(const std::string& loss_id, int height, int width,
                  std::uint64_t seed) {
  std::vector<anatreg::Image2D> inputs;
  anatreg::GradLoss id;
  if (loss_id == "cycle" || loss_id == "idt") {
    id = loss_id == "cycle" ? anatreg::GradLoss::Cycle : anatreg::GradLoss::Idt;
    for (int k = 0; k < 4; ++k)
      inputs.push_back(random_image(height, width, seed * 4 + k, -1.0, 1.0));
  } else if (loss_id == "cc") {
    id = anatreg::GradLoss::Cc;
    for (int k = 0; k < 2; ++k)
      inputs.push_back(random_image(height, width, seed * 4 + k, -1.0, 1.0));
  } else if (loss_id == "seg-dice") {
    id = anatreg::GradLoss::SegDice;
    inputs.push_back(random_image(height, width, seed * 4, 0.0, 1.0));
    anatreg::Image2D gt = random_image(height, width, seed * 4 + 1, 0.0, 1.0);
    inputs.push_back((gt > 0.5).cast<double>());
  } else {
    throw anatreg::FormatError("gradcheck: unknown loss id '" + loss_id + "'");
  }
  double err = anatreg::grad_check(id, inputs);
  std::printf("%.17g\n", err);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anatomy-guided mask registration toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic test case");
  std::string ph_spec, ph_gt, ph_out = ".", ph_fov_shape;
  double ph_radius = 125.0;
  std::vector<double> ph_fov_center = {0, 0, 0};
  cmd_phantom->add_option("--spec", ph_spec, "phantom spec file")->required();
  cmd_phantom->add_option("--gt", ph_gt, "ground-truth params file");
  cmd_phantom->add_option("--fov", ph_fov_shape, "crop shape: cylinder|sphere");
  cmd_phantom->add_option("--radius", ph_radius, "FOV radius in mm");
  cmd_phantom->add_option("--fov-center", ph_fov_center, "FOV center (mm)")
      ->expected(3);
  cmd_phantom->add_option("--out", ph_out, "output directory");

  // crop-fov
  auto* cmd_crop = app.add_subcommand("crop-fov", "apply a limited-FOV crop to a mask");
  std::string cr_in, cr_out, cr_shape = "cylinder";
  double cr_radius = 125.0;
  std::vector<double> cr_center = {0, 0, 0};
  cmd_crop->add_option("input", cr_in, "input mask header")->required();
  cmd_crop->add_option("--out", cr_out, "output mask header")->required();
  cmd_crop->add_option("--fov", cr_shape, "crop shape: cylinder|sphere");
  cmd_crop->add_option("--radius", cr_radius, "FOV radius in mm");
  cmd_crop->add_option("--center", cr_center, "FOV center (mm)")->expected(3);

  // surface
  auto* cmd_surface = app.add_subcommand("surface", "extract surface points from a mask");
  std::string sf_in, sf_out;
  int sf_points = 0;
  std::uint64_t sf_seed = 0;
  cmd_surface->add_option("input", sf_in, "input mask header")->required();
  cmd_surface->add_option("--out", sf_out, "output point table")->required();
  cmd_surface->add_option("--points", sf_points, "subsample budget (0 = all)");
  cmd_surface->add_option("--seed", sf_seed, "subsample seed");

  // register
  auto* cmd_register = app.add_subcommand("register", "register moving mask onto fixed mask");
  std::string rg_fixed, rg_moving, rg_config, rg_out = ".";
  std::uint64_t rg_seed = 0;
  int rg_points = 1000;
  cmd_register->add_option("fixed", rg_fixed, "fixed mask header")->required();
  cmd_register->add_option("moving", rg_moving, "moving mask header")->required();
  cmd_register->add_option("--config", rg_config, "RPM config file");
  cmd_register->add_option("--out", rg_out, "output directory");
  cmd_register->add_option("--seed", rg_seed, "subsample seed");
  cmd_register->add_option("--points", rg_points, "surface point budget");

  // apply
  auto* cmd_apply = app.add_subcommand("apply", "warp a mask by a transform");
  std::string ap_in, ap_transform, ap_ref, ap_out;
  cmd_apply->add_option("input", ap_in, "input mask header")->required();
  cmd_apply->add_option("transform", ap_transform, "transform document")->required();
  cmd_apply->add_option("--reference", ap_ref, "reference grid mask (default: input grid)");
  cmd_apply->add_option("--out", ap_out, "output mask header")->required();

  // metrics
  auto* cmd_metrics = app.add_subcommand("metrics", "score two masks");
  std::string mt_a, mt_b, mt_transform, mt_gt_transform;
  cmd_metrics->add_option("mask_a", mt_a, "reference mask header")->required();
  cmd_metrics->add_option("mask_b", mt_b, "evaluated mask header")->required();
  cmd_metrics->add_option("--transform", mt_transform,
                          "warp mask_b by this transform before scoring");
  cmd_metrics->add_option("--gt-transform", mt_gt_transform,
                          "ground-truth transform for parameter errors");

  // losses
  auto* cmd_losses = app.add_subcommand("losses", "evaluate a training loss on rasters");
  std::string ls_id;
  std::vector<std::string> ls_inputs;
  cmd_losses->add_option("loss", ls_id,
                         "loss id: adv|cycle|seg-dice|idt|cc|mind|ap")
      ->required();
  cmd_losses->add_option("inputs", ls_inputs, "image raster headers");

  // gradcheck
  auto* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_id;
  int gc_h = 8, gc_w = 8;
  std::uint64_t gc_seed = 0;
  cmd_gradcheck->add_option("loss", gc_id, "loss id: cycle|idt|cc|seg-dice")
      ->required();
  cmd_gradcheck->add_option("--height", gc_h, "image height");
  cmd_gradcheck->add_option("--width", gc_w, "image width");
  cmd_gradcheck->add_option("--seed", gc_seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitFormat;
  }

  try {
    if (cmd_phantom->parsed()) {
      anatreg::PhantomSpec spec = anatreg::phantom_spec_from_file(ph_spec);
      anatreg::AffineParams gt;
      if (!ph_gt.empty()) gt = anatreg::params_from_file(ph_gt);
      std::optional<anatreg::FovSpec> fov;
      if (!ph_fov_shape.empty()) {
        fov = anatreg::FovSpec{parse_fov_shape(ph_fov_shape),
                               anatreg::Point3(ph_fov_center[0], ph_fov_center[1],
                                               ph_fov_center[2]),
                               ph_radius};
      }
      anatreg::TestCase tc = anatreg::make_test_case(spec, gt, fov);
      fs::create_directories(ph_out);
      anatreg::write_mask(tc.moving, (fs::path(ph_out) / "moving.mhd").string());
      anatreg::write_mask(tc.fixed, (fs::path(ph_out) / "fixed.mhd").string());
      anatreg::write_transform(tc.gt_transform,
                               (fs::path(ph_out) / "gt_transform.json").string());
      std::cout << "phantom case written to " << ph_out << "\n";
      return 0;
    }
    if (cmd_crop->parsed()) {
      anatreg::MaskVolume v = anatreg::read_mask(cr_in);
      anatreg::FovSpec fov{parse_fov_shape(cr_shape),
                           anatreg::Point3(cr_center[0], cr_center[1], cr_center[2]),
                           cr_radius};
      anatreg::write_mask(anatreg::crop_fov(v, fov), cr_out);
      return 0;
    }
    if (cmd_surface->parsed()) {
      anatreg::MaskVolume v = anatreg::read_mask(sf_in);
      anatreg::PointCloud c = anatreg::extract_surface(v);
      if (sf_points > 0)
        c = anatreg::subsample_fps(c, static_cast<std::size_t>(sf_points), sf_seed);
      anatreg::write_point_cloud(c, sf_out);
      std::cout << c.size() << " points written to " << sf_out << "\n";
      return 0;
    }
    if (cmd_register->parsed())
      return run_register(rg_fixed, rg_moving, rg_config, rg_out, rg_seed,
                          rg_points);
    if (cmd_apply->parsed()) {
      anatreg::MaskVolume v = anatreg::read_mask(ap_in);
      anatreg::AffineTransform t = anatreg::read_transform(ap_transform);
      anatreg::MaskVolume ref = ap_ref.empty() ? v : anatreg::read_mask(ap_ref);
      anatreg::write_mask(anatreg::warp_mask(v, t, ref), ap_out);
      return 0;
    }
    if (cmd_metrics->parsed())
      return run_metrics(mt_a, mt_b, mt_transform, mt_gt_transform);
    if (cmd_losses->parsed()) return run_losses(ls_id, ls_inputs);
    if (cmd_gradcheck->parsed()) return run_gradcheck(gc_id, gc_h, gc_w, gc_seed);
  } catch (const anatreg::EmptyMaskError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmpty;
  } catch (const anatreg::SolverError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  }
  return 0;
}
