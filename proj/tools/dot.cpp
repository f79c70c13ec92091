// Command-line driver: render, run, eval, calibrate, mask-diff.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dot/evaluation.hpp"
#include "dot/harness.hpp"
#include "dot/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitTracking = 3;

int exit_code_for(const dot::Error& e) {
  switch (e.code()) {
    case dot::ErrorCode::TrackingLost:
    case dot::ErrorCode::TooFewValidPoints:
    case dot::ErrorCode::SingularSystem:
      return kExitTracking;
    default:
      return kExitConfig;
  }
}

int cmd_render(const std::string& spec_path, const std::string& out) {
  std::ifstream in(spec_path);
  if (!in) throw dot::Error(dot::ErrorCode::ConfigError, "cannot open spec " + spec_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw dot::Error(dot::ErrorCode::SpecInvalid, e.what());
  }
  const dot::SceneSpec spec = dot::scene_from_json(j);
  dot::write_dataset(spec, out);
  spdlog::info("rendered {} frames to {}", spec.frames, out);
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out) {
  const dot::PipelineConfig cfg = dot::load_config(config_path);
  const dot::Dataset data = dot::Dataset::open(cfg.dataset);
  const dot::PipelineResult res = dot::run_pipeline(data, cfg);
  dot::write_outputs(res, cfg, out);
  std::printf("frames %d/%d tracked (%.1f%%)\n", res.frames_processed, res.frames_total,
              100.0 * res.tracked_fraction());
  if (res.tracking_lost) {
    std::fprintf(stderr, "tracking lost: %s\n", res.failure.c_str());
    return kExitTracking;
  }
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, double max_dt) {
  const dot::Trajectory est = dot::read_tum(est_path);
  const dot::Trajectory gt = dot::read_tum(gt_path);
  const auto [e, g] = dot::associate_by_timestamp(est, gt, max_dt);
  if (e.size() != est.size()) {
    spdlog::warn("{} of {} estimated poses matched a ground-truth timestamp", e.size(), est.size());
  }
  const auto pe = dot::positions(e);
  const auto pg = dot::positions(g);
  const dot::AteResult ate = dot::absolute_trajectory_error(pe, pg);
  std::printf("poses %zu\nate_rmse %.9f\n", pe.size(), ate.rmse);
  if (!ate.rigid) std::printf("alignment translation-only (collinear positions)\n");
  return 0;
}

int cmd_calibrate(const std::vector<std::string>& datasets, const std::string& config_path,
                  const std::string& out) {
  dot::PipelineConfig base;
  if (!config_path.empty()) base = dot::load_config(config_path);
  std::vector<dot::CalibrationSample> samples;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    dot::PipelineConfig cfg = base;
    cfg.dataset = datasets[i];
    cfg.masks.clear();
    const dot::Dataset data = dot::Dataset::open(cfg.dataset);
    const dot::PipelineResult res = dot::run_pipeline(data, cfg);
    const auto s = dot::calibration_samples(res, data, static_cast<int>(i));
    samples.insert(samples.end(), s.begin(), s.end());
    spdlog::info("{}: {} samples", datasets[i], s.size());
  }
  const dot::CalibrationResult r = dot::calibrate_thresholds(samples, dot::SweepGrid{});
  std::printf("h_min %.6f\ndelta_base %.6f\ndelta_slope %.6f\nbalanced_accuracy %.6f\n", r.thresholds.h_min,
              r.thresholds.delta_base, r.thresholds.delta_slope, r.balanced_accuracy);
  std::printf("confusion (rows moving/static/unobservable, cols in_motion/static/not_observed)\n");
  for (const auto& row : r.confusion) std::printf("  %d %d %d\n", row[0], row[1], row[2]);
  if (!out.empty()) {
    nlohmann::json j = {{"h_min", r.thresholds.h_min},
                        {"delta_base", r.thresholds.delta_base},
                        {"delta_slope", r.thresholds.delta_slope},
                        {"hysteresis_frames", r.thresholds.hysteresis_frames},
                        {"balanced_accuracy", r.balanced_accuracy},
                        {"confusion", r.confusion},
                        {"samples", samples.size()}};
    std::ofstream(out) << j.dump(2) << '\n';
  }
  return 0;
}

dot::LabelImage read_any_mask(const fs::path& p) {
  try {
    return dot::read_png_u16(p);
  } catch (const dot::Error& e) {
    if (e.code() != dot::ErrorCode::DecodeError) throw;
  }
  const dot::ByteImage b = dot::read_png_u8(p);
  dot::LabelImage out(b.width(), b.height(), 0);
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = b[i];
  return out;
}

int cmd_mask_diff(const std::string& a, const std::string& b) {
  if (!fs::is_directory(a) || !fs::is_directory(b)) {
    throw dot::Error(dot::ErrorCode::ConfigError, "mask-diff needs two directories");
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(a)) {
    if (entry.path().extension() == ".png" && fs::exists(fs::path(b) / entry.path().filename())) {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end(), [](const std::string& l, const std::string& r) {
    if (l.size() != r.size()) return l.size() < r.size();
    return l < r;
  });
  if (names.empty()) throw dot::Error(dot::ErrorCode::ConfigError, "no common mask files");
  double sum = 0.0;
  for (const auto& n : names) {
    const double iou = dot::foreground_iou(read_any_mask(fs::path(a) / n), read_any_mask(fs::path(b) / n));
    std::printf("%s %.6f\n", n.c_str(), iou);
    sum += iou;
  }
  std::printf("mean %.6f\n", sum / static_cast<double>(names.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("DOT_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }

  CLI::App app{"Dynamic object tracking on RGB-D sequences"};
  app.require_subcommand(1);

  std::string spec, out, config, est, gt, dir_a, dir_b, calib_out;
  std::vector<std::string> datasets;
  double max_dt = 0.02;

  auto* render = app.add_subcommand("render", "render a synthetic dataset from a scene spec");
  render->add_option("--spec", spec, "scene spec JSON")->required();
  render->add_option("--out", out, "output dataset directory")->required();

  auto* run = app.add_subcommand("run", "run the pipeline on a dataset");
  run->add_option("--config", config, "pipeline config JSON")->required();
  run->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "absolute trajectory error of a TUM trajectory");
  eval->add_option("--est", est, "estimated trajectory")->required();
  eval->add_option("--gt", gt, "ground-truth trajectory")->required();
  eval->add_option("--max-dt", max_dt, "timestamp association tolerance, seconds");

  auto* calibrate = app.add_subcommand("calibrate", "sweep motion thresholds over rendered datasets");
  calibrate->add_option("--datasets", datasets, "dataset directories")->required()->delimiter(',');
  calibrate->add_option("--config", config, "base pipeline config");
  calibrate->add_option("--out", calib_out, "write the chosen thresholds as JSON");

  auto* diff = app.add_subcommand("mask-diff", "per-frame foreground IoU of two mask directories");
  diff->add_option("a", dir_a)->required();
  diff->add_option("b", dir_b)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*render) return cmd_render(spec, out);
    if (*run) return cmd_run(config, out);
    if (*eval) return cmd_eval(est, gt, max_dt);
    if (*calibrate) return cmd_calibrate(datasets, config, calib_out);
    if (*diff) return cmd_mask_diff(dir_a, dir_b);
  } catch (const dot::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return 0;
}
