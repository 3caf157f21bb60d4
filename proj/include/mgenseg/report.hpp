#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mgenseg/evaluation.hpp"

namespace mgenseg {

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<ResultRecord>& records);

/// (ablated - full) / full. Negative means the ablation is worse.
double relative_change(double ablated_mean, double full_mean);

struct CurvePoint {
  double fraction = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// Mean target Dice against source annotation fraction for the unablated
/// M-GenSeg records of one (source, target) pair, sorted by fraction.
std::vector<CurvePoint> deficit_curve(const std::vector<ResultRecord>& records, const std::string& source,
                                      const std::string& target);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ReportSummary {
  std::size_t n_rows = 0;
  std::size_t n_configs = 0;
  std::vector<std::filesystem::path> files;
};

/// Builds aggregate.csv, deficit_curve.csv and ablation_table.csv in out_dir
/// from a persisted results.csv. No model is loaded.
ReportSummary emit_report(const std::filesystem::path& results_csv, const std::filesystem::path& out_dir);

/// 8-bit PNG. `image` is [H,W] (grey) or [3,H,W] (RGB) with values in [0,1].
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
/// Reads an 8-bit grey or RGB PNG back into [H,W] or [3,H,W] floats.
torch::Tensor read_png(const std::filesystem::path& path);

/// Blue-to-red colour map of a [H,W] map in [0,1].
torch::Tensor heatmap(const torch::Tensor& values);

struct FigureSummary {
  /// Decoder name -> (min, max) over all its attention maps.
  std::map<std::string, std::pair<double, double>> attention_range;
  std::vector<std::filesystem::path> files;
};

/// Presence-to-absence panels (input, absent image, |residual|, prediction)
/// and per-decoder attention heatmaps for up to `n_samples` diseased samples of
/// `modality`. Every decoder of that modality is covered.
FigureSummary render_figures(MGenSegModel& model, std::span<const SliceSample> samples, Modality modality,
                             const std::filesystem::path& out_dir, int n_samples = 4);

}  // namespace mgenseg
