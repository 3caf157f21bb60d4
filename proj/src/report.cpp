#include "mgenseg/report.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mgenseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kResultsHeader = "config_hash,source,target,src_frac,tgt_frac,ablation,seed,dice";

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_results_csv(const fs::path& path, const std::vector<ResultRow>& rows) {
  std::vector<std::string> lines{kResultsHeader};
  for (const auto& r : rows)
    lines.push_back(r.config_hash + "," + r.source + "," + r.target + "," + num(r.source_fraction) + "," +
                    num(r.target_fraction) + "," + r.ablation + "," + std::to_string(r.seed) + "," + num(r.dice));
  write_lines(path, lines);
}

std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kResultsHeader) throw ConfigError("unexpected results.csv header in " + path.string());
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = split_csv(line);
    if (c.size() != 8) throw ConfigError("malformed results.csv line: " + line);
    ResultRow r;
    r.config_hash = c[0];
    r.source = c[1];
    r.target = c[2];
    r.source_fraction = std::stod(c[3]);
    r.target_fraction = std::stod(c[4]);
    r.ablation = c[5];
    r.seed = std::stoull(c[6]);
    r.dice = std::stod(c[7]);
    rows.push_back(r);
  }
  return rows;
}

void write_aggregate_csv(const fs::path& path, const std::vector<ResultRecord>& records) {
  std::vector<std::string> lines{"config_hash,source,target,src_frac,tgt_frac,ablation,n_seeds,mean,std"};
  for (const auto& r : records)
    lines.push_back(r.key.config_hash + "," + r.key.source + "," + r.key.target + "," + num(r.key.source_fraction) +
                    "," + num(r.key.target_fraction) + "," + r.key.ablation + "," + std::to_string(r.dice.size()) +
                    "," + num(r.mean) + "," + num(r.std));
  write_lines(path, lines);
}

double relative_change(double ablated_mean, double full_mean) {
  if (full_mean == 0.0) throw std::invalid_argument("relative_change: full mean is zero");
  return (ablated_mean - full_mean) / full_mean;
}

std::vector<CurvePoint> deficit_curve(const std::vector<ResultRecord>& records, const std::string& source,
                                      const std::string& target) {
  std::vector<CurvePoint> out;
  for (const auto& r : records) {
    if (r.key.ablation != "none" || r.key.source != source || r.key.target != target) continue;
    out.push_back({r.key.source_fraction, r.mean, r.std, r.dice.size()});
  }
  std::sort(out.begin(), out.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.fraction < b.fraction; });
  return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ReportSummary emit_report(const fs::path& results_csv, const fs::path& out_dir) {
  const auto rows = read_results_csv(results_csv);
  const auto records = ResultRecord::aggregate(rows);
  ReportSummary summary;
  summary.n_rows = rows.size();
  summary.n_configs = records.size();

  const auto agg = out_dir / "aggregate.csv";
  write_aggregate_csv(agg, records);
  summary.files.push_back(agg);

  std::vector<std::string> curve{"source,target,src_frac,n_seeds,mean,std"};
  for (const auto& [s, t] : modality_pairs())
    for (const auto& p : deficit_curve(records, to_string(s), to_string(t)))
      curve.push_back(to_string(s) + "," + to_string(t) + "," + num(p.fraction) + "," + std::to_string(p.n) + "," +
                      num(p.mean) + "," + num(p.std));
  write_lines(out_dir / "deficit_curve.csv", curve);
  summary.files.push_back(out_dir / "deficit_curve.csv");

  // Each ablation is compared with the unablated record of the same
  // (pair, fractions).
  std::vector<std::string> table{"source,target,src_frac,tgt_frac,ablation,mean,full_mean,relative_change"};
  for (const auto& r : records) {
    if (r.key.ablation == "none") continue;
    for (const auto& f : records) {
      if (f.key.ablation != "none" || f.key.source != r.key.source || f.key.target != r.key.target ||
          f.key.source_fraction != r.key.source_fraction)
        continue;
      if (r.key.ablation != kNoAdaptation && f.key.target_fraction != r.key.target_fraction) continue;
      table.push_back(r.key.source + "," + r.key.target + "," + num(r.key.source_fraction) + "," +
                      num(r.key.target_fraction) + "," + r.key.ablation + "," + num(r.mean) + "," + num(f.mean) +
                      "," + (f.mean != 0.0 ? num(relative_change(r.mean, f.mean)) : std::string("nan")));
      break;
    }
  }
  write_lines(out_dir / "ablation_table.csv", table);
  summary.files.push_back(out_dir / "ablation_table.csv");
  return summary;
}

void write_png(const fs::path& path, const torch::Tensor& image) {
  auto img = image.detach().to(torch::kFloat64).clamp(0.0, 1.0);
  int channels = 1;
  if (img.dim() == 3) {
    if (img.size(0) != 3) throw std::invalid_argument("write_png: expected [3,H,W]");
    channels = 3;
    img = img.permute({1, 2, 0});
  } else if (img.dim() != 2) {
    throw std::invalid_argument("write_png: expected [H,W] or [3,H,W]");
  }
  img = (img * 255.0).round().to(torch::kUInt8).contiguous();
  const int h = static_cast<int>(img.size(0));
  const int w = static_cast<int>(img.size(1));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* data = img.data_ptr<std::uint8_t>();
  for (int y = 0; y < h; ++y) png_write_row(png, data + static_cast<std::size_t>(y) * w * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

torch::Tensor read_png(const fs::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: only 8-bit grey/RGB supported");
  }
  const int channels = type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * channels);
  for (int y = 0; y < h; ++y) png_read_row(png, buf.data() + static_cast<std::size_t>(y) * w * channels, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  auto t = torch::from_blob(buf.data(), {h, w, channels}, torch::kUInt8).to(torch::kFloat32) / 255.0;
  return channels == 1 ? t.squeeze(-1).clone() : t.permute({2, 0, 1}).contiguous();
}

torch::Tensor heatmap(const torch::Tensor& values) {
  auto v = values.detach().to(torch::kFloat32).clamp(0.0, 1.0);
  auto r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
  auto g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
  auto b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
  return torch::stack({r, g, b});
}

FigureSummary render_figures(MGenSegModel& model, std::span<const SliceSample> samples, Modality modality,
                             const fs::path& out_dir, int n_samples) {
  std::vector<SliceSample> chosen;
  for (const auto& s : samples)
    if (s.modality == modality && s.domain == Domain::P && static_cast<int>(chosen.size()) < n_samples)
      chosen.push_back(s);
  if (chosen.empty()) throw std::invalid_argument("render_figures: no diseased sample of the modality");

  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  fs::create_directories(out_dir);
  auto x = stack_images(chosen);
  const auto h = x.size(2), w = x.size(3);
  auto z = model->encode(x, modality);
  auto p2a = model->presence_to_absence(z, modality);
  auto seg = model->decode_segmentation(z, modality);
  auto common = model->decode_common(z, modality);
  auto residual = model->decode_residual(z.common, z.unique, z.skips, modality);
  auto translation = model->decode_translation(model->encode_for_translation(x, modality), modality);

  FigureSummary summary;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const auto i = static_cast<std::int64_t>(k);
    auto input = x[i][0];
    auto absent = p2a.absent[i][0];
    auto delta = p2a.residual[i][0].abs();
    auto pred = seg.image[i][0];
    const std::string stem = "panel_" + std::to_string(k);
    const std::pair<const char*, torch::Tensor> tiles[] = {
        {"input", input}, {"absent", absent}, {"residual", delta}, {"segmentation", pred}};
    std::vector<torch::Tensor> strip;
    for (const auto& [name, tile] : tiles) {
      auto p = out_dir / (stem + "_" + name + ".png");
      write_png(p, tile);
      summary.files.push_back(p);
      strip.push_back(tile);
    }
    auto p = out_dir / (stem + ".png");
    write_png(p, torch::cat(strip, 1));
    summary.files.push_back(p);
  }

  const std::pair<const char*, const DecoderOutput*> decoders[] = {
      {"common", &common}, {"residual", &residual}, {"segmentation", &seg}, {"translation", &translation}};
  std::vector<std::string> ranges{"decoder,min,max"};
  for (const auto& [name, out] : decoders) {
    double lo = 1.0, hi = 0.0;
    for (std::size_t level = 0; level < out->attention.size(); ++level) {
      auto a = out->attention[level];
      lo = std::min(lo, a.min().item<double>());
      hi = std::max(hi, a.max().item<double>());
      auto up = torch::nn::functional::interpolate(
          a, torch::nn::functional::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kNearest));
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        auto p = out_dir / ("attention_" + std::string(name) + "_level" + std::to_string(level) + "_" +
                            std::to_string(k) + ".png");
        write_png(p, heatmap(up[static_cast<std::int64_t>(k)][0]));
        summary.files.push_back(p);
      }
    }
    summary.attention_range[name] = {lo, hi};
    ranges.push_back(std::string(name) + "," + num(lo) + "," + num(hi));
  }
  write_lines(out_dir / "attention_ranges.csv", ranges);
  summary.files.push_back(out_dir / "attention_ranges.csv");
  if (was_training) model->train();
  return summary;
}

}  // namespace mgenseg
