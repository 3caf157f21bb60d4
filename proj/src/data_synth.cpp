#include "mgenseg/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "mgenseg/rng.hpp"

namespace mgenseg {

namespace {

constexpr double kMinForeground = 1.0 / 1024.0;
constexpr int kMaxLesionAttempts = 24;
constexpr std::uint64_t kPartitionStream = 0x5041525449ULL;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

torch::Tensor to_tensor(const std::vector<float>& v, int h, int w) {
  return torch::from_blob(const_cast<float*>(v.data()), {h, w}, torch::kFloat32).clone();
}

std::vector<float> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat32).contiguous();
  return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

double interpolate(const std::vector<std::pair<double, double>>& curve, double v) {
  if (v <= curve.front().first) return curve.front().second;
  if (v >= curve.back().first) return curve.back().second;
  auto hi = std::upper_bound(curve.begin(), curve.end(), v, [](double x, const auto& p) { return x < p.first; });
  auto lo = hi - 1;
  double t = (v - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

}  // namespace

bool StyleParams::is_identity() const {
  if (bias_amplitude != 0.0 || noise_sigma != 0.0) return false;
  for (const auto& [x, y] : curve)
    if (x != y) return false;
  return true;
}

void SynthConfig::validate() const {
  if (image_size < 16) throw ConfigError("image_size must be >= 16, got " + std::to_string(image_size));
  if (n_subjects_per_modality < 1) throw ConfigError("n_subjects_per_modality must be positive");
  if (slices_per_subject < 1) throw ConfigError("slices_per_subject must be positive");
  if (lesion_probability < 0.0 || lesion_probability > 1.0) throw ConfigError("lesion_probability outside [0,1]");
  if (lesion_radius_min <= 0.0 || lesion_radius_max < lesion_radius_min)
    throw ConfigError("invalid lesion radius range");
  if (lesion_intensity <= 0.0 || lesion_intensity > 1.0) throw ConfigError("lesion_intensity outside (0,1]");
  if (diseased_threshold <= 0.0 || diseased_threshold >= 1.0) throw ConfigError("diseased_threshold outside (0,1)");
  for (const auto& s : styles) {
    if (s.curve.size() < 2) throw ConfigError("style curve needs at least two points");
    for (std::size_t i = 1; i < s.curve.size(); ++i)
      if (s.curve[i].first <= s.curve[i - 1].first) throw ConfigError("style curve x values must increase");
    if (s.bias_amplitude < 0.0 || s.noise_sigma < 0.0) throw ConfigError("style texture parameters must be >= 0");
  }
}

SynthConfig SynthConfig::desk_defaults() {
  SynthConfig c;
  c.styles[0].curve = {{0.0, 0.0}, {1.0, 1.0}};
  c.styles[0].bias_amplitude = 0.08;
  c.styles[0].noise_sigma = 0.01;
  // Ventricles bright, parenchyma dark, lesion at a mid grey no tissue maps to.
  c.styles[1].curve = {{0.0, 0.95}, {0.2, 0.8}, {0.21, 0.45}, {0.8, 0.1}, {0.85, 0.55}, {1.0, 0.7}};
  c.styles[1].bias_amplitude = 0.0;
  c.styles[1].noise_sigma = 0.03;
  return c;
}

std::vector<SliceSample>& DatasetManifest::partition(Partition p) {
  switch (p) {
    case Partition::Train: return train;
    case Partition::Val: return val;
    case Partition::Test: return test;
  }
  throw std::invalid_argument("bad partition");
}

const std::vector<SliceSample>& DatasetManifest::partition(Partition p) const {
  return const_cast<DatasetManifest*>(this)->partition(p);
}

std::size_t DatasetManifest::count(Partition p, Modality m, Domain d) const {
  const auto& part = partition(p);
  return std::count_if(part.begin(), part.end(),
                       [&](const SliceSample& s) { return s.modality == m && s.domain == d; });
}

std::size_t DatasetManifest::count_annotated(Partition p, Modality m) const {
  const auto& part = partition(p);
  return std::count_if(part.begin(), part.end(),
                       [&](const SliceSample& s) { return s.modality == m && s.annotated; });
}

torch::Tensor generate_phantom(std::uint64_t seed, const SynthConfig& config) {
  if (config.image_size < 16) throw ConfigError("image_size must be >= 16, got " + std::to_string(config.image_size));
  const int n = config.image_size;
  const double nd = n;
  Rng rng(seed);

  const double cx = nd / 2.0 + uniform(rng, -nd / 16.0, nd / 16.0);
  const double cy = nd / 2.0 + uniform(rng, -nd / 16.0, nd / 16.0);
  const double ax = nd * uniform(rng, 0.32, 0.40);
  const double ay = nd * uniform(rng, 0.28, 0.36);
  const double theta = uniform(rng, -0.3, 0.3);
  std::array<double, 3> wobble_amp{}, wobble_phase{};
  for (int h = 0; h < 3; ++h) {
    wobble_amp[h] = uniform(rng, 0.0, 0.03);
    wobble_phase[h] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }

  struct Blob {
    double x, y, amp, sigma;
  };
  std::vector<Blob> blobs(5);
  for (auto& b : blobs) {
    b.x = cx + uniform(rng, -ax, ax);
    b.y = cy + uniform(rng, -ay, ay);
    b.amp = uniform(rng, -0.18, 0.18);
    b.sigma = uniform(rng, nd / 10.0, nd / 5.0);
  }

  // Paired dark ventricles near the centre.
  const double vent_dx = nd * uniform(rng, 0.05, 0.08);
  const double vent_rx = nd * uniform(rng, 0.03, 0.05);
  const double vent_ry = nd * uniform(rng, 0.07, 0.11);

  const double ct = std::cos(theta), st = std::sin(theta);
  std::vector<float> out(static_cast<std::size_t>(n) * n, 0.0f);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ct * dx + st * dy) / ax;
      const double v = (-st * dx + ct * dy) / ay;
      const double phi = std::atan2(v, u);
      double r = 1.0;
      for (int h = 0; h < 3; ++h) r += wobble_amp[h] * std::cos((h + 2) * phi + wobble_phase[h]);
      const double rho = std::sqrt(u * u + v * v) / r;
      if (rho > 1.0) continue;

      double val = 0.45;
      for (const auto& b : blobs) {
        const double d2 = (x + 0.5 - b.x) * (x + 0.5 - b.x) + (y + 0.5 - b.y) * (y + 0.5 - b.y);
        val += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
      // bright cortical rim
      val += 0.15 * std::exp(-(1.0 - rho) * (1.0 - rho) / (2.0 * 0.06 * 0.06));
      for (double side : {-1.0, 1.0}) {
        const double ex = (u * ax - side * vent_dx) / vent_rx;
        const double ey = (v * ay) / vent_ry;
        const double e = std::sqrt(ex * ex + ey * ey);
        if (e < 1.2) {
          const double w = std::clamp((1.2 - e) / 0.4, 0.0, 1.0);
          val = (1.0 - w) * val + w * 0.12;
        }
      }
      out[static_cast<std::size_t>(y) * n + x] = static_cast<float>(std::clamp(val, 0.05, 0.8));
    }
  }
  return to_tensor(out, n, n);
}

LesionResult implant_lesion(const torch::Tensor& phantom, std::uint64_t seed, const SynthConfig& config) {
  if (phantom.dim() != 2) throw std::invalid_argument("phantom must be 2D");
  if (phantom.min().item<double>() < 0.0 || phantom.max().item<double>() > 1.0)
    throw std::invalid_argument("phantom outside [0,1]");
  const int h = static_cast<int>(phantom.size(0)), w = static_cast<int>(phantom.size(1));
  Rng rng(seed);
  const bool diseased = uniform(rng, 0.0, 1.0) < config.lesion_probability;
  auto pix = to_vector(phantom);
  if (!diseased) return {phantom.to(torch::kFloat32).clone(), torch::zeros({h, w}, torch::kFloat32)};

  std::vector<int> fg_idx;
  for (int i = 0; i < h * w; ++i)
    if (pix[i] > 0.0f) fg_idx.push_back(i);
  if (fg_idx.empty()) throw std::invalid_argument("phantom has no foreground");

  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && pix[y * w + x] > 0.0f; };

  double shrink = 1.0;
  for (int attempt = 0; attempt < kMaxLesionAttempts; ++attempt) {
    if (attempt > 0 && attempt % 4 == 0) shrink *= 0.75;
    const double radius = uniform(rng, config.lesion_radius_min, config.lesion_radius_max) * shrink;
    const int centre = fg_idx[std::uniform_int_distribution<std::size_t>(0, fg_idx.size() - 1)(rng)];
    const double cx = centre % w + 0.5, cy = centre / w + 0.5;

    struct Disc {
      double x, y, r;
    };
    std::vector<Disc> discs{{cx, cy, radius}};
    for (int k = 0; k < 2; ++k) {
      const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double dist = uniform(rng, 0.3, 0.7) * radius;
      discs.push_back({cx + dist * std::cos(ang), cy + dist * std::sin(ang), uniform(rng, 0.4, 0.7) * radius});
    }
    const double intensity_jitter = uniform(rng, -0.03, 0.0);

    std::vector<float> mask(static_cast<std::size_t>(h) * w, 0.0f);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (const auto& d : discs) {
          const double ddx = x + 0.5 - d.x, ddy = y + 0.5 - d.y;
          if (ddx * ddx + ddy * ddy <= d.r * d.r) {
            mask[y * w + x] = 1.0f;
            break;
          }
        }

    // The lesion plus a one-pixel halo must sit inside the foreground.
    std::vector<float> halo(mask.size(), 0.0f);
    bool ok = std::any_of(mask.begin(), mask.end(), [](float m) { return m > 0.0f; });
    for (int y = 0; y < h && ok; ++y)
      for (int x = 0; x < w && ok; ++x) {
        if (mask[y * w + x] == 0.0f) continue;
        for (int oy = -1; oy <= 1 && ok; ++oy)
          for (int ox = -1; ox <= 1; ++ox) {
            if (!inside(x + ox, y + oy)) {
              ok = false;
              break;
            }
            if (mask[(y + oy) * w + x + ox] == 0.0f) halo[(y + oy) * w + x + ox] = 1.0f;
          }
      }
    if (!ok) continue;

    const double lesion = std::clamp(config.lesion_intensity + intensity_jitter, kMinForeground, 1.0);
    std::vector<float> img = pix;
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (mask[i] > 0.0f)
        img[i] = static_cast<float>(lesion);
      else if (halo[i] > 0.0f)
        img[i] = static_cast<float>(0.5 * (pix[i] + lesion));
    }
    return {to_tensor(img, h, w), to_tensor(mask, h, w)};
  }
  throw std::runtime_error("implant_lesion: no lesion fits inside the foreground after " +
                           std::to_string(kMaxLesionAttempts) + " attempts");
}

torch::Tensor apply_modality_style(const torch::Tensor& image, Modality modality, const SynthConfig& config,
                                   std::uint64_t texture_seed) {
  const int m = static_cast<int>(modality);
  if (m != 0 && m != 1) throw std::invalid_argument("unknown modality tag");
  if (image.dim() != 2) throw std::invalid_argument("image must be 2D");
  const auto& style = config.style(modality);
  if (style.is_identity()) return image.to(torch::kFloat32).clone();

  const int h = static_cast<int>(image.size(0)), w = static_cast<int>(image.size(1));
  auto pix = to_vector(image);
  Rng rng(derive_seed(texture_seed, {static_cast<std::uint64_t>(m)}));
  const double fx = uniform(rng, 0.5, 1.5), fy = uniform(rng, 0.5, 1.5);
  const double px = uniform(rng, 0.0, 2.0 * std::numbers::pi), py = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float& v = pix[static_cast<std::size_t>(y) * w + x];
      if (v <= 0.0f) continue;
      double t = interpolate(style.curve, v);
      if (style.bias_amplitude > 0.0) {
        const double bias = 0.5 * (std::sin(2.0 * std::numbers::pi * fx * x / w + px) +
                                   std::sin(2.0 * std::numbers::pi * fy * y / h + py));
        t *= 1.0 + style.bias_amplitude * bias;
      }
      if (style.noise_sigma > 0.0) t += style.noise_sigma * noise(rng);
      v = static_cast<float>(std::clamp(t, kMinForeground, 1.0));
    }
  }
  return to_tensor(pix, h, w);
}

std::optional<Domain> label_domain(const torch::Tensor& mask, const torch::Tensor& foreground, double threshold) {
  if (mask.sizes() != foreground.sizes()) throw std::invalid_argument("label_domain: mask/foreground shape mismatch");
  const double fg = foreground.gt(0).sum().item<double>();
  if (fg <= 0.0) throw std::invalid_argument("label_domain: empty foreground");
  const double lesion = mask.gt(0).sum().item<double>();
  if (lesion == 0.0) return Domain::A;
  if (lesion / fg >= threshold) return Domain::P;
  return std::nullopt;
}

std::array<int, 3> split_sizes(int n_subjects) {
  const int val = static_cast<int>(std::lround(0.1 * n_subjects));
  const int test = static_cast<int>(std::lround(0.1 * n_subjects));
  return {n_subjects - val - test, val, test};
}

DatasetManifest build_dataset(const SynthConfig& config) {
  config.validate();
  DatasetManifest manifest;
  const int n = config.n_subjects_per_modality;
  const auto sizes = split_sizes(n);

  for (Modality m : {Modality::S, Modality::T}) {
    const auto mi = static_cast<std::uint64_t>(m);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng part_rng(derive_seed(config.seed, {mi, kPartitionStream}));
    std::shuffle(order.begin(), order.end(), part_rng);
    std::vector<Partition> subject_partition(n);
    for (int k = 0; k < n; ++k)
      subject_partition[order[k]] =
          k < sizes[0] ? Partition::Train : (k < sizes[0] + sizes[1] ? Partition::Val : Partition::Test);

    for (int i = 0; i < n; ++i) {
      const std::int64_t subject_id = static_cast<std::int64_t>(mi) * n + i;
      for (int j = 0; j < config.slices_per_subject; ++j) {
        const auto base = derive_seed(config.seed, {mi, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
        auto phantom = generate_phantom(derive_seed(base, {1}), config);
        auto lesion = implant_lesion(phantom, derive_seed(base, {2}), config);
        auto domain = label_domain(lesion.mask, phantom.gt(0), config.diseased_threshold);
        if (!domain) continue;
        SliceSample s;
        s.image = apply_modality_style(lesion.image, m, config, derive_seed(base, {3}));
        s.mask = lesion.mask;
        s.modality = m;
        s.domain = *domain;
        s.annotated = true;
        s.subject_id = subject_id;
        s.slice_index = j;
        manifest.partition(subject_partition[i]).push_back(std::move(s));
      }
    }
  }

  for (Partition p : {Partition::Train, Partition::Val, Partition::Test})
    for (Modality m : {Modality::S, Modality::T})
      for (Domain d : {Domain::A, Domain::P})
        if (manifest.count(p, m, d) == 0) {
          std::ostringstream msg;
          msg << "build_dataset: no " << to_string(d) << " samples for modality " << to_string(m) << " in "
              << to_string(p) << " partition; increase n_subjects_per_modality or slices_per_subject";
          throw ConfigError(msg.str());
        }
  return manifest;
}

DatasetManifest mask_annotations(const DatasetManifest& manifest, double fraction, std::uint64_t seed,
                                 Modality modality) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("annotation fraction outside [0,1]");
  DatasetManifest out = manifest;
  std::set<std::int64_t> diseased;
  for (const auto& s : out.train)
    if (s.modality == modality && s.domain == Domain::P) diseased.insert(s.subject_id);
  std::vector<std::int64_t> subjects(diseased.begin(), diseased.end());
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(modality), 0x414e4eULL}));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  // The epsilon keeps exact products such as 0.4 * 295 from rounding up.
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(subjects.size()) - 1e-9));
  std::set<std::int64_t> kept(subjects.begin(), subjects.begin() + std::min(keep, subjects.size()));
  for (auto& s : out.train)
    if (s.modality == modality) s.annotated = s.domain == Domain::P && s.has_mask() && kept.count(s.subject_id) > 0;
  out.annotation_fraction[static_cast<int>(modality)] = fraction;
  return out;
}

}  // namespace mgenseg
