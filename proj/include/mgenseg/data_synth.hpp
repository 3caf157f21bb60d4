#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mgenseg/types.hpp"

namespace mgenseg {

/// Intensity appearance of one modality: a piecewise-linear transfer curve
/// over foreground intensities followed by a smooth multiplicative bias field
/// and additive pixel noise.
struct StyleParams {
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}, {1.0, 1.0}};
  double bias_amplitude = 0.0;
  double noise_sigma = 0.0;

  bool is_identity() const;
};

struct SynthConfig {
  int image_size = 64;
  int n_subjects_per_modality = 200;
  int slices_per_subject = 4;
  double lesion_probability = 0.5;
  double lesion_radius_min = 3.0;
  double lesion_radius_max = 8.0;
  /// Anatomy-space intensity of lesion tissue before modality styling.
  double lesion_intensity = 0.95;
  double diseased_threshold = 0.01;
  std::uint64_t seed = 0;
  std::array<StyleParams, 2> styles{};

  const StyleParams& style(Modality m) const { return styles[static_cast<int>(m)]; }

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  /// Desk-scale defaults with a calibrated cross-modality style gap.
  static SynthConfig desk_defaults();
};

/// Train/val/test split. Samples own their tensors; copies are shallow.
struct DatasetManifest {
  std::vector<SliceSample> train;
  std::vector<SliceSample> val;
  std::vector<SliceSample> test;
  std::array<double, 2> annotation_fraction{1.0, 1.0};

  std::vector<SliceSample>& partition(Partition p);
  const std::vector<SliceSample>& partition(Partition p) const;

  std::size_t count(Partition p, Modality m, Domain d) const;
  std::size_t count_annotated(Partition p, Modality m) const;
};

/// Modality-neutral anatomy image in [0, 1]: a smooth brain-like foreground on
/// a zero background. Throws ConfigError if image_size < 16.
torch::Tensor generate_phantom(std::uint64_t seed, const SynthConfig& config);

struct LesionResult {
  torch::Tensor image;
  torch::Tensor mask;
};

/// Implants a connected lesion inside the phantom foreground with probability
/// config.lesion_probability. The returned image differs from the phantom only
/// on the mask dilated by one pixel.
LesionResult implant_lesion(const torch::Tensor& phantom, std::uint64_t seed, const SynthConfig& config);

/// Applies the transfer curve of `modality` to foreground pixels (background
/// stays 0), then texture. Foreground pixels stay strictly positive.
torch::Tensor apply_modality_style(const torch::Tensor& image, Modality modality, const SynthConfig& config,
                                   std::uint64_t texture_seed = 0);

/// P when lesion area / foreground area >= threshold, A when the mask is
/// empty, nullopt (excluded) when the fraction is positive but below
/// threshold. Throws std::invalid_argument on shape mismatch or empty
/// foreground.
std::optional<Domain> label_domain(const torch::Tensor& mask, const torch::Tensor& foreground, double threshold);

/// 80/10/10 split sizes for n subjects: {train, val, test}.
std::array<int, 3> split_sizes(int n_subjects);

/// Builds the unpaired bi-modal dataset with every sample annotated.
DatasetManifest build_dataset(const SynthConfig& config);

/// Keeps annotations for ceil(fraction * n) of the n subjects that own
/// diseased training slices of `modality`; every other training sample of that
/// modality is marked unannotated. Val and test are untouched.
DatasetManifest mask_annotations(const DatasetManifest& manifest, double fraction, std::uint64_t seed,
                                 Modality modality);

}  // namespace mgenseg
