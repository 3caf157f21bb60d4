#pragma once

#include <span>
#include <vector>

#include "mgenseg/model.hpp"
#include "mgenseg/types.hpp"

namespace mgenseg {

/// 2|X∩Y| / (|X|+|Y|) after thresholding `probability` at `threshold`.
/// Two empty masks score 1.
double hard_dice(const torch::Tensor& probability, const torch::Tensor& target, double threshold = 0.5);

struct DiceStats {
  double mean = 0.0;
  std::vector<double> per_slice;
  /// Mean predicted-positive pixel count on healthy slices.
  double healthy_false_positive_area = 0.0;
  std::size_t n_healthy = 0;
};

/// Per-slice Dice over the diseased samples of `image_modality`, segmented
/// with the head of `segmenter` (normally the same modality). Throws
/// std::invalid_argument when there is no diseased sample with a mask.
DiceStats evaluate_model(MGenSegModel& model, std::span<const SliceSample> samples, Modality image_modality,
                         Modality segmenter, double threshold = 0.5, int batch_size = 64);

/// Stacks sample images (or masks) into a [B,1,H,W] tensor.
torch::Tensor stack_images(std::span<const SliceSample> samples);
torch::Tensor stack_masks(std::span<const SliceSample> samples);

}  // namespace mgenseg
