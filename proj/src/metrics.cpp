#include "mgenseg/metrics.hpp"

#include <algorithm>

namespace mgenseg {

double hard_dice(const torch::Tensor& probability, const torch::Tensor& target, double threshold) {
  if (probability.sizes() != target.sizes()) throw std::invalid_argument("hard_dice: shape mismatch");
  auto p = probability.ge(threshold);
  auto y = target.gt(0.5);
  const double inter = (p & y).sum().item<double>();
  const double denom = p.sum().item<double>() + y.sum().item<double>();
  return denom == 0.0 ? 1.0 : 2.0 * inter / denom;
}

torch::Tensor stack_images(std::span<const SliceSample> samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.image.unsqueeze(0));
  return torch::stack(v);
}

torch::Tensor stack_masks(std::span<const SliceSample> samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples)
    v.push_back(s.has_mask() ? s.mask.unsqueeze(0) : torch::zeros_like(s.image).unsqueeze(0));
  return torch::stack(v);
}

DiceStats evaluate_model(MGenSegModel& model, std::span<const SliceSample> samples, Modality image_modality,
                         Modality segmenter, double threshold, int batch_size) {
  std::vector<SliceSample> diseased, healthy;
  for (const auto& s : samples) {
    if (s.modality != image_modality) continue;
    if (s.domain == Domain::P && s.has_mask())
      diseased.push_back(s);
    else if (s.domain == Domain::A)
      healthy.push_back(s);
  }
  if (diseased.empty()) throw std::invalid_argument("evaluate: no diseased slices with masks to score");

  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto dtype = model->parameters().front().scalar_type();
  DiceStats stats;
  for (std::size_t i = 0; i < diseased.size(); i += batch_size) {
    const auto n = std::min<std::size_t>(batch_size, diseased.size() - i);
    std::span<const SliceSample> chunk(diseased.data() + i, n);
    auto pred = model->segment(stack_images(chunk).to(dtype), segmenter);
    auto masks = stack_masks(chunk);
    for (std::size_t k = 0; k < n; ++k) stats.per_slice.push_back(hard_dice(pred[k], masks[k].to(dtype), threshold));
  }
  double fp = 0.0;
  for (std::size_t i = 0; i < healthy.size(); i += batch_size) {
    const auto n = std::min<std::size_t>(batch_size, healthy.size() - i);
    std::span<const SliceSample> chunk(healthy.data() + i, n);
    fp += model->segment(stack_images(chunk).to(dtype), segmenter).ge(threshold).sum().item<double>();
  }
  stats.n_healthy = healthy.size();
  stats.healthy_false_positive_area = healthy.empty() ? 0.0 : fp / static_cast<double>(healthy.size());
  // Sorted accumulation keeps the mean independent of sample order.
  auto sorted = stats.per_slice;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double d : sorted) sum += d;
  stats.mean = sum / static_cast<double>(stats.per_slice.size());
  if (was_training) model->train();
  return stats;
}

}  // namespace mgenseg
