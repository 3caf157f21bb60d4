#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Plain loops over std::vector, no tensor ops.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline std::vector<double> values(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().reshape({-1});
  return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

/// Soft Dice loss of one sample.
inline double dice(const std::vector<double>& y, const std::vector<double>& p, double eps) {
  double inter = 0.0, sy = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += y[i] * p[i];
    sy += y[i];
    sp += p[i];
  }
  return 1.0 - (2.0 * inter + eps) / (sy + sp + eps);
}

/// Batch mean of per-sample Dice losses; tensors are [B, ...].
inline double dice_batch(const torch::Tensor& y, const torch::Tensor& p, double eps) {
  const auto b = y.size(0);
  double sum = 0.0;
  for (std::int64_t i = 0; i < b; ++i) sum += dice(values(y[i]), values(p[i]), eps);
  return sum / static_cast<double>(b);
}

inline double l1(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = values(a), y = values(b);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

inline double hinge_d(const torch::Tensor& real, const torch::Tensor& fake) {
  auto r = values(real), f = values(fake);
  double a = 0.0, b = 0.0;
  for (double v : r) a += std::max(0.0, 1.0 - v);
  for (double v : f) b += std::max(0.0, 1.0 + v);
  return a / static_cast<double>(r.size()) + b / static_cast<double>(f.size());
}

inline double hinge_g(const torch::Tensor& fake) {
  auto f = values(fake);
  double s = 0.0;
  for (double v : f) s += v;
  return -s / static_cast<double>(f.size());
}

/// Hard Dice on thresholded maps; two empty masks score 1.
inline double hard_dice(const std::vector<double>& prob, const std::vector<double>& target, double thr) {
  double inter = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool p = prob[i] >= thr, y = target[i] > 0.5;
    inter += (p && y);
    a += p;
    b += y;
  }
  return a + b == 0.0 ? 1.0 : 2.0 * inter / (a + b);
}

/// Largest relative error between autograd and central finite differences
/// over every element of `params`. `loss` must be a pure function of the
/// parameter values. Relative error uses max(|a|, |n|, floor) as scale.
inline double max_grad_rel_error(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& params,
                                 double h = 1e-6, double floor = 1e-6) {
  for (auto p : params)
    if (p.grad().defined()) p.mutable_grad().zero_();
  loss().backward();
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (auto p : params) {
    auto analytic = p.grad().clone().reshape({-1});
    auto flat = p.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i].fill_(orig + h);
      const double up = loss().item<double>();
      flat[i].fill_(orig - h);
      const double down = loss().item<double>();
      flat[i].fill_(orig);
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].item<double>();
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

/// Two-layer conv net 1 -> 4 -> 1 channels with a sigmoid output: 77
/// parameters, float64.
struct ToyNetImpl : torch::nn::Module {
  ToyNetImpl() {
    c1 = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, 4, 3).padding(1)));
    c2 = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(4, 1, 3).padding(1)));
    to(torch::kFloat64);
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(c2(torch::tanh(c1(x)))); }
  torch::Tensor logits(const torch::Tensor& x) { return c2(torch::tanh(c1(x))); }
  torch::nn::Conv2d c1{nullptr}, c2{nullptr};
};
TORCH_MODULE(ToyNet);

}  // namespace oracle
