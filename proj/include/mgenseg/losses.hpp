#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgenseg/types.hpp"

namespace mgenseg {

/// Coefficients of the weighted total objective.
struct LossWeights {
  double seg = 5.0;
  double adv_mod = 3.0;
  double cyc_mod = 20.0;
  double adv_gen = 6.0;
  double rec_gen = 20.0;
  double lat_gen = 2.0;

  /// Throws std::invalid_argument on a negative weight.
  void validate() const;
  bool genseg_enabled() const { return adv_gen > 0.0 || rec_gen > 0.0 || lat_gen > 0.0; }
};

/// Scalar loss tensors of one generator step. Undefined entries count as 0.
struct LossComponents {
  torch::Tensor seg, adv_mod, cyc_mod, adv_gen, rec_gen, lat_gen;
};

/// Per-step values written to the metrics log.
struct LossReport {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double seg = 0.0, adv_mod = 0.0, cyc_mod = 0.0, adv_gen = 0.0, rec_gen = 0.0, lat_gen = 0.0;
  double total = 0.0;
  double disc_gen = 0.0, disc_mod = 0.0;
  std::int64_t n_annotated = 0;

  static LossReport from(const LossComponents& c, const torch::Tensor& total);
  bool finite() const;
  nlohmann::json to_json() const;
  std::string describe() const;
};

inline constexpr double kDefaultDiceSmooth = 1e-5;

/// 1 - (2 sum(y*p) + eps) / (sum(y) + sum(p) + eps), per sample over every
/// non-batch dimension, then averaged over the batch. A 2D input is a batch
/// of one.
torch::Tensor dice_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                        double smooth = kDefaultDiceSmooth);

/// Dice(y, y_src) + Dice(y, y_translated). Every sample must be annotated;
/// a false entry in `annotated` is a programming error (std::logic_error).
torch::Tensor seg_loss(const torch::Tensor& target, const torch::Tensor& pred_source,
                       const torch::Tensor& pred_translated, const std::vector<bool>& annotated = {},
                       double smooth = kDefaultDiceSmooth);

/// Mean absolute difference.
torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b);

struct TensorPair {
  torch::Tensor output;
  torch::Tensor reference;
};

/// Sum of l1 over the pairs; throws std::invalid_argument when a leg is
/// missing (undefined tensor).
torch::Tensor l1_sum(std::span<const TensorPair> legs);

/// Cycle reconstruction: L1(S_A^TS, S_A) + L1(T_A^ST, T_A) + L1(S_P^TS, S_P) + L1(T_P^ST, T_P).
torch::Tensor cyc_mod_loss(const torch::Tensor& s_a, const torch::Tensor& s_a_ts, const torch::Tensor& t_a,
                           const torch::Tensor& t_a_st, const torch::Tensor& s_p, const torch::Tensor& s_p_ts,
                           const torch::Tensor& t_p, const torch::Tensor& t_p_st);

/// Healthy/diseased reconstruction: L1(S_AA, S_A) + L1(S_PP, S_P) + L1(T_AA, T_A) + L1(T_PP, T_P).
torch::Tensor rec_gen_loss(const torch::Tensor& s_aa, const torch::Tensor& s_a, const torch::Tensor& s_pp,
                           const torch::Tensor& s_p, const torch::Tensor& t_aa, const torch::Tensor& t_a,
                           const torch::Tensor& t_pp, const torch::Tensor& t_p);

/// Latent reconstruction: L1 over each (re-encoded, encoded) code pair plus
/// L1(u_AP, u) for each sampled unique code.
torch::Tensor lat_gen_loss(std::span<const TensorPair> code_pairs, std::span<const TensorPair> unique_pairs);

/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
torch::Tensor hinge_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// -mean(fake).
torch::Tensor hinge_g(const torch::Tensor& fake_scores);

/// Weighted sum of the six components.
torch::Tensor total_loss(const LossComponents& components, const LossWeights& weights);
double total_loss(const LossReport& components, const LossWeights& weights);

}  // namespace mgenseg
