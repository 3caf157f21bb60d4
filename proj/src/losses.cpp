#include "mgenseg/losses.hpp"

#include <cmath>
#include <sstream>

namespace mgenseg {

namespace {

double value_of(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(what) + ": missing input");
  if (a.sizes() != b.sizes()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {seg, adv_mod, cyc_mod, adv_gen, rec_gen, lat_gen})
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
}

LossReport LossReport::from(const LossComponents& c, const torch::Tensor& total) {
  LossReport r;
  r.seg = value_of(c.seg);
  r.adv_mod = value_of(c.adv_mod);
  r.cyc_mod = value_of(c.cyc_mod);
  r.adv_gen = value_of(c.adv_gen);
  r.rec_gen = value_of(c.rec_gen);
  r.lat_gen = value_of(c.lat_gen);
  r.total = value_of(total);
  return r;
}

bool LossReport::finite() const {
  for (double v : {seg, adv_mod, cyc_mod, adv_gen, rec_gen, lat_gen, total, disc_gen, disc_mod})
    if (!std::isfinite(v)) return false;
  return true;
}

nlohmann::json LossReport::to_json() const {
  return {{"type", "step"},       {"epoch", epoch},       {"step", step},         {"seg", seg},
          {"adv_mod", adv_mod},   {"cyc_mod", cyc_mod},   {"adv_gen", adv_gen},   {"rec_gen", rec_gen},
          {"lat_gen", lat_gen},   {"total", total},       {"disc_gen", disc_gen}, {"disc_mod", disc_mod},
          {"n_annotated", n_annotated}};
}

std::string LossReport::describe() const { return to_json().dump(); }

torch::Tensor dice_loss(const torch::Tensor& target, const torch::Tensor& prediction, double smooth) {
  require_same_shape(target, prediction, "dice_loss");
  auto y = target.dim() == 2 ? target.unsqueeze(0) : target;
  auto p = prediction.dim() == 2 ? prediction.unsqueeze(0) : prediction;
  y = y.reshape({y.size(0), -1}).to(p.scalar_type());
  p = p.reshape({p.size(0), -1});
  auto inter = (y * p).sum(1);
  auto dice = (2.0 * inter + smooth) / (y.sum(1) + p.sum(1) + smooth);
  return (1.0 - dice).mean();
}

torch::Tensor seg_loss(const torch::Tensor& target, const torch::Tensor& pred_source,
                       const torch::Tensor& pred_translated, const std::vector<bool>& annotated, double smooth) {
  for (bool a : annotated)
    if (!a) throw std::logic_error("seg_loss invoked with an unannotated sample");
  return dice_loss(target, pred_source, smooth) + dice_loss(target, pred_translated, smooth);
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "l1");
  return (a - b).abs().mean();
}

torch::Tensor l1_sum(std::span<const TensorPair> legs) {
  torch::Tensor total;
  for (const auto& leg : legs) {
    if (!leg.output.defined() || !leg.reference.defined()) throw std::invalid_argument("l1_sum: missing leg");
    auto v = l1(leg.output, leg.reference);
    total = total.defined() ? total + v : v;
  }
  if (!total.defined()) throw std::invalid_argument("l1_sum: no legs");
  return total;
}

torch::Tensor cyc_mod_loss(const torch::Tensor& s_a, const torch::Tensor& s_a_ts, const torch::Tensor& t_a,
                           const torch::Tensor& t_a_st, const torch::Tensor& s_p, const torch::Tensor& s_p_ts,
                           const torch::Tensor& t_p, const torch::Tensor& t_p_st) {
  const TensorPair legs[] = {{s_a_ts, s_a}, {t_a_st, t_a}, {s_p_ts, s_p}, {t_p_st, t_p}};
  return l1_sum(legs);
}

torch::Tensor rec_gen_loss(const torch::Tensor& s_aa, const torch::Tensor& s_a, const torch::Tensor& s_pp,
                           const torch::Tensor& s_p, const torch::Tensor& t_aa, const torch::Tensor& t_a,
                           const torch::Tensor& t_pp, const torch::Tensor& t_p) {
  const TensorPair legs[] = {{s_aa, s_a}, {s_pp, s_p}, {t_aa, t_a}, {t_pp, t_p}};
  return l1_sum(legs);
}

torch::Tensor lat_gen_loss(std::span<const TensorPair> code_pairs, std::span<const TensorPair> unique_pairs) {
  if (code_pairs.empty() && unique_pairs.empty()) throw std::invalid_argument("lat_gen_loss: no legs");
  torch::Tensor total;
  for (auto legs : {code_pairs, unique_pairs}) {
    if (legs.empty()) continue;
    auto v = l1_sum(legs);
    total = total.defined() ? total + v : v;
  }
  return total;
}

torch::Tensor hinge_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return torch::relu(1.0 - real_scores).mean() + torch::relu(1.0 + fake_scores).mean();
}

torch::Tensor hinge_g(const torch::Tensor& fake_scores) { return -fake_scores.mean(); }

torch::Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  torch::Tensor total;
  auto add = [&](const torch::Tensor& t, double weight) {
    if (!t.defined()) return;
    auto term = weight * t;
    total = total.defined() ? total + term : term;
  };
  add(c.seg, w.seg);
  add(c.adv_mod, w.adv_mod);
  add(c.cyc_mod, w.cyc_mod);
  add(c.adv_gen, w.adv_gen);
  add(c.rec_gen, w.rec_gen);
  add(c.lat_gen, w.lat_gen);
  return total.defined() ? total : torch::zeros({}, torch::kFloat64);
}

double total_loss(const LossReport& c, const LossWeights& w) {
  w.validate();
  return w.seg * c.seg + w.adv_mod * c.adv_mod + w.cyc_mod * c.cyc_mod + w.adv_gen * c.adv_gen +
         w.rec_gen * c.rec_gen + w.lat_gen * c.lat_gen;
}

}  // namespace mgenseg
