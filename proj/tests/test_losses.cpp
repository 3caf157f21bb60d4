#include <gtest/gtest.h>

#include "mgenseg/losses.hpp"
#include "oracles.hpp"

using namespace mgenseg;

namespace {

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

torch::Tensor binary(std::vector<std::int64_t> shape, double p, int seed) {
  torch::manual_seed(seed);
  return torch::rand(shape, f64()).lt(p).to(torch::kFloat64);
}

}  // namespace

TEST(DiceLoss, TwoPixelExampleMatchesClosedForm) {
  auto y = torch::zeros({1, 1, 4, 4}, f64());
  y[0][0][1][1] = 1.0;
  y[0][0][2][3] = 1.0;
  auto p = y * 0.5;
  EXPECT_NEAR(dice_loss(y, p, 0.0).item<double>(), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(dice_loss(y, p, 1e-5).item<double>(), oracle::dice(oracle::values(y), oracle::values(p), 1e-5), 1e-12);
}

TEST(DiceLoss, PerfectOverlapIsZero) {
  auto y = binary({3, 1, 8, 8}, 0.3, 1);
  EXPECT_NEAR(dice_loss(y, y).item<double>(), 0.0, 1e-6);
}

TEST(DiceLoss, DisjointIsOne) {
  auto y = torch::zeros({1, 1, 4, 4}, f64());
  y.index_put_({0, 0, 0}, 1.0);
  auto p = torch::zeros_like(y);
  p.index_put_({0, 0, 3}, 1.0);
  EXPECT_NEAR(dice_loss(y, p).item<double>(), 1.0, 1e-5);
}

TEST(DiceLoss, BatchMeanOfPerSampleOracle) {
  auto y = binary({4, 1, 6, 6}, 0.2, 2);
  torch::manual_seed(3);
  auto p = torch::rand({4, 1, 6, 6}, f64());
  EXPECT_NEAR(dice_loss(y, p).item<double>(), oracle::dice_batch(y, p, kDefaultDiceSmooth), 1e-12);
}

TEST(DiceLoss, PixelPermutationInvariant) {
  auto y = binary({1, 64}, 0.3, 4);
  torch::manual_seed(5);
  auto p = torch::rand({1, 64}, f64());
  auto perm = torch::randperm(64);
  EXPECT_NEAR(dice_loss(y, p).item<double>(), dice_loss(y.index_select(1, perm), p.index_select(1, perm)).item<double>(),
              1e-12);
}

TEST(DiceLoss, ShapeMismatchThrows) {
  EXPECT_THROW(dice_loss(torch::zeros({1, 4, 4}), torch::zeros({1, 4, 5})), std::invalid_argument);
}

TEST(SegLoss, SumOfTwoDiceTerms) {
  auto y = binary({3, 1, 8, 8}, 0.25, 6);
  torch::manual_seed(7);
  auto a = torch::rand({3, 1, 8, 8}, f64());
  auto b = torch::rand({3, 1, 8, 8}, f64());
  EXPECT_NEAR(seg_loss(y, a, b).item<double>(),
              oracle::dice_batch(y, a, kDefaultDiceSmooth) + oracle::dice_batch(y, b, kDefaultDiceSmooth), 1e-12);
  EXPECT_NEAR(seg_loss(y, y, y).item<double>(), 0.0, 1e-6);
  EXPECT_NEAR(seg_loss(y, y, 1.0 - y).item<double>(), 1.0, 1e-5);
}

TEST(SegLoss, UnannotatedSampleIsAProgrammingError) {
  auto y = binary({2, 1, 4, 4}, 0.5, 8);
  EXPECT_THROW(seg_loss(y, y, y, {true, false}), std::logic_error);
  EXPECT_NO_THROW(seg_loss(y, y, y, {true, true}));
}

TEST(L1, Examples) {
  auto a = torch::zeros({2, 1, 5, 5}, f64());
  EXPECT_DOUBLE_EQ(l1(a, a).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(l1(a, torch::ones_like(a)).item<double>(), 1.0);
  torch::manual_seed(9);
  auto r = torch::rand({2, 1, 5, 5}, f64());
  EXPECT_NEAR(l1(r, r - 0.37).item<double>(), 0.37, 1e-12);
  EXPECT_NEAR(l1(r, a).item<double>(), oracle::l1(r, a), 1e-12);
  EXPECT_THROW(l1(a, torch::zeros({2, 1, 5, 4}, f64())), std::invalid_argument);
}

TEST(CycModLoss, ExactAndOneOffLeg) {
  torch::manual_seed(10);
  std::vector<torch::Tensor> x;
  for (int i = 0; i < 4; ++i) x.push_back(torch::rand({2, 1, 8, 8}, f64()));
  EXPECT_DOUBLE_EQ(cyc_mod_loss(x[0], x[0], x[1], x[1], x[2], x[2], x[3], x[3]).item<double>(), 0.0);
  EXPECT_NEAR(cyc_mod_loss(x[0], x[0], x[1], x[1] + 0.1, x[2], x[2], x[3], x[3]).item<double>(), 0.1, 1e-12);
}

TEST(CycModLoss, SumOfFourL1) {
  torch::manual_seed(11);
  std::vector<torch::Tensor> x;
  for (int i = 0; i < 8; ++i) x.push_back(torch::rand({2, 1, 8, 8}, f64()));
  const double expected =
      oracle::l1(x[0], x[1]) + oracle::l1(x[2], x[3]) + oracle::l1(x[4], x[5]) + oracle::l1(x[6], x[7]);
  EXPECT_NEAR(cyc_mod_loss(x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]).item<double>(), expected, 1e-12);
  EXPECT_THROW(cyc_mod_loss(x[0], torch::Tensor(), x[2], x[3], x[4], x[5], x[6], x[7]), std::invalid_argument);
}

TEST(RecGenLoss, MirrorsCycle) {
  torch::manual_seed(12);
  std::vector<torch::Tensor> x;
  for (int i = 0; i < 8; ++i) x.push_back(torch::rand({2, 1, 8, 8}, f64()));
  const double expected =
      oracle::l1(x[0], x[1]) + oracle::l1(x[2], x[3]) + oracle::l1(x[4], x[5]) + oracle::l1(x[6], x[7]);
  EXPECT_NEAR(rec_gen_loss(x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]).item<double>(), expected, 1e-12);
  EXPECT_DOUBLE_EQ(rec_gen_loss(x[0], x[0], x[1], x[1], x[2], x[2], x[3], x[3]).item<double>(), 0.0);
  EXPECT_NEAR(rec_gen_loss(x[0], x[0], x[1], x[1], x[2], x[2] + 0.25, x[3], x[3]).item<double>(), 0.25, 1e-12);
}

TEST(LatGenLoss, ExactOffsetAndComposition) {
  torch::manual_seed(13);
  auto c1 = torch::randn({2, 6, 4, 4}, f64()), c2 = torch::randn({2, 6, 4, 4}, f64());
  auto u = torch::randn({2, 3}, f64());
  const TensorPair exact_codes[] = {{c1, c1}, {c2, c2}};
  const TensorPair exact_u[] = {{u, u}};
  EXPECT_DOUBLE_EQ(lat_gen_loss(exact_codes, exact_u).item<double>(), 0.0);
  const TensorPair off_u[] = {{u + 0.3, u}};
  EXPECT_NEAR(lat_gen_loss(exact_codes, off_u).item<double>(), 0.3, 1e-12);
  auto r1 = torch::randn({2, 6, 4, 4}, f64()), ru = torch::randn({2, 3}, f64());
  const TensorPair codes[] = {{r1, c1}, {c2, c2}};
  const TensorPair us[] = {{ru, u}};
  EXPECT_NEAR(lat_gen_loss(codes, us).item<double>(), oracle::l1(r1, c1) + oracle::l1(ru, u), 1e-12);
  const TensorPair missing[] = {{torch::Tensor(), u}};
  EXPECT_THROW(lat_gen_loss(codes, missing), std::invalid_argument);
}

TEST(Hinge, Examples) {
  auto ones = torch::ones({2, 1, 8, 8}, f64());
  auto zeros = torch::zeros({2, 1, 8, 8}, f64());
  EXPECT_DOUBLE_EQ(hinge_d(ones, -ones).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(hinge_d(zeros, zeros).item<double>(), 2.0);
  EXPECT_DOUBLE_EQ(hinge_g(zeros).item<double>(), 0.0);
  torch::manual_seed(14);
  auto r = torch::randn({3, 1, 4, 4}, f64()) * 2.0, f = torch::randn({3, 1, 4, 4}, f64()) * 2.0;
  EXPECT_NEAR(hinge_d(r, f).item<double>(), oracle::hinge_d(r, f), 1e-12);
  EXPECT_NEAR(hinge_g(f).item<double>(), oracle::hinge_g(f), 1e-12);
}

TEST(TotalLoss, DefaultWeightsWithUnitSegWeight) {
  LossWeights w;
  w.seg = 1.0;
  auto one = torch::ones({}, torch::kFloat64);
  LossComponents c{one, one, one, one, one, one};
  EXPECT_DOUBLE_EQ(total_loss(c, w).item<double>(), 52.0);
  LossReport r;
  r.seg = r.adv_mod = r.cyc_mod = r.adv_gen = r.rec_gen = r.lat_gen = 1.0;
  EXPECT_DOUBLE_EQ(total_loss(r, w), 52.0);
}

TEST(TotalLoss, DefaultsAndZeroWeights) {
  LossWeights w;
  EXPECT_DOUBLE_EQ(w.seg, 5.0);
  EXPECT_DOUBLE_EQ(w.adv_mod, 3.0);
  EXPECT_DOUBLE_EQ(w.cyc_mod, 20.0);
  EXPECT_DOUBLE_EQ(w.adv_gen, 6.0);
  EXPECT_DOUBLE_EQ(w.rec_gen, 20.0);
  EXPECT_DOUBLE_EQ(w.lat_gen, 2.0);
  LossWeights zero{0, 0, 0, 0, 0, 0};
  auto v = torch::full({}, 3.5, torch::kFloat64);
  EXPECT_DOUBLE_EQ(total_loss(LossComponents{v, v, v, v, v, v}, zero).item<double>(), 0.0);
}

TEST(TotalLoss, LinearInEachComponent) {
  LossWeights w;
  torch::manual_seed(15);
  std::array<torch::Tensor, 6> base;
  for (auto& t : base) t = torch::rand({}, torch::kFloat64);
  auto make = [&](int k, double scale) {
    auto b = base;
    b[k] = b[k] * scale;
    return LossComponents{b[0], b[1], b[2], b[3], b[4], b[5]};
  };
  const double weights[] = {w.seg, w.adv_mod, w.cyc_mod, w.adv_gen, w.rec_gen, w.lat_gen};
  for (int k = 0; k < 6; ++k) {
    const double t1 = total_loss(make(k, 1.0), w).item<double>();
    const double t2 = total_loss(make(k, 2.0), w).item<double>();
    EXPECT_NEAR(t2 - t1, weights[k] * base[k].item<double>(), 1e-12);
  }
}

TEST(TotalLoss, NegativeWeightRejected) {
  LossWeights w;
  w.cyc_mod = -1.0;
  auto one = torch::ones({}, torch::kFloat64);
  EXPECT_THROW(total_loss(LossComponents{one, one, one, one, one, one}, w), std::invalid_argument);
}

TEST(LossReport, TotalMatchesWeightedSumAndSerializes) {
  LossWeights w;
  torch::manual_seed(16);
  LossComponents c;
  c.seg = torch::rand({}, torch::kFloat64);
  c.cyc_mod = torch::rand({}, torch::kFloat64);
  c.adv_gen = torch::randn({}, torch::kFloat64);
  auto total = total_loss(c, w);
  auto r = LossReport::from(c, total);
  EXPECT_NEAR(r.total, total_loss(r, w), 1e-12);
  EXPECT_DOUBLE_EQ(r.lat_gen, 0.0);
  auto j = r.to_json();
  EXPECT_EQ(j.at("type"), "step");
  EXPECT_TRUE(r.finite());
  r.seg = std::nan("");
  EXPECT_FALSE(r.finite());
}
