#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "mgenseg/model.hpp"

using namespace mgenseg;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.base_channels = 4;
  c.max_channels = 16;
  c.n_down = 3;
  c.common_channels = 6;
  c.unique_channels = 2;
  c.disc_channels = 4;
  return c;
}

std::set<const void*> identities(const std::vector<torch::Tensor>& params) {
  std::set<const void*> out;
  for (const auto& p : params) out.insert(p.unsafeGetTensorImpl());
  return out;
}

std::set<const void*> identities(const ParameterMap& params) {
  std::set<const void*> out;
  for (const auto& [_, p] : params) out.insert(p.unsafeGetTensorImpl());
  return out;
}

/// Parameters that receive a nonzero gradient from `out.sum()`.
std::set<const void*> touched(MGenSegModel& model, const torch::Tensor& out) {
  model->zero_grad();
  out.sum().backward();
  std::set<const void*> ids;
  for (const auto& p : model->parameters())
    if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) ids.insert(p.unsafeGetTensorImpl());
  return ids;
}

class ModelTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(3);
    model = MGenSegModel(small_config());
    model->eval();
    x = torch::rand({3, 1, 32, 32});
  }
  MGenSegModel model{nullptr};
  torch::Tensor x;
};

}  // namespace

TEST_F(ModelTest, PresenceToAbsenceIdentityIsExact) {
  torch::NoGradGuard g;
  for (Modality m : {Modality::S, Modality::T}) {
    auto out = model->presence_to_absence(x, m);
    auto z = model->encode(x, m);
    auto absent = model->decode_common(z, m).image;
    auto residual = model->decode_residual(z.common, z.unique, z.skips, m).image;
    EXPECT_TRUE(torch::equal(out.absent, absent));
    EXPECT_TRUE(torch::equal(out.residual, residual));
    EXPECT_TRUE(torch::equal(out.present, absent + residual));
  }
}

TEST_F(ModelTest, AbsenceToPresenceIdentityIsExact) {
  torch::NoGradGuard g;
  auto u = model->sample_unique(3, x.options());
  for (Modality m : {Modality::S, Modality::T}) {
    auto out = model->absence_to_presence(x, m, u);
    auto z = model->encode(x, m);
    auto absent = model->decode_common(z, m).image;
    auto residual = model->decode_residual(z.common, u, z.skips, m).image;
    EXPECT_TRUE(torch::equal(out.absent, absent));
    EXPECT_TRUE(torch::equal(out.present, absent + residual));
  }
}

TEST_F(ModelTest, UniqueCodeShapeChecked) {
  EXPECT_THROW(model->absence_to_presence(x, Modality::S, torch::randn({3, 5})), std::invalid_argument);
  EXPECT_THROW(model->absence_to_presence(x, Modality::S, torch::randn({2, 2})), std::invalid_argument);
}

TEST_F(ModelTest, SegmentationSharesEverythingButNormsAndClassifier) {
  for (Modality m : {Modality::S, Modality::T}) {
    auto res = model->residual_parameters(m);
    auto seg = model->segmentation_parameters(m);
    auto head = model->bundle(m)->seg_head;
    std::set<const void*> head_ids = identities(head->parameters());
    std::set<const void*> res_ids = identities(res), seg_ids = identities(seg);
    for (const auto& [name, p] : seg) {
      const bool from_head = head_ids.count(p.unsafeGetTensorImpl()) > 0;
      EXPECT_TRUE(from_head || res_ids.count(p.unsafeGetTensorImpl())) << name;
      if (from_head) EXPECT_TRUE(name.rfind("seg_head.norms.", 0) == 0 || name.rfind("seg_head.classifier.", 0) == 0)
          << name;
    }
    // Every residual weight outside its own norms and output conv is borrowed.
    for (const auto& [name, p] : res) {
      const bool private_part = name.find(".norms.") != std::string::npos || name.find(".out_conv.") != std::string::npos;
      EXPECT_EQ(seg_ids.count(p.unsafeGetTensorImpl()) > 0, !private_part) << name;
    }
    for (const auto& p : head->parameters()) EXPECT_TRUE(seg_ids.count(p.unsafeGetTensorImpl()));
  }
}

TEST_F(ModelTest, SegmentationGradientReachesOnlyItsInventory) {
  model->train();
  auto enc = identities(model->bundle(Modality::S)->encoder->parameters());
  auto seg = identities(model->segmentation_parameters(Modality::S));
  for (auto id : touched(model, model->segment(x, Modality::S)))
    EXPECT_TRUE(enc.count(id) || seg.count(id));
}

TEST_F(ModelTest, TranslationAndGenerationShareTheEncoder) {
  model->train();
  auto enc = identities(model->bundle(Modality::S)->encoder->parameters());
  auto via_translation = touched(model, model->translate(x, Modality::S, Modality::T));
  auto via_p2a = touched(model, model->presence_to_absence(x, Modality::S).present);
  for (auto id : enc) {
    EXPECT_TRUE(via_translation.count(id));
    EXPECT_TRUE(via_p2a.count(id));
  }
}

TEST_F(ModelTest, UnsharedLatentsUseSeparateTranslationEncoder) {
  auto c = small_config();
  c.unshared_latents = true;
  MGenSegModel m(c);
  auto enc = identities(m->bundle(Modality::S)->encoder->parameters());
  auto via_translation = touched(m, m->translate(x, Modality::S, Modality::T));
  for (auto id : enc) EXPECT_FALSE(via_translation.count(id));
  EXPECT_FALSE(via_translation.empty());
}

TEST_F(ModelTest, ModalityParametersAreDisjoint) {
  auto s = identities(model->bundle(Modality::S)->parameters());
  auto t = identities(model->bundle(Modality::T)->parameters());
  for (auto id : s) EXPECT_FALSE(t.count(id));
  EXPECT_EQ(s.size(), t.size());
}

TEST_F(ModelTest, OptimizerGroupsPartitionParameters) {
  std::multiset<const void*> seen;
  for (const auto& p : model->generator_parameters()) seen.insert(p.unsafeGetTensorImpl());
  for (Modality m : {Modality::S, Modality::T})
    for (DiscHead h : {DiscHead::GenA, DiscHead::Mod})
      for (const auto& p : model->discriminator_parameters(m, h)) seen.insert(p.unsafeGetTensorImpl());
  for (const auto& p : model->parameters()) EXPECT_EQ(seen.count(p.unsafeGetTensorImpl()), 1u);
  EXPECT_EQ(seen.size(), model->parameters().size());
}

TEST_F(ModelTest, ShapesPreservedOnEveryPath) {
  torch::NoGradGuard g;
  auto u = model->sample_unique(3, x.options());
  for (Modality m : {Modality::S, Modality::T}) {
    EXPECT_EQ(model->segment(x, m).sizes(), x.sizes());
    EXPECT_EQ(model->translate(x, m, other(m)).sizes(), x.sizes());
    auto p2a = model->presence_to_absence(x, m);
    EXPECT_EQ(p2a.absent.sizes(), x.sizes());
    EXPECT_EQ(p2a.present.sizes(), x.sizes());
    EXPECT_EQ(model->absence_to_presence(x, m, u).present.sizes(), x.sizes());
    auto z = model->encode(x, m);
    EXPECT_EQ(z.common.size(1), 6);
    EXPECT_EQ(z.unique.sizes(), (std::vector<std::int64_t>{3, 2}));
  }
  auto rect = torch::rand({2, 1, 16, 40});
  EXPECT_EQ(model->segment(rect, Modality::S).sizes(), rect.sizes());
}

TEST_F(ModelTest, IndivisibleSizeRejected) {
  EXPECT_THROW(model->segment(torch::rand({1, 1, 30, 32}), Modality::S), std::invalid_argument);
  EXPECT_THROW(model->translate(x, Modality::S, Modality::S), std::invalid_argument);
}

TEST_F(ModelTest, SegmentationIsProbabilityAndDeterministic) {
  torch::NoGradGuard g;
  auto a = model->segment(x, Modality::T), b = model->segment(x, Modality::T);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_GE(a.min().item<double>(), 0.0);
  EXPECT_LE(a.max().item<double>(), 1.0);
}

TEST_F(ModelTest, AttentionMapsInUnitRange) {
  torch::NoGradGuard g;
  auto z = model->encode(x, Modality::S);
  for (const auto& out : {model->decode_common(z, Modality::S), model->decode_segmentation(z, Modality::S),
                          model->decode_translation(z, Modality::S),
                          model->decode_residual(z.common, z.unique, z.skips, Modality::S)}) {
    ASSERT_EQ(out.attention.size(), 3u);
    for (const auto& a : out.attention) {
      EXPECT_EQ(a.size(1), 1);
      EXPECT_GE(a.min().item<double>(), 0.0);
      EXPECT_LE(a.max().item<double>(), 1.0);
    }
  }
}

TEST(AttentionGate, ApplyBroadcastsOverChannels) {
  auto skip = torch::rand({2, 3, 4, 4});
  auto alpha = torch::rand({2, 1, 4, 4});
  auto gated = AttentionGateImpl::apply(skip, alpha);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE(torch::allclose(gated.select(1, c), skip.select(1, c) * alpha.select(1, 0)));
  AttentionGate gate(3, 5, 2);
  EXPECT_THROW(gate(skip, torch::rand({2, 4, 4, 4})), std::invalid_argument);
}

TEST(Discriminator, PatchScores) {
  PatchDiscriminator d(4, 2);
  auto s = d(torch::rand({2, 1, 32, 32}), 1);
  EXPECT_EQ(s.size(0), 2);
  EXPECT_EQ(s.size(1), 1);
  EXPECT_GT(s.size(2), 1);
}

TEST(ModelConfigTest, SerializeRoundTripAndValidation) {
  auto c = small_config();
  c.unshared_latents = true;
  auto back = ModelConfig::deserialize(c.serialize());
  EXPECT_EQ(back.serialize(), c.serialize());
  c.n_down = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresOutputs) {
  torch::manual_seed(5);
  MGenSegModel a(small_config());
  auto path = std::filesystem::temp_directory_path() / "mgenseg_ckpt_test.pt";
  save_checkpoint(path, a, {"abc123", "", 4, 0.5});
  CheckpointMeta meta;
  auto b = load_model(path, &meta);
  EXPECT_EQ(meta.config_hash, "abc123");
  EXPECT_EQ(meta.epoch, 4);
  EXPECT_DOUBLE_EQ(meta.val_dice, 0.5);
  torch::NoGradGuard g;
  auto x = torch::rand({1, 1, 32, 32});
  EXPECT_TRUE(torch::equal(a->segment(x, Modality::T), b->segment(x, Modality::T)));

  auto bigger = small_config();
  bigger.max_channels = 32;
  bigger.base_channels = 8;
  MGenSegModel c(bigger);
  EXPECT_THROW(load_checkpoint(path, c), ConfigError);
  std::filesystem::remove(path);
}
