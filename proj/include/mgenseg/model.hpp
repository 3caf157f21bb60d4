#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mgenseg/types.hpp"

namespace mgenseg {

struct ModelConfig {
  int base_channels = 8;
  int max_channels = 64;
  /// Number of stride-2 stages in each encoder.
  int n_down = 3;
  int common_channels = 24;
  int unique_channels = 8;
  int disc_channels = 8;
  /// Stride-2 stages of each patch discriminator; sets its receptive field.
  int disc_downsamplings = 3;
  /// Ablation wiring: separate encoders for modality translation.
  bool unshared_latents = false;

  int channels(int level) const;
  int downsampling_factor() const { return 1 << n_down; }
  void validate() const;

  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);
};

/// Common code c (spatial) and unique code u (pooled vector) plus the encoder
/// skip features, finest first.
struct LatentPair {
  torch::Tensor common;
  torch::Tensor unique;
  std::vector<torch::Tensor> skips;
};

struct DecoderOutput {
  torch::Tensor image;
  /// One [B,1,h,w] map per gated skip, coarsest first.
  std::vector<torch::Tensor> attention;
};

/// conv3x3 -> instance norm -> ReLU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int in, int out, int stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(ConvBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);

  /// Throws std::invalid_argument when H or W is not divisible by the
  /// downsampling factor.
  LatentPair forward(const torch::Tensor& x);

 private:
  ModelConfig config_;
  ConvBlock stem{nullptr};
  torch::nn::ModuleList stages;
  torch::nn::Conv2d to_latent{nullptr};
};
TORCH_MODULE(Encoder);

/// Additive attention gate on a skip connection, gated by the decoder
/// feature at the same resolution.
class AttentionGateImpl : public torch::nn::Module {
 public:
  AttentionGateImpl(int skip_channels, int gate_channels, int inter_channels);

  struct Result {
    torch::Tensor gated;
    torch::Tensor alpha;
  };

  /// Throws std::invalid_argument on channel or spatial mismatch.
  Result forward(const torch::Tensor& skip, const torch::Tensor& gate);

  /// skip * alpha, broadcasting alpha over channels.
  static torch::Tensor apply(const torch::Tensor& skip, const torch::Tensor& alpha);

 private:
  int skip_channels_, gate_channels_;
  torch::nn::Conv2d theta{nullptr}, phi{nullptr}, psi{nullptr};
};
TORCH_MODULE(AttentionGate);

/// Instance-norm parameter set for one pass through a decoder trunk.
class NormSetImpl : public torch::nn::Module {
 public:
  explicit NormSetImpl(const ModelConfig& config);
  torch::nn::InstanceNorm2d at(std::size_t i) const { return norms_[i]; }
  std::size_t size() const { return norms_.size(); }

 private:
  std::vector<torch::nn::InstanceNorm2d> norms_;
};
TORCH_MODULE(NormSet);

/// U-Net style decoder: nearest upsampling + conv per stage, attention-gated
/// skip fusion, and a 1-channel output conv. The normalization layers are
/// swappable so that a second head can reuse every convolution.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const ModelConfig& config, int in_channels);

  /// Pre-activation output (1 channel) and attention maps, using `norms`
  /// and `output` in place of the decoder's own when given.
  DecoderOutput forward(const torch::Tensor& z, const std::vector<torch::Tensor>& skips,
                        const NormSet& norms = nullptr, torch::nn::Conv2d output = nullptr);

  NormSet own_norms() const { return norms_; }
  torch::nn::Conv2d output_conv() const { return out_conv; }

 private:
  ModelConfig config_;
  torch::nn::Conv2d entry{nullptr};
  torch::nn::ModuleList up_convs, gates, fuse_convs;
  torch::nn::Conv2d out_conv{nullptr};
  NormSet norms_{nullptr};
};
TORCH_MODULE(Decoder);

/// Segmentation head riding on a residual decoder: private norms and its own
/// output conv, every other weight borrowed.
class SegHeadImpl : public torch::nn::Module {
 public:
  explicit SegHeadImpl(const ModelConfig& config);
  NormSet norms{nullptr};
  torch::nn::Conv2d classifier{nullptr};
};
TORCH_MODULE(SegHead);

/// Patch discriminator with one or more output heads over a shared backbone.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int channels, int n_heads, int n_down = 3);
  torch::Tensor forward(const torch::Tensor& x, int head = 0);
  int n_heads() const { return static_cast<int>(heads->size()); }

 private:
  torch::nn::Sequential backbone{nullptr};
  torch::nn::ModuleList heads;
};
TORCH_MODULE(PatchDiscriminator);

enum class DiscHead { GenA, GenP, Mod };

/// Every network owned by one modality m. `translator` decodes latents of
/// E_m into the *other* modality.
class ModalityBundleImpl : public torch::nn::Module {
 public:
  explicit ModalityBundleImpl(const ModelConfig& config);

  Encoder encoder{nullptr};
  Encoder mod_encoder{nullptr};  // only with unshared latents
  Decoder common_decoder{nullptr};
  Decoder residual_decoder{nullptr};
  SegHead seg_head{nullptr};
  Decoder translator{nullptr};
  PatchDiscriminator disc_gen{nullptr};
  PatchDiscriminator disc_mod{nullptr};

  Encoder translation_encoder() const { return mod_encoder ? mod_encoder : encoder; }
};
TORCH_MODULE(ModalityBundle);

struct PresenceToAbsence {
  torch::Tensor absent;    // S_PA
  torch::Tensor residual;  // Delta_PP
  torch::Tensor present;   // S_PP = S_PA + Delta_PP
  LatentPair latent;
};

struct AbsenceToPresence {
  torch::Tensor absent;   // S_AA
  torch::Tensor present;  // S_AP = S_AA + G_res(c_A, u)
  torch::Tensor residual;
  LatentPair latent;
};

using ParameterMap = std::map<std::string, torch::Tensor>;

/// The two modality bundles and every forward composition path. Image
/// tensors are [B, 1, H, W].
class MGenSegModelImpl : public torch::nn::Module {
 public:
  explicit MGenSegModelImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ModalityBundle bundle(Modality m) const { return m == Modality::S ? s_ : t_; }

  LatentPair encode(const torch::Tensor& x, Modality m);
  LatentPair encode_for_translation(const torch::Tensor& x, Modality m);

  DecoderOutput decode_common(const LatentPair& z, Modality m);
  DecoderOutput decode_residual(const torch::Tensor& common, const torch::Tensor& unique,
                                const std::vector<torch::Tensor>& skips, Modality m);
  DecoderOutput decode_segmentation(const LatentPair& z, Modality m);
  /// Decodes latents of modality `from` into the other modality.
  DecoderOutput decode_translation(const LatentPair& z, Modality from);

  PresenceToAbsence presence_to_absence(const torch::Tensor& x, Modality m);
  PresenceToAbsence presence_to_absence(const LatentPair& z, Modality m);
  /// Throws std::invalid_argument when u does not have shape [B, unique_channels].
  AbsenceToPresence absence_to_presence(const torch::Tensor& x, Modality m, const torch::Tensor& u);
  AbsenceToPresence absence_to_presence(const LatentPair& z, Modality m, const torch::Tensor& u);
  /// Throws std::invalid_argument when from == to.
  torch::Tensor translate(const torch::Tensor& x, Modality from, Modality to);
  /// Per-pixel lesion probability in [0, 1].
  torch::Tensor segment(const torch::Tensor& x, Modality m);
  torch::Tensor discriminate(const torch::Tensor& x, Modality m, DiscHead head);

  torch::Tensor sample_unique(std::int64_t batch, const torch::TensorOptions& options) const;

  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters(Modality m, DiscHead head) const;

  /// Named parameters of G_res and G_seg for modality m (inventory checks).
  ParameterMap residual_parameters(Modality m) const;
  ParameterMap segmentation_parameters(Modality m) const;

 private:
  ModelConfig config_;
  ModalityBundle s_{nullptr}, t_{nullptr};
};
TORCH_MODULE(MGenSegModel);

/// Metadata stored beside the parameters in a checkpoint archive.
struct CheckpointMeta {
  std::string config_hash;
  std::string model_config;
  std::int64_t epoch = -1;
  double val_dice = 0.0;
};

/// Single archive: every parameter and buffer keyed by its canonical module
/// path (e.g. "S.encoder.stem.conv.weight") plus "meta/*" entries.
void save_checkpoint(const std::filesystem::path& path, MGenSegModel& model, const CheckpointMeta& meta);
void write_model(torch::serialize::OutputArchive& archive, MGenSegModel& model, const CheckpointMeta& meta);
CheckpointMeta read_model(torch::serialize::InputArchive& archive, MGenSegModel& model);
/// Writes to a temporary file first, then renames over `path`.
void save_archive(torch::serialize::OutputArchive& archive, const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Loads parameters into an existing model; throws ConfigError on missing
/// keys or shape mismatch.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, MGenSegModel& model);
/// Builds a model from the config stored in the checkpoint.
MGenSegModel load_model(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace mgenseg
