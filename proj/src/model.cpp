#include "mgenseg/model.hpp"

#include <sstream>

namespace mgenseg {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv3x3(int in, int out, int stride = 1, bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(bias));
}

nn::Conv2d conv1x1(int in, int out, bool bias = true) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1).bias(bias)); }

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).track_running_stats(false));
}

torch::Tensor broadcast_unique(const torch::Tensor& u, const torch::Tensor& like) {
  return u.unsqueeze(-1).unsqueeze(-1).expand({u.size(0), u.size(1), like.size(2), like.size(3)});
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::channels(int level) const { return std::min(base_channels << level, max_channels); }

void ModelConfig::validate() const {
  if (base_channels < 1 || max_channels < base_channels) throw ConfigError("invalid channel configuration");
  if (n_down < 1 || n_down > 6) throw ConfigError("n_down must be in [1,6]");
  if (common_channels < 1 || unique_channels < 1) throw ConfigError("latent channel counts must be positive");
  if (disc_channels < 1) throw ConfigError("disc_channels must be positive");
  if (disc_downsamplings < 1 || disc_downsamplings > 5) throw ConfigError("disc_downsamplings must be in [1,5]");
}

std::string ModelConfig::serialize() const {
  std::ostringstream o;
  o << "base_channels=" << base_channels << ";max_channels=" << max_channels << ";n_down=" << n_down
    << ";common_channels=" << common_channels << ";unique_channels=" << unique_channels
    << ";disc_channels=" << disc_channels << ";disc_downsamplings=" << disc_downsamplings << ";unshared_latents=" << (unshared_latents ? 1 : 0);
  return o.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed model config entry '" + item + "'");
    const std::string key = item.substr(0, eq);
    const int v = std::stoi(item.substr(eq + 1));
    if (key == "base_channels") c.base_channels = v;
    else if (key == "max_channels") c.max_channels = v;
    else if (key == "n_down") c.n_down = v;
    else if (key == "common_channels") c.common_channels = v;
    else if (key == "unique_channels") c.unique_channels = v;
    else if (key == "disc_channels") c.disc_channels = v;
    else if (key == "disc_downsamplings") c.disc_downsamplings = v;
    else if (key == "unshared_latents") c.unshared_latents = v != 0;
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Building blocks

ConvBlockImpl::ConvBlockImpl(int in, int out, int stride) {
  conv = register_module("conv", conv3x3(in, out, stride, false));
  norm = register_module("norm", instance_norm(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return torch::relu(norm(conv(x))); }

EncoderImpl::EncoderImpl(const ModelConfig& config) : config_(config) {
  stem = register_module("stem", ConvBlock(1, config.channels(0)));
  stages = register_module("stages", nn::ModuleList());
  for (int i = 1; i <= config.n_down; ++i) {
    nn::Sequential stage(ConvBlock(config.channels(i - 1), config.channels(i), 2),
                         ConvBlock(config.channels(i), config.channels(i)));
    stages->push_back(stage);
  }
  to_latent = register_module(
      "to_latent", conv1x1(config.channels(config.n_down), config.common_channels + config.unique_channels));
}

LatentPair EncoderImpl::forward(const torch::Tensor& x) {
  const int f = config_.downsampling_factor();
  if (x.dim() != 4 || x.size(1) != 1) throw std::invalid_argument("encoder expects a [B,1,H,W] tensor");
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    std::ostringstream msg;
    msg << "image size " << x.size(2) << "x" << x.size(3) << " not divisible by downsampling factor " << f;
    throw std::invalid_argument(msg.str());
  }
  LatentPair out;
  auto h = stem(x);
  for (int i = 0; i < config_.n_down; ++i) {
    out.skips.push_back(h);
    h = stages[i]->as<nn::Sequential>()->forward(h);
  }
  auto z = to_latent(h);
  out.common = z.narrow(1, 0, config_.common_channels);
  out.unique = z.narrow(1, config_.common_channels, config_.unique_channels).mean({2, 3});
  return out;
}

AttentionGateImpl::AttentionGateImpl(int skip_channels, int gate_channels, int inter_channels)
    : skip_channels_(skip_channels), gate_channels_(gate_channels) {
  theta = register_module("theta", conv1x1(skip_channels, inter_channels, false));
  phi = register_module("phi", conv1x1(gate_channels, inter_channels));
  psi = register_module("psi", conv1x1(inter_channels, 1));
}

AttentionGateImpl::Result AttentionGateImpl::forward(const torch::Tensor& skip, const torch::Tensor& gate) {
  if (skip.size(1) != skip_channels_ || gate.size(1) != gate_channels_)
    throw std::invalid_argument("attention gate: incompatible channel counts");
  if (skip.size(2) != gate.size(2) || skip.size(3) != gate.size(3))
    throw std::invalid_argument("attention gate: skip and gating signal are not spatially aligned");
  auto alpha = torch::sigmoid(psi(torch::relu(theta(skip) + phi(gate))));
  return {apply(skip, alpha), alpha};
}

torch::Tensor AttentionGateImpl::apply(const torch::Tensor& skip, const torch::Tensor& alpha) { return skip * alpha; }

NormSetImpl::NormSetImpl(const ModelConfig& config) {
  std::vector<int> channels{config.channels(config.n_down)};
  for (int i = config.n_down - 1; i >= 0; --i) {
    channels.push_back(config.channels(i));
    channels.push_back(config.channels(i));
  }
  for (std::size_t i = 0; i < channels.size(); ++i)
    norms_.push_back(register_module(std::to_string(i), instance_norm(channels[i])));
}

DecoderImpl::DecoderImpl(const ModelConfig& config, int in_channels) : config_(config) {
  entry = register_module("entry", conv3x3(in_channels, config.channels(config.n_down), 1, false));
  up_convs = register_module("up_convs", nn::ModuleList());
  gates = register_module("gates", nn::ModuleList());
  fuse_convs = register_module("fuse_convs", nn::ModuleList());
  for (int i = config.n_down - 1; i >= 0; --i) {
    const int c = config.channels(i);
    up_convs->push_back(conv3x3(config.channels(i + 1), c, 1, false));
    gates->push_back(AttentionGate(c, c, std::max(c / 2, 1)));
    fuse_convs->push_back(conv3x3(2 * c, c, 1, false));
  }
  out_conv = register_module("out_conv", conv3x3(config.channels(0), 1));
  norms_ = register_module("norms", NormSet(config));
}

DecoderOutput DecoderImpl::forward(const torch::Tensor& z, const std::vector<torch::Tensor>& skips,
                                   const NormSet& norms, nn::Conv2d output) {
  if (static_cast<int>(skips.size()) != config_.n_down) throw std::invalid_argument("decoder: wrong number of skips");
  const NormSet& ns = norms ? norms : norms_;
  DecoderOutput out;
  std::size_t k = 0;
  auto h = torch::relu(ns->at(k++)(entry(z)));
  for (int j = 0; j < config_.n_down; ++j) {
    const auto& skip = skips[config_.n_down - 1 - j];
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kNearest));
    h = torch::relu(ns->at(k++)(up_convs[j]->as<nn::Conv2d>()->forward(h)));
    auto g = gates[j]->as<AttentionGate>()->forward(skip, h);
    out.attention.push_back(g.alpha);
    h = torch::relu(ns->at(k++)(fuse_convs[j]->as<nn::Conv2d>()->forward(torch::cat({h, g.gated}, 1))));
  }
  out.image = output ? output->forward(h) : out_conv(h);
  return out;
}

SegHeadImpl::SegHeadImpl(const ModelConfig& config) {
  norms = register_module("norms", NormSet(config));
  classifier = register_module("classifier", conv3x3(config.channels(0), 1));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int channels, int n_heads, int n_down) {
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  auto down = [](int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)); };
  nn::Sequential layers;
  int in = 1, out = channels;
  for (int i = 0; i < n_down; ++i, in = out, out *= 2) {
    layers->push_back(down(in, out));
    layers->push_back(lrelu());
  }
  backbone = register_module("backbone", layers);
  heads = register_module("heads", nn::ModuleList());
  for (int i = 0; i < n_heads; ++i) heads->push_back(conv3x3(in, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x, int head) {
  if (head < 0 || head >= n_heads()) throw std::invalid_argument("unknown discriminator head");
  return heads[head]->as<nn::Conv2d>()->forward(backbone->forward(x));
}

ModalityBundleImpl::ModalityBundleImpl(const ModelConfig& config) {
  const int latent = config.common_channels + config.unique_channels;
  encoder = register_module("encoder", Encoder(config));
  if (config.unshared_latents) mod_encoder = register_module("mod_encoder", Encoder(config));
  common_decoder = register_module("common_decoder", Decoder(config, config.common_channels));
  residual_decoder = register_module("residual_decoder", Decoder(config, latent));
  seg_head = register_module("seg_head", SegHead(config));
  translator = register_module("translator", Decoder(config, latent));
  disc_gen = register_module("disc_gen", PatchDiscriminator(config.disc_channels, 2, config.disc_downsamplings));
  disc_mod = register_module("disc_mod", PatchDiscriminator(config.disc_channels, 1, config.disc_downsamplings));
}

// ---------------------------------------------------------------------------
// Composition paths

MGenSegModelImpl::MGenSegModelImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  s_ = register_module("S", ModalityBundle(config_));
  t_ = register_module("T", ModalityBundle(config_));
}

LatentPair MGenSegModelImpl::encode(const torch::Tensor& x, Modality m) { return bundle(m)->encoder(x); }

LatentPair MGenSegModelImpl::encode_for_translation(const torch::Tensor& x, Modality m) {
  return bundle(m)->translation_encoder()(x);
}

DecoderOutput MGenSegModelImpl::decode_common(const LatentPair& z, Modality m) {
  auto out = bundle(m)->common_decoder(z.common, z.skips);
  out.image = torch::sigmoid(out.image);
  return out;
}

DecoderOutput MGenSegModelImpl::decode_residual(const torch::Tensor& common, const torch::Tensor& unique,
                                                const std::vector<torch::Tensor>& skips, Modality m) {
  if (unique.dim() != 2 || unique.size(0) != common.size(0) || unique.size(1) != config_.unique_channels)
    throw std::invalid_argument("unique code must have shape [B, " + std::to_string(config_.unique_channels) + "]");
  auto out = bundle(m)->residual_decoder(torch::cat({common, broadcast_unique(unique, common)}, 1), skips);
  out.image = torch::tanh(out.image);
  return out;
}

DecoderOutput MGenSegModelImpl::decode_segmentation(const LatentPair& z, Modality m) {
  auto b = bundle(m);
  auto out = b->residual_decoder(torch::cat({z.common, broadcast_unique(z.unique, z.common)}, 1), z.skips,
                                 b->seg_head->norms, b->seg_head->classifier);
  out.image = torch::sigmoid(out.image);
  return out;
}

DecoderOutput MGenSegModelImpl::decode_translation(const LatentPair& z, Modality from) {
  auto out = bundle(from)->translator(torch::cat({z.common, broadcast_unique(z.unique, z.common)}, 1), z.skips);
  out.image = torch::sigmoid(out.image);
  return out;
}

PresenceToAbsence MGenSegModelImpl::presence_to_absence(const torch::Tensor& x, Modality m) {
  return presence_to_absence(encode(x, m), m);
}

PresenceToAbsence MGenSegModelImpl::presence_to_absence(const LatentPair& z, Modality m) {
  PresenceToAbsence out;
  out.absent = decode_common(z, m).image;
  out.residual = decode_residual(z.common, z.unique, z.skips, m).image;
  out.present = out.absent + out.residual;
  out.latent = z;
  return out;
}

AbsenceToPresence MGenSegModelImpl::absence_to_presence(const torch::Tensor& x, Modality m, const torch::Tensor& u) {
  return absence_to_presence(encode(x, m), m, u);
}

AbsenceToPresence MGenSegModelImpl::absence_to_presence(const LatentPair& z, Modality m, const torch::Tensor& u) {
  AbsenceToPresence out;
  out.absent = decode_common(z, m).image;
  out.residual = decode_residual(z.common, u, z.skips, m).image;
  out.present = out.absent + out.residual;
  out.latent = z;
  return out;
}

torch::Tensor MGenSegModelImpl::translate(const torch::Tensor& x, Modality from, Modality to) {
  if (from == to) throw std::invalid_argument("translate: source and destination modality are identical");
  return decode_translation(encode_for_translation(x, from), from).image;
}

torch::Tensor MGenSegModelImpl::segment(const torch::Tensor& x, Modality m) {
  return decode_segmentation(encode(x, m), m).image;
}

torch::Tensor MGenSegModelImpl::discriminate(const torch::Tensor& x, Modality m, DiscHead head) {
  auto b = bundle(m);
  switch (head) {
    case DiscHead::GenA: return b->disc_gen(x, 0);
    case DiscHead::GenP: return b->disc_gen(x, 1);
    case DiscHead::Mod: return b->disc_mod(x, 0);
  }
  throw std::invalid_argument("unknown discriminator head");
}

torch::Tensor MGenSegModelImpl::sample_unique(std::int64_t batch, const torch::TensorOptions& options) const {
  return torch::randn({batch, config_.unique_channels}, options);
}

std::vector<torch::Tensor> MGenSegModelImpl::generator_parameters() const {
  std::vector<torch::Tensor> out;
  for (Modality m : {Modality::S, Modality::T}) {
    auto b = bundle(m);
    for (const nn::Module* mod :
         {static_cast<const nn::Module*>(b->encoder.get()), static_cast<const nn::Module*>(b->common_decoder.get()),
          static_cast<const nn::Module*>(b->residual_decoder.get()), static_cast<const nn::Module*>(b->seg_head.get()),
          static_cast<const nn::Module*>(b->translator.get())})
      for (const auto& p : mod->parameters()) out.push_back(p);
    if (b->mod_encoder)
      for (const auto& p : b->mod_encoder->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> MGenSegModelImpl::discriminator_parameters(Modality m, DiscHead head) const {
  auto b = bundle(m);
  return head == DiscHead::Mod ? b->disc_mod->parameters() : b->disc_gen->parameters();
}

ParameterMap MGenSegModelImpl::residual_parameters(Modality m) const {
  ParameterMap out;
  for (const auto& item : bundle(m)->residual_decoder->named_parameters())
    out.emplace("residual_decoder." + item.key(), item.value());
  return out;
}

ParameterMap MGenSegModelImpl::segmentation_parameters(Modality m) const {
  ParameterMap out;
  auto b = bundle(m);
  for (const auto& item : b->residual_decoder->named_parameters())
    if (item.key().rfind("norms.", 0) != 0 && item.key().rfind("out_conv.", 0) != 0)
      out.emplace("residual_decoder." + item.key(), item.value());
  for (const auto& item : b->seg_head->named_parameters()) out.emplace("seg_head." + item.key(), item.value());
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_model(torch::serialize::OutputArchive& archive, MGenSegModel& model, const CheckpointMeta& meta) {
  torch::NoGradGuard no_grad;
  for (const auto& item : model->named_parameters()) archive.write(item.key(), item.value().detach());
  for (const auto& item : model->named_buffers()) archive.write(item.key(), item.value(), true);
  archive.write("meta/config_hash", c10::IValue(meta.config_hash));
  archive.write("meta/model_config",
                c10::IValue(meta.model_config.empty() ? model->config().serialize() : meta.model_config));
  archive.write("meta/epoch", c10::IValue(meta.epoch));
  archive.write("meta/val_dice", c10::IValue(meta.val_dice));
}

void save_archive(torch::serialize::OutputArchive& archive, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  archive.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, MGenSegModel& model, const CheckpointMeta& meta) {
  torch::serialize::OutputArchive archive;
  write_model(archive, model, meta);
  save_archive(archive, path);
}

namespace {

CheckpointMeta read_meta(torch::serialize::InputArchive& archive) {
  CheckpointMeta meta;
  c10::IValue v;
  archive.read("meta/config_hash", v);
  meta.config_hash = v.toStringRef();
  archive.read("meta/model_config", v);
  meta.model_config = v.toStringRef();
  archive.read("meta/epoch", v);
  meta.epoch = v.toInt();
  archive.read("meta/val_dice", v);
  meta.val_dice = v.toDouble();
  return meta;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return read_meta(archive);
}

CheckpointMeta read_model(torch::serialize::InputArchive& archive, MGenSegModel& model) {
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_parameters()) {
    torch::Tensor t;
    if (!archive.try_read(item.key(), t)) throw ConfigError("checkpoint lacks parameter '" + item.key() + "'");
    if (t.sizes() != item.value().sizes()) throw ConfigError("shape mismatch for parameter '" + item.key() + "'");
    item.value().copy_(t);
  }
  for (auto& item : model->named_buffers()) {
    torch::Tensor t;
    if (archive.try_read(item.key(), t, true)) item.value().copy_(t);
  }
  return read_meta(archive);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, MGenSegModel& model) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return read_model(archive, model);
}

MGenSegModel load_model(const std::filesystem::path& path, CheckpointMeta* meta) {
  auto m = read_checkpoint_meta(path);
  MGenSegModel model(ModelConfig::deserialize(m.model_config));
  load_checkpoint(path, model);
  if (meta) *meta = m;
  model->eval();
  return model;
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace mgenseg
