#include "mgenseg/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "mgenseg/metrics.hpp"
#include "mgenseg/rng.hpp"

namespace mgenseg {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 so that every batch mixes A and P samples");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must be in [0,1)");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (max_steps_per_epoch < 0) throw ConfigError("max_steps_per_epoch must be >= 0");
  if (eval_threshold <= 0.0 || eval_threshold >= 1.0) throw ConfigError("eval_threshold must be in (0,1)");
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Augmentation

SliceSample augment(const SliceSample& sample, std::uint64_t seed, const AugmentConfig& config) {
  if (!config.enabled()) return sample;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = config.flip && unit(rng) < 0.5;
  const double angle = config.rotate ? (2.0 * unit(rng) - 1.0) * config.max_rotation_deg : 0.0;
  const double scale = config.intensity ? 1.0 + (2.0 * unit(rng) - 1.0) * config.intensity_range : 1.0;
  const double shift = config.intensity ? (2.0 * unit(rng) - 1.0) * config.intensity_range : 0.0;

  SliceSample out = sample;
  auto image = sample.image.unsqueeze(0).unsqueeze(0);
  auto mask = sample.has_mask() ? sample.mask.unsqueeze(0).unsqueeze(0) : torch::Tensor();
  if (angle != 0.0) {
    const double rad = angle * std::numbers::pi / 180.0;
    auto theta = torch::tensor({{std::cos(rad), -std::sin(rad), 0.0}, {std::sin(rad), std::cos(rad), 0.0}},
                               torch::kFloat32)
                     .unsqueeze(0);
    auto grid = F::affine_grid(theta, image.sizes().vec(), false);
    image = F::grid_sample(image, grid,
                           F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
    if (mask.defined())
      mask = F::grid_sample(mask, grid,
                            F::GridSampleFuncOptions().mode(torch::kNearest).padding_mode(torch::kZeros).align_corners(false));
  }
  if (flip) {
    image = image.flip({-1});
    if (mask.defined()) mask = mask.flip({-1});
  }
  image = image.squeeze(0).squeeze(0);
  if (scale != 1.0 || shift != 0.0) {
    auto fg = image.gt(0);
    image = torch::where(fg, (image * scale + shift).clamp(1.0 / 1024.0, 1.0), torch::zeros_like(image));
  }
  out.image = image.clamp(0.0, 1.0).contiguous();
  if (mask.defined()) out.mask = mask.squeeze(0).squeeze(0).contiguous();
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

LatentPair cat_latent(const LatentPair& a, const LatentPair& b) {
  LatentPair out;
  out.common = torch::cat({a.common, b.common});
  out.unique = torch::cat({a.unique, b.unique});
  for (std::size_t i = 0; i < a.skips.size(); ++i) out.skips.push_back(torch::cat({a.skips[i], b.skips[i]}));
  return out;
}

LatentPair select_latent(const LatentPair& z, const torch::Tensor& idx) {
  LatentPair out;
  out.common = z.common.index_select(0, idx);
  out.unique = z.unique.index_select(0, idx);
  for (const auto& s : z.skips) out.skips.push_back(s.index_select(0, idx));
  return out;
}

torch::optim::AdamOptions adam_options(const TrainConfig& c) {
  return torch::optim::AdamOptions(c.learning_rate).betas({c.beta1, c.beta2}).amsgrad(true);
}

torch::Tensor accumulate(const torch::Tensor& acc, const torch::Tensor& v) { return acc.defined() ? acc + v : v; }

constexpr const char* kDiscNames[4] = {"disc_gen_S", "disc_gen_T", "disc_mod_S", "disc_mod_T"};

}  // namespace

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  torch::manual_seed(seed);
  model_ = MGenSegModel(model_config);
  gen_opt_ = std::make_unique<torch::optim::Adam>(model_->generator_parameters(), adam_options(config_));
  disc_opts_[0] = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(Modality::S, DiscHead::GenA),
                                                       adam_options(config_));
  disc_opts_[1] = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(Modality::T, DiscHead::GenA),
                                                       adam_options(config_));
  disc_opts_[2] = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(Modality::S, DiscHead::Mod),
                                                       adam_options(config_));
  disc_opts_[3] = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(Modality::T, DiscHead::Mod),
                                                       adam_options(config_));
}

std::vector<Trainer::OptimizerGroup> Trainer::optimizer_groups() const {
  std::vector<OptimizerGroup> out;
  auto collect = [](const torch::optim::Optimizer& opt) {
    std::vector<torch::Tensor> ps;
    for (const auto& g : opt.param_groups())
      for (const auto& p : g.params()) ps.push_back(p);
    return ps;
  };
  out.push_back({"generators", collect(*gen_opt_)});
  for (int i = 0; i < 4; ++i) out.push_back({kDiscNames[i], collect(*disc_opts_[i])});
  return out;
}

void Trainer::write_state(torch::serialize::OutputArchive& archive) const {
  torch::serialize::OutputArchive gen;
  gen_opt_->save(gen);
  archive.write("optim/generators", gen);
  for (int i = 0; i < 4; ++i) {
    torch::serialize::OutputArchive d;
    disc_opts_[i]->save(d);
    archive.write(std::string("optim/") + kDiscNames[i], d);
  }
}

void Trainer::read_state(torch::serialize::InputArchive& archive) {
  torch::serialize::InputArchive gen;
  archive.read("optim/generators", gen);
  gen_opt_->load(gen);
  for (int i = 0; i < 4; ++i) {
    torch::serialize::InputArchive d;
    archive.read(std::string("optim/") + kDiscNames[i], d);
    disc_opts_[i]->load(d);
  }
}

LossReport Trainer::train_step(const StepBatch& batch) {
  model_->train();
  const auto& w = config_.weights;
  const bool genseg = w.genseg_enabled();
  const bool a_to_p = config_.absence_to_presence;
  const bool healthy = config_.healthy_mod_translation;
  const bool shared = !model_->config().unshared_latents;
  constexpr std::array<Modality, 2> kMods{Modality::S, Modality::T};

  std::array<LatentPair, 2> z_absent, z_present, t_absent, t_present;
  for (Modality m : kMods) {
    const int i = static_cast<int>(m);
    z_absent[i] = model_->encode(batch.absent[i], m);
    z_present[i] = model_->encode(batch.present[i], m);
    if (shared) {
      t_absent[i] = z_absent[i];
      t_present[i] = z_present[i];
    } else {
      t_absent[i] = model_->encode_for_translation(batch.absent[i], m);
      t_present[i] = model_->encode_for_translation(batch.present[i], m);
    }
  }

  LossComponents comps;
  std::array<torch::Tensor, 2> fake_absent, fake_present;
  if (genseg) {
    std::vector<TensorPair> rec_legs, code_pairs, unique_pairs;
    torch::Tensor adv;
    for (Modality m : kMods) {
      const int i = static_cast<int>(m);
      auto p2a = model_->presence_to_absence(z_present[i], m);
      auto aa = model_->decode_common(z_absent[i], m).image;
      rec_legs.push_back({aa, batch.absent[i]});
      rec_legs.push_back({p2a.present, batch.present[i]});
      adv = accumulate(adv, hinge_g(model_->discriminate(p2a.absent, m, DiscHead::GenA)));
      code_pairs.push_back({model_->encode(p2a.absent, m).common, z_present[i].common.detach()});
      fake_absent[i] = p2a.absent;
      if (a_to_p) {
        auto u = model_->sample_unique(batch.absent[i].size(0), batch.absent[i].options());
        auto residual = model_->decode_residual(z_absent[i].common, u, z_absent[i].skips, m).image;
        auto ap = aa + residual;
        adv = accumulate(adv, hinge_g(model_->discriminate(ap, m, DiscHead::GenP)));
        auto z_ap = model_->encode(ap, m);
        code_pairs.push_back({z_ap.common, z_absent[i].common.detach()});
        unique_pairs.push_back({z_ap.unique, u});
        fake_present[i] = ap;
      }
    }
    comps.rec_gen = l1_sum(rec_legs);
    comps.lat_gen = lat_gen_loss(code_pairs, unique_pairs);
    comps.adv_gen = adv;
  }

  // Modality translation cycles. translated[i] holds images of modality i
  // produced from the other modality.
  std::array<torch::Tensor, 2> translated, translated_present;
  {
    std::vector<TensorPair> cyc_legs;
    torch::Tensor adv;
    for (Modality m : kMods) {
      const int i = static_cast<int>(m);
      const int o = 1 - i;
      const auto n_absent = batch.absent[i].size(0);
      auto latent = healthy ? cat_latent(t_absent[i], t_present[i]) : t_present[i];
      auto fake = model_->decode_translation(latent, m).image;
      auto back = model_->decode_translation(model_->encode_for_translation(fake, other(m)), other(m)).image;
      if (healthy) {
        cyc_legs.push_back({back.narrow(0, 0, n_absent), batch.absent[i]});
        cyc_legs.push_back({back.narrow(0, n_absent, back.size(0) - n_absent), batch.present[i]});
        translated_present[i] = fake.narrow(0, n_absent, fake.size(0) - n_absent);
      } else {
        cyc_legs.push_back({back, batch.present[i]});
        translated_present[i] = fake;
      }
      adv = accumulate(adv, hinge_g(model_->discriminate(fake, other(m), DiscHead::Mod)));
      translated[o] = fake;
    }
    comps.cyc_mod = l1_sum(cyc_legs);
    comps.adv_mod = adv;
  }

  // Segmentation on annotated diseased images and their translations.
  std::int64_t n_annotated = 0;
  {
    std::vector<torch::Tensor> targets, pred_own, pred_translated;
    for (Modality m : kMods) {
      const int i = static_cast<int>(m);
      std::vector<std::int64_t> rows;
      for (std::size_t k = 0; k < batch.present_annotated[i].size(); ++k)
        if (batch.present_annotated[i][k]) rows.push_back(static_cast<std::int64_t>(k));
      if (rows.empty()) continue;
      auto idx = torch::tensor(rows, torch::kLong);
      targets.push_back(batch.present_masks[i].index_select(0, idx));
      pred_own.push_back(model_->decode_segmentation(select_latent(z_present[i], idx), m).image);
      pred_translated.push_back(model_->segment(translated_present[i].index_select(0, idx), other(m)));
      n_annotated += static_cast<std::int64_t>(rows.size());
    }
    if (!targets.empty())
      comps.seg = seg_loss(torch::cat(targets), torch::cat(pred_own), torch::cat(pred_translated), {},
                           config_.dice_smooth);
  }

  auto total = total_loss(comps, w);
  auto report = LossReport::from(comps, total);
  report.n_annotated = n_annotated;
  if (!report.finite()) throw std::runtime_error("non-finite generator loss: " + report.describe());

  gen_opt_->zero_grad();
  if (total.requires_grad()) total.backward();
  gen_opt_->step();

  // Discriminators see generated images as constants.
  if (genseg && w.adv_gen > 0.0) {
    for (Modality m : kMods) {
      const int i = static_cast<int>(m);
      auto loss = hinge_d(model_->discriminate(batch.absent[i], m, DiscHead::GenA),
                          model_->discriminate(fake_absent[i].detach(), m, DiscHead::GenA));
      if (a_to_p)
        loss = loss + hinge_d(model_->discriminate(batch.present[i], m, DiscHead::GenP),
                              model_->discriminate(fake_present[i].detach(), m, DiscHead::GenP));
      disc_opts_[i]->zero_grad();
      loss.backward();
      disc_opts_[i]->step();
      report.disc_gen += loss.item<double>();
    }
  }
  if (w.adv_mod > 0.0) {
    for (Modality m : kMods) {
      const int i = static_cast<int>(m);
      auto real = healthy ? torch::cat({batch.absent[i], batch.present[i]}) : batch.present[i];
      auto loss = hinge_d(model_->discriminate(real, m, DiscHead::Mod),
                          model_->discriminate(translated[i].detach(), m, DiscHead::Mod));
      disc_opts_[2 + i]->zero_grad();
      loss.backward();
      disc_opts_[2 + i]->step();
      report.disc_mod += loss.item<double>();
    }
  }
  if (!report.finite()) throw std::runtime_error("non-finite discriminator loss: " + report.describe());
  return report;
}

// ---------------------------------------------------------------------------
// Epoch loop

namespace {

using SampleList = std::vector<const SliceSample*>;

struct Pools {
  // [modality][domain]
  std::array<std::array<SampleList, 2>, 2> lists;
};

Pools collect_pools(const std::vector<SliceSample>& train) {
  Pools p;
  for (const auto& s : train) p.lists[static_cast<int>(s.modality)][static_cast<int>(s.domain)].push_back(&s);
  return p;
}

struct Cursor {
  SampleList order;
  std::size_t next = 0;

  const SliceSample* take() {
    const auto* s = order[next % order.size()];
    ++next;
    return s;
  }
};

torch::Tensor stack_samples(const std::vector<SliceSample>& v, bool masks) {
  std::vector<torch::Tensor> t;
  for (const auto& s : v) t.push_back((masks ? (s.has_mask() ? s.mask : torch::zeros_like(s.image)) : s.image).unsqueeze(0));
  return torch::stack(t);
}

void truncate_log(const fs::path& path, int keep_before_epoch) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.value("epoch", 0) < keep_before_epoch) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

nlohmann::json epoch_json(const EpochRecord& r) {
  return {{"type", "epoch"},
          {"epoch", r.epoch},
          {"steps", r.steps},
          {"mean_total", r.mean_total},
          {"val_dice_source", r.val_dice_source},
          {"val_dice_target", r.val_dice_target}};
}

EpochRecord epoch_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch");
  r.steps = j.at("steps");
  r.mean_total = j.at("mean_total");
  r.val_dice_source = j.at("val_dice_source");
  r.val_dice_target = j.at("val_dice_target");
  return r;
}

void say(const FitOptions& o, const std::string& msg) {
  if (o.verbose) std::cout << "[mgenseg] " << msg << std::endl;
}

}  // namespace

FitResult fit(const ModelConfig& model_config, const TrainConfig& config, const DatasetManifest& manifest,
              std::uint64_t seed, const FitOptions& options) {
  config.validate();
  fs::create_directories(options.run_dir);
  Pools pools = collect_pools(manifest.train);
  for (int m = 0; m < 2; ++m)
    for (int d = 0; d < 2; ++d)
      if (pools.lists[m][d].empty())
        throw ConfigError("empty training pool for modality " + to_string(static_cast<Modality>(m)) + " domain " +
                          to_string(static_cast<Domain>(d)));
  for (Modality m : {Modality::S, Modality::T})
    if (manifest.count(Partition::Val, m, Domain::P) == 0)
      throw ConfigError("validation partition has no diseased " + to_string(m) + " samples");

  const int n_absent = config.batch_size / 2;
  const int n_present = config.batch_size - n_absent;
  const std::array<int, 2> per_domain{n_absent, n_present};

  Trainer trainer(model_config, config, seed);
  auto& model = trainer.model();

  FitResult result;
  result.metrics_log = options.run_dir / kMetricsLog;
  result.best_checkpoint = options.run_dir / kBestCheckpoint;
  const auto last_state = options.run_dir / kLastState;
  int start_epoch = 0;

  if (options.resume && fs::exists(last_state)) {
    torch::serialize::InputArchive archive;
    archive.load_from(last_state.string());
    read_model(archive, model);
    trainer.read_state(archive);
    c10::IValue v;
    archive.read("state/json", v);
    auto state = nlohmann::json::parse(v.toStringRef());
    start_epoch = state.at("next_epoch");
    result.best_epoch = state.at("best_epoch");
    result.best_val_dice = state.at("best_val_dice");
    for (const auto& e : state.at("epochs")) result.epochs.push_back(epoch_from_json(e));
    result.access.samples_by_modality = state.at("access");
    truncate_log(result.metrics_log, start_epoch);
    say(options, "resuming at epoch " + std::to_string(start_epoch));
  } else {
    std::ofstream(result.metrics_log, std::ios::trunc);
  }

  std::ofstream log(result.metrics_log, std::ios::app);
  int epochs_run = 0;
  int epoch = start_epoch;
  for (; epoch < config.epochs; ++epoch) {
    if (options.stop_after_epochs > 0 && epochs_run >= options.stop_after_epochs) break;
    torch::manual_seed(derive_seed(seed, {static_cast<std::uint64_t>(epoch), 0x45ULL}));
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch), 0x42ULL}));

    std::array<std::array<Cursor, 2>, 2> cursors;
    int steps = 0;
    for (int m = 0; m < 2; ++m)
      for (int d = 0; d < 2; ++d) {
        cursors[m][d].order = pools.lists[m][d];
        std::shuffle(cursors[m][d].order.begin(), cursors[m][d].order.end(), rng);
        const auto n = cursors[m][d].order.size();
        steps = std::max(steps, static_cast<int>((n + per_domain[d] - 1) / per_domain[d]));
      }
    if (config.max_steps_per_epoch > 0) steps = std::min(steps, config.max_steps_per_epoch);

    double total_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
      StepBatch batch;
      for (int m = 0; m < 2; ++m) {
        for (int d = 0; d < 2; ++d) {
          std::vector<SliceSample> picked;
          for (int k = 0; k < per_domain[d]; ++k) {
            const auto* s = cursors[m][d].take();
            picked.push_back(augment(*s,
                                     derive_seed(seed, {static_cast<std::uint64_t>(epoch),
                                                        static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(m),
                                                        static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(k)}),
                                     config.augment));
          }
          result.access.samples_by_modality[m] += picked.size();
          if (d == 0) {
            batch.absent[m] = stack_samples(picked, false);
          } else {
            batch.present[m] = stack_samples(picked, false);
            batch.present_masks[m] = stack_samples(picked, true);
            for (const auto& s : picked) batch.present_annotated[m].push_back(s.annotated && s.has_mask());
          }
        }
      }
      auto report = trainer.train_step(batch);
      report.epoch = epoch;
      report.step = step;
      total_sum += report.total;
      log << report.to_json().dump() << '\n';
      if (options.verbose && (step % 25 == 0 || step + 1 == steps)) {
        std::ostringstream o;
        o << "epoch=" << epoch << " step=" << step << "/" << steps << " total=" << report.total
          << " seg=" << report.seg << " cyc=" << report.cyc_mod << " rec=" << report.rec_gen;
        say(options, o.str());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = steps;
    rec.mean_total = steps > 0 ? total_sum / steps : 0.0;
    rec.val_dice_source =
        evaluate_model(model, manifest.val, config.source(), config.source(), config.eval_threshold).mean;
    rec.val_dice_target =
        evaluate_model(model, manifest.val, config.target, config.target, config.eval_threshold).mean;
    result.epochs.push_back(rec);
    log << epoch_json(rec).dump() << '\n';
    log.flush();
    {
      std::ostringstream o;
      o << "epoch=" << epoch << " val_dice_source=" << rec.val_dice_source << " val_dice_target=" << rec.val_dice_target;
      say(options, o.str());
    }

    if (result.best_epoch < 0 || rec.val_dice_target > result.best_val_dice) {
      result.best_epoch = epoch;
      result.best_val_dice = rec.val_dice_target;
      save_checkpoint(result.best_checkpoint, model, {options.config_hash, "", epoch, rec.val_dice_target});
    }

    nlohmann::json state = {{"next_epoch", epoch + 1},
                            {"best_epoch", result.best_epoch},
                            {"best_val_dice", result.best_val_dice},
                            {"access", result.access.samples_by_modality}};
    state["epochs"] = nlohmann::json::array();
    for (const auto& e : result.epochs) state["epochs"].push_back(epoch_json(e));
    torch::serialize::OutputArchive archive;
    write_model(archive, model, {options.config_hash, "", epoch, rec.val_dice_target});
    trainer.write_state(archive);
    archive.write("state/json", c10::IValue(state.dump()));
    save_archive(archive, last_state);
    ++epochs_run;
  }
  result.completed = epoch >= config.epochs;
  return result;
}

FitResult fit_baseline(const ModelConfig& model_config, const TrainConfig& config, const DatasetManifest& manifest,
                       std::uint64_t seed, const FitOptions& options) {
  config.validate();
  fs::create_directories(options.run_dir);
  const Modality source = config.source();
  SampleList annotated;
  for (const auto& s : manifest.train)
    if (s.modality == source && s.domain == Domain::P && s.annotated && s.has_mask()) annotated.push_back(&s);
  if (annotated.empty()) throw ConfigError("no-adaptation baseline needs annotated source samples");

  torch::manual_seed(seed);
  MGenSegModel model(model_config);
  std::vector<torch::Tensor> params = model->bundle(source)->encoder->parameters();
  for (const auto& [name, p] : model->segmentation_parameters(source)) params.push_back(p);
  torch::optim::Adam opt(params, adam_options(config));

  FitResult result;
  result.metrics_log = options.run_dir / kMetricsLog;
  result.best_checkpoint = options.run_dir / kBestCheckpoint;
  std::ofstream log(result.metrics_log, std::ios::trunc);

  const int per_step = config.batch_size;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    torch::manual_seed(derive_seed(seed, {static_cast<std::uint64_t>(epoch), 0x45ULL}));
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch), 0x42ULL}));
    Cursor cursor{annotated, 0};
    std::shuffle(cursor.order.begin(), cursor.order.end(), rng);
    int steps = static_cast<int>((annotated.size() + per_step - 1) / per_step);
    if (config.max_steps_per_epoch > 0) steps = std::min(steps, config.max_steps_per_epoch);
    double total_sum = 0.0;
    model->train();
    for (int step = 0; step < steps; ++step) {
      std::vector<SliceSample> picked;
      for (int k = 0; k < per_step; ++k)
        picked.push_back(augment(*cursor.take(),
                                 derive_seed(seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                                                    static_cast<std::uint64_t>(source), 1,
                                                    static_cast<std::uint64_t>(k)}),
                                 config.augment));
      result.access.samples_by_modality[static_cast<int>(source)] += picked.size();
      auto pred = model->segment(stack_samples(picked, false), source);
      auto loss = dice_loss(stack_samples(picked, true), pred, config.dice_smooth);
      opt.zero_grad();
      loss.backward();
      opt.step();
      const double v = loss.item<double>();
      if (!std::isfinite(v)) throw std::runtime_error("non-finite baseline loss");
      total_sum += v;
      log << nlohmann::json{{"type", "step"}, {"epoch", epoch}, {"step", step}, {"seg", v}, {"total", v}}.dump()
          << '\n';
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = steps;
    rec.mean_total = steps > 0 ? total_sum / steps : 0.0;
    rec.val_dice_source = evaluate_model(model, manifest.val, source, source, config.eval_threshold).mean;
    result.epochs.push_back(rec);
    log << nlohmann::json{{"type", "epoch"}, {"epoch", epoch}, {"mean_total", rec.mean_total},
                          {"val_dice_source", rec.val_dice_source}}
               .dump()
        << '\n';
    say(options,
        "baseline epoch=" + std::to_string(epoch) + " val_dice_source=" + std::to_string(rec.val_dice_source));
    if (result.best_epoch < 0 || rec.val_dice_source > result.best_val_dice) {
      result.best_epoch = epoch;
      result.best_val_dice = rec.val_dice_source;
      save_checkpoint(result.best_checkpoint, model, {options.config_hash, "", epoch, rec.val_dice_source});
    }
  }
  result.completed = true;
  return result;
}

}  // namespace mgenseg
