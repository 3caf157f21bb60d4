#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mgenseg/data_synth.hpp"
#include "mgenseg/losses.hpp"
#include "mgenseg/model.hpp"

namespace mgenseg {

struct AugmentConfig {
  bool flip = true;
  bool rotate = true;
  bool intensity = true;
  double max_rotation_deg = 10.0;
  double intensity_range = 0.1;

  bool enabled() const { return flip || rotate || intensity; }
};

struct TrainConfig {
  int epochs = 300;
  int batch_size = 15;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  LossWeights weights;
  AugmentConfig augment;
  /// Ablation wiring. false drops the healthy legs of modality translation.
  bool healthy_mod_translation = true;
  /// false skips the absence-to-presence path and its loss legs.
  bool absence_to_presence = true;
  /// 0 means one pass over the largest (modality, domain) training list.
  int max_steps_per_epoch = 0;
  double dice_smooth = kDefaultDiceSmooth;
  double eval_threshold = 0.5;
  /// Modality whose validation Dice selects the best checkpoint. The other
  /// one is the source.
  Modality target = Modality::T;

  Modality source() const { return other(target); }
  void validate() const;
};

/// One unpaired step: per modality index (S=0, T=1) a healthy and a diseased
/// sub-batch, [B,1,H,W] each.
struct StepBatch {
  std::array<torch::Tensor, 2> absent;
  std::array<torch::Tensor, 2> present;
  std::array<torch::Tensor, 2> present_masks;
  std::array<std::vector<bool>, 2> present_annotated;
};

/// Label-preserving augmentation: horizontal flip, small rotation and
/// intensity scale/shift on the foreground. The spatial transform is applied
/// to the mask with nearest-neighbour sampling.
SliceSample augment(const SliceSample& sample, std::uint64_t seed, const AugmentConfig& config);

/// Owns the model and the optimizers (one for all generators, one per
/// discriminator).
class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& config, std::uint64_t seed);

  /// One generator update followed by one discriminator update on the same
  /// batch. Throws std::runtime_error on a non-finite loss.
  LossReport train_step(const StepBatch& batch);

  MGenSegModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }

  struct OptimizerGroup {
    std::string name;
    std::vector<torch::Tensor> parameters;
  };
  std::vector<OptimizerGroup> optimizer_groups() const;

  void write_state(torch::serialize::OutputArchive& archive) const;
  void read_state(torch::serialize::InputArchive& archive);

 private:
  TrainConfig config_;
  MGenSegModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  /// D_gen^S, D_gen^T, D_mod^S, D_mod^T.
  std::array<std::unique_ptr<torch::optim::Adam>, 4> disc_opts_;
};

/// Which training samples a run touched.
struct DataAccessLog {
  std::array<std::size_t, 2> samples_by_modality{0, 0};
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double mean_total = 0.0;
  double val_dice_source = 0.0;
  double val_dice_target = 0.0;
};

struct FitOptions {
  std::filesystem::path run_dir;
  std::string config_hash;
  bool resume = false;
  bool verbose = true;
  /// Stops after this many epochs in this invocation (0 = no limit). Used to
  /// simulate interruption.
  int stop_after_epochs = 0;
};

struct FitResult {
  int best_epoch = -1;
  double best_val_dice = 0.0;
  std::vector<EpochRecord> epochs;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_log;
  DataAccessLog access;
  bool completed = false;
};

inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastState = "last_state.ckpt";
inline constexpr const char* kMetricsLog = "metrics.jsonl";

/// Full M-GenSeg training on the train partition. After every epoch the
/// validation Dice of both modalities is logged, and the parameters with the
/// best target-modality validation Dice are written to best.ckpt.
FitResult fit(const ModelConfig& model_config, const TrainConfig& config, const DatasetManifest& manifest,
              std::uint64_t seed, const FitOptions& options);

/// Source-only supervised baseline: source encoder + segmentation head
/// trained with Dice on annotated source samples. Selection uses source
/// validation Dice; no target sample is read.
FitResult fit_baseline(const ModelConfig& model_config, const TrainConfig& config, const DatasetManifest& manifest,
                       std::uint64_t seed, const FitOptions& options);

}  // namespace mgenseg
