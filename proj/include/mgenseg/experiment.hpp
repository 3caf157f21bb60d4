#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgenseg/model.hpp"
#include "mgenseg/training.hpp"
#include "mgenseg/types.hpp"

namespace mgenseg {

enum class Ablation { None, NoImageLevel, NoHealthyModTranslation, NoAToP, UnsharedLatents };

std::string to_string(Ablation a);
/// Throws ConfigError on an unknown tag.
Ablation parse_ablation(const std::string& s);

struct ExperimentConfig {
  Modality source = Modality::S;
  Modality target = Modality::T;
  double source_fraction = 1.0;
  double target_fraction = 0.0;
  Ablation ablation = Ablation::None;
  /// Seed of the annotation subset draw.
  std::uint64_t annotation_seed = 0;

  void validate() const;
};

struct ResolvedRun {
  ModelConfig model;
  TrainConfig train;
};

/// Rewires the model and training configs for one ablation and points
/// checkpoint selection at the experiment's target modality.
ResolvedRun apply_ablation(const ModelConfig& model, const TrainConfig& train, const ExperimentConfig& experiment);

}  // namespace mgenseg
