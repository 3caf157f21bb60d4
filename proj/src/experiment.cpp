#include "mgenseg/experiment.hpp"

namespace mgenseg {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoImageLevel: return "no_image_level";
    case Ablation::NoHealthyModTranslation: return "no_healthy_mod_translation";
    case Ablation::NoAToP: return "no_A_to_P";
    case Ablation::UnsharedLatents: return "unshared_latents";
  }
  throw std::invalid_argument("bad ablation");
}

Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::None, Ablation::NoImageLevel, Ablation::NoHealthyModTranslation, Ablation::NoAToP,
                 Ablation::UnsharedLatents})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation tag '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (source == target) throw ConfigError("source and target modality must differ");
  if (!(source_fraction >= 0.0 && source_fraction <= 1.0)) throw ConfigError("source_fraction must be in [0,1]");
  if (!(target_fraction >= 0.0 && target_fraction <= 1.0)) throw ConfigError("target_fraction must be in [0,1]");
}

ResolvedRun apply_ablation(const ModelConfig& model, const TrainConfig& train, const ExperimentConfig& experiment) {
  experiment.validate();
  ResolvedRun r{model, train};
  r.train.target = experiment.target;
  switch (experiment.ablation) {
    case Ablation::None:
      break;
    case Ablation::NoImageLevel:
      r.train.weights.adv_gen = 0.0;
      r.train.weights.rec_gen = 0.0;
      r.train.weights.lat_gen = 0.0;
      break;
    case Ablation::NoHealthyModTranslation:
      r.train.healthy_mod_translation = false;
      break;
    case Ablation::NoAToP:
      r.train.absence_to_presence = false;
      break;
    case Ablation::UnsharedLatents:
      r.model.unshared_latents = true;
      break;
  }
  return r;
}

}  // namespace mgenseg
