#pragma once

#include <filesystem>
#include <string>

#include "mgenseg/data_synth.hpp"
#include "mgenseg/experiment.hpp"
#include "mgenseg/model.hpp"
#include "mgenseg/training.hpp"

namespace mgenseg {

/// Everything a command needs, read from an INI file with the sections
/// [data], [model], [train] and [experiment]. Every key is required and
/// unknown keys are rejected.
struct RunConfig {
  SynthConfig data;
  /// Dataset directory; empty means "derive from MGENSEG_DATA_ROOT or --data".
  std::string data_root;
  ModelConfig model;
  TrainConfig train;
  ExperimentConfig experiment;

  void validate() const;
};

/// Defaults used by the bundled desk-scale configuration.
RunConfig default_run_config();

/// Throws ConfigError naming the offending key or line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical INI text. parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// 64-bit FNV-1a of `bytes`, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// Canonical text of the hashed fields (everything except the seed list and
/// the data location).
std::string identity_text(const RunConfig& config);

/// Identity of an experiment: hash of the canonical text without the seed
/// list and the data location.
std::string config_hash(const RunConfig& config);

/// Hash of the dataset-generating parameters only.
std::string data_hash(const SynthConfig& config);

}  // namespace mgenseg
