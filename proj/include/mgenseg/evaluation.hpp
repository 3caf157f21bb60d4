#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgenseg/config.hpp"
#include "mgenseg/metrics.hpp"

namespace mgenseg {

/// Loads `checkpoint` and scores the diseased slices of `modality` in
/// `samples` with that modality's segmenter.
DiceStats evaluate(const std::filesystem::path& checkpoint, std::span<const SliceSample> samples, Modality modality,
                   double threshold = 0.5);

/// One line of results.csv.
struct ResultRow {
  std::string config_hash;
  std::string source;
  std::string target;
  double source_fraction = 0.0;
  double target_fraction = 0.0;
  std::string ablation;
  std::uint64_t seed = 0;
  double dice = 0.0;
};

/// Per-config aggregate over its seeds (sample standard deviation).
struct ResultRecord {
  ResultRow key;  // seed and dice unused
  std::vector<std::uint64_t> seeds;
  std::vector<double> dice;
  double mean = 0.0;
  double std = 0.0;

  /// Groups rows by config hash, keeping first-appearance order.
  static std::vector<ResultRecord> aggregate(const std::vector<ResultRow>& rows);
  std::vector<ResultRow> rows() const;
};

inline constexpr const char* kNoAdaptation = "no_adaptation";

/// Both ordered (source, target) pairs of the two modalities.
std::vector<std::pair<Modality, Modality>> modality_pairs();

/// Source annotation fractions of the deficit sweep.
std::vector<double> deficit_fractions();

/// Applies the experiment's annotation fractions to a fully annotated
/// manifest.
DatasetManifest prepare_manifest(const DatasetManifest& full, const ExperimentConfig& experiment);

struct MatrixOptions {
  std::filesystem::path out_dir;
  bool verbose = true;
  /// Parallel worker processes (1 = in-process).
  int jobs = 1;
  /// Render panels and attention maps for each completed config.
  bool figures = true;
  /// Continue unfinished seeds from their last state. When false an
  /// unfinished run directory is an error.
  bool resume = true;
  /// Stop each seed after this many epochs in this invocation (0 = no limit).
  int stop_after_epochs = 0;
};

/// Thrown when a run stopped early on request and has no result yet.
struct RunInterrupted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// What a finished (config, seed) run persisted in its run directory.
struct SeedOutcome {
  std::string config_hash;
  std::uint64_t seed = 0;
  double target_test_dice = 0.0;
  double source_test_dice = 0.0;
  double healthy_false_positive_area = 0.0;
  int best_epoch = -1;
  double best_val_dice = 0.0;
  std::array<std::size_t, 2> samples_by_modality{0, 0};
  /// Wall time of the invocation that finished the run, training plus test evaluation.
  double wall_seconds = 0.0;
  std::filesystem::path run_dir;
};

/// Run directory of one (config hash, seed).
std::filesystem::path run_directory(const std::filesystem::path& out_dir, const std::string& hash, std::uint64_t seed);

/// Trains and evaluates every seed of `config` (M-GenSeg, with the
/// configured ablation), reusing finished seeds and resuming interrupted ones.
ResultRecord run_experiment(const RunConfig& config, const DatasetManifest& full, const MatrixOptions& options);

/// Source-only baseline under the same seed protocol. Its hash is derived
/// from the config hash and its ablation label is "no_adaptation".
ResultRecord baseline_no_adaptation(const RunConfig& config, const DatasetManifest& full,
                                    const MatrixOptions& options);

std::string baseline_hash(const RunConfig& config);

/// Reads done.json of a finished seed; nullopt when the run is not finished.
std::optional<SeedOutcome> read_outcome(const std::filesystem::path& run_dir);

struct MatrixEntry {
  RunConfig config;
  bool baseline = false;
};

/// Runs every entry and rewrites results.csv / aggregate.csv in out_dir after
/// each one. Throws ConfigError when two different configs share a hash.
std::vector<ResultRecord> run_matrix(const std::vector<MatrixEntry>& entries, const DatasetManifest& full,
                                     const MatrixOptions& options);

}  // namespace mgenseg
