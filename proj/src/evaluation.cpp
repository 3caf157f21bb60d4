#include "mgenseg/evaluation.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mgenseg/report.hpp"

namespace mgenseg {

namespace fs = std::filesystem;

DiceStats evaluate(const fs::path& checkpoint, std::span<const SliceSample> samples, Modality modality,
                   double threshold) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  auto model = load_model(checkpoint);
  return evaluate_model(model, samples, modality, modality, threshold);
}

std::vector<ResultRecord> ResultRecord::aggregate(const std::vector<ResultRow>& rows) {
  std::vector<ResultRecord> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto it = index.find(r.config_hash);
    if (it == index.end()) {
      it = index.emplace(r.config_hash, out.size()).first;
      ResultRecord rec;
      rec.key = r;
      rec.key.seed = 0;
      rec.key.dice = 0.0;
      out.push_back(rec);
    }
    auto& rec = out[it->second];
    rec.seeds.push_back(r.seed);
    rec.dice.push_back(r.dice);
  }
  for (auto& rec : out) {
    const double n = static_cast<double>(rec.dice.size());
    double sum = 0.0;
    for (double d : rec.dice) sum += d;
    rec.mean = sum / n;
    double ss = 0.0;
    for (double d : rec.dice) ss += (d - rec.mean) * (d - rec.mean);
    rec.std = rec.dice.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

std::vector<ResultRow> ResultRecord::rows() const {
  std::vector<ResultRow> out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    ResultRow r = key;
    r.seed = seeds[i];
    r.dice = dice[i];
    out.push_back(r);
  }
  return out;
}

std::vector<std::pair<Modality, Modality>> modality_pairs() {
  std::vector<std::pair<Modality, Modality>> out;
  for (Modality s : {Modality::S, Modality::T})
    for (Modality t : {Modality::S, Modality::T})
      if (s != t) out.emplace_back(s, t);
  return out;
}

std::vector<double> deficit_fractions() { return {0.01, 0.1, 0.4, 0.7, 1.0}; }

DatasetManifest prepare_manifest(const DatasetManifest& full, const ExperimentConfig& experiment) {
  experiment.validate();
  auto m = mask_annotations(full, experiment.source_fraction, experiment.annotation_seed, experiment.source);
  return mask_annotations(m, experiment.target_fraction, experiment.annotation_seed, experiment.target);
}

fs::path run_directory(const fs::path& out_dir, const std::string& hash, std::uint64_t seed) {
  return out_dir / "runs" / hash / ("seed_" + std::to_string(seed));
}

std::string baseline_hash(const RunConfig& config) {
  RunConfig c = config;
  c.experiment.ablation = Ablation::None;
  c.experiment.target_fraction = 0.0;
  return fnv1a_hex(identity_text(c) + "\n" + kNoAdaptation);
}

namespace {

constexpr const char* kDone = "done.json";

void write_text_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_outcome(const SeedOutcome& o) {
  nlohmann::json j = {{"config_hash", o.config_hash},
                      {"seed", o.seed},
                      {"target_test_dice", o.target_test_dice},
                      {"source_test_dice", o.source_test_dice},
                      {"healthy_false_positive_area", o.healthy_false_positive_area},
                      {"best_epoch", o.best_epoch},
                      {"best_val_dice", o.best_val_dice},
                      {"samples_by_modality", o.samples_by_modality},
                      {"wall_seconds", o.wall_seconds}};
  write_text_atomic(o.run_dir / kDone, j.dump(2) + "\n");
}

struct Unit {
  RunConfig config;
  bool baseline;
  std::uint64_t seed;
};

std::string unit_hash(const Unit& u) { return u.baseline ? baseline_hash(u.config) : config_hash(u.config); }

void log(const MatrixOptions& o, const std::string& msg) {
  if (o.verbose) std::cout << "[mgenseg] " << msg << std::endl;
}

/// Trains one seed and persists its outcome.
void run_unit(const Unit& u, const DatasetManifest& full, const MatrixOptions& options) {
  const auto hash = unit_hash(u);
  const auto dir = run_directory(options.out_dir, hash, u.seed);
  if (read_outcome(dir)) return;
  if (!options.resume && fs::exists(dir / kLastState))
    throw ConfigError("run directory " + dir.string() + " holds an unfinished run; resume it or force a restart");
  fs::create_directories(dir);
  write_text_atomic(dir / "config.ini", to_ini(u.config));

  const auto started = std::chrono::steady_clock::now();
  auto resolved = apply_ablation(u.config.model, u.config.train, u.config.experiment);
  const auto manifest = prepare_manifest(full, u.config.experiment);
  const Modality target = u.config.experiment.target;
  const Modality source = u.config.experiment.source;

  FitOptions fo;
  fo.run_dir = dir;
  fo.config_hash = hash;
  fo.resume = options.resume;
  fo.verbose = options.verbose;
  fo.stop_after_epochs = options.stop_after_epochs;
  log(options, std::string(u.baseline ? "baseline " : "train ") + hash + " seed=" + std::to_string(u.seed));
  auto result = u.baseline ? fit_baseline(resolved.model, resolved.train, manifest, u.seed, fo)
                           : fit(resolved.model, resolved.train, manifest, u.seed, fo);
  if (!result.completed) {
    log(options, "stopped " + hash + " seed=" + std::to_string(u.seed) + " before completion");
    return;
  }

  auto model = load_model(result.best_checkpoint);
  const double thr = resolved.train.eval_threshold;
  // The baseline has no target segmenter; it segments target images with the
  // source head.
  auto target_stats = evaluate_model(model, manifest.test, target, u.baseline ? source : target, thr);
  auto source_stats = evaluate_model(model, manifest.test, source, source, thr);

  SeedOutcome o;
  o.config_hash = hash;
  o.seed = u.seed;
  o.target_test_dice = target_stats.mean;
  o.source_test_dice = source_stats.mean;
  o.healthy_false_positive_area = target_stats.healthy_false_positive_area;
  o.best_epoch = result.best_epoch;
  o.best_val_dice = result.best_val_dice;
  o.samples_by_modality = result.access.samples_by_modality;
  o.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  o.run_dir = dir;
  write_outcome(o);
  log(options, "done " + hash + " seed=" + std::to_string(u.seed) + " target_test_dice=" +
                   std::to_string(o.target_test_dice));
}

void run_units_parallel(const std::vector<Unit>& units, const DatasetManifest& full, const MatrixOptions& options) {
  std::vector<Unit> pending;
  for (const auto& u : units)
    if (!read_outcome(run_directory(options.out_dir, unit_hash(u), u.seed))) pending.push_back(u);
  std::size_t next = 0;
  int running = 0;
  int failures = 0;
  std::cout.flush();
  while (next < pending.size() || running > 0) {
    while (running < options.jobs && next < pending.size()) {
      const pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          torch::set_num_threads(1);
          run_unit(pending[next], full, options);
        } catch (const std::exception& e) {
          std::cerr << "[mgenseg] worker failed: " << e.what() << std::endl;
          code = 1;
        }
        std::cout.flush();
        _exit(code);
      }
      ++next;
      ++running;
    }
    int status = 0;
    if (wait(&status) > 0) {
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    }
  }
  if (failures > 0) throw std::runtime_error(std::to_string(failures) + " matrix worker(s) failed");
}

ResultRecord collect(const RunConfig& config, bool baseline, const MatrixOptions& options) {
  const auto hash = baseline ? baseline_hash(config) : config_hash(config);
  ResultRecord rec;
  rec.key.config_hash = hash;
  rec.key.source = to_string(config.experiment.source);
  rec.key.target = to_string(config.experiment.target);
  rec.key.source_fraction = config.experiment.source_fraction;
  rec.key.target_fraction = baseline ? 0.0 : config.experiment.target_fraction;
  rec.key.ablation = baseline ? kNoAdaptation : to_string(config.experiment.ablation);
  std::vector<ResultRow> rows;
  for (auto seed : config.train.seeds) {
    auto o = read_outcome(run_directory(options.out_dir, hash, seed));
    if (!o) throw RunInterrupted("no result yet for " + hash + " seed " + std::to_string(seed));
    ResultRow r = rec.key;
    r.seed = seed;
    r.dice = o->target_test_dice;
    rows.push_back(r);
  }
  return ResultRecord::aggregate(rows).front();
}

void render_config_figures(const RunConfig& config, const std::string& hash, const DatasetManifest& full,
                           const MatrixOptions& options) {
  const auto dir = options.out_dir / "figures" / hash;
  if (fs::exists(dir / "attention_ranges.csv")) return;
  const auto ckpt = run_directory(options.out_dir, hash, config.train.seeds.front()) / kBestCheckpoint;
  auto model = load_model(ckpt);
  try {
    render_figures(model, full.test, config.experiment.target, dir);
  } catch (const std::exception& e) {
    std::cerr << "[mgenseg] figure rendering failed for " << hash << ": " << e.what() << std::endl;
  }
}

ResultRecord run_family(const RunConfig& config, bool baseline, const DatasetManifest& full,
                        const MatrixOptions& options) {
  config.validate();
  std::vector<Unit> units;
  for (auto seed : config.train.seeds) units.push_back({config, baseline, seed});
  if (options.jobs > 1)
    run_units_parallel(units, full, options);
  else
    for (const auto& u : units) run_unit(u, full, options);
  for (auto seed : config.train.seeds)
    if (!read_outcome(run_directory(options.out_dir, baseline ? baseline_hash(config) : config_hash(config), seed)))
      throw RunInterrupted("run stopped before completion; rerun with resume to continue");
  if (options.figures && !baseline) render_config_figures(config, config_hash(config), full, options);
  return collect(config, baseline, options);
}

}  // namespace

std::optional<SeedOutcome> read_outcome(const fs::path& run_dir) {
  const auto path = run_dir / kDone;
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  auto j = nlohmann::json::parse(in);
  SeedOutcome o;
  o.config_hash = j.at("config_hash");
  o.seed = j.at("seed");
  o.target_test_dice = j.at("target_test_dice");
  o.source_test_dice = j.at("source_test_dice");
  o.healthy_false_positive_area = j.at("healthy_false_positive_area");
  o.best_epoch = j.at("best_epoch");
  o.best_val_dice = j.at("best_val_dice");
  o.samples_by_modality = j.at("samples_by_modality");
  o.wall_seconds = j.value("wall_seconds", 0.0);
  o.run_dir = run_dir;
  return o;
}

ResultRecord run_experiment(const RunConfig& config, const DatasetManifest& full, const MatrixOptions& options) {
  return run_family(config, false, full, options);
}

ResultRecord baseline_no_adaptation(const RunConfig& config, const DatasetManifest& full,
                                    const MatrixOptions& options) {
  if (config.experiment.source_fraction <= 0.0)
    throw ConfigError("no-adaptation baseline needs source annotations (source_fraction > 0)");
  return run_family(config, true, full, options);
}

std::vector<ResultRecord> run_matrix(const std::vector<MatrixEntry>& entries, const DatasetManifest& full,
                                     const MatrixOptions& options) {
  fs::create_directories(options.out_dir / "configs");
  // Hash registry: a hash seen before must describe the same experiment.
  std::map<std::string, std::string> seen;
  for (const auto& e : entries) {
    const auto hash = e.baseline ? baseline_hash(e.config) : config_hash(e.config);
    const auto text = identity_text(e.config) + (e.baseline ? std::string("\n") + kNoAdaptation : "");
    const auto reg = options.out_dir / "configs" / (hash + ".ini");
    std::string previous;
    if (auto it = seen.find(hash); it != seen.end()) {
      previous = it->second;
    } else if (fs::exists(reg)) {
      std::ifstream in(reg);
      std::stringstream buf;
      buf << in.rdbuf();
      previous = buf.str();
    }
    if (!previous.empty() && previous != text)
      throw ConfigError("config hash collision: " + hash + " already names a different experiment");
    if (previous.empty()) write_text_atomic(reg, text);
    seen[hash] = text;
  }

  if (options.jobs > 1) {
    std::vector<Unit> units;
    for (const auto& e : entries)
      for (auto seed : e.config.train.seeds) units.push_back({e.config, e.baseline, seed});
    run_units_parallel(units, full, options);
  }

  std::vector<ResultRecord> records;
  std::vector<std::string> hashes;
  for (const auto& e : entries) {
    auto rec = e.baseline ? baseline_no_adaptation(e.config, full, options) : run_experiment(e.config, full, options);
    if (std::find(hashes.begin(), hashes.end(), rec.key.config_hash) != hashes.end()) continue;
    hashes.push_back(rec.key.config_hash);
    records.push_back(rec);
    std::vector<ResultRow> rows;
    for (const auto& r : records)
      for (const auto& row : r.rows()) rows.push_back(row);
    write_results_csv(options.out_dir / "results.csv", rows);
    write_aggregate_csv(options.out_dir / "aggregate.csv", records);
  }
  return records;
}

}  // namespace mgenseg
