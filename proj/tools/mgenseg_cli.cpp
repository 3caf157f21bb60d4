// mgenseg: dataset synthesis/ingestion, training, evaluation, experiment
// matrix and reporting.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mgenseg/config.hpp"
#include "mgenseg/data_ingest.hpp"
#include "mgenseg/dataset_io.hpp"
#include "mgenseg/evaluation.hpp"
#include "mgenseg/report.hpp"

#ifndef MGENSEG_VERSION
#define MGENSEG_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace mgenseg;

namespace {

constexpr int kExitInterrupted = 3;

struct Globals {
  std::string config_path;
  std::string out;
  std::string data;
  std::vector<std::uint64_t> seed;
  int seeds = 0;
  bool force = false;
  bool resume = false;
  int jobs = 1;
  bool quiet = false;
};

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Resolved config snapshot and run manifest for an output directory.
class RunManifest {
 public:
  RunManifest(std::string command, const Globals& g, const RunConfig* config, fs::path out)
      : command_(std::move(command)), config_path_(g.config_path), out_(std::move(out)), started_(iso_now()) {
    if (config) {
      hash_ = config_hash(*config);
      snapshot_ = to_ini(*config);
    }
  }

  void write() const {
    fs::create_directories(out_);
    if (!snapshot_.empty()) std::ofstream(out_ / "config.ini") << snapshot_;
    nlohmann::json j = {{"command", command_},   {"config_path", config_path_}, {"config_hash", hash_},
                        {"output_dir", out_.string()}, {"started", started_},      {"finished", iso_now()},
                        {"version", MGENSEG_VERSION}};
    std::ofstream(out_ / "run.json") << j.dump(2) << '\n';
  }

 private:
  std::string command_, config_path_, hash_, snapshot_;
  fs::path out_;
  std::string started_;
};

RunConfig require_config(const Globals& g) {
  if (g.config_path.empty()) throw ConfigError("--config is required");
  auto c = load_config(g.config_path);
  if (!g.seed.empty()) c.train.seeds = g.seed;
  if (g.seeds > 0) {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < g.seeds; ++i)
      s.push_back(i < static_cast<int>(c.train.seeds.size()) ? c.train.seeds[i]
                                                               : c.train.seeds.back() + (i - c.train.seeds.size() + 1));
    c.train.seeds = s;
  }
  return c;
}

/// --data beats MGENSEG_DATA_ROOT, which beats [data] root.
fs::path data_dir(const Globals& g, const RunConfig& c) {
  if (!g.data.empty()) return g.data;
  if (const char* env = std::getenv("MGENSEG_DATA_ROOT"); env && *env) return env;
  if (!c.data_root.empty()) return c.data_root;
  throw ConfigError("no dataset location: pass --data, set MGENSEG_DATA_ROOT or [data] root");
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

void guard_output(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw ConfigError("output " + out.string() + " exists and is not empty (use --force)");
    fs::remove_all(out);
  }
}

DatasetManifest load_checked(const fs::path& dir, const RunConfig& c) {
  auto loaded = load_dataset(dir);
  const auto expected = data_hash(c.data);
  if (loaded.data_hash != expected)
    throw ConfigError("dataset " + dir.string() + " was built with data hash " + loaded.data_hash +
                      " but the config expects " + expected);
  return loaded.manifest;
}

MatrixOptions matrix_options(const Globals& g, const fs::path& out) {
  MatrixOptions o;
  o.out_dir = out;
  o.jobs = std::max(1, g.jobs);
  o.verbose = !g.quiet;
  o.resume = g.resume;
  return o;
}

int cmd_synth(const Globals& g) {
  auto c = require_config(g);
  const fs::path out = g.out.empty() ? data_dir(g, c) : fs::path(g.out);
  guard_output(out, g.force);
  RunManifest run("synth", g, &c, out);
  auto manifest = build_dataset(c.data);
  save_dataset(manifest, out, data_hash(c.data));
  run.write();
  std::cout << "[mgenseg] synth wrote " << manifest.train.size() + manifest.val.size() + manifest.test.size()
            << " slices to " << out << std::endl;
  return 0;
}

int cmd_ingest(const Globals& g, const std::string& input, const std::string& source_seq,
               const std::string& target_seq) {
  auto c = require_config(g);
  const fs::path out = require_out(g);
  guard_output(out, g.force);
  RunManifest run("ingest", g, &c, out);
  auto subjects = discover_subjects(input);
  auto manifest = assign_modalities(subjects, source_seq, target_seq, c.data.seed, c.data.diseased_threshold);
  save_dataset(manifest, out, data_hash(c.data));
  run.write();
  std::cout << "[mgenseg] ingest wrote " << subjects.size() << " subjects to " << out << std::endl;
  return 0;
}

int cmd_train(const Globals& g, const std::string& ablation, int stop_after) {
  auto c = require_config(g);
  if (!ablation.empty()) c.experiment.ablation = parse_ablation(ablation);
  c.validate();
  const fs::path out = require_out(g);
  auto full = load_checked(data_dir(g, c), c);
  auto opts = matrix_options(g, out);
  opts.stop_after_epochs = stop_after;
  if (g.force) {
    for (auto seed : c.train.seeds) fs::remove_all(run_directory(out, config_hash(c), seed));
  } else if (!g.resume) {
    for (auto seed : c.train.seeds) {
      auto dir = run_directory(out, config_hash(c), seed);
      if (fs::exists(dir / kLastState) && !read_outcome(dir))
        throw ConfigError("unfinished run in " + dir.string() + " (use --resume or --force)");
    }
  }
  opts.resume = true;
  RunManifest run("train", g, &c, out);
  try {
    auto rec = run_matrix({{c, false}}, full, opts);
    run.write();
    std::cout << "[mgenseg] train " << rec.front().key.config_hash << " mean_dice=" << rec.front().mean
              << " std=" << rec.front().std << std::endl;
  } catch (const RunInterrupted& e) {
    run.write();
    std::cerr << "[mgenseg] " << e.what() << std::endl;
    return kExitInterrupted;
  }
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& partition,
             const std::string& modality, bool allow_train) {
  auto c = require_config(g);
  const auto part = parse_partition(partition);
  if (part == Partition::Train && !allow_train)
    throw ConfigError("evaluating on the training partition requires --allow-train");
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  auto full = load_checked(data_dir(g, c), c);
  const auto m = modality.empty() ? c.experiment.target : parse_modality(modality);
  auto stats = evaluate(checkpoint, full.partition(part), m, c.train.eval_threshold);
  nlohmann::json j = {{"checkpoint", checkpoint},
                      {"partition", partition},
                      {"modality", to_string(m)},
                      {"mean_dice", stats.mean},
                      {"n_slices", stats.per_slice.size()},
                      {"per_slice", stats.per_slice},
                      {"healthy_false_positive_area", stats.healthy_false_positive_area}};
  if (!g.out.empty()) {
    fs::create_directories(fs::path(g.out).parent_path().empty() ? "." : fs::path(g.out).parent_path());
    std::ofstream(g.out) << j.dump(2) << '\n';
  }
  std::cout << "[mgenseg] eval " << to_string(m) << " " << partition << " dice=" << stats.mean << std::endl;
  return 0;
}

int cmd_matrix(const Globals& g, bool pairs, bool sweep, bool ablations, bool baseline) {
  auto base = require_config(g);
  const fs::path out = require_out(g);
  auto full = load_checked(data_dir(g, base), base);
  std::vector<MatrixEntry> entries{{base, false}};
  if (pairs)
    for (auto [s, t] : modality_pairs()) {
      auto c = base;
      c.experiment.source = s;
      c.experiment.target = t;
      entries.push_back({c, false});
    }
  if (sweep)
    for (double f : deficit_fractions()) {
      auto c = base;
      c.experiment.source_fraction = f;
      entries.push_back({c, false});
    }
  if (ablations)
    for (auto a : {Ablation::NoImageLevel, Ablation::NoHealthyModTranslation, Ablation::NoAToP,
                   Ablation::UnsharedLatents}) {
      auto c = base;
      c.experiment.ablation = a;
      entries.push_back({c, false});
    }
  if (baseline) entries.push_back({base, true});
  auto opts = matrix_options(g, out);
  opts.resume = true;
  RunManifest run("matrix", g, &base, out);
  try {
    auto records = run_matrix(entries, full, opts);
    run.write();
    std::cout << "[mgenseg] matrix " << records.size() << " configs, results in " << out / "results.csv"
              << std::endl;
  } catch (const RunInterrupted& e) {
    std::cerr << "[mgenseg] " << e.what() << std::endl;
    return kExitInterrupted;
  }
  return 0;
}

int cmd_report(const Globals& g, const std::string& results) {
  const fs::path out = require_out(g);
  const fs::path csv = results.empty() ? out / "results.csv" : fs::path(results);
  if (!fs::exists(csv)) throw ConfigError("results file not found: " + csv.string());
  auto summary = emit_report(csv, out);
  std::cout << "[mgenseg] report " << summary.n_configs << " configs, " << summary.n_rows << " rows" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M-GenSeg: semi-supervised cross-modality tumor segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "INI configuration file");
  app.add_option("--out", g.out, "output directory (file for eval)");
  app.add_option("--data", g.data, "dataset directory (overrides MGENSEG_DATA_ROOT and [data] root)");
  app.add_option("--seed", g.seed, "explicit seed list, replaces [train] seeds")->delimiter(',');
  app.add_option("--seeds", g.seeds, "number of repetitions (first N configured seeds)")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.add_flag("--resume", g.resume, "continue interrupted runs");
  app.add_option("--jobs", g.jobs, "parallel training processes")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "suppress progress lines");
  app.set_version_flag("--version", MGENSEG_VERSION);

  auto* defaults = app.add_subcommand("defaults", "print the desk-scale configuration as INI");
  auto* synth = app.add_subcommand("synth", "build the synthetic bi-modal dataset");

  auto* ingest = app.add_subcommand("ingest", "build a dataset from NIfTI volumes");
  std::string input, source_seq = "t1", target_seq = "t2";
  ingest->add_option("--input", input, "directory with one sub-directory per subject")->required();
  ingest->add_option("--source-seq", source_seq, "sequence used as source modality");
  ingest->add_option("--target-seq", target_seq, "sequence used as target modality");

  std::string ablation;
  int stop_after = 0;
  auto* train = app.add_subcommand("train", "train M-GenSeg for every seed and evaluate on test");
  train->add_option("--ablation", ablation, "ablation tag");
  train->add_option("--stop-after-epochs", stop_after, "stop every seed after N epochs in this invocation");
  auto* ablate = app.add_subcommand("ablate", "train with an ablation tag");
  ablate->add_option("ablation", ablation, "ablation tag")->required();
  ablate->add_option("--stop-after-epochs", stop_after, "stop every seed after N epochs in this invocation");

  std::string checkpoint, partition = "test", modality;
  bool allow_train = false;
  auto* eval = app.add_subcommand("eval", "Dice of a checkpoint on a partition");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--partition", partition, "train, val or test");
  eval->add_option("--modality", modality, "S or T (default: experiment target)");
  eval->add_flag("--allow-train", allow_train, "permit evaluation on the training partition");

  bool pairs = false, sweep = false, ablations = false, baseline = false;
  auto* matrix = app.add_subcommand("matrix", "run an experiment matrix");
  matrix->add_flag("--pairs", pairs, "both ordered modality pairs");
  matrix->add_flag("--sweep", sweep, "source annotation deficit sweep");
  matrix->add_flag("--ablations", ablations, "all four ablations");
  matrix->add_flag("--baseline", baseline, "no-adaptation baseline");

  std::string results;
  auto* report = app.add_subcommand("report", "aggregate tables from a persisted results.csv");
  report->add_option("--results", results, "results.csv (default: <out>/results.csv)");

  CLI11_PARSE(app, argc, argv);
  torch::set_num_threads(1);
  try {
    if (*defaults) {
      std::cout << to_ini(default_run_config());
      return 0;
    }
    if (*synth) return cmd_synth(g);
    if (*ingest) return cmd_ingest(g, input, source_seq, target_seq);
    if (*train) return cmd_train(g, ablation, stop_after);
    if (*ablate) return cmd_train(g, ablation, stop_after);
    if (*eval) return cmd_eval(g, checkpoint, partition, modality, allow_train);
    if (*matrix) return cmd_matrix(g, pairs, sweep, ablations, baseline);
    if (*report) return cmd_report(g, results);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
