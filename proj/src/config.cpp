#include "mgenseg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mgenseg {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string fmt_curve(const std::vector<std::pair<double, double>>& curve) {
  std::string out;
  for (const auto& [x, y] : curve) {
    if (!out.empty()) out += ",";
    out += fmt(x) + ":" + fmt(y);
  }
  return out;
}

std::vector<std::pair<double, double>> parse_curve(const std::string& key, const std::string& s) {
  std::vector<std::pair<double, double>> out;
  for (const auto& point : split(s, ',')) {
    auto parts = split(point, ':');
    if (parts.size() != 2) throw ConfigError("key '" + key + "': expected x:y points, got '" + point + "'");
    out.emplace_back(parse_double(key, parts[0]), parse_double(key, parts[1]));
  }
  return out;
}

std::string fmt_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (auto s : seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split(s, ',')) {
    auto v = parse_int(key, item);
    if (v < 0) throw ConfigError("key '" + key + "': seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  /// Part of the experiment identity hash.
  bool hashed;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MG_DOUBLE(sec, name, expr)                                                              \
  Field {                                                                                       \
    sec, name, true, [](const RunConfig& c) { return fmt(static_cast<double>(c.expr)); },      \
        [](RunConfig& c, const std::string& v) { c.expr = parse_double(sec "." name, v); }     \
  }
#define MG_INT(sec, name, expr)                                                                 \
  Field {                                                                                       \
    sec, name, true, [](const RunConfig& c) { return std::to_string(c.expr); },                 \
        [](RunConfig& c, const std::string& v) {                                                \
          c.expr = static_cast<decltype(c.expr)>(parse_int(sec "." name, v));                   \
        }                                                                                       \
  }
#define MG_BOOL(sec, name, expr)                                                                \
  Field {                                                                                       \
    sec, name, true, [](const RunConfig& c) { return fmt(static_cast<bool>(c.expr)); },         \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(sec "." name, v); }        \
  }
#define MG_STYLE(m, label)                                                                                     \
  Field{"data", "style_" label "_curve", true,                                                                 \
        [](const RunConfig& c) { return fmt_curve(c.data.styles[m].curve); },                                  \
        [](RunConfig& c, const std::string& v) { c.data.styles[m].curve = parse_curve("data.style_" label "_curve", v); }}, \
      MG_DOUBLE("data", "style_" label "_bias", data.styles[m].bias_amplitude),                                \
      MG_DOUBLE("data", "style_" label "_noise", data.styles[m].noise_sigma)

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data", "root", false, [](const RunConfig& c) { return c.data_root; },
            [](RunConfig& c, const std::string& v) { c.data_root = v; }},
      MG_INT("data", "image_size", data.image_size),
      MG_INT("data", "n_subjects_per_modality", data.n_subjects_per_modality),
      MG_INT("data", "slices_per_subject", data.slices_per_subject),
      MG_DOUBLE("data", "lesion_probability", data.lesion_probability),
      MG_DOUBLE("data", "lesion_radius_min", data.lesion_radius_min),
      MG_DOUBLE("data", "lesion_radius_max", data.lesion_radius_max),
      MG_DOUBLE("data", "lesion_intensity", data.lesion_intensity),
      MG_DOUBLE("data", "diseased_threshold", data.diseased_threshold),
      MG_INT("data", "seed", data.seed),
      MG_STYLE(0, "S"),
      MG_STYLE(1, "T"),

      MG_INT("model", "base_channels", model.base_channels),
      MG_INT("model", "max_channels", model.max_channels),
      MG_INT("model", "n_down", model.n_down),
      MG_INT("model", "common_channels", model.common_channels),
      MG_INT("model", "unique_channels", model.unique_channels),
      MG_INT("model", "disc_channels", model.disc_channels),
      MG_INT("model", "disc_downsamplings", model.disc_downsamplings),

      MG_INT("train", "epochs", train.epochs),
      MG_INT("train", "batch_size", train.batch_size),
      MG_DOUBLE("train", "learning_rate", train.learning_rate),
      MG_DOUBLE("train", "beta1", train.beta1),
      MG_DOUBLE("train", "beta2", train.beta2),
      Field{"train", "seeds", false, [](const RunConfig& c) { return fmt_seeds(c.train.seeds); },
            [](RunConfig& c, const std::string& v) { c.train.seeds = parse_seeds("train.seeds", v); }},
      MG_DOUBLE("train", "lambda_seg", train.weights.seg),
      MG_DOUBLE("train", "lambda_adv_mod", train.weights.adv_mod),
      MG_DOUBLE("train", "lambda_cyc_mod", train.weights.cyc_mod),
      MG_DOUBLE("train", "lambda_adv_gen", train.weights.adv_gen),
      MG_DOUBLE("train", "lambda_rec_gen", train.weights.rec_gen),
      MG_DOUBLE("train", "lambda_lat_gen", train.weights.lat_gen),
      MG_BOOL("train", "augment_flip", train.augment.flip),
      MG_BOOL("train", "augment_rotate", train.augment.rotate),
      MG_BOOL("train", "augment_intensity", train.augment.intensity),
      MG_DOUBLE("train", "max_rotation_deg", train.augment.max_rotation_deg),
      MG_DOUBLE("train", "intensity_range", train.augment.intensity_range),
      MG_INT("train", "max_steps_per_epoch", train.max_steps_per_epoch),
      MG_DOUBLE("train", "dice_smooth", train.dice_smooth),
      MG_DOUBLE("train", "eval_threshold", train.eval_threshold),

      Field{"experiment", "source", true, [](const RunConfig& c) { return to_string(c.experiment.source); },
            [](RunConfig& c, const std::string& v) { c.experiment.source = parse_modality(v); }},
      Field{"experiment", "target", true, [](const RunConfig& c) { return to_string(c.experiment.target); },
            [](RunConfig& c, const std::string& v) { c.experiment.target = parse_modality(v); }},
      MG_DOUBLE("experiment", "source_fraction", experiment.source_fraction),
      MG_DOUBLE("experiment", "target_fraction", experiment.target_fraction),
      Field{"experiment", "ablation", true, [](const RunConfig& c) { return to_string(c.experiment.ablation); },
            [](RunConfig& c, const std::string& v) { c.experiment.ablation = parse_ablation(v); }},
      MG_INT("experiment", "annotation_seed", experiment.annotation_seed),
  };
  return table;
}

#undef MG_DOUBLE
#undef MG_INT
#undef MG_BOOL
#undef MG_STYLE

std::string render(const RunConfig& config, bool hashed_only) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (hashed_only && !f.hashed) continue;
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  experiment.validate();
}

RunConfig default_run_config() {
  RunConfig c;
  c.data = SynthConfig::desk_defaults();
  c.model.max_channels = 32;
  c.model.disc_channels = 32;
  c.model.disc_downsamplings = 2;
  c.train.epochs = 8;
  c.train.batch_size = 8;
  c.train.learning_rate = 3e-4;
  return c;
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.message() + " at line " + std::to_string(e.line()));
  }

  std::set<std::string> known_sections;
  for (const auto& f : fields()) known_sections.insert(f.section);
  for (const auto& [section, body] : tree) {
    if (!known_sections.count(section)) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      bool found = false;
      for (const auto& f : fields()) found = found || (f.section == section && f.key == key);
      if (!found) throw ConfigError("unknown config key '" + section + "." + key + "'");
    }
  }

  RunConfig config = default_run_config();
  for (const auto& f : fields()) {
    auto value = tree.get_optional<std::string>(pt::ptree::path_type(f.section + "." + f.key, '.'));
    if (!value) throw ConfigError("missing config key '" + f.section + "." + f.key + "'");
    f.set(config, *value);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const RunConfig& config) { return render(config, false); }

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string identity_text(const RunConfig& config) { return render(config, true); }

std::string config_hash(const RunConfig& config) { return fnv1a_hex(identity_text(config)); }

std::string data_hash(const SynthConfig& config) {
  RunConfig c;
  c.data = config;
  std::string text;
  for (const auto& f : fields())
    if (f.section == "data" && f.hashed) text += f.key + "=" + f.get(c) + "\n";
  return fnv1a_hex(text);
}

}  // namespace mgenseg
