#include "mgenseg/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mgenseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "# mgenseg dataset manifest v1";
constexpr const char* kColumns = "partition\tmodality\tsubject_id\tslice\tdomain\tannotated\timage\tmask";

struct PgmHeader {
  int width = 0, height = 0, maxval = 0;
};

PgmHeader read_pgm_header(std::istream& in, const fs::path& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw ConfigError("not a binary PGM: " + path.string());
  PgmHeader h;
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int v = 0;
    in >> v;
    return v;
  };
  h.width = next_int();
  h.height = next_int();
  h.maxval = next_int();
  in.get();
  if (!in || h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535)
    throw ConfigError("malformed PGM header: " + path.string());
  return h;
}

std::string sample_stem(const SliceSample& s) {
  std::ostringstream o;
  o << std::setw(6) << std::setfill('0') << s.subject_id << '_' << std::setw(4) << std::setfill('0') << s.slice_index;
  return o.str();
}

}  // namespace

void write_pgm16(const fs::path& path, const torch::Tensor& image) {
  auto img = image.to(torch::kFloat32).contiguous();
  const auto h = img.size(0), w = img.size(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n65535\n";
  const float* p = img.data_ptr<float>();
  std::string buf(static_cast<std::size_t>(h * w * 2), '\0');
  for (std::int64_t i = 0; i < h * w; ++i) {
    const auto v = static_cast<unsigned>(std::lround(std::clamp(p[i], 0.0f, 1.0f) * 65535.0f));
    buf[2 * i] = static_cast<char>(v >> 8);
    buf[2 * i + 1] = static_cast<char>(v & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

torch::Tensor read_pgm16(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  const auto h = read_pgm_header(in, path);
  const int bytes = h.maxval > 255 ? 2 : 1;
  std::string buf(static_cast<std::size_t>(h.width) * h.height * bytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw ConfigError("truncated PGM: " + path.string());
  auto out = torch::empty({h.height, h.width}, torch::kFloat32);
  float* p = out.data_ptr<float>();
  for (std::size_t i = 0; i < static_cast<std::size_t>(h.width) * h.height; ++i) {
    unsigned v = bytes == 2 ? (static_cast<unsigned char>(buf[2 * i]) << 8) | static_cast<unsigned char>(buf[2 * i + 1])
                            : static_cast<unsigned char>(buf[i]);
    p[i] = static_cast<float>(v) / static_cast<float>(h.maxval);
  }
  return out;
}

void write_mask_pgm(const fs::path& path, const torch::Tensor& mask) {
  auto m = mask.gt(0.5).to(torch::kUInt8).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << m.size(1) << ' ' << m.size(0) << "\n1\n";
  out.write(reinterpret_cast<const char*>(m.data_ptr<std::uint8_t>()), m.numel());
}

torch::Tensor read_mask_pgm(const fs::path& path) { return read_pgm16(path).gt(0.5).to(torch::kFloat32); }

void save_dataset(const DatasetManifest& manifest, const fs::path& root, const std::string& data_hash) {
  fs::create_directories(root);
  std::ofstream out(root / kManifestFile);
  if (!out) throw std::runtime_error("cannot write manifest in " + root.string());
  out << kMagic << '\n';
  out << "# data_hash=" << data_hash << '\n';
  out << "# annotation_fraction_S=" << manifest.annotation_fraction[0]
      << " annotation_fraction_T=" << manifest.annotation_fraction[1] << '\n';
  out << kColumns << '\n';
  for (Partition p : {Partition::Train, Partition::Val, Partition::Test}) {
    for (const auto& s : manifest.partition(p)) {
      const std::string dir = to_string(s.modality) + "_" + to_string(p);
      fs::create_directories(root / dir);
      const std::string stem = sample_stem(s);
      const std::string image_rel = dir + "/" + stem + ".pgm";
      std::string mask_rel = "-";
      write_pgm16(root / image_rel, s.image);
      if (s.has_mask()) {
        mask_rel = dir + "/" + stem + "_mask.pgm";
        write_mask_pgm(root / mask_rel, s.mask);
      }
      out << to_string(p) << '\t' << to_string(s.modality) << '\t' << s.subject_id << '\t' << s.slice_index << '\t'
          << to_string(s.domain) << '\t' << (s.annotated ? 1 : 0) << '\t' << image_rel << '\t' << mask_rel << '\n';
    }
  }
}

std::string read_dataset_hash(const fs::path& root) {
  std::ifstream in(root / kManifestFile);
  if (!in) throw ConfigError("no dataset manifest in " + root.string());
  std::string line;
  std::getline(in, line);
  if (line != kMagic) throw ConfigError("unrecognised manifest header in " + root.string());
  std::getline(in, line);
  const std::string key = "# data_hash=";
  if (line.rfind(key, 0) != 0) throw ConfigError("manifest lacks data_hash in " + root.string());
  return line.substr(key.size());
}

LoadedDataset load_dataset(const fs::path& root) {
  LoadedDataset result;
  result.data_hash = read_dataset_hash(root);
  std::ifstream in(root / kManifestFile);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string kv;
      while (fields >> kv) {
        for (int m = 0; m < 2; ++m) {
          const std::string key = std::string("annotation_fraction_") + (m == 0 ? "S" : "T") + "=";
          if (kv.rfind(key, 0) == 0) result.manifest.annotation_fraction[m] = std::stod(kv.substr(key.size()));
        }
      }
      continue;
    }
    if (line == kColumns) continue;
    std::istringstream row(line);
    std::string part, modality, domain, image_rel, mask_rel;
    SliceSample s;
    int annotated = 0;
    row >> part >> modality >> s.subject_id >> s.slice_index >> domain >> annotated >> image_rel >> mask_rel;
    if (!row) throw ConfigError("malformed manifest line " + std::to_string(line_no) + " in " + root.string());
    s.modality = parse_modality(modality);
    s.domain = parse_domain(domain);
    s.annotated = annotated != 0;
    s.image = read_pgm16(root / image_rel);
    if (mask_rel != "-") s.mask = read_mask_pgm(root / mask_rel);
    result.manifest.partition(parse_partition(part)).push_back(std::move(s));
  }
  return result;
}

}  // namespace mgenseg
