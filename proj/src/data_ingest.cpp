#include "mgenseg/data_ingest.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "mgenseg/rng.hpp"

namespace mgenseg {

namespace fs = std::filesystem;

namespace {

constexpr int kHeaderSize = 348;

template <typename T>
T load(const std::vector<char>& buf, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store(std::vector<char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

std::vector<char> read_all(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw ConfigError("cannot open " + path.string());
  std::vector<char> out;
  char chunk[1 << 16];
  int n = 0;
  while ((n = gzread(f, chunk, sizeof(chunk))) > 0) out.insert(out.end(), chunk, chunk + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw ConfigError("read error in " + path.string());
  return out;
}

template <typename T>
void decode(const std::vector<char>& buf, std::size_t off, bool swap, float* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(load<T>(buf, off + i * sizeof(T), swap));
}

std::optional<std::pair<std::string, fs::path>> classify(const fs::path& file, const std::string& stem_prefix) {
  std::string name = file.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e = ext;
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      std::string base = name.substr(0, name.size() - e.size());
      if (base.rfind(stem_prefix + "_", 0) != 0) return std::nullopt;
      std::string tag = base.substr(stem_prefix.size() + 1);
      std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char c) { return std::tolower(c); });
      return std::make_pair(tag, file);
    }
  }
  return std::nullopt;
}

}  // namespace

torch::Tensor read_nifti(const fs::path& path) {
  const auto buf = read_all(path);
  if (buf.size() < kHeaderSize) throw ConfigError("truncated NIfTI header: " + path.string());
  bool swap = false;
  if (load<std::int32_t>(buf, 0, false) != kHeaderSize) {
    if (load<std::int32_t>(buf, 0, true) != kHeaderSize) throw ConfigError("not a NIfTI-1 file: " + path.string());
    swap = true;
  }
  const auto ndim = load<std::int16_t>(buf, 40, swap);
  if (ndim < 3) throw ConfigError("NIfTI volume has fewer than 3 dimensions: " + path.string());
  const auto nx = load<std::int16_t>(buf, 42, swap);
  const auto ny = load<std::int16_t>(buf, 44, swap);
  const auto nz = load<std::int16_t>(buf, 46, swap);
  const auto datatype = load<std::int16_t>(buf, 70, swap);
  const auto vox_offset = static_cast<std::size_t>(load<float>(buf, 108, swap));
  const float slope = load<float>(buf, 112, swap);
  const float inter = load<float>(buf, 116, swap);

  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  std::size_t bytes = 0;
  switch (datatype) {
    case 2: case 256: bytes = 1; break;
    case 4: case 512: bytes = 2; break;
    case 8: case 16: case 768: bytes = 4; break;
    case 64: bytes = 8; break;
    default: throw ConfigError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }
  if (buf.size() < vox_offset + n * bytes) throw ConfigError("truncated NIfTI data: " + path.string());

  auto out = torch::empty({nz, ny, nx}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  switch (datatype) {
    case 2: decode<std::uint8_t>(buf, vox_offset, swap, dst, n); break;
    case 256: decode<std::int8_t>(buf, vox_offset, swap, dst, n); break;
    case 4: decode<std::int16_t>(buf, vox_offset, swap, dst, n); break;
    case 512: decode<std::uint16_t>(buf, vox_offset, swap, dst, n); break;
    case 8: decode<std::int32_t>(buf, vox_offset, swap, dst, n); break;
    case 768: decode<std::uint32_t>(buf, vox_offset, swap, dst, n); break;
    case 16: decode<float>(buf, vox_offset, swap, dst, n); break;
    case 64: decode<double>(buf, vox_offset, swap, dst, n); break;
  }
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f)) out = out * slope + inter;
  return out;
}

void write_nifti(const fs::path& path, const torch::Tensor& volume) {
  if (volume.dim() != 3) throw std::invalid_argument("write_nifti expects a [Z,Y,X] tensor");
  auto v = volume.to(torch::kFloat32).contiguous();
  std::vector<char> header(352, '\0');
  store<std::int32_t>(header, 0, kHeaderSize);
  store<std::int16_t>(header, 40, 3);
  store<std::int16_t>(header, 42, static_cast<std::int16_t>(v.size(2)));
  store<std::int16_t>(header, 44, static_cast<std::int16_t>(v.size(1)));
  store<std::int16_t>(header, 46, static_cast<std::int16_t>(v.size(0)));
  for (int i = 4; i < 8; ++i) store<std::int16_t>(header, 40 + 2 * i, 1);
  store<std::int16_t>(header, 70, 16);
  store<std::int16_t>(header, 72, 32);
  for (int i = 0; i < 4; ++i) store<float>(header, 76 + 4 * i, 1.0f);
  store<float>(header, 108, 352.0f);
  store<float>(header, 112, 1.0f);
  std::memcpy(header.data() + 344, "n+1\0", 4);

  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.c_str(), gz ? "wb6" : "wbT");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  bool ok = gzwrite(f, header.data(), static_cast<unsigned>(header.size())) == static_cast<int>(header.size());
  const auto data_bytes = static_cast<unsigned>(v.numel() * sizeof(float));
  ok = ok && gzwrite(f, v.data_ptr<float>(), data_bytes) == static_cast<int>(data_bytes);
  gzclose(f);
  if (!ok) throw std::runtime_error("write error in " + path.string());
}

void VolumeRecord::validate() const {
  if (!segmentation.defined() || segmentation.dim() != 3) throw ConfigError("segmentation must be a 3D volume");
  for (const auto& [name, vol] : sequences)
    if (vol.sizes() != segmentation.sizes())
      throw ConfigError("sequence '" + name + "' shape differs from segmentation for subject " +
                        std::to_string(subject_id));
}

std::pair<torch::Tensor, torch::Tensor> split_hemispheres(const torch::Tensor& volume) {
  const auto width = volume.size(-1);
  if (width < 2) throw std::invalid_argument("split_hemispheres: width must be >= 2");
  const auto left = (width + 1) / 2;
  return {volume.narrow(-1, 0, left).contiguous(), volume.narrow(-1, left, width - left).contiguous()};
}

torch::Tensor normalize_volume(const torch::Tensor& volume) {
  auto v = volume.to(torch::kFloat32);
  auto nz = v.ne(0);
  if (!nz.any().item<bool>()) throw std::invalid_argument("normalize_volume: all-zero volume");
  auto vals = v.masked_select(nz);
  const float lo = vals.min().item<float>(), hi = vals.max().item<float>();
  auto scaled = hi > lo ? (v - lo) / (hi - lo) : torch::ones_like(v);
  scaled = scaled.clamp(1.0f / 1024.0f, 1.0f);
  return torch::where(nz, scaled, torch::zeros_like(v));
}

std::vector<SliceSample> extract_slices(const torch::Tensor& volume, const torch::Tensor& segmentation,
                                        double threshold, Modality modality, std::int64_t subject_id,
                                        std::int64_t slice_offset, std::int64_t slice_stride) {
  if (volume.sizes() != segmentation.sizes()) throw std::invalid_argument("extract_slices: misaligned volumes");
  auto norm = normalize_volume(volume);
  auto tumour = segmentation.gt(0).to(torch::kFloat32);
  std::vector<SliceSample> out;
  for (std::int64_t z = 0; z < volume.size(0); ++z) {
    auto img = norm[z].contiguous();
    auto fg = img.gt(0);
    if (!fg.any().item<bool>()) continue;
    auto mask = (tumour[z] * fg).contiguous();
    auto domain = label_domain(mask, fg, threshold);
    if (!domain) continue;
    SliceSample s;
    s.image = img;
    s.mask = mask;
    s.domain = *domain;
    s.modality = modality;
    s.annotated = true;
    s.subject_id = subject_id;
    s.slice_index = slice_offset + z * slice_stride;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SliceSample> ingest_subject(const torch::Tensor& volume, const torch::Tensor& segmentation,
                                        double threshold, Modality modality, std::int64_t subject_id) {
  auto [vl, vr] = split_hemispheres(volume);
  auto [sl, sr] = split_hemispheres(segmentation);
  std::vector<SliceSample> out;
  for (int half = 0; half < 2; ++half) {
    const auto& v = half == 0 ? vl : vr;
    const auto& s = half == 0 ? sl : sr;
    if (!v.ne(0).any().item<bool>()) continue;
    auto slices = extract_slices(v, s, threshold, modality, subject_id, half, 2);
    for (auto& x : slices) out.push_back(std::move(x));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.slice_index < b.slice_index; });
  return out;
}

std::vector<SubjectFiles> discover_subjects(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("ingest root is not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<SubjectFiles> out;
  for (const auto& d : dirs) {
    SubjectFiles s;
    s.subject_id = static_cast<std::int64_t>(out.size());
    s.name = d.filename().string();
    for (const auto& e : fs::directory_iterator(d)) {
      auto tag = classify(e.path(), s.name);
      if (!tag) continue;
      if (tag->first == "seg")
        s.segmentation = tag->second;
      else
        s.sequences[tag->first] = tag->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ModalityAssignment> plan_assignment(std::vector<std::int64_t> subject_ids, std::uint64_t seed) {
  std::sort(subject_ids.begin(), subject_ids.end());
  std::mt19937_64 rng(derive_seed(seed, {0x494e47ULL}));
  std::shuffle(subject_ids.begin(), subject_ids.end(), rng);
  const auto sizes = split_sizes(static_cast<int>(subject_ids.size()));
  std::vector<ModalityAssignment> out;
  std::size_t k = 0;
  for (int p = 0; p < 3; ++p)
    for (int i = 0; i < sizes[p]; ++i, ++k)
      out.push_back({subject_ids[k], i % 2 == 0 ? Modality::S : Modality::T, static_cast<Partition>(p)});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
  return out;
}

namespace {

template <typename LoadFn>
DatasetManifest assemble(const std::vector<std::int64_t>& ids, std::uint64_t seed, double threshold, LoadFn&& load) {
  DatasetManifest manifest;
  for (const auto& a : plan_assignment(ids, seed)) {
    auto [volume, seg] = load(a.subject_id, a.modality);
    auto slices = ingest_subject(volume, seg, threshold, a.modality, a.subject_id);
    auto& part = manifest.partition(a.partition);
    for (auto& s : slices) part.push_back(std::move(s));
  }
  return manifest;
}

}  // namespace

DatasetManifest assign_modalities(const std::vector<SubjectFiles>& subjects, const std::string& source,
                                  const std::string& target, std::uint64_t seed, double threshold) {
  if (source == target) throw ConfigError("source and target sequences must differ");
  std::map<std::int64_t, const SubjectFiles*> by_id;
  std::vector<std::int64_t> ids;
  for (const auto& s : subjects) {
    for (const auto& seq : {source, target})
      if (!s.sequences.count(seq)) throw ConfigError("subject " + s.name + " lacks sequence file '" + seq + "'");
    if (s.segmentation.empty()) throw ConfigError("subject " + s.name + " lacks a segmentation file");
    by_id[s.subject_id] = &s;
    ids.push_back(s.subject_id);
  }
  return assemble(ids, seed, threshold, [&](std::int64_t id, Modality m) {
    const auto* s = by_id.at(id);
    auto vol = read_nifti(s->sequences.at(m == Modality::S ? source : target));
    auto seg = read_nifti(s->segmentation);
    if (vol.sizes() != seg.sizes()) throw ConfigError("subject " + s->name + ": volume/segmentation shape mismatch");
    return std::make_pair(vol, seg);
  });
}

DatasetManifest assign_modalities(const std::vector<VolumeRecord>& records, const std::string& source,
                                  const std::string& target, std::uint64_t seed, double threshold) {
  if (source == target) throw ConfigError("source and target sequences must differ");
  std::map<std::int64_t, const VolumeRecord*> by_id;
  std::vector<std::int64_t> ids;
  for (const auto& r : records) {
    r.validate();
    for (const auto& seq : {source, target})
      if (!r.sequences.count(seq))
        throw ConfigError("subject " + std::to_string(r.subject_id) + " lacks sequence '" + seq + "'");
    by_id[r.subject_id] = &r;
    ids.push_back(r.subject_id);
  }
  return assemble(ids, seed, threshold, [&](std::int64_t id, Modality m) {
    const auto* r = by_id.at(id);
    return std::make_pair(r->sequences.at(m == Modality::S ? source : target), r->segmentation);
  });
}

}  // namespace mgenseg
