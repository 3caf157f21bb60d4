#pragma once

#include <filesystem>
#include <string>

#include "mgenseg/data_synth.hpp"

namespace mgenseg {

inline constexpr const char* kManifestFile = "manifest.tsv";

/// 16-bit binary PGM for images in [0,1] (lossless at 1/65535 resolution).
void write_pgm16(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_pgm16(const std::filesystem::path& path);

/// 8-bit binary PGM for {0,1} masks.
void write_mask_pgm(const std::filesystem::path& path, const torch::Tensor& mask);
torch::Tensor read_mask_pgm(const std::filesystem::path& path);

/// Writes one directory per (modality, partition), e.g. S_train/, holding
/// image and mask files, plus manifest.tsv at the root. `data_hash`
/// identifies the configuration that produced the data.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& root, const std::string& data_hash);

struct LoadedDataset {
  DatasetManifest manifest;
  std::string data_hash;
};

LoadedDataset load_dataset(const std::filesystem::path& root);

/// Reads only the header hash of a manifest.
std::string read_dataset_hash(const std::filesystem::path& root);

}  // namespace mgenseg
