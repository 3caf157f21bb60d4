#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgenseg/data_synth.hpp"

namespace mgenseg {

/// Reads a NIfTI-1 volume (.nii or .nii.gz) as a float32 [Z, Y, X] tensor,
/// applying scl_slope/scl_inter when set.
torch::Tensor read_nifti(const std::filesystem::path& path);

/// Writes a float32 NIfTI-1 volume from a [Z, Y, X] tensor. A ".gz" suffix
/// selects gzip compression.
void write_nifti(const std::filesystem::path& path, const torch::Tensor& volume);

/// One subject's aligned volumes, indexed [Z, Y, X].
struct VolumeRecord {
  std::map<std::string, torch::Tensor> sequences;
  torch::Tensor segmentation;
  std::int64_t subject_id = 0;

  void validate() const;
};

/// On-disk location of one subject's files.
struct SubjectFiles {
  std::int64_t subject_id = 0;
  std::string name;
  std::map<std::string, std::filesystem::path> sequences;
  std::filesystem::path segmentation;
};

/// Splits along X (the sagittal axis). With odd width the middle column goes
/// to the left half.
std::pair<torch::Tensor, torch::Tensor> split_hemispheres(const torch::Tensor& volume);

/// Min-max rescale of the nonzero voxels to [0, 1]. Zero voxels stay zero and
/// nonzero voxels stay strictly positive.
torch::Tensor normalize_volume(const torch::Tensor& volume);

/// Axial slices labelled with the diseased-fraction rule. The mask is the
/// union of all nonzero segmentation classes. Slices without foreground and
/// sub-threshold lesion slices are dropped. Intensities are rescaled per
/// input volume. Throws std::invalid_argument on an all-zero volume.
std::vector<SliceSample> extract_slices(const torch::Tensor& volume, const torch::Tensor& segmentation,
                                        double threshold, Modality modality = Modality::S,
                                        std::int64_t subject_id = 0, std::int64_t slice_offset = 0,
                                        std::int64_t slice_stride = 1);

/// Both hemispheres of one subject. Slice indices interleave halves:
/// 2*z for the left half and 2*z+1 for the right.
std::vector<SliceSample> ingest_subject(const torch::Tensor& volume, const torch::Tensor& segmentation,
                                        double threshold, Modality modality, std::int64_t subject_id);

/// Scans a BraTS-style tree: one sub-directory per subject holding
/// <name>_<sequence>.nii[.gz] and <name>_seg.nii[.gz]. Subjects are sorted by
/// directory name and numbered from 0.
std::vector<SubjectFiles> discover_subjects(const std::filesystem::path& root);

struct ModalityAssignment {
  std::int64_t subject_id = 0;
  Modality modality = Modality::S;
  Partition partition = Partition::Train;
};

/// Shuffles subjects, splits them 80/10/10 and gives each subject exactly one
/// modality, alternating within every partition.
std::vector<ModalityAssignment> plan_assignment(std::vector<std::int64_t> subject_ids, std::uint64_t seed);

/// Loads the assigned sequence of every subject and builds the manifest.
/// Throws ConfigError when a subject lacks either sequence or its
/// segmentation.
DatasetManifest assign_modalities(const std::vector<SubjectFiles>& subjects, const std::string& source,
                                  const std::string& target, std::uint64_t seed, double threshold = 0.01);

/// In-memory variant over already loaded records.
DatasetManifest assign_modalities(const std::vector<VolumeRecord>& records, const std::string& source,
                                  const std::string& target, std::uint64_t seed, double threshold = 0.01);

}  // namespace mgenseg
