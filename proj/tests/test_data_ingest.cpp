#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "mgenseg/data_ingest.hpp"

using namespace mgenseg;
namespace fs = std::filesystem;

namespace {

/// [Z, Y, X] volume with a box-shaped brain and a tumour box on some slices.
std::pair<torch::Tensor, torch::Tensor> toy_subject(int z, int y, int x, double scale) {
  auto vol = torch::zeros({z, y, x});
  vol.slice(1, 2, y - 2).slice(2, 2, x - 2).fill_(50.0 * scale);
  vol.slice(1, 4, y - 4).slice(2, 4, x - 4).fill_(100.0 * scale);
  auto seg = torch::zeros({z, y, x}, torch::kInt16);
  seg.slice(0, 1, 3).slice(1, 5, 8).slice(2, 5, 8).fill_(2);
  seg.slice(0, 2, 3).slice(1, 8, 9).slice(2, 5, 6).fill_(4);
  vol.slice(0, 1, 3).slice(1, 5, 8).slice(2, 5, 8).fill_(200.0 * scale);
  return {vol, seg};
}

}  // namespace

TEST(Hemispheres, EvenAndOddWidthsTile) {
  auto even = torch::rand({3, 4, 240});
  auto [l, r] = split_hemispheres(even);
  EXPECT_EQ(l.size(2), 120);
  EXPECT_EQ(r.size(2), 120);
  EXPECT_TRUE(torch::equal(torch::cat({l, r}, 2), even));
  auto odd = torch::rand({3, 4, 241});
  auto [lo, ro] = split_hemispheres(odd);
  EXPECT_EQ(lo.size(2), 121);
  EXPECT_EQ(ro.size(2), 120);
  EXPECT_TRUE(torch::equal(torch::cat({lo, ro}, 2), odd));
  EXPECT_THROW(split_hemispheres(torch::rand({2, 2, 1})), std::invalid_argument);
}

TEST(Normalize, NonzeroMinMax) {
  auto v = torch::tensor({0.0f, 10.0f, 20.0f, 30.0f}).reshape({1, 1, 4});
  auto n = normalize_volume(v);
  EXPECT_EQ(n[0][0][0].item<float>(), 0.0f);
  EXPECT_EQ(n[0][0][3].item<float>(), 1.0f);
  EXPECT_NEAR(n[0][0][2].item<float>(), 0.5f, 1e-6);
  EXPECT_GT(n[0][0][1].item<float>(), 0.0f);
  EXPECT_THROW(normalize_volume(torch::zeros({2, 2, 2})), std::invalid_argument);
}

TEST(ExtractSlices, DomainsFromThresholdRule) {
  auto [vol, seg] = toy_subject(5, 16, 16, 1.0);
  auto slices = extract_slices(vol, seg, 0.01, Modality::T, 7);
  ASSERT_EQ(slices.size(), 5u);
  for (const auto& s : slices) {
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.modality, Modality::T);
    EXPECT_EQ(s.subject_id, 7);
    const bool tumour = s.slice_index == 1 || s.slice_index == 2;
    EXPECT_EQ(s.domain, tumour ? Domain::P : Domain::A);
  }
  // Every tumour class is folded into one binary mask.
  EXPECT_EQ(slices[2].mask.sum().item<double>(), 10.0);
  EXPECT_EQ(slices[1].image.max().item<float>(), 1.0f);
}

TEST(ExtractSlices, SubThresholdSlicesAndEmptySlicesDropped) {
  auto [vol, seg] = toy_subject(4, 16, 16, 1.0);
  seg.zero_();
  seg[0][5][5] = 1;  // 1 of 144 pixels: below 1%
  vol[3].zero_();
  auto slices = extract_slices(vol, seg, 0.01);
  ASSERT_EQ(slices.size(), 2u);
  EXPECT_EQ(slices[0].slice_index, 1);
  EXPECT_THROW(extract_slices(vol, seg.slice(0, 0, 3), 0.01), std::invalid_argument);
}

TEST(IngestSubject, BothHemispheresInterleaved) {
  auto [vol, seg] = toy_subject(3, 16, 16, 1.0);
  auto slices = ingest_subject(vol, seg, 0.01, Modality::S, 2);
  std::set<std::int64_t> idx;
  for (const auto& s : slices) {
    idx.insert(s.slice_index);
    EXPECT_EQ(s.image.size(1), 8);
  }
  EXPECT_EQ(idx.size(), slices.size());
  EXPECT_TRUE(idx.count(0) && idx.count(1));
}

TEST(Nifti, RoundTripPlainAndGzip) {
  auto dir = fs::temp_directory_path() / "mgenseg_nifti";
  fs::remove_all(dir);
  fs::create_directories(dir);
  torch::manual_seed(2);
  auto v = torch::rand({4, 5, 6});
  write_nifti(dir / "a.nii", v);
  write_nifti(dir / "a.nii.gz", v);
  EXPECT_TRUE(torch::equal(read_nifti(dir / "a.nii"), v));
  EXPECT_TRUE(torch::equal(read_nifti(dir / "a.nii.gz"), v));
  EXPECT_THROW(read_nifti(dir / "missing.nii"), ConfigError);
  EXPECT_THROW(write_nifti(dir / "b.nii", torch::rand({2, 2})), std::invalid_argument);
}

TEST(Assignment, SplitAndOneModalityPerSubject) {
  std::vector<std::int64_t> ids(369);
  for (int i = 0; i < 369; ++i) ids[i] = i;
  auto plan = plan_assignment(ids, 4);
  ASSERT_EQ(plan.size(), 369u);
  std::array<int, 3> per_partition{0, 0, 0};
  std::array<int, 2> per_modality{0, 0};
  std::set<std::int64_t> seen;
  for (const auto& a : plan) {
    ++per_partition[static_cast<int>(a.partition)];
    ++per_modality[static_cast<int>(a.modality)];
    EXPECT_TRUE(seen.insert(a.subject_id).second);
  }
  EXPECT_EQ(per_partition, (std::array<int, 3>{295, 37, 37}));
  EXPECT_LE(std::abs(per_modality[0] - per_modality[1]), 3);
  auto again = plan_assignment(ids, 4);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    EXPECT_EQ(plan[i].modality, again[i].modality);
    EXPECT_EQ(plan[i].partition, again[i].partition);
  }
}

TEST(Assignment, InMemoryRecordsNoSubjectInBothModalities) {
  std::vector<VolumeRecord> records;
  for (int i = 0; i < 20; ++i) {
    auto [t1, seg] = toy_subject(3, 16, 16, 1.0);
    auto [t2, _] = toy_subject(3, 16, 16, 3.0);
    records.push_back({{{"t1", t1}, {"t2", t2}}, seg, i});
  }
  auto m = assign_modalities(records, "t1", "t2", 5);
  std::map<std::int64_t, std::set<int>> mods;
  for (Partition p : {Partition::Train, Partition::Val, Partition::Test})
    for (const auto& s : m.partition(p)) mods[s.subject_id].insert(static_cast<int>(s.modality));
  EXPECT_EQ(mods.size(), 20u);
  for (const auto& [id, set] : mods) EXPECT_EQ(set.size(), 1u);
  EXPECT_THROW(assign_modalities(records, "t1", "flair", 5), ConfigError);
  EXPECT_THROW(assign_modalities(records, "t1", "t1", 5), ConfigError);
}

TEST(Assignment, DirectoryTreeAndMissingFiles) {
  auto root = fs::temp_directory_path() / "mgenseg_brats";
  fs::remove_all(root);
  for (int i = 0; i < 10; ++i) {
    const std::string name = "case_" + std::to_string(i);
    fs::create_directories(root / name);
    auto [t1, seg] = toy_subject(3, 16, 16, 1.0);
    write_nifti(root / name / (name + "_t1.nii.gz"), t1);
    write_nifti(root / name / (name + "_t2.nii.gz"), t1 * 2.0);
    write_nifti(root / name / (name + "_seg.nii.gz"), seg.to(torch::kFloat32));
  }
  auto subjects = discover_subjects(root);
  ASSERT_EQ(subjects.size(), 10u);
  EXPECT_EQ(subjects[0].name, "case_0");
  auto m = assign_modalities(subjects, "t1", "t2", 1);
  EXPECT_GT(m.train.size(), 0u);
  for (const auto& s : m.train) EXPECT_NO_THROW(s.validate());
  fs::remove(root / "case_3" / "case_3_t2.nii.gz");
  EXPECT_THROW(assign_modalities(discover_subjects(root), "t1", "t2", 1), ConfigError);
  EXPECT_THROW(discover_subjects(root / "nope"), ConfigError);
}
