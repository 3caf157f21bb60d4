#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace mgenseg {

/// Imaging modality. S is the annotated source, T the target.
enum class Modality : int { S = 0, T = 1 };

/// Weak image-level label: absence or presence of a lesion.
enum class Domain : int { A = 0, P = 1 };

enum class Partition : int { Train = 0, Val = 1, Test = 2 };

inline constexpr Modality other(Modality m) { return m == Modality::S ? Modality::T : Modality::S; }

std::string to_string(Modality m);
std::string to_string(Domain d);
std::string to_string(Partition p);

Modality parse_modality(std::string_view s);
Domain parse_domain(std::string_view s);
Partition parse_partition(std::string_view s);

/// One 2D slice. `image` is a float32 [H, W] tensor in [0, 1]; `mask` when
/// defined is a float32 [H, W] tensor with values in {0, 1}.
struct SliceSample {
  torch::Tensor image;
  Modality modality = Modality::S;
  Domain domain = Domain::A;
  torch::Tensor mask;
  bool annotated = false;
  std::int64_t subject_id = 0;
  std::int64_t slice_index = 0;

  bool has_mask() const { return mask.defined(); }

  /// Brain foreground: strictly positive pixels.
  torch::Tensor foreground() const { return image.gt(0.0).to(torch::kFloat32); }

  /// Throws std::logic_error when an invariant is broken.
  void validate() const;
};

/// Raised for malformed configuration or input files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mgenseg
