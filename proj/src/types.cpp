#include "mgenseg/types.hpp"

namespace mgenseg {

std::string to_string(Modality m) { return m == Modality::S ? "S" : "T"; }

std::string to_string(Domain d) { return d == Domain::A ? "A" : "P"; }

std::string to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  if (s == "S" || s == "s") return Modality::S;
  if (s == "T" || s == "t") return Modality::T;
  throw std::invalid_argument("unknown modality tag '" + std::string(s) + "'");
}

Domain parse_domain(std::string_view s) {
  if (s == "A") return Domain::A;
  if (s == "P") return Domain::P;
  throw std::invalid_argument("unknown domain tag '" + std::string(s) + "'");
}

Partition parse_partition(std::string_view s) {
  if (s == "train") return Partition::Train;
  if (s == "val") return Partition::Val;
  if (s == "test") return Partition::Test;
  throw std::invalid_argument("unknown partition '" + std::string(s) + "'");
}

void SliceSample::validate() const {
  if (!image.defined() || image.dim() != 2) throw std::logic_error("sample image must be a 2D tensor");
  if (image.min().item<double>() < 0.0 || image.max().item<double>() > 1.0)
    throw std::logic_error("sample image outside [0,1]");
  if (annotated && !has_mask()) throw std::logic_error("annotated sample without mask");
  if (has_mask()) {
    if (mask.sizes() != image.sizes()) throw std::logic_error("mask shape differs from image shape");
    if (!(mask.eq(0) | mask.eq(1)).all().item<bool>()) throw std::logic_error("mask is not binary");
  }
}

}  // namespace mgenseg
