#pragma once

// Sentence latent: an L x d array of reals with a parallel special-token
// mask. The same container holds clean latents x0, noisy iterates x_t, and
// denoiser predictions.

#include "ladx/common.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ladx {

template <typename S>
struct LatentSeqT {
  MatT<S> values;                           // L x d
  std::vector<std::uint8_t> special_mask;   // size L; 1 at [CLS]/[SEP]/[PAD]/[MASK]

  LatentSeqT() = default;
  LatentSeqT(MatT<S> v, std::vector<std::uint8_t> mask)
      : values(std::move(v)), special_mask(std::move(mask)) {
    if (special_mask.size() != std::size_t(values.rows()))
      throw std::invalid_argument("LatentSeq: mask length does not match row count");
  }

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }

  bool all_finite() const { return values.allFinite(); }
};

using LatentSeq = LatentSeqT<float>;

}  // namespace ladx
