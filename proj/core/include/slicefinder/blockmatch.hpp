#pragma once

// Multi-resolution block-matching registration.
//
// At every pyramid level each reference block is searched exhaustively, on
// the integer pixel lattice of the floating image, around the position the
// current transform predicts for it, maximizing the correlation coefficient.
// A least-trimmed-squares fit of the resulting correspondences replaces the
// transform. Because predictions fall at varying sub-pixel offsets from the
// lattice, the integer rounding of individual matches averages out in the
// fit instead of stalling once the residual motion is below one pixel.

#include <optional>
#include <span>
#include <vector>

#include "slicefinder/imgvol.hpp"
#include "slicefinder/xform.hpp"

namespace slicefinder {

struct BlockMatchParams {
  int pyramid_levels = 3;
  int block_size = 8;
  int block_stride = 8;
  int search_radius = 4;
  double variance_keep_fraction = 0.5;
  double lts_keep_fraction = 0.5;
  int iterations_per_level = 4;

  // Throws InvalidArgument on the first violated constraint.
  void validate() const;
};

struct RegistrationResult {
  LinearTransform2D transform;
  std::vector<int> correspondences_used;  // per level, coarsest first
  bool converged = false;
  double residual_rms = 0.0;
  double first_residual_rms = 0.0;  // after the first finest-level iteration
};

// Smallest side allowed at the coarsest pyramid level.
inline constexpr int kMinPyramidSide = 16;

// Level 0 is the input; level k+1 is the 2x2 average of the valid pixels of
// level k (floor(dim / 2) per side, a coarse pixel being valid when any of
// its four sources is). Coarse pixel i is centered on fine coordinate
// 2i + 0.5. Throws TooManyLevels when the coarsest side drops below
// `min_side`; registration uses kMinPyramidSide.
std::vector<Image2D> build_pyramid(const Image2D &img, int levels, int min_side = 1);

// Correspondences are emitted in block-index order.
std::vector<Correspondence> match_blocks(const Image2D &ref, const Image2D &flt,
                                         const BlockMatchParams &params);

// Least trimmed squares: refit on the best ceil(keep * n) residuals until the
// kept set is stable (at most 10 rounds).
LinearTransform2D estimate_transform_lts(std::span<const Correspondence> corrs,
                                         TransformKind kind, double keep);

// Returns T such that warp_image(flt, T) aligns with ref. An affine request
// without `init` starts from the rigid result.
RegistrationResult register_images(const Image2D &ref, const Image2D &flt,
                                   TransformKind kind,
                                   const BlockMatchParams &params = {},
                                   std::optional<LinearTransform2D> init = {});

}  // namespace slicefinder
