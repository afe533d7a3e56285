#include "slicefinder/blockmatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "slicefinder/error.hpp"
#include "slicefinder/metrics.hpp"

namespace slicefinder {

void BlockMatchParams::validate() const {
  auto fail = [](const std::string &what) {
    throw Error(ErrorCode::InvalidArgument, "block matching: " + what);
  };
  if (pyramid_levels < 1) fail("pyramid_levels must be >= 1");
  if (block_size < 4) fail("block_size must be >= 4");
  if (block_stride < 1) fail("block_stride must be >= 1");
  if (search_radius < 1) fail("search_radius must be >= 1");
  if (!(variance_keep_fraction > 0.0 && variance_keep_fraction <= 1.0))
    fail("variance_keep_fraction must be in (0, 1]");
  if (!(lts_keep_fraction > 0.0 && lts_keep_fraction <= 1.0))
    fail("lts_keep_fraction must be in (0, 1]");
  if (iterations_per_level < 1) fail("iterations_per_level must be >= 1");
}

std::vector<Image2D> build_pyramid(const Image2D &img, int levels, int min_side) {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "levels must be >= 1");
  int w = img.width();
  int h = img.height();
  for (int k = 1; k < levels; ++k) {
    w /= 2;
    h /= 2;
  }
  if (w < std::max(1, min_side) || h < std::max(1, min_side))
    throw Error(ErrorCode::TooManyLevels,
                std::to_string(levels) + " levels shrink a " + std::to_string(img.width()) +
                    "x" + std::to_string(img.height()) + " image below " +
                    std::to_string(std::max(1, min_side)) + " px");

  std::vector<Image2D> pyramid;
  pyramid.reserve(static_cast<std::size_t>(levels));
  pyramid.push_back(img);
  for (int k = 1; k < levels; ++k) {
    const Image2D &fine = pyramid.back();
    Image2D coarse(fine.width() / 2, fine.height() / 2, fine.spacing_um() * 2.0);
    for (int y = 0; y < coarse.height(); ++y) {
      for (int x = 0; x < coarse.width(); ++x) {
        double sum = 0.0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int fx = 2 * x + dx;
            const int fy = 2 * y + dy;
            if (!fine.valid(fx, fy)) continue;
            sum += fine.at(fx, fy);
            ++n;
          }
        }
        coarse.at(x, y) = n > 0 ? sum / n : 0.0;
        coarse.set_valid(x, y, n > 0);
      }
    }
    pyramid.push_back(std::move(coarse));
  }
  return pyramid;
}

namespace {

struct Block {
  int index;
  int x0, y0;
  double variance;
};

void gather(const Image2D &img, int x0, int y0, int size, std::vector<double> &values,
            std::vector<std::uint8_t> &mask) {
  values.resize(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
  mask.resize(values.size());
  std::size_t k = 0;
  for (int y = y0; y < y0 + size; ++y) {
    const std::size_t row = img.index(x0, y);
    for (int x = 0; x < size; ++x, ++k) {
      values[k] = img.data()[row + static_cast<std::size_t>(x)];
      mask[k] = img.mask()[row + static_cast<std::size_t>(x)];
    }
  }
}

// Blocks with at most half of their pixels invalid and non-zero variance.
std::vector<Block> candidate_blocks(const Image2D &ref, const BlockMatchParams &params) {
  const int bs = params.block_size;
  std::vector<Block> blocks;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  int index = 0;
  for (int y0 = 0; y0 + bs <= ref.height(); y0 += params.block_stride) {
    for (int x0 = 0; x0 + bs <= ref.width(); x0 += params.block_stride, ++index) {
      gather(ref, x0, y0, bs, values, mask);
      std::size_t n = 0;
      double sum = 0.0;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        sum += values[i];
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
      }
      // Exact constancy test; the sum of squares of a constant block can be
      // a rounding residue.
      if (2 * n < values.size() || n < 2 || lo == hi) continue;
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) ss += (values[i] - mean) * (values[i] - mean);
      }
      if (ss == 0.0) continue;
      blocks.push_back({index, x0, y0, ss / static_cast<double>(n)});
    }
  }
  return blocks;
}

}  // namespace

namespace {

// Searches each kept reference block on the integer lattice of `flt`, centered
// on the position predicted by `predict` (ref -> flt) rounded to the nearest
// pixel. With the identity predictor this is the plain block search.
std::vector<Correspondence> match_blocks_predicted(const Image2D &ref, const Image2D &flt,
                                                   const LinearTransform2D &predict,
                                                   const BlockMatchParams &params) {
  std::vector<Block> blocks = candidate_blocks(ref, params);
  const auto keep = std::min(
      blocks.size(),
      static_cast<std::size_t>(std::ceil(params.variance_keep_fraction *
                                         static_cast<double>(blocks.size()))));
  std::stable_sort(blocks.begin(), blocks.end(),
                   [](const Block &a, const Block &b) { return a.variance > b.variance; });
  blocks.resize(keep);
  std::sort(blocks.begin(), blocks.end(),
            [](const Block &a, const Block &b) { return a.index < b.index; });

  const int bs = params.block_size;
  const int r = params.search_radius;
  const double half = (bs - 1) / 2.0;
  const std::size_t min_covalid = static_cast<std::size_t>(bs) * static_cast<std::size_t>(bs) / 2;

  std::vector<Correspondence> out;
  std::vector<double> ref_values, flt_values;
  std::vector<std::uint8_t> ref_mask, flt_mask;
  for (const Block &b : blocks) {
    gather(ref, b.x0, b.y0, bs, ref_values, ref_mask);
    const Point2 center{b.x0 + half, b.y0 + half};
    const Point2 p = predict.apply(center);
    const double qx = std::round(p.x - half);
    const double qy = std::round(p.y - half);
    if (!(std::abs(qx) < 1e6 && std::abs(qy) < 1e6)) continue;
    const int x0 = static_cast<int>(qx);
    const int y0 = static_cast<int>(qy);

    bool found = false;
    double best_cc = 0.0;
    int best_dx = 0, best_dy = 0;
    for (int dy = -r; dy <= r; ++dy) {
      const int fy = y0 + dy;
      if (fy < 0 || fy + bs > flt.height()) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int fx = x0 + dx;
        if (fx < 0 || fx + bs > flt.width()) continue;
        gather(flt, fx, fy, bs, flt_values, flt_mask);
        std::size_t covalid = 0;
        for (std::size_t i = 0; i < ref_mask.size(); ++i)
          covalid += (ref_mask[i] && flt_mask[i]) ? 1 : 0;
        if (covalid < min_covalid) continue;
        const auto cc = try_correlation_coefficient(ref_values, ref_mask, flt_values, flt_mask);
        if (!cc) continue;
        // Scan order is lexicographic in (dy, dx), so an equal score only wins
        // with a strictly smaller displacement.
        const bool better = !found || *cc > best_cc ||
                            (*cc == best_cc &&
                             dx * dx + dy * dy < best_dx * best_dx + best_dy * best_dy);
        if (better) {
          found = true;
          best_cc = *cc;
          best_dx = dx;
          best_dy = dy;
        }
      }
    }
    if (!found) continue;
    out.push_back({center, {x0 + best_dx + half, y0 + best_dy + half}, std::max(0.0, best_cc)});
  }
  if (out.empty())
    throw Error(ErrorCode::NoValidBlocks, "no block could be matched");
  return out;
}

}  // namespace

std::vector<Correspondence> match_blocks(const Image2D &ref, const Image2D &flt,
                                         const BlockMatchParams &params) {
  params.validate();
  if (ref.width() != flt.width() || ref.height() != flt.height())
    throw Error(ErrorCode::DimMismatch, "block matching needs equal image dims");
  return match_blocks_predicted(ref, flt, LinearTransform2D::identity(), params);
}

namespace {

struct LtsFit {
  LinearTransform2D transform;
  double rms = 0.0;
  std::size_t kept = 0;
};

LinearTransform2D fit_model(std::span<const Correspondence> corrs, TransformKind kind) {
  return kind == TransformKind::Rigid ? rigid_from_correspondences(corrs)
                                      : affine_from_correspondences(corrs);
}

double residual(const LinearTransform2D &T, const Correspondence &c) {
  const Point2 p = T.apply(c.ref_point);
  return std::hypot(p.x - c.flt_point.x, p.y - c.flt_point.y);
}

LtsFit lts_fit(std::span<const Correspondence> input, TransformKind kind, double keep) {
  if (!(keep > 0.0 && keep <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "LTS keep fraction must be in (0, 1]");
  std::vector<Correspondence> corrs;
  corrs.reserve(input.size());
  for (const auto &c : input)
    if (c.weight > 0.0) corrs.push_back(c);
  const std::size_t min_n = kind == TransformKind::Rigid ? 2 : 3;
  if (corrs.size() < min_n)
    throw Error(ErrorCode::DegenerateConfiguration,
                "need " + std::to_string(min_n) + " weighted correspondences, got " +
                    std::to_string(corrs.size()));

  const std::size_t n = corrs.size();
  const std::size_t keep_n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(keep * static_cast<double>(n))), min_n, n);

  LinearTransform2D fit = fit_model(corrs, kind);
  std::vector<std::size_t> order(n);
  std::vector<double> res(n);
  std::vector<std::size_t> kept, previous(n);
  std::iota(previous.begin(), previous.end(), std::size_t{0});
  std::vector<Correspondence> subset;
  for (int round = 0; round < 10; ++round) {
    for (std::size_t i = 0; i < n; ++i) res[i] = residual(fit, corrs[i]);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return res[a] < res[b]; });
    kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep_n));
    std::sort(kept.begin(), kept.end());
    if (kept == previous) break;
    subset.clear();
    for (std::size_t i : kept) subset.push_back(corrs[i]);
    try {
      fit = fit_model(subset, kind);
    } catch (const Error &e) {
      // Tied residuals can select a collinear subset; keep the last well-posed fit.
      if (e.code() != ErrorCode::DegenerateConfiguration) throw;
      break;
    }
    previous = kept;
  }

  double ss = 0.0;
  for (std::size_t i : previous) {
    const double r = residual(fit, corrs[i]);
    ss += r * r;
  }
  return {fit, std::sqrt(ss / static_cast<double>(previous.size())), previous.size()};
}

// Pixel-center relation between pyramid levels: fine = 2 * coarse + 0.5.
LinearTransform2D to_finer(const LinearTransform2D &T) {
  const auto &m = T.matrix();
  const Point2 t = T.translation();
  const Point2 t_fine{2.0 * t.x + 0.5 * (1.0 - (m[0] + m[1])),
                      2.0 * t.y + 0.5 * (1.0 - (m[2] + m[3]))};
  return LinearTransform2D::from_matrix(T.kind(), m, t_fine);
}

LinearTransform2D to_coarser(const LinearTransform2D &T) {
  const auto &m = T.matrix();
  const Point2 t = T.translation();
  const Point2 t_coarse{(t.x - 0.5 * (1.0 - (m[0] + m[1]))) / 2.0,
                        (t.y - 0.5 * (1.0 - (m[2] + m[3]))) / 2.0};
  return LinearTransform2D::from_matrix(T.kind(), m, t_coarse);
}

// Largest displacement of the image corners under T.
double max_corner_shift(const LinearTransform2D &T, int w, int h) {
  double worst = 0.0;
  for (const Point2 c : {Point2{0, 0}, Point2{w - 1.0, 0}, Point2{0, h - 1.0},
                         Point2{w - 1.0, h - 1.0}}) {
    const Point2 p = T.apply(c);
    worst = std::max(worst, std::hypot(p.x - c.x, p.y - c.y));
  }
  return worst;
}

constexpr double kConvergedShift = 0.01;
// Below this many correspondences a coarse level is skipped.
constexpr std::size_t kMinCoarseCorrespondences = 8;

}  // namespace

LinearTransform2D estimate_transform_lts(std::span<const Correspondence> corrs,
                                         TransformKind kind, double keep) {
  return lts_fit(corrs, kind, keep).transform;
}

RegistrationResult register_images(const Image2D &ref, const Image2D &flt,
                                   TransformKind kind, const BlockMatchParams &params,
                                   std::optional<LinearTransform2D> init) {
  params.validate();
  if (ref.width() != flt.width() || ref.height() != flt.height())
    throw Error(ErrorCode::DimMismatch, "registration needs equal image dims");

  if (kind == TransformKind::Affine && !init)
    init = register_images(ref, flt, TransformKind::Rigid, params).transform.as_affine();
  LinearTransform2D current = init.value_or(LinearTransform2D::identity(kind));
  if (kind == TransformKind::Affine) {
    current = current.as_affine();
  } else if (current.kind() != TransformKind::Rigid) {
    throw Error(ErrorCode::InvalidArgument, "rigid registration needs a rigid init");
  }

  const int levels = params.pyramid_levels;
  const auto ref_pyr = build_pyramid(ref, levels, kMinPyramidSide);
  const auto flt_pyr = build_pyramid(flt, levels, kMinPyramidSide);
  for (int k = 1; k < levels; ++k) current = to_coarser(current);

  RegistrationResult result;
  result.correspondences_used.assign(static_cast<std::size_t>(levels), 0);
  for (int level = levels - 1; level >= 0; --level) {
    const Image2D &r = ref_pyr[static_cast<std::size_t>(level)];
    const Image2D &f = flt_pyr[static_cast<std::size_t>(level)];
    const bool finest = level == 0;
    const auto slot = static_cast<std::size_t>(levels - 1 - level);

    std::optional<double> best_rms;
    LinearTransform2D best = current;
    for (int it = 0; it < params.iterations_per_level; ++it) {
      std::vector<Correspondence> corrs;
      LtsFit fit{};
      try {
        corrs = match_blocks_predicted(r, f, invert(current), params);
        if (!finest && corrs.size() < kMinCoarseCorrespondences)
          throw Error(ErrorCode::NoValidBlocks, "too few blocks at a coarse level");
        fit = lts_fit(corrs, kind, params.lts_keep_fraction);
      } catch (const Error &e) {
        // Coarse levels may lack enough blocks; the finer ones take over.
        const bool recoverable = e.code() == ErrorCode::NoValidBlocks ||
                                 e.code() == ErrorCode::DegenerateConfiguration;
        if (finest || !recoverable) throw;
        break;
      }
      result.correspondences_used[slot] = static_cast<int>(corrs.size());
      const LinearTransform2D next = invert(fit.transform);
      check_deformation(next);
      const LinearTransform2D update = compose(next, invert(current));
      current = next;

      const bool settled = max_corner_shift(update, r.width(), r.height()) < kConvergedShift;
      if (finest) {
        if (it == 0) result.first_residual_rms = fit.rms;
        if (!best_rms || fit.rms <= *best_rms) {
          best_rms = fit.rms;
          best = current;
        }
        result.converged = settled;
      }
      if (settled) break;
    }
    if (finest) {
      current = best;
      result.residual_rms = best_rms.value_or(0.0);
    } else {
      current = to_finer(current);
    }
  }
  result.transform = current;
  return result;
}

}  // namespace slicefinder
