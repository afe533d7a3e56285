#pragma once

// Similarity and evaluation metrics. Invalid pixels never enter any metric.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "slicefinder/imgvol.hpp"

namespace slicefinder {

inline constexpr int kDefaultBins = 64;

// Pearson correlation over pixels valid in both blocks. Values and masks
// are parallel spans of equal length. Throws ZeroVariance when either side
// is constant, DegenerateConfiguration with fewer than 2 co-valid pixels.
double correlation_coefficient(std::span<const double> a,
                               std::span<const std::uint8_t> a_mask,
                               std::span<const double> b,
                               std::span<const std::uint8_t> b_mask);

// Same computation without exceptions: empty on zero variance or fewer than
// 2 co-valid pixels (the block-matching inner loop).
std::optional<double> try_correlation_coefficient(std::span<const double> a,
                                                  std::span<const std::uint8_t> a_mask,
                                                  std::span<const double> b,
                                                  std::span<const std::uint8_t> b_mask);

// Convenience overload for fully valid blocks.
double correlation_coefficient(std::span<const double> a,
                               std::span<const double> b);

struct JointHistogram {
  int bins = 0;
  std::vector<std::uint64_t> counts;  // row = bin of A, column = bin of B
  std::vector<std::uint64_t> marginal_a;
  std::vector<std::uint64_t> marginal_b;
  std::uint64_t n = 0;

  std::uint64_t at(int ia, int ib) const {
    return counts[static_cast<std::size_t>(ia) * static_cast<std::size_t>(bins) +
                  static_cast<std::size_t>(ib)];
  }
};

// Bin index of `value` in [lo, hi] split into `bins` equal bins, the maximum
// mapping to the top bin. A degenerate range maps everything to bin 0.
int intensity_bin(double value, double lo, double hi, int bins);

// Intensities binned by per-image min-max over the co-valid pixels.
JointHistogram joint_histogram(const Image2D &a, const Image2D &b, int bins);

struct Entropies {
  double h_a = 0.0;
  double h_b = 0.0;
  double h_ab = 0.0;
};
// Natural-log Shannon entropies of the normalized histograms.
Entropies entropies(const JointHistogram &h);

// (H(A) + H(B)) / H(A, B), in [1, 2]. The log base cancels in the ratio.
double nmi(const Image2D &a, const Image2D &b, int bins = kDefaultBins);
double nmi(const JointHistogram &h);

double dice(const LabelMap2D &a, const LabelMap2D &b, std::uint16_t label);

struct MeanDice {
  double mean = 0.0;
  std::vector<std::pair<std::uint16_t, double>> per_label;
  std::vector<std::uint16_t> excluded;  // absent from both maps
};
// Unweighted mean over labels present in at least one map.
MeanDice mean_dice(const LabelMap2D &a, const LabelMap2D &b,
                   std::span<const std::uint16_t> labels);

struct RegressionFit {
  double a = 0.0;  // slope
  double b = 0.0;  // intercept
  double r2 = 0.0;

  double predict(double x) const { return a * x + b; }
};

// Ordinary least squares y = a x + b. Throws DegenerateX for < 2 distinct x.
RegressionFit linear_regression(std::span<const std::pair<double, double>> pairs);

}  // namespace slicefinder
