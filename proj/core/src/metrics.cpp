#include "slicefinder/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "slicefinder/error.hpp"

namespace slicefinder {

namespace {

enum class CcStatus { Ok, TooFew, Flat };

CcStatus pearson(std::span<const double> a, std::span<const std::uint8_t> a_mask,
                 std::span<const double> b, std::span<const std::uint8_t> b_mask,
                 double &out) {
  if (a.size() != b.size() || a.size() != a_mask.size() || b.size() != b_mask.size())
    throw Error(ErrorCode::DimMismatch, "correlation blocks differ in size");
  std::size_t n = 0;
  double sa = 0.0, sb = 0.0;
  bool a_flat = true, b_flat = true;
  std::size_t first = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a_mask[i] || !b_mask[i]) continue;
    if (first == a.size()) first = i;
    a_flat = a_flat && a[i] == a[first];
    b_flat = b_flat && b[i] == b[first];
    ++n;
    sa += a[i];
    sb += b[i];
  }
  if (n < 2) return CcStatus::TooFew;
  if (a_flat || b_flat) return CcStatus::Flat;
  const double ma = sa / static_cast<double>(n);
  const double mb = sb / static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a_mask[i] || !b_mask[i]) continue;
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) return CcStatus::Flat;
  out = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  return CcStatus::Ok;
}

}  // namespace

double correlation_coefficient(std::span<const double> a,
                               std::span<const std::uint8_t> a_mask,
                               std::span<const double> b,
                               std::span<const std::uint8_t> b_mask) {
  double r = 0.0;
  switch (pearson(a, a_mask, b, b_mask, r)) {
    case CcStatus::Ok: return r;
    case CcStatus::TooFew:
      throw Error(ErrorCode::DegenerateConfiguration, "fewer than 2 co-valid pixels");
    case CcStatus::Flat:
      throw Error(ErrorCode::ZeroVariance, "block is constant over co-valid pixels");
  }
  return r;
}

std::optional<double> try_correlation_coefficient(std::span<const double> a,
                                                  std::span<const std::uint8_t> a_mask,
                                                  std::span<const double> b,
                                                  std::span<const std::uint8_t> b_mask) {
  double r = 0.0;
  if (pearson(a, a_mask, b, b_mask, r) != CcStatus::Ok) return std::nullopt;
  return r;
}

double correlation_coefficient(std::span<const double> a, std::span<const double> b) {
  const std::vector<std::uint8_t> all(std::max(a.size(), b.size()), 1);
  return correlation_coefficient(a, std::span(all).first(a.size()), b,
                                 std::span(all).first(b.size()));
}

int intensity_bin(double value, double lo, double hi, int bins) {
  if (!(hi > lo)) return 0;
  const double t = (value - lo) / (hi - lo) * bins;
  const int b = static_cast<int>(std::floor(t));
  return std::clamp(b, 0, bins - 1);
}

JointHistogram joint_histogram(const Image2D &a, const Image2D &b, int bins) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(ErrorCode::DimMismatch, "joint histogram needs equal image dims");
  if (bins < 2) throw Error(ErrorCode::InvalidArgument, "bins must be >= 2");

  const auto &da = a.data();
  const auto &db = b.data();
  const auto &ma = a.mask();
  const auto &mb = b.mask();
  double lo_a = std::numeric_limits<double>::infinity(), hi_a = -lo_a;
  double lo_b = lo_a, hi_b = -lo_a;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (!ma[i] || !mb[i]) continue;
    ++n;
    lo_a = std::min(lo_a, da[i]);
    hi_a = std::max(hi_a, da[i]);
    lo_b = std::min(lo_b, db[i]);
    hi_b = std::max(hi_b, db[i]);
  }
  if (n == 0) throw Error(ErrorCode::NoOverlap, "images share no valid pixel");

  JointHistogram h;
  h.bins = bins;
  const auto nb = static_cast<std::size_t>(bins);
  h.counts.assign(nb * nb, 0);
  h.marginal_a.assign(nb, 0);
  h.marginal_b.assign(nb, 0);
  h.n = n;
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (!ma[i] || !mb[i]) continue;
    const auto ia = static_cast<std::size_t>(intensity_bin(da[i], lo_a, hi_a, bins));
    const auto ib = static_cast<std::size_t>(intensity_bin(db[i], lo_b, hi_b, bins));
    ++h.counts[ia * nb + ib];
    ++h.marginal_a[ia];
    ++h.marginal_b[ib];
  }
  return h;
}

namespace {

// -sum p ln p over non-empty cells, summed in ascending count order so a
// transposed histogram gives the same bits.
double entropy(const std::vector<std::uint64_t> &counts, std::uint64_t n) {
  std::vector<std::uint64_t> sorted;
  sorted.reserve(counts.size());
  for (std::uint64_t c : counts)
    if (c != 0) sorted.push_back(c);
  std::sort(sorted.begin(), sorted.end());
  const double total = static_cast<double>(n);
  double h = 0.0;
  for (std::uint64_t c : sorted) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

Entropies entropies(const JointHistogram &h) {
  return {entropy(h.marginal_a, h.n), entropy(h.marginal_b, h.n), entropy(h.counts, h.n)};
}

double nmi(const JointHistogram &h) {
  const Entropies e = entropies(h);
  if (!(e.h_ab > 0.0))
    throw Error(ErrorCode::InsufficientContrast,
                "joint entropy is zero (both images constant on the overlap)");
  return (e.h_a + e.h_b) / e.h_ab;
}

double nmi(const Image2D &a, const Image2D &b, int bins) {
  return nmi(joint_histogram(a, b, bins));
}

namespace {

void require_same_dims(const LabelMap2D &a, const LabelMap2D &b) {
  if (a.width != b.width || a.height != b.height || a.labels.size() != b.labels.size())
    throw Error(ErrorCode::DimMismatch, "label maps differ in dims");
}

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const LabelMap2D &a, const LabelMap2D &b, std::uint16_t label) {
  Overlap o;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool in_a = a.labels[i] == label;
    const bool in_b = b.labels[i] == label;
    o.a += in_a;
    o.b += in_b;
    o.both += in_a && in_b;
  }
  return o;
}

}  // namespace

double dice(const LabelMap2D &a, const LabelMap2D &b, std::uint16_t label) {
  require_same_dims(a, b);
  const Overlap o = overlap(a, b, label);
  if (o.a + o.b == 0)
    throw Error(ErrorCode::LabelAbsentEverywhere,
                "label " + std::to_string(label) + " absent from both maps");
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

MeanDice mean_dice(const LabelMap2D &a, const LabelMap2D &b,
                   std::span<const std::uint16_t> labels) {
  require_same_dims(a, b);
  MeanDice out;
  double sum = 0.0;
  for (std::uint16_t label : labels) {
    const Overlap o = overlap(a, b, label);
    if (o.a + o.b == 0) {
      out.excluded.push_back(label);
      continue;
    }
    const double d = 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
    out.per_label.emplace_back(label, d);
    sum += d;
  }
  if (out.per_label.empty())
    throw Error(ErrorCode::LabelAbsentEverywhere, "no requested label is present");
  out.mean = sum / static_cast<double>(out.per_label.size());
  return out;
}

RegressionFit linear_regression(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) throw Error(ErrorCode::DegenerateX, "regression needs >= 2 points");
  const double n = static_cast<double>(pairs.size());
  double sx = 0.0, sy = 0.0;
  for (const auto &[x, y] : pairs) {
    sx += x;
    sy += y;
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto &[x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::DegenerateX, "all x values are equal");

  RegressionFit fit;
  fit.a = sxy / sxx;
  fit.b = my - fit.a * mx;
  double ss_res = 0.0;
  for (const auto &[x, y] : pairs) {
    const double r = y - fit.predict(x);
    ss_res += r * r;
  }
  if (syy == 0.0) {
    fit.r2 = ss_res == 0.0 ? 1.0 : 0.0;
  } else {
    fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

}  // namespace slicefinder
