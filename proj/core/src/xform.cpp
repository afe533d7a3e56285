#include "slicefinder/xform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <fstream>
#include <sstream>
#include <vector>

#include "keyvalue.hpp"
#include "sampling.hpp"
#include "slicefinder/error.hpp"

namespace slicefinder {

std::string_view to_string(TransformKind kind) {
  return kind == TransformKind::Rigid ? "rigid" : "affine";
}

TransformKind transform_kind_from_string(std::string_view s) {
  if (s == "rigid") return TransformKind::Rigid;
  if (s == "affine") return TransformKind::Affine;
  throw Error(ErrorCode::InvalidArgument, "unknown transform kind '" + std::string(s) + "'");
}

LinearTransform2D LinearTransform2D::identity(TransformKind kind) {
  return {kind, {1.0, 0.0, 0.0, 1.0}, {0.0, 0.0}};
}

LinearTransform2D LinearTransform2D::rigid(double angle_rad, Point2 translation) {
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  return {TransformKind::Rigid, {c, -s, s, c}, translation};
}

LinearTransform2D LinearTransform2D::affine(std::array<double, 4> matrix,
                                            Point2 translation) {
  return from_matrix(TransformKind::Affine, matrix, translation);
}

LinearTransform2D LinearTransform2D::from_matrix(TransformKind kind,
                                                 std::array<double, 4> m,
                                                 Point2 translation) {
  for (double v : m)
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite matrix");
  if (!std::isfinite(translation.x) || !std::isfinite(translation.y))
    throw Error(ErrorCode::InvalidArgument, "non-finite translation");
  const double det = m[0] * m[3] - m[1] * m[2];
  if (det == 0.0) throw Error(ErrorCode::SingularTransform, "matrix is singular");
  if (kind == TransformKind::Rigid) {
    const double c0 = m[0] * m[0] + m[2] * m[2] - 1.0;
    const double c1 = m[1] * m[1] + m[3] * m[3] - 1.0;
    const double c01 = m[0] * m[1] + m[2] * m[3];
    if (std::abs(c0) > 1e-9 || std::abs(c1) > 1e-9 || std::abs(c01) > 1e-9 ||
        std::abs(det - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "rigid matrix is not a rotation");
  }
  return {kind, m, translation};
}

double LinearTransform2D::angle() const { return std::atan2(m_[2], m_[0]); }

LinearTransform2D LinearTransform2D::as_affine() const {
  return {TransformKind::Affine, m_, t_};
}

LinearTransform2D compose(const LinearTransform2D &a, const LinearTransform2D &b) {
  const auto &ma = a.matrix();
  const auto &mb = b.matrix();
  const std::array<double, 4> m{ma[0] * mb[0] + ma[1] * mb[2], ma[0] * mb[1] + ma[1] * mb[3],
                                ma[2] * mb[0] + ma[3] * mb[2], ma[2] * mb[1] + ma[3] * mb[3]};
  const bool rigid = a.kind() == TransformKind::Rigid && b.kind() == TransformKind::Rigid;
  return LinearTransform2D::from_matrix(rigid ? TransformKind::Rigid : TransformKind::Affine,
                                        m, a.apply(b.translation()));
}

LinearTransform2D invert(const LinearTransform2D &T) {
  const auto &m = T.matrix();
  const double det = T.det();
  if (det == 0.0 || !std::isfinite(det))
    throw Error(ErrorCode::SingularTransform, "cannot invert a singular transform");
  std::array<double, 4> inv;
  if (T.kind() == TransformKind::Rigid) {
    inv = {m[0], m[2], m[1], m[3]};
  } else {
    inv = {m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};
  }
  const Point2 t = T.translation();
  const Point2 ti{-(inv[0] * t.x + inv[1] * t.y), -(inv[2] * t.x + inv[3] * t.y)};
  return LinearTransform2D::from_matrix(T.kind(), inv, ti);
}

void check_deformation(const LinearTransform2D &T) {
  if (T.kind() != TransformKind::Affine) return;
  const double det = T.det();
  if (det == 0.0 || !(std::abs(std::log(std::abs(det))) <= kMaxLogDet))
    throw Error(ErrorCode::ExcessiveDeformation,
                "affine determinant " + detail::format_double(det) + " outside [1/4, 4]");
}

Image2D warp_image(const Image2D &img, const LinearTransform2D &T) {
  const LinearTransform2D inv = invert(T);
  Image2D out(img.width(), img.height(), img.spacing_um());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Point2 q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      double v = 0.0;
      const bool ok = detail::sample_bilinear(img, q.x, q.y, v);
      out.at(x, y) = ok ? v : 0.0;
      out.set_valid(x, y, ok);
    }
  }
  return out;
}

LabelMap2D warp_labels(const LabelMap2D &labels, const LinearTransform2D &T) {
  const LinearTransform2D inv = invert(T);
  LabelMap2D out(labels.width, labels.height);
  out.region_names = labels.region_names;
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const Point2 q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      if (!(q.x > -0.5 && q.y > -0.5 && q.x < labels.width - 0.5 &&
            q.y < labels.height - 0.5))
        continue;
      const long sx = std::lround(q.x);
      const long sy = std::lround(q.y);
      if (sx >= 0 && sy >= 0 && sx < labels.width && sy < labels.height)
        out.at(x, y) = labels.at(static_cast<int>(sx), static_cast<int>(sy));
    }
  }
  return out;
}

PerturbedVolume perturb_slices(const Volume3D &vol, const Volume3D *labels,
                               const SlicePerturbation &perturbation, std::uint64_t seed) {
  if (labels != nullptr && labels->dims() != vol.dims())
    throw Error(ErrorCode::DimMismatch, "label volume dims differ from the volume");
  if (!(perturbation.max_angle_deg >= 0.0 && perturbation.max_shift_px >= 0.0 &&
        perturbation.noise_fraction >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "perturbation magnitudes must be >= 0");

  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  const double sigma = perturbation.noise_fraction * (*hi - *lo);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-perturbation.max_angle_deg,
                                               perturbation.max_angle_deg);
  std::uniform_real_distribution<double> shift(-perturbation.max_shift_px,
                                               perturbation.max_shift_px);
  std::normal_distribution<double> noise(0.0, 1.0);

  PerturbedVolume out{Volume3D(vol.dims(), vol.spacing_um()), std::nullopt, {}};
  if (labels != nullptr) out.labels = Volume3D(vol.dims(), vol.spacing_um());
  const Point2 c{(vol.nx() - 1) / 2.0, (vol.ny() - 1) / 2.0};
  for (int z = 0; z < vol.nz(); ++z) {
    const double a = angle(rng) * std::numbers::pi / 180.0;
    const double tx = shift(rng);
    const double ty = shift(rng);
    const Point2 rc = LinearTransform2D::rigid(a, {}).apply(c);
    const auto motion = LinearTransform2D::rigid(a, {c.x - rc.x + tx, c.y - rc.y + ty});
    out.motions.push_back(motion);

    const Image2D warped = warp_image(extract_coronal_slice(vol, z), motion);
    for (int y = 0; y < vol.ny(); ++y) {
      for (int x = 0; x < vol.nx(); ++x) {
        const double v = warped.valid(x, y) ? warped.at(x, y) : 0.0;
        out.volume.at(x, y, z) = sigma > 0.0 ? v + sigma * noise(rng) : v;
      }
    }
    if (labels != nullptr) {
      const LabelMap2D moved = warp_labels(extract_coronal_labels(*labels, z), motion);
      for (int y = 0; y < vol.ny(); ++y)
        for (int x = 0; x < vol.nx(); ++x) out.labels->at(x, y, z) = moved.at(x, y);
    }
  }
  return out;
}

// --- estimation -----------------------------------------------------------------

namespace {

struct Centered {
  Point2 ref_centroid;
  Point2 flt_centroid;
  double total_weight = 0.0;
};

Centered weighted_centroids(std::span<const Correspondence> pairs) {
  Centered c;
  double rx = 0.0, ry = 0.0, fx = 0.0, fy = 0.0;
  for (const auto &p : pairs) {
    if (!(p.weight >= 0.0 && p.weight <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "correspondence weight outside [0, 1]");
    c.total_weight += p.weight;
    rx += p.weight * p.ref_point.x;
    ry += p.weight * p.ref_point.y;
    fx += p.weight * p.flt_point.x;
    fy += p.weight * p.flt_point.y;
  }
  if (!(c.total_weight > 0.0))
    throw Error(ErrorCode::DegenerateConfiguration, "no correspondence carries weight");
  c.ref_centroid = {rx / c.total_weight, ry / c.total_weight};
  c.flt_centroid = {fx / c.total_weight, fy / c.total_weight};
  return c;
}

// Number of distinct weighted reference points, capped at `enough`.
int distinct_ref_points(std::span<const Correspondence> pairs, int enough) {
  std::vector<Point2> seen;
  for (const auto &p : pairs) {
    if (p.weight <= 0.0) continue;
    bool dup = false;
    for (const auto &s : seen) dup = dup || (s == p.ref_point);
    if (!dup) {
      seen.push_back(p.ref_point);
      if (static_cast<int>(seen.size()) >= enough) break;
    }
  }
  return static_cast<int>(seen.size());
}

}  // namespace

LinearTransform2D rigid_from_correspondences(std::span<const Correspondence> pairs) {
  if (distinct_ref_points(pairs, 2) < 2)
    throw Error(ErrorCode::DegenerateConfiguration, "rigid fit needs 2 distinct points");
  const Centered c = weighted_centroids(pairs);

  // Weighted cross-covariance of the centered point sets.
  double dot = 0.0, cross = 0.0;
  for (const auto &p : pairs) {
    const double ax = p.ref_point.x - c.ref_centroid.x;
    const double ay = p.ref_point.y - c.ref_centroid.y;
    const double bx = p.flt_point.x - c.flt_centroid.x;
    const double by = p.flt_point.y - c.flt_centroid.y;
    dot += p.weight * (ax * bx + ay * by);
    cross += p.weight * (ax * by - ay * bx);
  }
  const double angle = (dot == 0.0 && cross == 0.0) ? 0.0 : std::atan2(cross, dot);
  const auto rot = LinearTransform2D::rigid(angle, {});
  const Point2 rc = rot.apply(c.ref_centroid);
  return LinearTransform2D::rigid(
      angle, {c.flt_centroid.x - rc.x, c.flt_centroid.y - rc.y});
}

LinearTransform2D affine_from_correspondences(std::span<const Correspondence> pairs) {
  if (distinct_ref_points(pairs, 3) < 3)
    throw Error(ErrorCode::DegenerateConfiguration, "affine fit needs 3 distinct points");
  const Centered c = weighted_centroids(pairs);

  // Normal equations on centered coordinates, solved per output row.
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  double bx0 = 0.0, bx1 = 0.0, by0 = 0.0, by1 = 0.0;
  for (const auto &p : pairs) {
    const double ax = p.ref_point.x - c.ref_centroid.x;
    const double ay = p.ref_point.y - c.ref_centroid.y;
    const double fx = p.flt_point.x - c.flt_centroid.x;
    const double fy = p.flt_point.y - c.flt_centroid.y;
    sxx += p.weight * ax * ax;
    sxy += p.weight * ax * ay;
    syy += p.weight * ay * ay;
    bx0 += p.weight * ax * fx;
    bx1 += p.weight * ay * fx;
    by0 += p.weight * ax * fy;
    by1 += p.weight * ay * fy;
  }
  const double det = sxx * syy - sxy * sxy;
  if (!(det > 1e-12 * sxx * syy) || !(sxx > 0.0) || !(syy > 0.0))
    throw Error(ErrorCode::DegenerateConfiguration, "reference points are collinear");

  const std::array<double, 4> m{(bx0 * syy - sxy * bx1) / det, (sxx * bx1 - sxy * bx0) / det,
                                (by0 * syy - sxy * by1) / det, (sxx * by1 - sxy * by0) / det};
  const double mdet = m[0] * m[3] - m[1] * m[2];
  if (mdet == 0.0 || !std::isfinite(mdet))
    throw Error(ErrorCode::DegenerateConfiguration, "fitted affine map is singular");
  const Point2 rc{m[0] * c.ref_centroid.x + m[1] * c.ref_centroid.y,
                  m[2] * c.ref_centroid.x + m[3] * c.ref_centroid.y};
  return LinearTransform2D::affine(m, {c.flt_centroid.x - rc.x, c.flt_centroid.y - rc.y});
}

// --- serialization ------------------------------------------------------------------

std::string to_csv_line(const LinearTransform2D &T) {
  std::string line(to_string(T.kind()));
  for (double v : T.matrix()) line += "," + detail::format_double(v);
  line += "," + detail::format_double(T.translation().x);
  line += "," + detail::format_double(T.translation().y);
  return line;
}

LinearTransform2D transform_from_csv_line(const std::string &line) {
  std::vector<std::string> fields;
  std::stringstream ss(detail::trim(line));
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(detail::trim(field));
  if (fields.size() != 7)
    throw Error(ErrorCode::InvalidArgument, "transform line needs 7 fields: '" + line + "'");
  std::array<double, 6> v{};
  for (std::size_t i = 0; i < 6; ++i) {
    try {
      std::size_t used = 0;
      v[i] = std::stod(fields[i + 1], &used);
      if (used != fields[i + 1].size()) throw std::invalid_argument(fields[i + 1]);
    } catch (const std::exception &) {
      throw Error(ErrorCode::InvalidArgument, "bad transform number '" + fields[i + 1] + "'");
    }
  }
  return LinearTransform2D::from_matrix(transform_kind_from_string(fields[0]),
                                        {v[0], v[1], v[2], v[3]}, {v[4], v[5]});
}

void save_transform(const LinearTransform2D &T, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << kTransformCsvHeader << '\n' << to_csv_line(T) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

LinearTransform2D load_transform(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != kTransformCsvHeader)
    throw Error(ErrorCode::InvalidArgument, path.string() + ": missing transform header");
  if (!std::getline(in, line))
    throw Error(ErrorCode::InvalidArgument, path.string() + ": missing transform row");
  return transform_from_csv_line(line);
}

}  // namespace slicefinder
