#pragma once

// Linear 2D transforms acting on pixel coordinates of the common grid.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicefinder/imgvol.hpp"

namespace slicefinder {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2 &, const Point2 &) = default;
};

enum class TransformKind { Rigid, Affine };

std::string_view to_string(TransformKind kind);
TransformKind transform_kind_from_string(std::string_view s);

// p' = M p + t, with M stored row-major {m00, m01, m10, m11}.
class LinearTransform2D {
 public:
  LinearTransform2D() = default;

  static LinearTransform2D identity(TransformKind kind = TransformKind::Rigid);
  static LinearTransform2D rigid(double angle_rad, Point2 translation);
  // Throws SingularTransform when det(M) == 0.
  static LinearTransform2D affine(std::array<double, 4> matrix,
                                  Point2 translation);
  // Rigid kind requires an orthonormal matrix with det +1 (within 1e-9),
  // otherwise InvalidArgument; affine kind requires det != 0.
  static LinearTransform2D from_matrix(TransformKind kind,
                                       std::array<double, 4> matrix,
                                       Point2 translation);

  TransformKind kind() const { return kind_; }
  const std::array<double, 4> &matrix() const { return m_; }
  Point2 translation() const { return t_; }
  double det() const { return m_[0] * m_[3] - m_[1] * m_[2]; }
  // Rotation angle of the linear part (exact for rigid transforms).
  double angle() const;

  Point2 apply(Point2 p) const {
    return {m_[0] * p.x + m_[1] * p.y + t_.x, m_[2] * p.x + m_[3] * p.y + t_.y};
  }

  // Same geometry relabelled as affine (rigid maps are a subset).
  LinearTransform2D as_affine() const;

  friend bool operator==(const LinearTransform2D &,
                         const LinearTransform2D &) = default;

 private:
  LinearTransform2D(TransformKind kind, std::array<double, 4> m, Point2 t)
      : kind_(kind), m_(m), t_(t) {}

  TransformKind kind_ = TransformKind::Rigid;
  std::array<double, 4> m_{1.0, 0.0, 0.0, 1.0};
  Point2 t_{};
};

inline Point2 apply_point(const LinearTransform2D &T, Point2 p) {
  return T.apply(p);
}

// Applies b first, then a.
LinearTransform2D compose(const LinearTransform2D &a, const LinearTransform2D &b);
LinearTransform2D invert(const LinearTransform2D &T);

// Largest allowed |log|det|| for affine registration results.
inline constexpr double kMaxLogDet = 1.3862943611198906;  // log(4)

// Throws ExcessiveDeformation when an affine map scales area by more than 4x
// either way.
void check_deformation(const LinearTransform2D &T);

// Backward warping: output(p) = img(invert(T) p), bilinear. Samples that
// leave the image or touch an invalid pixel come out as 0 and invalid.
Image2D warp_image(const Image2D &img, const LinearTransform2D &T);
// Nearest-neighbour variant for label maps; outside samples become 0.
LabelMap2D warp_labels(const LabelMap2D &labels, const LinearTransform2D &T);

// Synthetic experimental data: every coronal slice gets its own rigid motion
// about the slice center (angle uniform in +-max_angle_deg, shifts uniform in
// +-max_shift_px) and then additive Gaussian noise with standard deviation
// noise_fraction * (max - min) of the input. Pixels leaving the frame are 0.
struct SlicePerturbation {
  double max_angle_deg = 5.0;
  double max_shift_px = 5.0;
  double noise_fraction = 0.01;
};

struct PerturbedVolume {
  Volume3D volume;
  std::optional<Volume3D> labels;  // same motions, nearest neighbour, no noise
  std::vector<LinearTransform2D> motions;  // per slice, template -> perturbed
};

PerturbedVolume perturb_slices(const Volume3D &vol, const Volume3D *labels,
                               const SlicePerturbation &perturbation, std::uint64_t seed);

struct Correspondence {
  Point2 ref_point;
  Point2 flt_point;
  double weight = 1.0;
};

// Weighted least-squares fits of T with T(ref) ~ flt.
LinearTransform2D rigid_from_correspondences(std::span<const Correspondence> pairs);
LinearTransform2D affine_from_correspondences(std::span<const Correspondence> pairs);

// One CSV line: kind,m00,m01,m10,m11,tx,ty with 17 significant digits.
std::string to_csv_line(const LinearTransform2D &T);
LinearTransform2D transform_from_csv_line(const std::string &line);

inline constexpr const char *kTransformCsvHeader = "kind,m00,m01,m10,m11,tx,ty";
void save_transform(const LinearTransform2D &T, const std::filesystem::path &path);
LinearTransform2D load_transform(const std::filesystem::path &path);

}  // namespace slicefinder
