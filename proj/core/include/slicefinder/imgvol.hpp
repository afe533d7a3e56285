#pragma once

// Image and volume containers, file I/O, resampling, field-of-view
// adjustment, coronal slicing, tilt simulation and the synthetic phantom.
//
// Axis convention (used everywhere in the library):
//   x = left-right, y = infero-superior, z = antero-posterior.
// A coronal slice at index z is the (x, y) plane. Volume data is stored
// x-fastest, then y, then z; image data is row-major (x-fastest).

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace slicefinder {

class Image2D {
 public:
  Image2D() = default;
  // Every pixel starts at `fill` and valid.
  Image2D(int width, int height, double spacing_um, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  double spacing_um() const { return spacing_um_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double at(int x, int y) const { return data_[index(x, y)]; }
  double &at(int x, int y) { return data_[index(x, y)]; }
  bool valid(int x, int y) const { return mask_[index(x, y)] != 0; }
  void set_valid(int x, int y, bool v) { mask_[index(x, y)] = v ? 1 : 0; }

  const std::vector<double> &data() const { return data_; }
  std::vector<double> &data() { return data_; }
  const std::vector<std::uint8_t> &mask() const { return mask_; }
  std::vector<std::uint8_t> &mask() { return mask_; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  std::size_t valid_count() const;

  friend bool operator==(const Image2D &, const Image2D &) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  double spacing_um_ = 1.0;
  std::vector<double> data_;
  std::vector<std::uint8_t> mask_;
};

class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(std::array<int, 3> dims, std::array<double, 3> spacing_um,
           double fill = 0.0);

  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  const std::array<int, 3> &dims() const { return dims_; }
  const std::array<double, 3> &spacing_um() const { return spacing_um_; }

  double at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  double &at(int x, int y, int z) { return data_[index(x, y, z)]; }

  const std::vector<double> &data() const { return data_; }
  std::vector<double> &data() { return data_; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims_[1]) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims_[0]) +
           static_cast<std::size_t>(x);
  }
  bool isotropic() const {
    return spacing_um_[0] == spacing_um_[1] && spacing_um_[1] == spacing_um_[2];
  }

  friend bool operator==(const Volume3D &, const Volume3D &) = default;

 private:
  std::array<int, 3> dims_{0, 0, 0};
  std::array<double, 3> spacing_um_{1.0, 1.0, 1.0};
  std::vector<double> data_;
};

struct LabelMap2D {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> labels;
  std::map<std::uint16_t, std::string> region_names;

  LabelMap2D() = default;
  LabelMap2D(int w, int h, std::uint16_t fill = 0);

  std::uint16_t at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
  std::uint16_t &at(int x, int y) {
    return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }

  friend bool operator==(const LabelMap2D &, const LabelMap2D &) = default;
};

// Rotation angles in degrees. theta turns about the left-right (x) axis,
// phi about the infero-superior (y) axis. Composition is Ry(phi) * Rx(theta).
struct TiltSpec {
  double theta_deg = 0.0;
  double phi_deg = 0.0;

  // Throws InvalidArgument for non-finite angles or |angle| > 45.
  void validate() const;
};

enum class VoxelType { UInt8, UInt16, Float32 };

// --- volume files -----------------------------------------------------------

// Text header with `key: value` lines (dims, spacing_um, dtype, byte_order,
// data_file) next to a raw little-endian x-fastest payload.
Volume3D load_volume(const std::filesystem::path &header_path);

// Writes `header_path` and a raw payload named after it (stem + ".raw").
// Integer dtypes round values to the nearest representable integer.
void save_volume(const Volume3D &vol, const std::filesystem::path &header_path,
                 VoxelType dtype = VoxelType::Float32);

// --- slicing and preprocessing ------------------------------------------------

Image2D extract_coronal_slice(const Volume3D &vol, int z);

// Nearest-integer label identifiers of the coronal plane z.
LabelMap2D extract_coronal_labels(const Volume3D &label_vol, int z);

Image2D resample_isotropic(const Image2D &img, double target_spacing_um);

// Centers the content in a target_w x target_h canvas. Padding is value 0 and
// invalid; odd margins put the extra pixel on the high side.
Image2D adjust_fov(const Image2D &img, int target_w, int target_h);
LabelMap2D adjust_fov(const LabelMap2D &labels, int target_w, int target_h);

// Rigid rotation of an isotropic volume about its center (trilinear).
Volume3D simulate_tilt(const Volume3D &vol, const TiltSpec &tilt);
// Same geometry with nearest-neighbour sampling, for label volumes.
Volume3D simulate_tilt_labels(const Volume3D &label_vol, const TiltSpec &tilt);

// --- phantom ------------------------------------------------------------------

// Closed-form synthetic brain stand-in. With normalized coordinates
//   u = (x - cx) / (nx / 2),  v = (y - cy) / (ny / 2),  w = z / (nz - 1)
// where (cx, cy) = ((nx - 1) / 2, (ny - 1) / 2), the intensity is
//
//   I(x, y, z) = ramp(w) + inside(rho) * [ core + shell + blobs + texture ]
//
//   ramp(w)    = kRampBase + kRampSlope * w
//   ellipse    semi-axes ax = 0.90 r(w), ay = 0.75 r(w), r(w) = 0.55 + 0.40 w
//   rho        = sqrt((u / ax)^2 + (v / ay)^2)
//   inside     = 1 for rho <= 1 - kEdge, 0 for rho >= 1, smoothstep between
//   core       = kCoreValue
//   shell      = kShellValue * band(rho), band = smoothstep over [0.78, 0.82]
//   blobs      = sum_b amp_b * exp(-|(u, v) - c_b(w)|^2 / (2 sigma_b^2)),
//                centers drifting linearly in w (see `blobs()`).
//   texture    = sum_k a_k * sin(2 pi (fx_k dx + fy_k dy + fz_k w) + phase_k),
//                with dx = x - cx, dy = y - cy in pixels. kWaveCount waves
//                of amplitude kWaveAmplitude, wavelengths log-uniform between
//                kMinWavelength and max(nx, ny) / 3 px, random orientation,
//                fz in [0.5, 3]; drawn once from the seed (see `waves()`).
//
// Voxels with rho >= 1 therefore carry the ramp value only.
class PhantomModel {
 public:
  struct Blob {
    double amplitude;
    double sigma;
    double u0, v0;  // center at w = 0
    double du, dv;  // drift per unit w
  };
  struct Wave {
    double amplitude;
    double fx, fy;  // cycles per pixel
    double fz;      // cycles over the full depth (w in [0, 1])
    double phase;
  };

  static constexpr double kRampBase = 10.0;
  static constexpr double kRampSlope = 60.0;
  static constexpr double kEdge = 0.08;
  static constexpr double kCoreValue = 60.0;
  static constexpr double kShellValue = 70.0;
  static constexpr int kWaveCount = 12;
  static constexpr double kWaveAmplitude = 6.0;
  static constexpr double kMinWavelength = 5.0;

  PhantomModel(int nx, int ny, int nz, std::uint64_t seed);

  double value(double x, double y, double z) const;
  std::uint16_t label(double x, double y, double z) const;

  const std::vector<Blob> &blobs() const { return blobs_; }
  const std::vector<Wave> &waves() const { return waves_; }
  std::array<int, 3> dims() const { return {nx_, ny_, nz_}; }

  // Identifier -> name for the six phantom regions.
  static std::map<std::uint16_t, std::string> region_names();

 private:
  int nx_, ny_, nz_;
  std::vector<Blob> blobs_;
  std::vector<Wave> waves_;
};

// Spacing is 25 um isotropic. Throws DimsTooSmall when any dim < 32.
Volume3D make_phantom(int nx, int ny, int nz, std::uint64_t seed);
Volume3D make_phantom_labels(int nx, int ny, int nz, std::uint64_t seed);

// --- 2D files -------------------------------------------------------------------

// PGM P5 (8 or 16 bit). Floating values are min-max scaled to 16 bit; the
// scale and spacing go to `<path>.meta`, and an invalid mask (if any) to
// `<stem>.mask.pgm`. Plain PGMs without a sidecar load verbatim.
void save_image(const Image2D &img, const std::filesystem::path &path);
Image2D load_image(const std::filesystem::path &path);

// 16-bit PGM with identifiers verbatim, names in `<path>.csv` when present.
void save_labels(const LabelMap2D &labels, const std::filesystem::path &path);
LabelMap2D load_labels(const std::filesystem::path &path);

// Default working resolution of the pipeline.
inline constexpr double kDefaultSpacingUm = 25.0;

}  // namespace slicefinder
