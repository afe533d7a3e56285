#include "slicefinder/imgvol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "keyvalue.hpp"
#include "pgm.hpp"
#include "sampling.hpp"
#include "slicefinder/error.hpp"

namespace slicefinder {

namespace fs = std::filesystem;

// --- containers ---------------------------------------------------------------

Image2D::Image2D(int width, int height, double spacing_um, double fill)
    : width_(width), height_(height), spacing_um_(spacing_um) {
  if (width <= 0 || height <= 0)
    throw Error(ErrorCode::InvalidArgument, "image dims must be positive");
  if (!(spacing_um > 0.0) || !std::isfinite(spacing_um))
    throw Error(ErrorCode::InvalidArgument, "image spacing must be positive");
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  data_.assign(n, fill);
  mask_.assign(n, 1);
}

std::size_t Image2D::valid_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
}

Volume3D::Volume3D(std::array<int, 3> dims, std::array<double, 3> spacing_um,
                   double fill)
    : dims_(dims), spacing_um_(spacing_um) {
  for (int d : dims)
    if (d <= 0) throw Error(ErrorCode::InvalidArgument, "volume dims must be positive");
  for (double s : spacing_um)
    if (!(s > 0.0) || !std::isfinite(s))
      throw Error(ErrorCode::InvalidArgument, "volume spacing must be positive");
  data_.assign(static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                   static_cast<std::size_t>(dims[2]),
               fill);
}

LabelMap2D::LabelMap2D(int w, int h, std::uint16_t fill) : width(w), height(h) {
  if (w <= 0 || h <= 0)
    throw Error(ErrorCode::InvalidArgument, "label map dims must be positive");
  labels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

void TiltSpec::validate() const {
  for (double a : {theta_deg, phi_deg}) {
    if (!std::isfinite(a) || std::abs(a) > 45.0)
      throw Error(ErrorCode::InvalidArgument,
                  "tilt angles must be finite with magnitude <= 45 degrees");
  }
}

// --- volume files -------------------------------------------------------------

namespace {

std::size_t bytes_per_voxel(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return 1;
    case VoxelType::UInt16: return 2;
    case VoxelType::Float32: return 4;
  }
  return 0;
}

std::string_view dtype_name(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return "uint8";
    case VoxelType::UInt16: return "uint16";
    case VoxelType::Float32: return "float32";
  }
  return "";
}

template <class T, std::size_t N>
std::array<T, N> parse_tuple(const std::string &text, const fs::path &path,
                             const char *key) {
  std::istringstream ss(text);
  std::array<T, N> out{};
  for (auto &v : out) {
    if (!(ss >> v))
      throw Error(ErrorCode::MalformedHeader,
                  path.string() + ": '" + key + "' needs " + std::to_string(N) + " values");
  }
  std::string extra;
  if (ss >> extra)
    throw Error(ErrorCode::MalformedHeader,
                path.string() + ": trailing data in '" + key + "'");
  return out;
}

}  // namespace

Volume3D load_volume(const fs::path &header_path) {
  if (!fs::exists(header_path)) throw Error(ErrorCode::MissingFile, header_path.string());
  const auto kv = detail::read_key_values(header_path);

  static const char *known[] = {"dims", "spacing_um", "dtype", "byte_order", "data_file"};
  for (const auto &[key, value] : kv) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char *k) { return key == k; }) == std::end(known))
      throw Error(ErrorCode::MalformedHeader,
                  header_path.string() + ": unknown key '" + key + "'");
  }
  for (const char *required : {"dims", "spacing_um", "dtype", "data_file"}) {
    if (!kv.contains(required))
      throw Error(ErrorCode::MalformedHeader,
                  header_path.string() + ": missing key '" + required + "'");
  }

  const auto dims = parse_tuple<long, 3>(kv.at("dims"), header_path, "dims");
  for (long d : dims)
    if (d <= 0 || d > (1L << 20))
      throw Error(ErrorCode::MalformedHeader,
                  header_path.string() + ": dims must be positive");
  const auto spacing = parse_tuple<double, 3>(kv.at("spacing_um"), header_path, "spacing_um");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s))
      throw Error(ErrorCode::MalformedHeader,
                  header_path.string() + ": spacing_um must be positive");

  VoxelType dtype;
  const std::string &dt = kv.at("dtype");
  if (dt == "uint8") dtype = VoxelType::UInt8;
  else if (dt == "uint16") dtype = VoxelType::UInt16;
  else if (dt == "float32") dtype = VoxelType::Float32;
  else
    throw Error(ErrorCode::MalformedHeader,
                header_path.string() + ": unsupported dtype '" + dt + "'");
  if (kv.contains("byte_order") && kv.at("byte_order") != "little")
    throw Error(ErrorCode::MalformedHeader,
                header_path.string() + ": only little-endian data is supported");

  const fs::path raw = header_path.parent_path() / kv.at("data_file");
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, raw.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  Volume3D vol({static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                static_cast<int>(dims[2])},
               spacing);
  const std::size_t n = vol.data().size();
  const std::size_t bpv = bytes_per_voxel(dtype);
  if (bytes.size() != n * bpv)
    throw Error(ErrorCode::SizeMismatch,
                raw.string() + ": expected " + std::to_string(n * bpv) + " bytes, found " +
                    std::to_string(bytes.size()));

  auto &data = vol.data();
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char *b = bytes.data() + i * bpv;
    switch (dtype) {
      case VoxelType::UInt8: data[i] = b[0]; break;
      case VoxelType::UInt16: data[i] = static_cast<std::uint16_t>(b[0] | (b[1] << 8)); break;
      case VoxelType::Float32: {
        const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                                (static_cast<std::uint32_t>(b[1]) << 8) |
                                (static_cast<std::uint32_t>(b[2]) << 16) |
                                (static_cast<std::uint32_t>(b[3]) << 24);
        const float f = std::bit_cast<float>(u);
        if (!std::isfinite(f))
          throw Error(ErrorCode::MalformedHeader, raw.string() + ": non-finite voxel value");
        data[i] = f;
        break;
      }
    }
  }
  return vol;
}

void save_volume(const Volume3D &vol, const fs::path &header_path, VoxelType dtype) {
  const std::size_t bpv = bytes_per_voxel(dtype);
  std::vector<unsigned char> bytes;
  bytes.reserve(vol.data().size() * bpv);
  const double max_int = dtype == VoxelType::UInt8 ? 255.0 : 65535.0;
  for (double v : vol.data()) {
    if (dtype == VoxelType::Float32) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<unsigned char>(u >> (8 * k)));
      continue;
    }
    const double r = std::round(v);
    if (!(r >= 0.0 && r <= max_int))
      throw Error(ErrorCode::InvalidArgument,
                  "voxel value " + detail::format_double(v) + " does not fit " +
                      std::string(dtype_name(dtype)));
    const auto u = static_cast<std::uint16_t>(r);
    bytes.push_back(static_cast<unsigned char>(u & 0xff));
    if (dtype == VoxelType::UInt16) bytes.push_back(static_cast<unsigned char>(u >> 8));
  }

  const fs::path raw_name = header_path.stem().string() + ".raw";
  const fs::path raw_path = header_path.parent_path() / raw_name;
  {
    std::ofstream out(raw_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + raw_path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + raw_path.string());
  }
  std::ofstream hdr(header_path);
  if (!hdr) throw Error(ErrorCode::IoError, "cannot write " + header_path.string());
  hdr << "dims: " << vol.nx() << ' ' << vol.ny() << ' ' << vol.nz() << '\n'
      << "spacing_um: " << detail::format_double(vol.spacing_um()[0]) << ' '
      << detail::format_double(vol.spacing_um()[1]) << ' '
      << detail::format_double(vol.spacing_um()[2]) << '\n'
      << "dtype: " << dtype_name(dtype) << '\n'
      << "byte_order: little\n"
      << "data_file: " << raw_name.string() << '\n';
  if (!hdr) throw Error(ErrorCode::IoError, "write failed: " + header_path.string());
}

// --- slicing and preprocessing --------------------------------------------------

Image2D extract_coronal_slice(const Volume3D &vol, int z) {
  if (z < 0 || z >= vol.nz())
    throw Error(ErrorCode::IndexOutOfRange,
                "slice " + std::to_string(z) + " outside [0, " + std::to_string(vol.nz()) + ")");
  if (vol.spacing_um()[0] != vol.spacing_um()[1])
    throw Error(ErrorCode::AnisotropicSlice, "coronal plane spacing differs in x and y");
  Image2D img(vol.nx(), vol.ny(), vol.spacing_um()[0]);
  for (int y = 0; y < vol.ny(); ++y)
    for (int x = 0; x < vol.nx(); ++x) img.at(x, y) = vol.at(x, y, z);
  return img;
}

LabelMap2D extract_coronal_labels(const Volume3D &label_vol, int z) {
  if (z < 0 || z >= label_vol.nz())
    throw Error(ErrorCode::IndexOutOfRange,
                "slice " + std::to_string(z) + " outside [0, " +
                    std::to_string(label_vol.nz()) + ")");
  LabelMap2D out(label_vol.nx(), label_vol.ny());
  for (int y = 0; y < label_vol.ny(); ++y) {
    for (int x = 0; x < label_vol.nx(); ++x) {
      const double v = std::round(label_vol.at(x, y, z));
      out.at(x, y) = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
    }
  }
  return out;
}

Image2D resample_isotropic(const Image2D &img, double target_spacing_um) {
  if (!(target_spacing_um > 0.0) || !std::isfinite(target_spacing_um))
    throw Error(ErrorCode::InvalidArgument, "target spacing must be positive");
  if (target_spacing_um == img.spacing_um()) return img;

  const double ratio = img.spacing_um() / target_spacing_um;
  const int w = static_cast<int>(std::lround(img.width() * ratio));
  const int h = static_cast<int>(std::lround(img.height() * ratio));
  if (w <= 0 || h <= 0)
    throw Error(ErrorCode::EmptyOutput, "target spacing leaves an empty image");

  // First and last pixel centers stay aligned with the source ones.
  const double sx = w > 1 ? static_cast<double>(img.width() - 1) / (w - 1) : 0.0;
  const double sy = h > 1 ? static_cast<double>(img.height() - 1) / (h - 1) : 0.0;
  Image2D out(w, h, target_spacing_um);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      const bool ok = detail::sample_bilinear(img, x * sx, y * sy, v);
      out.at(x, y) = ok ? v : 0.0;
      out.set_valid(x, y, ok);
    }
  }
  return out;
}

namespace {

// Source coordinate offset along one axis: out index + offset = source index.
int fov_offset(int source, int target) {
  return target >= source ? -((target - source) / 2) : (source - target) / 2;
}

}  // namespace

Image2D adjust_fov(const Image2D &img, int target_w, int target_h) {
  if (target_w <= 0 || target_h <= 0)
    throw Error(ErrorCode::InvalidArgument, "target field of view must be positive");
  const int ox = fov_offset(img.width(), target_w);
  const int oy = fov_offset(img.height(), target_h);
  Image2D out(target_w, target_h, img.spacing_um());
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      const int sx = x + ox;
      const int sy = y + oy;
      if (img.contains(sx, sy)) {
        out.at(x, y) = img.at(sx, sy);
        out.set_valid(x, y, img.valid(sx, sy));
      } else {
        out.at(x, y) = 0.0;
        out.set_valid(x, y, false);
      }
    }
  }
  return out;
}

LabelMap2D adjust_fov(const LabelMap2D &labels, int target_w, int target_h) {
  if (target_w <= 0 || target_h <= 0)
    throw Error(ErrorCode::InvalidArgument, "target field of view must be positive");
  const int ox = fov_offset(labels.width, target_w);
  const int oy = fov_offset(labels.height, target_h);
  LabelMap2D out(target_w, target_h);
  out.region_names = labels.region_names;
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      const int sx = x + ox;
      const int sy = y + oy;
      if (sx >= 0 && sy >= 0 && sx < labels.width && sy < labels.height)
        out.at(x, y) = labels.at(sx, sy);
    }
  }
  return out;
}

namespace {

using Mat3 = std::array<double, 9>;

// Inverse of Ry(phi) * Rx(theta), i.e. its transpose.
Mat3 inverse_tilt_rotation(const TiltSpec &tilt) {
  const double th = tilt.theta_deg * std::numbers::pi / 180.0;
  const double ph = tilt.phi_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cp = std::cos(ph), sp = std::sin(ph);
  // Rx = [1 0 0; 0 ct -st; 0 st ct], Ry = [cp 0 sp; 0 1 0; -sp 0 cp]
  const Mat3 r{cp, sp * st, sp * ct,  //
               0.0, ct, -st,          //
               -sp, cp * st, cp * ct};
  return {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
}

template <class Sampler>
Volume3D rotate_volume(const Volume3D &vol, const TiltSpec &tilt, Sampler sample) {
  tilt.validate();
  if (!vol.isotropic())
    throw Error(ErrorCode::AnisotropicVolume, "tilt simulation needs isotropic spacing");
  if (tilt.theta_deg == 0.0 && tilt.phi_deg == 0.0) return vol;

  const Mat3 inv = inverse_tilt_rotation(tilt);
  const double cx = (vol.nx() - 1) / 2.0;
  const double cy = (vol.ny() - 1) / 2.0;
  const double cz = (vol.nz() - 1) / 2.0;
  Volume3D out(vol.dims(), vol.spacing_um());
  for (int z = 0; z < vol.nz(); ++z) {
    for (int y = 0; y < vol.ny(); ++y) {
      for (int x = 0; x < vol.nx(); ++x) {
        const double px = x - cx, py = y - cy, pz = z - cz;
        const double qx = inv[0] * px + inv[1] * py + inv[2] * pz + cx;
        const double qy = inv[3] * px + inv[4] * py + inv[5] * pz + cy;
        const double qz = inv[6] * px + inv[7] * py + inv[8] * pz + cz;
        out.at(x, y, z) = sample(qx, qy, qz);
      }
    }
  }
  return out;
}

}  // namespace

Volume3D simulate_tilt(const Volume3D &vol, const TiltSpec &tilt) {
  return rotate_volume(vol, tilt, [&](double x, double y, double z) {
    double v = 0.0;
    return detail::sample_trilinear(vol, x, y, z, v) ? v : 0.0;
  });
}

Volume3D simulate_tilt_labels(const Volume3D &label_vol, const TiltSpec &tilt) {
  return rotate_volume(label_vol, tilt, [&](double x, double y, double z) {
    const long ix = std::lround(x), iy = std::lround(y), iz = std::lround(z);
    if (ix < 0 || iy < 0 || iz < 0 || ix >= label_vol.nx() || iy >= label_vol.ny() ||
        iz >= label_vol.nz())
      return 0.0;
    return label_vol.at(static_cast<int>(ix), static_cast<int>(iy), static_cast<int>(iz));
  });
}

// --- phantom ------------------------------------------------------------------------

namespace {

double smoothstep(double edge0, double edge1, double t) {
  if (t <= edge0) return 0.0;
  if (t >= edge1) return 1.0;
  const double s = (t - edge0) / (edge1 - edge0);
  return s * s * (3.0 - 2.0 * s);
}

struct PhantomFrame {
  double dx, dy;  // pixel offsets from the in-plane center
  double u, v, w, ax, ay, rho;
};

}  // namespace

PhantomModel::PhantomModel(int nx, int ny, int nz, std::uint64_t seed)
    : nx_(nx), ny_(ny), nz_(nz) {
  if (nx < 32 || ny < 32 || nz < 32)
    throw Error(ErrorCode::DimsTooSmall, "phantom dims must be >= 32 each");
  // Blob centers are in ellipse-relative units, sigma in normalized units.
  blobs_ = {
      {45.0, 0.14, -0.45, -0.35, 0.70, 0.50},
      {-35.0, 0.12, 0.45, 0.35, -0.60, -0.30},
      {40.0, 0.06, 0.00, 0.50, 0.20, -0.90},
  };
  std::mt19937_64 rng(seed);
  // Log-uniform wavelengths give every pyramid level texture at block scale.
  const double longest = std::max(kMinWavelength * 2.0, std::max(nx, ny) / 3.0);
  std::uniform_real_distribution<double> log_wavelength(std::log(kMinWavelength),
                                                        std::log(longest));
  std::uniform_real_distribution<double> orientation(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> zfreq(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < kWaveCount; ++k) {
    Wave wave{};
    wave.amplitude = kWaveAmplitude;
    const double lambda = std::exp(log_wavelength(rng));
    const double angle = orientation(rng);
    wave.fx = std::cos(angle) / lambda;
    wave.fy = std::sin(angle) / lambda;
    wave.fz = zfreq(rng);
    wave.phase = phase(rng);
    waves_.push_back(wave);
  }
}

namespace {

PhantomFrame phantom_frame(int nx, int ny, int nz, double x, double y, double z) {
  PhantomFrame f{};
  f.dx = x - (nx - 1) / 2.0;
  f.dy = y - (ny - 1) / 2.0;
  f.u = f.dx / (nx / 2.0);
  f.v = f.dy / (ny / 2.0);
  f.w = z / (nz - 1);
  const double r = 0.55 + 0.40 * f.w;
  f.ax = 0.90 * r;
  f.ay = 0.75 * r;
  f.rho = std::hypot(f.u / f.ax, f.v / f.ay);
  return f;
}

double blob_distance2(const PhantomModel::Blob &b, const PhantomFrame &f) {
  const double bu = f.ax * (b.u0 + f.w * b.du);
  const double bv = f.ay * (b.v0 + f.w * b.dv);
  return (f.u - bu) * (f.u - bu) + (f.v - bv) * (f.v - bv);
}

}  // namespace

double PhantomModel::value(double x, double y, double z) const {
  const PhantomFrame f = phantom_frame(nx_, ny_, nz_, x, y, z);
  const double ramp = kRampBase + kRampSlope * f.w;
  const double inside = 1.0 - smoothstep(1.0 - kEdge, 1.0, f.rho);
  if (inside == 0.0) return ramp;

  double features = kCoreValue + kShellValue * smoothstep(0.78, 0.82, f.rho);
  for (const Blob &b : blobs_)
    features += b.amplitude * std::exp(-blob_distance2(b, f) / (2.0 * b.sigma * b.sigma));
  for (const Wave &wv : waves_)
    features += wv.amplitude * std::sin(2.0 * std::numbers::pi *
                                            (wv.fx * f.dx + wv.fy * f.dy + wv.fz * f.w) +
                                        wv.phase);
  return ramp + inside * features;
}

std::uint16_t PhantomModel::label(double x, double y, double z) const {
  const PhantomFrame f = phantom_frame(nx_, ny_, nz_, x, y, z);
  if (f.rho >= 1.0 - kEdge / 2.0) return 0;
  const auto within = [&](const Blob &b, double k) {
    return blob_distance2(b, f) < (k * b.sigma) * (k * b.sigma);
  };
  if (within(blobs_[2], 2.0)) return 6;
  if (within(blobs_[0], 1.5)) return 2;
  if (within(blobs_[1], 1.5)) return 3;
  if (f.rho >= 0.8) return 1;
  return f.v < 0.0 ? 4 : 5;
}

std::map<std::uint16_t, std::string> PhantomModel::region_names() {
  return {{1, "shell"},      {2, "blob_a"},     {3, "blob_b"},
          {4, "core_upper"}, {5, "core_lower"}, {6, "spot"}};
}

Volume3D make_phantom(int nx, int ny, int nz, std::uint64_t seed) {
  const PhantomModel model(nx, ny, nz, seed);
  Volume3D vol({nx, ny, nz}, {kDefaultSpacingUm, kDefaultSpacingUm, kDefaultSpacingUm});
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) vol.at(x, y, z) = model.value(x, y, z);
  return vol;
}

Volume3D make_phantom_labels(int nx, int ny, int nz, std::uint64_t seed) {
  const PhantomModel model(nx, ny, nz, seed);
  Volume3D vol({nx, ny, nz}, {kDefaultSpacingUm, kDefaultSpacingUm, kDefaultSpacingUm});
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) vol.at(x, y, z) = model.label(x, y, z);
  return vol;
}

// --- 2D files -------------------------------------------------------------------------

namespace {

fs::path sidecar_path(const fs::path &path) { return fs::path(path.string() + ".meta"); }

fs::path mask_path(const fs::path &path) {
  return path.parent_path() / (path.stem().string() + ".mask.pgm");
}

double parse_double(const std::string &s, const fs::path &path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw Error(ErrorCode::MalformedImage, path.string() + ": bad number '" + s + "'");
  }
}

}  // namespace

void save_image(const Image2D &img, const fs::path &path) {
  if (img.empty()) throw Error(ErrorCode::InvalidArgument, "cannot save an empty image");
  const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
  const double lo = *lo_it;
  const double hi = *hi_it;

  detail::PgmData pgm{img.width(), img.height(), 65535, {}};
  pgm.pixels.reserve(img.size());
  for (double v : img.data()) {
    const double q = hi > lo ? std::round((v - lo) / (hi - lo) * 65535.0) : 0.0;
    pgm.pixels.push_back(static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0)));
  }
  detail::write_pgm(path, pgm);

  const bool has_invalid = img.valid_count() != img.size();
  if (has_invalid) {
    detail::PgmData mask{img.width(), img.height(), 255, {}};
    mask.pixels.reserve(img.size());
    for (auto m : img.mask()) mask.pixels.push_back(m ? 255 : 0);
    detail::write_pgm(mask_path(path), mask);
  } else {
    std::error_code ec;
    fs::remove(mask_path(path), ec);
  }

  std::ofstream meta(sidecar_path(path));
  if (!meta) throw Error(ErrorCode::IoError, "cannot write " + sidecar_path(path).string());
  meta << "spacing_um: " << detail::format_double(img.spacing_um()) << '\n'
       << "intensity_min: " << detail::format_double(lo) << '\n'
       << "intensity_max: " << detail::format_double(hi) << '\n';
  if (has_invalid) meta << "mask_file: " << mask_path(path).filename().string() << '\n';
}

Image2D load_image(const fs::path &path) {
  const detail::PgmData pgm = detail::read_pgm(path);
  double spacing = kDefaultSpacingUm;
  double lo = 0.0;
  double hi = static_cast<double>(pgm.maxval);
  std::optional<fs::path> mask_file;

  const fs::path meta = sidecar_path(path);
  if (fs::exists(meta)) {
    const auto kv = detail::read_key_values(meta);
    for (const auto &[key, value] : kv) {
      if (key == "spacing_um") spacing = parse_double(value, meta);
      else if (key == "intensity_min") lo = parse_double(value, meta);
      else if (key == "intensity_max") hi = parse_double(value, meta);
      else if (key == "mask_file") mask_file = path.parent_path() / value;
      else throw Error(ErrorCode::MalformedImage, meta.string() + ": unknown key '" + key + "'");
    }
    if (!(spacing > 0.0) || hi < lo)
      throw Error(ErrorCode::MalformedImage, meta.string() + ": inconsistent sidecar");
  }

  Image2D img(pgm.width, pgm.height, spacing);
  const double scale = (hi - lo) / pgm.maxval;
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = lo + pgm.pixels[i] * scale;

  if (mask_file) {
    const detail::PgmData mask = detail::read_pgm(*mask_file);
    if (mask.width != pgm.width || mask.height != pgm.height)
      throw Error(ErrorCode::MalformedImage, mask_file->string() + ": mask dims differ");
    for (std::size_t i = 0; i < img.size(); ++i) img.mask()[i] = mask.pixels[i] != 0 ? 1 : 0;
  }
  return img;
}

void save_labels(const LabelMap2D &labels, const fs::path &path) {
  detail::write_pgm(path, {labels.width, labels.height, 65535, labels.labels});
  const fs::path names = fs::path(path.string() + ".csv");
  if (labels.region_names.empty()) {
    std::error_code ec;
    fs::remove(names, ec);
    return;
  }
  std::ofstream out(names);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + names.string());
  out << "id,name\n";
  for (const auto &[id, name] : labels.region_names) out << id << ',' << name << '\n';
}

LabelMap2D load_labels(const fs::path &path) {
  detail::PgmData pgm = detail::read_pgm(path);
  LabelMap2D labels;
  labels.width = pgm.width;
  labels.height = pgm.height;
  labels.labels = std::move(pgm.pixels);

  const fs::path names = fs::path(path.string() + ".csv");
  if (fs::exists(names)) {
    std::ifstream in(names);
    std::string line;
    std::getline(in, line);
    if (detail::trim(line) != "id,name")
      throw Error(ErrorCode::MalformedImage, names.string() + ": expected header 'id,name'");
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw Error(ErrorCode::MalformedImage, names.string() + ": bad row '" + line + "'");
      const double id = parse_double(line.substr(0, comma), names);
      if (id < 0 || id > 65535 || id != std::floor(id))
        throw Error(ErrorCode::MalformedImage, names.string() + ": bad id");
      labels.region_names[static_cast<std::uint16_t>(id)] =
          detail::trim(line.substr(comma + 1));
    }
  }
  return labels;
}

}  // namespace slicefinder
