#pragma once

// Shared fixtures: scratch directories, random images and corner errors.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "slicefinder/imgvol.hpp"
#include "slicefinder/xform.hpp"

namespace slicefinder::test {

class ScratchDir {
 public:
  explicit ScratchDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("slicefinder_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir &) = delete;
  ScratchDir &operator=(const ScratchDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Smooth random texture: a sum of a few random sinusoids plus a gradient.
inline Image2D random_texture(int w, int h, std::uint64_t seed) {
  // Uniform noise smoothed by two 3x3 box passes: aperiodic with a few-pixel grain.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 255.0);
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (auto &x : v) x = noise(rng);
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> next(v.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            sum += v[static_cast<std::size_t>(yy) * w + xx];
            ++n;
          }
        next[static_cast<std::size_t>(y) * w + x] = sum / n;
      }
    v.swap(next);
  }
  Image2D img(w, h, kDefaultSpacingUm);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = v[static_cast<std::size_t>(y) * w + x];
  return img;
}

// Slice z of the phantom without building the whole volume.
inline Image2D phantom_slice(int nx, int ny, int nz, int z, std::uint64_t seed) {
  const PhantomModel model(nx, ny, nz, seed);
  Image2D img(nx, ny, kDefaultSpacingUm);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) img.at(x, y) = model.value(x, y, z);
  return img;
}

// Maximum over the four image corners of |A(c) - B(c)|.
inline double max_corner_error(const LinearTransform2D &a, const LinearTransform2D &b,
                               int w, int h) {
  double worst = 0.0;
  for (Point2 c : {Point2{0, 0}, Point2{double(w - 1), 0}, Point2{0, double(h - 1)},
                   Point2{double(w - 1), double(h - 1)}}) {
    const Point2 p = a.apply(c);
    const Point2 q = b.apply(c);
    worst = std::max(worst, std::hypot(p.x - q.x, p.y - q.y));
  }
  return worst;
}

inline double mean_corner_error(const LinearTransform2D &a, const LinearTransform2D &b,
                                int w, int h) {
  double sum = 0.0;
  for (Point2 c : {Point2{0, 0}, Point2{double(w - 1), 0}, Point2{0, double(h - 1)},
                   Point2{double(w - 1), double(h - 1)}}) {
    const Point2 p = a.apply(c);
    const Point2 q = b.apply(c);
    sum += std::hypot(p.x - q.x, p.y - q.y);
  }
  return sum / 4.0;
}

// Map about the image center: x -> c + A (x - c) + t.
inline LinearTransform2D about_center(std::array<double, 4> m, Point2 t, int w, int h,
                                      TransformKind kind) {
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const Point2 tt{cx + t.x - (m[0] * cx + m[1] * cy), cy + t.y - (m[2] * cx + m[3] * cy)};
  return LinearTransform2D::from_matrix(kind, m, tt);
}

inline LinearTransform2D rigid_about_center(double deg, Point2 t, int w, int h) {
  const double a = deg * 3.141592653589793 / 180.0;
  return about_center({std::cos(a), -std::sin(a), std::sin(a), std::cos(a)}, t, w, h,
                      TransformKind::Rigid);
}

}  // namespace slicefinder::test
