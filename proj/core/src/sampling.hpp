#pragma once

// Interpolation kernels. A neighbour contributes only when its weight is
// non-zero, so integer positions reproduce pixel values exactly and the last
// row/column can be sampled without reading past the edge.

#include <cmath>

#include "slicefinder/imgvol.hpp"

namespace slicefinder::detail {

// False when a contributing pixel is outside the image or invalid.
inline bool sample_bilinear(const Image2D &img, double x, double y, double &out) {
  if (!(x > -1.0 && y > -1.0 && x < img.width() && y < img.height())) return false;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;

  const double wx[2] = {1.0 - ax, ax};
  const double wy[2] = {1.0 - ay, ay};
  double acc = 0.0;
  for (int j = 0; j < 2; ++j) {
    if (wy[j] == 0.0) continue;
    for (int i = 0; i < 2; ++i) {
      if (wx[i] == 0.0) continue;
      const int xi = x0 + i;
      const int yj = y0 + j;
      if (!img.contains(xi, yj) || !img.valid(xi, yj)) return false;
      acc += wx[i] * wy[j] * img.at(xi, yj);
    }
  }
  out = acc;
  return true;
}

// Trilinear; false when a contributing voxel is outside the volume.
inline bool sample_trilinear(const Volume3D &vol, double x, double y, double z,
                             double &out) {
  if (!(x > -1.0 && y > -1.0 && z > -1.0 && x < vol.nx() && y < vol.ny() &&
        z < vol.nz()))
    return false;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double fz = std::floor(z);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int z0 = static_cast<int>(fz);
  const double wx[2] = {1.0 - (x - fx), x - fx};
  const double wy[2] = {1.0 - (y - fy), y - fy};
  const double wz[2] = {1.0 - (z - fz), z - fz};
  double acc = 0.0;
  for (int k = 0; k < 2; ++k) {
    if (wz[k] == 0.0) continue;
    for (int j = 0; j < 2; ++j) {
      if (wy[j] == 0.0) continue;
      for (int i = 0; i < 2; ++i) {
        if (wx[i] == 0.0) continue;
        const int xi = x0 + i, yj = y0 + j, zk = z0 + k;
        if (xi < 0 || yj < 0 || zk < 0 || xi >= vol.nx() || yj >= vol.ny() ||
            zk >= vol.nz())
          return false;
        acc += wx[i] * wy[j] * wz[k] * vol.at(xi, yj, zk);
      }
    }
  }
  out = acc;
  return true;
}

}  // namespace slicefinder::detail
