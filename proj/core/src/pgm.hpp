#pragma once

// Minimal binary PGM (P5) codec shared by image, label and heatmap I/O.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace slicefinder::detail {

struct PgmData {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> pixels;  // row-major
};

PgmData read_pgm(const std::filesystem::path &path);
// maxval <= 255 writes one byte per pixel, otherwise two (big-endian).
void write_pgm(const std::filesystem::path &path, const PgmData &pgm);

}  // namespace slicefinder::detail
