// Hot paths of the matching pipeline on phantom data.

#include <benchmark/benchmark.h>

#include <cmath>

#include "slicefinder/blockmatch.hpp"
#include "slicefinder/cartography.hpp"
#include "slicefinder/imgvol.hpp"
#include "slicefinder/matcher.hpp"
#include "slicefinder/metrics.hpp"
#include "slicefinder/xform.hpp"

namespace sf = slicefinder;

namespace {

const sf::Volume3D &phantom(int side) {
  static const sf::Volume3D small = sf::make_phantom(64, 64, 96, 1);
  static const sf::Volume3D large = sf::make_phantom(256, 256, 64, 1);
  return side <= 64 ? small : large;
}

sf::LinearTransform2D rotation_about_center(double deg, int side) {
  const double a = deg * 3.141592653589793 / 180.0;
  const double c = (side - 1) / 2.0;
  return sf::LinearTransform2D::rigid(
      a, {c - (std::cos(a) * c - std::sin(a) * c) + 2.0,
          c - (std::sin(a) * c + std::cos(a) * c) - 1.5});
}

void BM_Nmi(benchmark::State &state) {
  const int side = static_cast<int>(state.range(0));
  const auto &vol = phantom(side);
  const auto a = sf::extract_coronal_slice(vol, 20);
  const auto b = sf::extract_coronal_slice(vol, 24);
  for (auto _ : state) benchmark::DoNotOptimize(sf::nmi(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a.size()));
}
BENCHMARK(BM_Nmi)->Arg(64)->Arg(256);

void BM_WarpImage(benchmark::State &state) {
  const int side = static_cast<int>(state.range(0));
  const auto img = sf::extract_coronal_slice(phantom(side), 30);
  const auto T = rotation_about_center(7.0, side);
  for (auto _ : state) benchmark::DoNotOptimize(sf::warp_image(img, T));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(img.size()));
}
BENCHMARK(BM_WarpImage)->Arg(64)->Arg(256);

void BM_MatchBlocks(benchmark::State &state) {
  const int side = static_cast<int>(state.range(0));
  const auto ref = sf::extract_coronal_slice(phantom(side), 30);
  const auto flt = sf::warp_image(ref, rotation_about_center(3.0, side));
  for (auto _ : state) benchmark::DoNotOptimize(sf::match_blocks(ref, flt, {}));
}
BENCHMARK(BM_MatchBlocks)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_Register(benchmark::State &state) {
  const int side = static_cast<int>(state.range(0));
  const auto kind = state.range(1) ? sf::TransformKind::Affine : sf::TransformKind::Rigid;
  const auto ref = sf::extract_coronal_slice(phantom(side), 30);
  const auto flt = sf::warp_image(ref, rotation_about_center(6.0, side));
  for (auto _ : state) benchmark::DoNotOptimize(sf::register_images(ref, flt, kind));
}
BENCHMARK(BM_Register)
    ->Args({64, 0})
    ->Args({64, 1})
    ->Args({256, 0})
    ->Args({256, 1})
    ->Unit(benchmark::kMillisecond);

void BM_MatchSlice(benchmark::State &state) {
  const auto &vol = phantom(64);
  const auto s = sf::extract_coronal_slice(vol, 40);
  for (auto _ : state) benchmark::DoNotOptimize(sf::match_slice(s, vol, {}));
  state.SetItemsProcessed(state.iterations() * vol.nz());
}
BENCHMARK(BM_MatchSlice)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
