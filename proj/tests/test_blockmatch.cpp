#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "slicefinder/blockmatch.hpp"
#include "slicefinder/error.hpp"
#include "support.hpp"

namespace sf = slicefinder;
using sf::test::max_corner_error;
using sf::test::mean_corner_error;

namespace {

template <class F>
void expect_code(sf::ErrorCode code, F &&f) {
  try {
    f();
    ADD_FAILURE() << "expected " << sf::to_string(code);
  } catch (const sf::Error &e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

double angle_deg(const sf::LinearTransform2D &T) {
  return T.angle() * 180.0 / std::numbers::pi;
}

}  // namespace

TEST(BuildPyramid, SingleLevelIsInput) {
  const auto img = sf::test::random_texture(9, 7, 1);
  const auto pyr = sf::build_pyramid(img, 1);
  ASSERT_EQ(pyr.size(), 1u);
  EXPECT_EQ(pyr[0], img);
}

TEST(BuildPyramid, QuadrantMeans) {
  sf::Image2D img(4, 4, 25.0);
  for (int i = 0; i < 16; ++i) img.data()[static_cast<std::size_t>(i)] = i;
  const auto pyr = sf::build_pyramid(img, 2);
  ASSERT_EQ(pyr.size(), 2u);
  ASSERT_EQ(pyr[1].width(), 2);
  EXPECT_EQ(pyr[1].at(0, 0), (0 + 1 + 4 + 5) / 4.0);
  EXPECT_EQ(pyr[1].at(1, 0), (2 + 3 + 6 + 7) / 4.0);
  EXPECT_EQ(pyr[1].at(0, 1), (8 + 9 + 12 + 13) / 4.0);
  EXPECT_EQ(pyr[1].at(1, 1), (10 + 11 + 14 + 15) / 4.0);
  EXPECT_EQ(pyr[1].spacing_um(), 50.0);
}

TEST(BuildPyramid, ConstantStaysConstant) {
  const sf::Image2D img(32, 32, 25.0, 7.0);
  for (const auto &level : sf::build_pyramid(img, 4))
    for (double v : level.data()) EXPECT_EQ(v, 7.0);
}

TEST(BuildPyramid, TooManyLevels) {
  const sf::Image2D img(32, 32, 25.0, 1.0);
  expect_code(sf::ErrorCode::TooManyLevels, [&] { sf::build_pyramid(img, 3, 16); });
}

TEST(MatchBlocks, SelfMatchHasZeroDisplacement) {
  const auto img = sf::test::random_texture(64, 64, 2);
  const auto corrs = sf::match_blocks(img, img, {});
  ASSERT_FALSE(corrs.empty());
  for (const auto &c : corrs) {
    EXPECT_EQ(c.ref_point, c.flt_point);
    EXPECT_DOUBLE_EQ(c.weight, 1.0);
  }
}

TEST(MatchBlocks, RecoversIntegerShift) {
  const auto img = sf::test::random_texture(64, 64, 3);
  const auto shifted = sf::warp_image(img, sf::LinearTransform2D::rigid(0.0, {3.0, 0.0}));
  sf::BlockMatchParams p;
  p.search_radius = 4;
  const auto corrs = sf::match_blocks(img, shifted, p);
  ASSERT_FALSE(corrs.empty());
  int checked = 0;
  for (const auto &c : corrs) {
    // Blocks whose true match leaves the image cannot find it.
    if (c.ref_point.x + 3.0 + 3.5 > 63.0) continue;
    ++checked;
    EXPECT_EQ(c.flt_point.x - c.ref_point.x, 3.0);
    EXPECT_EQ(c.flt_point.y - c.ref_point.y, 0.0);
  }
  EXPECT_GT(checked, 10);
}

TEST(MatchBlocks, ConstantReferenceHasNoBlocks) {
  const sf::Image2D flat(32, 32, 25.0, 4.0);
  const auto img = sf::test::random_texture(32, 32, 4);
  expect_code(sf::ErrorCode::NoValidBlocks, [&] { sf::match_blocks(flat, img, {}); });
}

TEST(MatchBlocks, InvalidParamsRejected) {
  const auto img = sf::test::random_texture(32, 32, 4);
  sf::BlockMatchParams p;
  p.block_size = 1;
  expect_code(sf::ErrorCode::InvalidArgument, [&] { sf::match_blocks(img, img, p); });
  p = {};
  p.lts_keep_fraction = 0.0;
  expect_code(sf::ErrorCode::InvalidArgument, [&] { sf::match_blocks(img, img, p); });
}

TEST(EstimateTransformLts, RejectsPlantedOutliers) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coord(0.0, 200.0);
  const auto truth = sf::LinearTransform2D::rigid(0.2, {5.0, -3.0});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<sf::Correspondence> corrs;
    for (int i = 0; i < 100; ++i) {
      const sf::Point2 p{coord(rng), coord(rng)};
      const bool outlier = i % 10 < 3;
      corrs.push_back({p, outlier ? sf::Point2{coord(rng), coord(rng)} : truth.apply(p), 1.0});
    }
    const auto fit = sf::estimate_transform_lts(corrs, sf::TransformKind::Rigid, 0.5);
    ASSERT_LT(max_corner_error(fit, truth, 200, 200), 1e-6) << trial;
  }
}

TEST(EstimateTransformLts, NoOutliersEqualsPlainFit) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> coord(0.0, 100.0);
  const auto truth = sf::LinearTransform2D::affine({1.1, 0.05, -0.1, 0.95}, {2.0, 1.0});
  std::vector<sf::Correspondence> corrs;
  for (int i = 0; i < 40; ++i) {
    const sf::Point2 p{coord(rng), coord(rng)};
    corrs.push_back({p, truth.apply(p), 1.0});
  }
  const auto lts = sf::estimate_transform_lts(corrs, sf::TransformKind::Affine, 0.5);
  const auto plain = sf::affine_from_correspondences(corrs);
  EXPECT_LT(max_corner_error(lts, plain, 100, 100), 1e-9);
}

TEST(EstimateTransformLts, TwoPairsCannotFitAffine) {
  const std::vector<sf::Correspondence> two{{{0, 0}, {1, 0}, 1.0}, {{5, 1}, {6, 1}, 1.0}};
  expect_code(sf::ErrorCode::DegenerateConfiguration,
              [&] { sf::estimate_transform_lts(two, sf::TransformKind::Affine, 0.5); });
}

TEST(RegisterImages, SelfRegistrationIsIdentity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = sf::test::random_texture(64, 64, rng());
    const auto kind = trial % 2 ? sf::TransformKind::Affine : sf::TransformKind::Rigid;
    const auto r = sf::register_images(img, img, kind);
    ASSERT_LT(max_corner_error(r.transform, sf::LinearTransform2D::identity(), 64, 64), 0.5)
        << trial;
  }
  const auto phantom = sf::test::phantom_slice(64, 64, 96, 40, 1);
  const auto r = sf::register_images(phantom, phantom, sf::TransformKind::Rigid);
  EXPECT_LT(std::abs(angle_deg(r.transform)), 0.5);
  EXPECT_LT(std::hypot(r.transform.translation().x, r.transform.translation().y), 0.5);
}

TEST(RegisterImages, RecoversIntegerTranslations) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> shift(-4, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = sf::test::random_texture(64, 64, rng());
    const sf::Point2 d{double(shift(rng)), double(shift(rng))};
    const auto moved = sf::warp_image(img, sf::LinearTransform2D::rigid(0.0, d));
    const auto r = sf::register_images(img, moved, sf::TransformKind::Rigid);
    const auto expected = sf::LinearTransform2D::rigid(0.0, {-d.x, -d.y});
    ASSERT_LT(max_corner_error(r.transform, expected, 64, 64), 0.25)
        << trial << " d=(" << d.x << ',' << d.y << ')';
  }
}

TEST(RegisterImages, ResultKindsRespectTheirConstraints) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> angle(-6.0, 6.0), shift(-3.0, 3.0), scale(0.9, 1.1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = sf::test::random_texture(64, 64, rng());
    const double s = scale(rng);
    const auto M = sf::test::about_center({s, 0.05, -0.03, 1.0 / s}, {shift(rng), shift(rng)},
                                          64, 64, sf::TransformKind::Affine);
    const auto moved = sf::warp_image(img, sf::compose(M, sf::test::rigid_about_center(angle(rng), {0, 0}, 64, 64)));
    const auto rigid = sf::register_images(img, moved, sf::TransformKind::Rigid);
    const auto &m = rigid.transform.matrix();
    ASSERT_NEAR(m[0] * m[0] + m[2] * m[2], 1.0, 1e-9);
    ASSERT_NEAR(m[0] * m[1] + m[2] * m[3], 0.0, 1e-9);
    ASSERT_NEAR(rigid.transform.det(), 1.0, 1e-9);
    try {
      const auto affine = sf::register_images(img, moved, sf::TransformKind::Affine);
      ASSERT_NO_THROW(sf::check_deformation(affine.transform));
    } catch (const sf::Error &e) {
      ASSERT_EQ(e.code(), sf::ErrorCode::ExcessiveDeformation);
    }
  }
}

TEST(RegisterImages, Deterministic) {
  const auto img = sf::test::phantom_slice(96, 96, 64, 20, 3);
  const auto moved = sf::warp_image(img, sf::test::rigid_about_center(4.0, {2.5, -1.0}, 96, 96));
  for (auto kind : {sf::TransformKind::Rigid, sf::TransformKind::Affine}) {
    const auto a = sf::register_images(img, moved, kind);
    const auto b = sf::register_images(img, moved, kind);
    EXPECT_EQ(a.transform, b.transform);
    EXPECT_EQ(a.residual_rms, b.residual_rms);
    EXPECT_EQ(a.correspondences_used, b.correspondences_used);
  }
}

TEST(RegisterImages, FinestLevelNeverEndsWorseThanItsFirstIteration) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> angle(-8.0, 8.0), shift(-5.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = sf::test::random_texture(64, 64, rng());
    const auto moved =
        sf::warp_image(img, sf::test::rigid_about_center(angle(rng), {shift(rng), shift(rng)}, 64, 64));
    const auto kind = trial % 2 ? sf::TransformKind::Affine : sf::TransformKind::Rigid;
    try {
      const auto r = sf::register_images(img, moved, kind);
      ASSERT_LE(r.residual_rms, r.first_residual_rms) << trial;
    } catch (const sf::Error &e) {
      ASSERT_EQ(e.code(), sf::ErrorCode::ExcessiveDeformation);
    }
  }
}

TEST(RegisterImages, RecoversRotationAndShiftOnPhantom) {
  const auto ref = sf::test::phantom_slice(256, 256, 64, 32, 1);
  const auto M = sf::test::rigid_about_center(8.0, {6.0, -4.0}, 256, 256);
  const auto flt = sf::warp_image(ref, M);
  sf::BlockMatchParams p;
  p.block_stride = 4;  // stride 8 settles about 0.6 degrees short on this slice
  const auto r = sf::register_images(ref, flt, sf::TransformKind::Rigid, p);
  EXPECT_LT(mean_corner_error(r.transform, sf::invert(M), 256, 256), 1.0);
}

TEST(RegisterImages, RecoversScaleWithAffineOnly) {
  const auto ref = sf::test::phantom_slice(256, 256, 64, 32, 1);
  const auto M = sf::test::about_center({1.15, 0, 0, 1.15}, {0, 0}, 256, 256,
                                        sf::TransformKind::Affine);
  const auto flt = sf::warp_image(ref, M);
  const auto affine = sf::register_images(ref, flt, sf::TransformKind::Affine);
  const auto &m = affine.transform.matrix();
  // The registration maps flt back onto ref, so its scale is 1 / 1.15.
  EXPECT_NEAR(1.0 / m[0], 1.15, 0.02 * 1.15);
  EXPECT_NEAR(1.0 / m[3], 1.15, 0.02 * 1.15);
  const auto rigid = sf::register_images(ref, flt, sf::TransformKind::Rigid);
  EXPECT_GT(rigid.residual_rms, 0.0);
}

TEST(RegisterImages, DimMismatchRejected) {
  const auto a = sf::test::random_texture(64, 64, 1);
  const auto b = sf::test::random_texture(64, 60, 1);
  expect_code(sf::ErrorCode::DimMismatch,
              [&] { sf::register_images(a, b, sf::TransformKind::Rigid); });
}
