#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "slicefinder/cartography.hpp"
#include "slicefinder/error.hpp"
#include "support.hpp"

namespace sf = slicefinder;
using sf::test::ScratchDir;

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

sf::MatchParams small_params() {
  sf::MatchParams p;
  p.registration.pyramid_levels = 2;
  return p;
}

const sf::Volume3D &phantom48() {
  static const sf::Volume3D vol = sf::make_phantom(40, 40, 48, 1);
  return vol;
}

const sf::NmiCartography &self_cartography() {
  static const sf::NmiCartography carto =
      sf::build_cartography(phantom48(), phantom48(), small_params(), 1);
  return carto;
}

sf::ExpertPairs identity_pairs(int n, int step) {
  sf::ExpertPairs p;
  for (int i = 0; i < n; i += step) p.pairs.emplace_back(i, i);
  return p;
}

// Reads the raw samples of a binary 16-bit PGM.
std::vector<int> read_pgm16(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  std::vector<int> px;
  for (int i = 0; i < w * h; ++i) {
    const int hi = in.get();
    const int lo = in.get();
    px.push_back(hi * 256 + lo);
  }
  return px;
}

sf::NmiCartography make_carto(int n_e, int n_t, const std::vector<double> &values) {
  sf::NmiCartography c(n_e, n_t);
  for (int i = 0; i < n_e; ++i)
    for (int j = 0; j < n_t; ++j) {
      const double v = values[static_cast<std::size_t>(i * n_t + j)];
      const sf::Score s = std::isnan(v) ? sf::Score{} : sf::Score{v};
      c.set(sf::Strategy::Rigid, i, j, s);
      c.set(sf::Strategy::Affine, i, j, s);
    }
  c.rebuild_mean();
  return c;
}

}  // namespace

TEST(BuildCartography, SelfCartographyIsDiagonal) {
  const auto &c = self_cartography();
  ASSERT_EQ(c.n_e(), 48);
  ASSERT_EQ(c.n_t(), 48);
  for (auto s : sf::kAllStrategies)
    for (int i = 0; i < c.n_e(); ++i)
      EXPECT_EQ(sf::argmax_with_ties(c.row(s, i)), static_cast<std::size_t>(i))
          << sf::to_string(s) << " row " << i;
}

TEST(BuildCartography, MeanMatrixIsAverageOnCommonSupport) {
  const auto &c = self_cartography();
  for (int i = 0; i < c.n_e(); ++i)
    for (int j = 0; j < c.n_t(); ++j) {
      const auto r = c.at(sf::Strategy::Rigid, i, j);
      const auto a = c.at(sf::Strategy::Affine, i, j);
      const auto m = c.at(sf::Strategy::Mean, i, j);
      if (r && a) {
        ASSERT_EQ(*m, (*r + *a) / 2.0);
      } else {
        ASSERT_FALSE(m);
      }
    }
}

TEST(BuildCartography, WorkerCountsGiveIdenticalMatrices) {
  const sf::Volume3D vol = sf::make_phantom(40, 40, 32, 2);
  const auto one = sf::build_cartography(vol, vol, small_params(), 1);
  for (int workers : {2, 8}) {
    const auto many = sf::build_cartography(vol, vol, small_params(), workers);
    for (auto s : sf::kAllStrategies) EXPECT_EQ(one.matrix(s), many.matrix(s)) << workers;
    EXPECT_EQ(one.best_transforms, many.best_transforms);
  }
}

TEST(BuildCartography, ConstantRowIsIsolated) {
  const sf::Volume3D tmpl = sf::make_phantom(40, 40, 32, 3);
  sf::Volume3D exp = tmpl;
  const int bad = 7;
  for (int y = 0; y < exp.ny(); ++y)
    for (int x = 0; x < exp.nx(); ++x) exp.at(x, y, bad) = 50.0;
  const auto clean = sf::build_cartography(tmpl, tmpl, small_params());
  const auto c = sf::build_cartography(exp, tmpl, small_params());
  for (auto s : sf::kAllStrategies)
    for (int i = 0; i < c.n_e(); ++i)
      for (int j = 0; j < c.n_t(); ++j) {
        if (i == bad) {
          ASSERT_FALSE(c.at(s, i, j));
        } else {
          ASSERT_EQ(c.at(s, i, j), clean.at(s, i, j));
        }
      }
  const auto report = sf::evaluate(c, identity_pairs(32, 1));
  for (const auto &ev : report.strategies) EXPECT_EQ(ev.excluded_rows, 1);
}

TEST(BuildCartography, RowsDoNotDependOnOtherRows) {
  const sf::Volume3D tmpl = sf::make_phantom(40, 40, 32, 4);
  const auto full = sf::build_cartography(tmpl, tmpl, small_params());
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<int> rows;
    for (int z = 0; z < 32; ++z)
      if (std::bernoulli_distribution(0.3)(rng)) rows.push_back(z);
    if (rows.empty()) rows.push_back(0);
    sf::Volume3D sub({40, 40, static_cast<int>(rows.size())}, tmpl.spacing_um());
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) sub.at(x, y, static_cast<int>(k)) = tmpl.at(x, y, rows[k]);
    const auto part = sf::build_cartography(sub, tmpl, small_params());
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (auto s : sf::kAllStrategies) {
        const auto a = part.row(s, static_cast<int>(k));
        const auto b = full.row(s, rows[k]);
        ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
      }
  }
}

TEST(BuildCartography, CancelledBeforeStartIsIncomplete) {
  const sf::Volume3D vol = sf::make_phantom(40, 40, 32, 1);
  std::atomic<bool> cancel{true};
  const auto c = sf::build_cartography(vol, vol, small_params(), 2, &cancel);
  EXPECT_FALSE(c.meta.complete);
  EXPECT_EQ(c.meta.rows_done, 0);
  EXPECT_FALSE(sf::make_provenance(c, vol, vol).complete);
}

TEST(ExpertGroundTruth, IdentityPairs) {
  const auto fit = sf::expert_ground_truth(identity_pairs(20, 1));
  EXPECT_DOUBLE_EQ(fit.a, 1.0);
  EXPECT_NEAR(fit.b, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(fit.r2, 1.0);
}

TEST(ExpertGroundTruth, UniformCoverageSlope) {
  sf::ExpertPairs p;
  for (int i = 0; i < 417; i += 10)
    p.pairs.emplace_back(i, static_cast<int>(std::lround(i * 435.0 / 416.0)));
  EXPECT_NEAR(sf::expert_ground_truth(p).a, 436.0 / 417.0, 0.005);
}

TEST(ExpertGroundTruth, SinglePairIsDegenerate) {
  sf::ExpertPairs p;
  p.pairs.emplace_back(3, 4);
  expect_code(sf::ErrorCode::DegenerateX, [&] { sf::expert_ground_truth(p); });
}

TEST(DeltaSn, Examples) {
  EXPECT_EQ(sf::delta_sn(244, 240.0), 4);
  EXPECT_EQ(sf::delta_sn(17, 17.2), 0);
  EXPECT_EQ(sf::delta_sn(40, 40.5), 1);
  EXPECT_EQ(sf::delta_sn(-3, -2.5), 0);
  EXPECT_EQ(sf::round_half_away(-2.5), -3);
}

TEST(Evaluate, SelfCartographyIsPerfect) {
  const auto report = sf::evaluate(self_cartography(), identity_pairs(48, 3));
  for (const auto &ev : report.strategies) {
    EXPECT_DOUBLE_EQ(ev.fit.r2, 1.0);
    EXPECT_EQ(ev.delta_sn_mean, 0.0);
    EXPECT_EQ(ev.excluded_rows, 0);
  }
}

TEST(Evaluate, UndefinedFirstRowIsExcluded) {
  const double na = std::nan("");
  auto c = make_carto(3, 3, {na, na, na, 1.1, 1.9, 1.2, 1.0, 1.1, 1.8});
  const auto report = sf::evaluate(c, identity_pairs(3, 1));
  for (const auto &ev : report.strategies) {
    EXPECT_EQ(ev.excluded_rows, 1);
    EXPECT_EQ(ev.rows.size(), 2u);
  }
}

TEST(Evaluate, AllUndefinedIsEmpty) {
  const double na = std::nan("");
  auto c = make_carto(2, 2, {na, na, na, na});
  expect_code(sf::ErrorCode::EmptyCartography, [&] { sf::evaluate(c, identity_pairs(2, 1)); });
}

TEST(Evaluate, R2MatchesDirectRegressionOnEstimates) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> value(1.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_e = 12, n_t = 15;
    std::vector<double> v(static_cast<std::size_t>(n_e * n_t));
    for (auto &x : v) x = value(rng);
    const auto c = make_carto(n_e, n_t, v);
    const auto report = sf::evaluate(c, identity_pairs(n_e, 2));
    for (auto s : sf::kAllStrategies) {
      std::vector<std::pair<double, double>> xy;
      for (int i = 0; i < n_e; ++i)
        xy.emplace_back(i, static_cast<double>(sf::argmax_with_ties(c.row(s, i))));
      sf::RegressionFit direct;
      try {
        direct = sf::linear_regression(xy);
      } catch (const sf::Error &) {
        continue;
      }
      ASSERT_EQ(report.at(s).fit.r2, direct.r2);
      ASSERT_EQ(report.at(s).fit.a, direct.a);
    }
  }
}

TEST(Evaluate, PairsOutsideCartographyRejected) {
  const auto c = make_carto(2, 2, {1.1, 1.2, 1.3, 1.4});
  sf::ExpertPairs p;
  p.pairs = {{0, 0}, {5, 1}};
  expect_code(sf::ErrorCode::InvalidArgument, [&] { sf::evaluate(c, p); });
}

TEST(DiceReport, IdenticalMapsScoreOne) {
  const sf::Volume3D labels = sf::make_phantom_labels(64, 64, 96, 1);
  const auto m = sf::extract_coronal_labels(labels, 48);
  const std::vector<std::uint16_t> regions{1, 2, 3, 4, 5, 6};
  const auto d = sf::dice_report(m, m, regions);
  EXPECT_EQ(d.mean, 1.0);
}

TEST(DiceReport, AbsentRegionExcluded) {
  sf::LabelMap2D a(2, 2);
  a.labels = {1, 1, 2, 0};
  const std::vector<std::uint16_t> regions{1, 2, 9};
  const auto d = sf::dice_report(a, a, regions);
  EXPECT_EQ(d.excluded, (std::vector<std::uint16_t>{9}));
  EXPECT_EQ(d.per_region.size(), 2u);
}

TEST(DiceReport, DimMismatch) {
  const sf::LabelMap2D a(2, 2), b(3, 2);
  const std::vector<std::uint16_t> regions{1};
  expect_code(sf::ErrorCode::DimMismatch, [&] { sf::dice_report(a, b, regions); });
}

TEST(DiceReport, TiltedLabelsScoreLower) {
  const sf::Volume3D labels = sf::make_phantom_labels(64, 64, 64, 1);
  const sf::Volume3D tilted = sf::simulate_tilt_labels(labels, {10.0, 0.0});
  const std::vector<std::uint16_t> regions{1, 2, 3, 4, 5, 6};
  double straight = 0.0, slanted = 0.0;
  for (int z = 16; z < 48; z += 4) {
    const auto m = sf::extract_coronal_labels(labels, z);
    straight += sf::dice_report(m, m, regions).mean;
    slanted += sf::dice_report(m, sf::extract_coronal_labels(tilted, z), regions).mean;
  }
  EXPECT_LT(slanted, straight);
}

TEST(SegmentationDice, SelfCartographyGivesPerfectOverlap) {
  const sf::Volume3D labels = sf::make_phantom_labels(40, 40, 48, 1);
  const std::vector<int> slices{10, 20, 30};
  const std::vector<std::uint16_t> regions{1, 2, 3, 4, 5, 6};
  const auto summary = sf::segmentation_dice(self_cartography(), sf::Strategy::Mean, labels,
                                             labels, slices, regions);
  EXPECT_GT(summary.mean, 0.95);
  ASSERT_EQ(summary.slices.size(), 3u);
  for (const auto &s : summary.slices) EXPECT_EQ(s.s_t, s.s_e);
}

TEST(Export, HeatmapScalesLinearly) {
  ScratchDir dir("heat");
  const auto c = make_carto(2, 2, {1.2, 1.4, 1.6, 1.8});
  sf::export_heatmap(c, sf::Strategy::Rigid, dir / "h.pgm");
  EXPECT_EQ(read_pgm16(dir / "h.pgm"), (std::vector<int>{0, 21845, 43690, 65535}));
  EXPECT_TRUE(std::filesystem::exists(dir / "h.pgm.meta"));
}

TEST(Export, HeatmapOfUndefinedCartographyFails) {
  ScratchDir dir("heat0");
  const double na = std::nan("");
  const auto c = make_carto(2, 2, {na, na, na, na});
  expect_code(sf::ErrorCode::IoError, [&] { sf::export_heatmap(c, sf::Strategy::Mean, dir / "h.pgm"); });
}

TEST(Export, CartographyCsvRoundTrip) {
  ScratchDir dir("csv");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> value(1.0, 2.0);
  std::bernoulli_distribution undefined(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(7 * 5);
    for (auto &x : v) x = undefined(rng) ? std::nan("") : value(rng);
    const auto c = make_carto(7, 5, v);
    sf::Provenance prov;
    prov.param_hash = rng();
    sf::export_cartography_csv(c, sf::Strategy::Rigid, dir / "r.csv", prov);
    sf::export_cartography_csv(c, sf::Strategy::Affine, dir / "a.csv", prov);
    const auto back = sf::load_cartography(dir / "r.csv", dir / "a.csv");
    for (auto s : sf::kAllStrategies)
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto &x = c.matrix(s)[i];
        const auto &y = back.matrix(s)[i];
        ASSERT_EQ(x.has_value(), y.has_value());
        if (x) { ASSERT_NEAR(*x, *y, 1e-12); }
      }
    const auto read = sf::read_provenance(dir / "r.csv");
    ASSERT_TRUE(read);
    EXPECT_EQ(read->param_hash, prov.param_hash);
  }
}

TEST(Export, ProvenanceLineRoundTrip) {
  sf::Provenance p;
  p.param_hash = 0x0123456789abcdefULL;
  p.exp_checksum = 42;
  p.template_checksum = 0xffffffffffffffffULL;
  p.complete = false;
  const auto q = sf::parse_provenance(p.header_line());
  ASSERT_TRUE(q);
  EXPECT_EQ(q->param_hash, p.param_hash);
  EXPECT_EQ(q->exp_checksum, p.exp_checksum);
  EXPECT_EQ(q->template_checksum, p.template_checksum);
  EXPECT_FALSE(q->complete);
  EXPECT_EQ(q->header_line(), p.header_line());
  EXPECT_FALSE(sf::parse_provenance("s_e,0,1"));
}

TEST(Export, BestTransformsRoundTrip) {
  ScratchDir dir("bt");
  auto c = self_cartography();
  sf::export_best_transforms(c, dir / "bt.csv");
  sf::NmiCartography back(c.n_e(), c.n_t());
  sf::load_best_transforms(back, dir / "bt.csv");
  EXPECT_EQ(back.best_transforms, c.best_transforms);
}

TEST(ExpertPairsFile, RoundTripAndValidation) {
  ScratchDir dir("pairs");
  const auto p = identity_pairs(30, 3);
  sf::save_expert_pairs(p, dir / "p.csv");
  const auto q = sf::load_expert_pairs(dir / "p.csv");
  EXPECT_EQ(q.pairs, p.pairs);
  sf::ExpertPairs dup;
  dup.pairs = {{1, 1}, {1, 2}};
  EXPECT_THROW(dup.validate(5, 5), sf::Error);
  {
    std::ofstream out(dir / "bad.csv");
    out << "1,2\n";
  }
  EXPECT_THROW(sf::load_expert_pairs(dir / "bad.csv"), sf::Error);
}
