#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "pipeline_config.hpp"
#include "slicefinder/imgvol.hpp"
#include "slicefinder/xform.hpp"
#include "support.hpp"

namespace sf = slicefinder;
using sf::test::ScratchDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "slicefinder");
  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = sf::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int count_lines_starting_with_digit(const std::string &text) {
  std::istringstream in(text);
  int n = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++n;
  return n;
}

}  // namespace

TEST(PipelineConfig, ZRangeParsing) {
  EXPECT_EQ(sf::cli::parse_z_range("30:50"), (sf::ZRange{30, 50}));
  for (const char *bad : {"30", "a:b", "50:30", "-1:4", "3:", ":3", "1:2:3"})
    EXPECT_THROW(sf::cli::parse_z_range(bad), sf::Error) << bad;
}

TEST(PipelineConfig, ValidationRejectsBadValues) {
  sf::cli::PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.workers = 0;
  EXPECT_THROW(c.validate(), sf::Error);
  c = {};
  c.match.registration.variance_keep_fraction = 1.5;
  EXPECT_THROW(c.validate(), sf::Error);
  c = {};
  c.tilt = sf::TiltSpec{90.0, 0.0};
  EXPECT_THROW(c.validate(), sf::Error);
  c = {};
  c.template_volume = "/nonexistent/t.hdr";
  try {
    c.validate();
    FAIL();
  } catch (const sf::Error &e) {
    EXPECT_EQ(e.code(), sf::ErrorCode::MissingFile);
  }
}

TEST(Cli, ExitCodesByFailureClass) {
  EXPECT_EQ(sf::cli::exit_code_for(sf::ErrorCode::MissingFile), 2);
  EXPECT_EQ(sf::cli::exit_code_for(sf::ErrorCode::NoValidBlocks), 2);
  EXPECT_EQ(sf::cli::exit_code_for(sf::ErrorCode::SingularTransform), 3);
  EXPECT_EQ(sf::cli::exit_code_for(sf::ErrorCode::IoError), 3);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"register", "--ref", "a.pgm"}).code, 2);
  EXPECT_EQ(run({"--strategy", "median", "phantom"}).code, 2);
  EXPECT_EQ(run({"--workers", "0", "phantom"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, RegisterSelfPair) {
  ScratchDir dir("cli_reg");
  sf::save_image(sf::test::phantom_slice(64, 64, 96, 40, 1), dir / "a.pgm");
  const auto a = (dir / "a.pgm").string();
  const auto r = run({"register", "--ref", a, "--flt", a, "--model", "rigid", "--out",
                      dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("nmi="), std::string::npos);
  const auto T = sf::load_transform(dir / "transform.csv");
  EXPECT_LT(sf::test::max_corner_error(T, sf::LinearTransform2D::identity(), 64, 64), 0.5);
  const double score = std::stod(r.out.substr(r.out.find("nmi=") + 4));
  EXPECT_NEAR(score, 2.0, 0.05);
  EXPECT_TRUE(std::filesystem::exists(dir / "warped.pgm"));
}

TEST(Cli, RegisterMissingFileNamesPath) {
  const auto r = run({"register", "--ref", "/nonexistent/ref.pgm", "--flt", "/nonexistent/ref.pgm"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/ref.pgm"), std::string::npos);
}

TEST(Cli, RegisterConstantImageAffine) {
  ScratchDir dir("cli_flat");
  sf::Image2D plain(64, 64, 25.0, 10.0);
  sf::save_image(plain, dir / "c.pgm");
  const auto c = (dir / "c.pgm").string();
  const auto r = run({"register", "--ref", c, "--flt", c, "--model", "affine", "--out",
                      dir.path().string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("NoValidBlocks"), std::string::npos) << r.err;
}

TEST(Cli, MatchFindsMemberSlice) {
  ScratchDir dir("cli_match");
  sf::save_volume(sf::make_phantom(64, 64, 96, 1), dir / "t.hdr");
  const sf::Volume3D tmpl = sf::load_volume(dir / "t.hdr");
  sf::Image2D s = sf::extract_coronal_slice(tmpl, 40);
  sf::save_image(s, dir / "s.pgm");
  const auto r = run({"match", "--slice", (dir / "s.pgm").string(), "--template",
                      (dir / "t.hdr").string(), "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char *s : {"best_index(rigid)=40", "best_index(affine)=40", "best_index(mean)=40"})
    EXPECT_NE(r.out.find(s), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "best_transforms.csv"));

  const auto ranged = run({"match", "--slice", (dir / "s.pgm").string(), "--template",
                           (dir / "t.hdr").string(), "--z-range", "30:50", "--out",
                           (dir / "ranged").string()});
  ASSERT_EQ(ranged.code, 0) << ranged.err;
  EXPECT_EQ(count_lines_starting_with_digit(slurp(dir / "ranged" / "match.csv")), 21);
}

TEST(Cli, PhantomIsIdempotent) {
  ScratchDir dir("cli_ph");
  const auto a = run({"phantom", "--dims", "40", "40", "32", "--seed", "1", "--out",
                      (dir / "a").string()});
  const auto b = run({"phantom", "--dims", "40", "40", "32", "--seed", "1", "--out",
                      (dir / "b").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  for (const char *f : {"phantom.raw", "phantom.hdr", "phantom_labels.raw", "regions.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, ZeroTiltKeepsChecksum) {
  ScratchDir dir("cli_tilt");
  ASSERT_EQ(run({"phantom", "--dims", "32", "32", "32", "--out", dir.path().string()}).code, 0);
  const auto r = run({"tilt", "--in", (dir / "phantom.hdr").string(), "--theta", "0", "--phi",
                      "0", "--out", (dir / "t").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto in = r.out.substr(r.out.find("checksum_in=") + 12, 16);
  const auto out = r.out.substr(r.out.find("checksum_out=") + 13, 16);
  EXPECT_EQ(in, out);
  EXPECT_EQ(slurp(dir / "phantom.raw"), slurp(dir / "t" / "tilted.raw"));
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  ScratchDir dir("cli_cfg");
  {
    std::ofstream cfg(dir / "run.ini");
    cfg << "seed = 5\nlevels = 2\n";
  }
  const auto from_file = run({"--config", (dir / "run.ini").string(), "phantom", "--dims", "32",
                              "32", "32", "--out", (dir / "a").string()});
  const auto from_flag = run({"--seed", "5", "phantom", "--dims", "32", "32", "32", "--out",
                              (dir / "b").string()});
  const auto overridden = run({"--config", (dir / "run.ini").string(), "--seed", "6", "phantom",
                               "--dims", "32", "32", "32", "--out", (dir / "c").string()});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(from_file.out, from_flag.out);
  EXPECT_NE(from_file.out, overridden.out);

  {
    std::ofstream cfg(dir / "bad.ini");
    cfg << "colour = blue\n";
  }
  EXPECT_EQ(run({"--config", (dir / "bad.ini").string(), "phantom"}).code, 2);
  {
    std::ofstream cfg(dir / "invalid.ini");
    cfg << "block-size = 1\n";
  }
  EXPECT_EQ(run({"--config", (dir / "invalid.ini").string(), "phantom", "--out",
                 (dir / "d").string()})
                .code,
            2);
}

TEST(Cli, WorkersFromEnvironment) {
  ::setenv("SLICEFINDER_WORKERS", "0", 1);
  const auto bad = run({"phantom", "--dims", "32", "32", "32", "--out", "/tmp"});
  ::unsetenv("SLICEFINDER_WORKERS");
  EXPECT_EQ(bad.code, 2);
}

TEST(Cli, FullPhantomPipeline) {
  ScratchDir dir("cli_e2e");
  const auto d = [&](const char *name) { return (dir / name).string(); };
  ASSERT_EQ(run({"phantom", "--dims", "40", "40", "32", "--perturb", "--out", d("ph")}).code, 0);
  const auto tilt = run({"tilt", "--in", d("ph/experimental.hdr"), "--theta", "10", "--labels",
                         d("ph/experimental_labels.hdr"), "--out", d("tilt")});
  ASSERT_EQ(tilt.code, 0) << tilt.err;
  const auto carto = run({"--levels", "2", "--workers", "2", "cartography", "--exp",
                          d("tilt/tilted.hdr"), "--template", d("ph/phantom.hdr"), "--out",
                          d("carto")});
  ASSERT_EQ(carto.code, 0) << carto.err;
  const auto eval = run({"evaluate", "--cartography", d("carto"), "--expert",
                         d("ph/expert_pairs.csv"), "--exp-labels", d("tilt/tilted_labels.hdr"),
                         "--template-labels", d("ph/phantom_labels.hdr"), "--out", d("eval")});
  ASSERT_EQ(eval.code, 0) << eval.err;
  const std::string report = slurp(dir / "eval" / "report.csv");
  for (const char *block : {"[expert]", "[strategy rigid]", "[strategy affine]",
                            "[strategy mean]", "[dice rigid]", "[dice affine]", "[dice mean]"})
    EXPECT_NE(report.find(block), std::string::npos) << block;
  EXPECT_EQ(report.rfind("# slicefinder version=", 0), 0u);
}

TEST(Cli, CartographyBytesIndependentOfWorkers) {
  ScratchDir dir("cli_det");
  const auto d = [&](const char *name) { return (dir / name).string(); };
  ASSERT_EQ(run({"phantom", "--dims", "40", "40", "32", "--perturb", "--out", d("ph")}).code, 0);
  for (const char *w : {"1", "3"}) {
    const auto r = run({"--levels", "2", "--workers", w, "cartography", "--exp",
                        d("ph/experimental.hdr"), "--template", d("ph/phantom.hdr"), "--out",
                        (dir / (std::string("w") + w)).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char *f : {"cartography_rigid.csv", "cartography_affine.csv", "cartography_mean.csv",
                        "heatmap_mean.pgm", "heatmap_mean.pgm.meta", "best_transforms.csv",
                        "failures.csv"})
    EXPECT_EQ(slurp(dir / "w1" / f), slurp(dir / "w3" / f)) << f;
}
