#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pnp/simulate_io.hpp"

using namespace pnp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pnp_simio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

DegradationModel noiseless_identity(Index bands, Index ms) {
  DegradationModel m;
  m.factor = 1;
  m.response = gaussian_spectral_response(ms, bands);
  return m;
}

double snr_db(const Eigen::MatrixXd& clean, const Eigen::MatrixXd& noisy) {
  return 10.0 * std::log10(clean.squaredNorm() / (noisy - clean).squaredNorm());
}

}  // namespace

TEST(GenerateScene, RankEqualsEndmembers) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.bands = 16;
  spec.endmembers = 3;
  const HSCube z = generate_scene(spec, 7);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z.values);
  const auto& s = svd.singularValues();
  EXPECT_GT(s[2] / s[0], 1e-6);
  EXPECT_LE(s[3] / s[0], 1e-10);
}

TEST(GenerateScene, DeterministicBySeed) {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 12;
  const HSCube a = generate_scene(spec, 3), b = generate_scene(spec, 3), c = generate_scene(spec, 4);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(GenerateScene, AbundancesOnSimplex) {
  SceneSpec spec;
  spec.width = 20;
  spec.height = 20;
  const Scene s = generate_scene_components(spec, 11);
  EXPECT_LE((s.abundances.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GE(s.abundances.minCoeff(), 0.0);
  EXPECT_LE((s.spectra * s.abundances - s.z.values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GenerateScene, RejectsInvalidSpec) {
  SceneSpec spec;
  spec.width = 0;
  EXPECT_THROW(generate_scene(spec, 1), InvalidArgument);
  spec = SceneSpec{};
  spec.endmembers = spec.bands + 1;
  EXPECT_THROW(generate_scene(spec, 1), InvalidArgument);
}

TEST(SpectralResponse, RowsNormalized) {
  const Eigen::MatrixXd r = gaussian_spectral_response(4, 32);
  EXPECT_EQ(r.rows(), 4);
  EXPECT_LE((r.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GE(r.minCoeff(), 0.0);
}

TEST(Degrade, InfiniteSnrIsNoiseless) {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.bands = 8;
  const HSCube z = generate_scene(spec, 1);
  DegradationSpec ds;
  ds.factor = 4;
  ds.ms_bands = 3;
  const DegradationModel m = ds.build(z.bands());
  const double inf = std::numeric_limits<double>::infinity();
  const Observations obs = degrade(z, m, inf, inf, 5);
  const BlurOperator blur(m.blur, z.width, z.height);
  EXPECT_EQ(obs.yh.values, subsample(blur.apply_rows(z.values), z.width, z.height, 4));
  EXPECT_EQ(obs.ym.values, m.response * z.values);
  EXPECT_EQ(obs.hs_noise_std.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Degrade, EmpiricalSnrMatchesTarget) {
  SceneSpec spec;
  spec.bands = 8;
  const HSCube z = generate_scene(spec, 2);
  const DegradationModel m = noiseless_identity(z.bands(), 4);
  const auto hs = parse_snr_groups("3:35,5:25", 8);
  const Observations obs = degrade(z, m, hs, std::vector<double>(4, 30.0), 9);
  EXPECT_NEAR(snr_db(z.values.topRows(3), obs.yh.values.topRows(3)), 35.0, 0.5);
  EXPECT_NEAR(snr_db(z.values.bottomRows(5), obs.yh.values.bottomRows(5)), 25.0, 0.5);
  const Eigen::MatrixXd rz = m.response * z.values;
  EXPECT_NEAR(snr_db(rz, obs.ym.values), 30.0, 0.5);
}

TEST(Degrade, NoiseIndependentAcrossBands) {
  SceneSpec spec;
  spec.bands = 6;
  const HSCube z = generate_scene(spec, 3);
  const DegradationModel m = noiseless_identity(z.bands(), 2);
  const Observations obs = degrade(z, m, 20.0, 20.0, 4);
  Eigen::MatrixXd noise = obs.yh.values - z.values;
  noise = noise.colwise() - noise.rowwise().mean();
  for (Index a = 0; a < noise.rows(); ++a)
    for (Index b = a + 1; b < noise.rows(); ++b) {
      const double c = noise.row(a).dot(noise.row(b)) / (noise.row(a).norm() * noise.row(b).norm());
      EXPECT_LE(std::abs(c), 0.05);
    }
}

TEST(Degrade, DeterministicBySeed) {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  const HSCube z = generate_scene(spec, 5);
  const DegradationModel m = DegradationSpec{}.build(z.bands());
  const Observations a = degrade(z, m, 30.0, 30.0, 8), b = degrade(z, m, 30.0, 30.0, 8), c = degrade(z, m, 30.0, 30.0, 9);
  EXPECT_EQ(a.yh.values, b.yh.values);
  EXPECT_EQ(a.ym.values, b.ym.values);
  EXPECT_NE(a.yh.values, c.yh.values);
}

TEST(Degrade, ZeroFillHasOneColumnPerLowResPixel) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 16;
  const HSCube z = generate_scene(spec, 6);
  const DegradationModel m = DegradationSpec{}.build(z.bands());
  const Observations obs = degrade(z, m, 40.0, 40.0, 1);
  const Eigen::MatrixXd full = zero_fill(obs.yh, 4);
  Index nonzero = 0;
  for (Index p = 0; p < full.cols(); ++p) nonzero += full.col(p).cwiseAbs().maxCoeff() > 0.0 ? 1 : 0;
  EXPECT_EQ(nonzero, obs.yh.pixels());
  EXPECT_EQ(nonzero, 8 * 4);
}

TEST(Degrade, RejectsInvalidSnrAndModel) {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  const HSCube z = generate_scene(spec, 5);
  const DegradationModel m = DegradationSpec{}.build(z.bands());
  EXPECT_THROW(degrade(z, m, std::nan(""), 30.0, 1), InvalidArgument);
  EXPECT_THROW(degrade(z, m, -std::numeric_limits<double>::infinity(), 30.0, 1), InvalidArgument);
  DegradationSpec bad;
  bad.factor = 3;
  EXPECT_THROW(degrade(z, bad.build(z.bands()), 30.0, 30.0, 1), InvalidArgument);
}

TEST(SnrGroups, Parsing) {
  const auto g = parse_snr_groups("43:35,50:30", 93);
  ASSERT_EQ(g.size(), 93u);
  EXPECT_EQ(g[42], 35.0);
  EXPECT_EQ(g[43], 30.0);
  EXPECT_EQ(parse_snr_groups("50", 3), std::vector<double>(3, 50.0));
  EXPECT_TRUE(std::isinf(parse_snr_groups("inf", 2)[1]));
  EXPECT_THROW(parse_snr_groups("2:30", 3), InvalidArgument);
  EXPECT_THROW(parse_snr_groups("abc", 3), InvalidArgument);
  EXPECT_THROW(parse_snr_groups("0:30,3:20", 3), InvalidArgument);
}

TEST(CubeFile, RoundTripAtSinglePrecision) {
  const fs::path dir = scratch_dir("roundtrip");
  SceneSpec spec;
  spec.width = 9;
  spec.height = 7;
  spec.bands = 5;
  const HSCube z = generate_scene(spec, 1);
  write_cube(z, dir / "z.f32");
  const HSCube back = read_cube(dir / "z.f32");
  EXPECT_EQ(back.width, 9);
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.values, z.values.cast<float>().cast<double>());
  EXPECT_LE((back.values - z.values).cwiseAbs().maxCoeff(), 1e-6 * z.values.cwiseAbs().maxCoeff());
}

TEST(CubeFile, SizeMismatchIsDataError) {
  const fs::path dir = scratch_dir("size");
  write_cube(HSCube(2, 3, 3), dir / "c.f32");
  fs::resize_file(dir / "c.f32", 2 * 9 * 4 - 4);
  EXPECT_THROW(read_cube(dir / "c.f32"), DataError);
}

TEST(CubeFile, MalformedHeaderIsDataError) {
  const fs::path dir = scratch_dir("header");
  write_cube(HSCube(1, 2, 2), dir / "c.f32");
  std::ofstream(header_path(dir / "c.f32")) << "width: 2\nheight: 2\ndtype: f32\norder: band-sequential\nendian: little\n";
  EXPECT_THROW(read_cube(dir / "c.f32"), DataError);
  std::ofstream(header_path(dir / "c.f32")) << "width: 2\nheight: 2\nbands: 1\ndtype: f64\norder: band-sequential\nendian: little\n";
  EXPECT_THROW(read_cube(dir / "c.f32"), DataError);
  std::ofstream(header_path(dir / "c.f32")) << "width 2\n";
  EXPECT_THROW(read_cube(dir / "c.f32"), DataError);
  EXPECT_THROW(read_cube(dir / "missing.f32"), DataError);
}

TEST(CubeFile, GoldenBytes) {
  const fs::path golden = fs::path(PNP_TEST_DATA_DIR) / "golden_cube.f32";
  const HSCube c = read_cube(golden);
  ASSERT_EQ(c.bands(), 3);
  ASSERT_EQ(c.width, 2);
  ASSERT_EQ(c.height, 2);
  EXPECT_EQ(c.values(0, 1), -2.5);
  EXPECT_EQ(c.values(1, 3), 65504.0);
  EXPECT_EQ(c.values(1, 2), static_cast<double>(1e-3f));
  EXPECT_EQ(c.values(2, 0), 2.0);
  const fs::path dir = scratch_dir("golden");
  write_cube(c, dir / "g.f32");
  EXPECT_EQ(slurp(dir / "g.f32"), slurp(golden));
  EXPECT_EQ(slurp(header_path(dir / "g.f32")), slurp(header_path(golden)));
}

TEST(Config, ParsesKeyValues) {
  std::istringstream is("# scene\nwidth = 32\nheight: 16  # trailing\n\nname = demo run\nrho=0.5\n");
  const KeyValueConfig c = KeyValueConfig::parse(is);
  EXPECT_EQ(c.get_int("width", 0), 32);
  EXPECT_EQ(c.get_int("height", 0), 16);
  EXPECT_EQ(c.get_string("name", ""), "demo run");
  EXPECT_EQ(c.get_double("rho", 0.0), 0.5);
  EXPECT_EQ(c.get_double("tau", 1e-3), 1e-3);
  EXPECT_THROW(c.get_int("name", 0), DataError);
  std::istringstream bad("just a line\n");
  EXPECT_THROW(KeyValueConfig::parse(bad), DataError);
}
