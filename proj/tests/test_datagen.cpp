#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "age/datagen.hpp"

using namespace age;
using nd::Tensor;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("age_test_data_" + name)).string();
}

std::string read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

data::Dataset parse(const std::string& text) {
  std::istringstream is(text);
  return data::read_csv(is, "test.csv");
}

void expect_error_mentions(const std::string& text, const std::string& needle) {
  try {
    parse(text);
    FAIL() << "expected InputError for: " << text;
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Ring, SingleBlobAtOrigin) {
  const auto ds = data::make_gaussian_ring(1, 0.0, 0.5, 100, 1);
  ASSERT_EQ(ds.meta.mode_centers.size(), 1u);
  EXPECT_EQ(ds.meta.mode_centers[0], (std::vector<double>{0.0, 0.0}));
  for (std::size_t l : ds.labels) EXPECT_EQ(l, 0u);
}

TEST(Ring, ModeMeansNearCenters) {
  const auto ds = data::make_gaussian_ring(8, 2.0, 0.02, 8000, 3);
  std::vector<std::vector<double>> sums(8, std::vector<double>(2, 0.0));
  std::vector<std::size_t> counts(8, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ++counts[ds.labels[i]];
    for (std::size_t c = 0; c < 2; ++c) sums[ds.labels[i]][c] += ds.samples(i, c);
  }
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(counts[k], 1000u);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
    EXPECT_NEAR(sums[k][0] / 1000.0, 2.0 * std::cos(angle), 0.01);
    EXPECT_NEAR(sums[k][1] / 1000.0, 2.0 * std::sin(angle), 0.01);
  }
}

TEST(Ring, RejectsBadArguments) {
  EXPECT_THROW(data::make_gaussian_ring(0, 2.0, 0.02, 10, 0), DomainError);
  EXPECT_THROW(data::make_gaussian_ring(8, 2.0, 0.0, 10, 0), DomainError);
}

TEST(Generators, DeterministicPerSeed) {
  EXPECT_EQ(data::make_gaussian_ring(8, 2, 0.02, 50, 4).samples, data::make_gaussian_ring(8, 2, 0.02, 50, 4).samples);
  EXPECT_EQ(data::make_checkerboard(50, 4).samples, data::make_checkerboard(50, 4).samples);
  const auto a = data::make_gaussian_ring(8, 2, 0.02, 50, 4);
  const auto b = data::make_gaussian_ring(8, 2, 0.02, 50, 5);
  const auto c = data::make_checkerboard(50, 4);
  const auto d = data::make_checkerboard(50, 5);
  for (std::size_t r = 0; r < 10; ++r) {
    EXPECT_NE(a.samples(r, 0), b.samples(r, 0)) << r;
    EXPECT_NE(c.samples(r, 0), d.samples(r, 0)) << r;
  }
}

TEST(Checkerboard, BlackCellsAndSymmetry) {
  const auto ds = data::make_checkerboard(20000, 7);
  std::size_t black = 0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    black += data::in_black_square(ds.samples(i, 0), ds.samples(i, 1)) ? 1 : 0;
    mx += ds.samples(i, 0) / 20000.0;
    my += ds.samples(i, 1) / 20000.0;
  }
  EXPECT_GE(static_cast<double>(black) / 20000.0, 0.99);
  EXPECT_NEAR(mx, 0.0, 0.05);
  EXPECT_NEAR(my, 0.0, 0.05);
}

TEST(Checkerboard, MembershipOracle) {
  EXPECT_TRUE(data::in_black_square(-1.5, -1.5));
  EXPECT_FALSE(data::in_black_square(-0.5, -1.5));
  EXPECT_TRUE(data::in_black_square(0.5, 0.5));
  EXPECT_FALSE(data::in_black_square(2.5, 0.5));
}

TEST(PointMass, AllRowsEqual) {
  const auto ds = data::make_point_mass({1.5, -2.0, 0.25}, 12);
  EXPECT_EQ(ds.dim(), 3u);
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_EQ(std::vector<double>(ds.samples.row_span(i).begin(), ds.samples.row_span(i).end()),
              (std::vector<double>{1.5, -2.0, 0.25}));
}

TEST(Coverage, DatasetCoversItself) {
  const auto ds = data::make_gaussian_ring(8, 2.0, 0.02, 8000, 9);
  const auto cov = data::mode_coverage(ds.samples, ds.meta.mode_centers, 0.02, 10);
  EXPECT_EQ(cov.covered, 8u);
  // 3-sigma containment of a 2-D Gaussian is 1 - exp(-4.5) = 0.9889.
  EXPECT_NEAR(cov.high_quality_fraction, 1.0 - std::exp(-4.5), 0.005);
}

TEST(Coverage, CollapsedAndFarSamples) {
  const auto ds = data::make_gaussian_ring(8, 2.0, 0.02, 80, 9);
  Tensor collapsed(100, 2);
  for (std::size_t i = 0; i < 100; ++i) {
    collapsed(i, 0) = ds.meta.mode_centers[3][0];
    collapsed(i, 1) = ds.meta.mode_centers[3][1];
  }
  auto cov = data::mode_coverage(collapsed, ds.meta.mode_centers, 0.02);
  EXPECT_EQ(cov.covered, 1u);
  EXPECT_EQ(cov.high_quality_fraction, 1.0);

  Tensor far(100, 2, 10.0);
  cov = data::mode_coverage(far, ds.meta.mode_centers, 0.02);
  EXPECT_EQ(cov.covered, 0u);
  EXPECT_EQ(cov.high_quality_fraction, 0.0);
}

TEST(Coverage, PermutationInvariant) {
  const auto ds = data::make_gaussian_ring(8, 2.0, 0.3, 400, 10);
  const auto base = data::mode_coverage(ds.samples, ds.meta.mode_centers, 0.1, 20);
  Tensor reversed(ds.size(), 2);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c) reversed(i, c) = ds.samples(ds.size() - 1 - i, c);
  auto centers = ds.meta.mode_centers;
  std::rotate(centers.begin(), centers.begin() + 3, centers.end());
  const auto permuted = data::mode_coverage(reversed, centers, 0.1, 20);
  EXPECT_EQ(permuted.covered, base.covered);
  EXPECT_EQ(permuted.high_quality_fraction, base.high_quality_fraction);
  EXPECT_GT(base.covered, 0u);
  EXPECT_LT(base.high_quality_fraction, 1.0);
}

TEST(Coverage, NeedsCenters) {
  EXPECT_THROW(data::mode_coverage(Tensor(3, 2), {}, 0.1), DomainError);
}

TEST(Csv, SaveLoadBitEqualWithLabels) {
  const auto ds = data::make_gaussian_ring(8, 2.0, 0.02, 64, 11);
  const std::string path = temp_path("ring.csv");
  data::save_csv(ds, path);
  const auto back = data::load_csv(path);
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(read_all(path).substr(0, 12), "x0,x1,label\n");
  std::remove(path.c_str());
}

TEST(Csv, LosslessForArbitraryFiniteDoubles) {
  Rng rng(12);
  std::uniform_int_distribution<std::uint64_t> bits;
  Tensor t(200, 3);
  for (double& v : t.data()) {
    do {
      v = std::bit_cast<double>(bits(rng));
    } while (!std::isfinite(v));
  }
  t(0, 0) = std::numeric_limits<double>::denorm_min();
  t(0, 1) = -std::numeric_limits<double>::max();
  t(0, 2) = -0.0;
  std::ostringstream os;
  data::write_csv(os, &t, {}, 3);
  const auto back = parse(os.str());
  ASSERT_EQ(back.samples.rows(), 200u);
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.samples[i]), std::bit_cast<std::uint64_t>(t[i])) << i;
  EXPECT_FALSE(back.has_labels());
}

TEST(Csv, Errors) {
  expect_error_mentions("x0,x1\n", "empty dataset");
  expect_error_mentions("", "empty file");
  expect_error_mentions("x0,x1\n1,2\n3\n", "line 3");
  expect_error_mentions("x0,x1\n1,2\n3,abc\n", "line 3");
  expect_error_mentions("x0,x1\n1,2\n3,abc\n", "non-numeric");
  expect_error_mentions("a,b\n1,2\n", "line 1");
  EXPECT_THROW(data::load_csv(temp_path("missing.csv")), InputError);
}

TEST(Csv, LabelColumn) {
  const auto ds = parse("x0,label\n0.5,2\n-1,0\n");
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(ds.samples, Tensor::from_rows({{0.5}, {-1.0}}));
}

TEST(Ppm, MidpointAndExtremes) {
  const std::string path = temp_path("tile.ppm");
  const Tensor samples = Tensor::from_rows({{-1, -1, -1, -1}, {1, 1, 1, 1}, {0, 0, 0, 0}});
  data::render_raster_grid(samples, 2, 2, 3, path);
  const std::string bytes = read_all(path);
  const std::string header = "P6\n6 2\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  ASSERT_EQ(bytes.size(), header.size() + 6 * 2 * 3);
  auto pixel = [&](std::size_t x, std::size_t y) {
    return static_cast<unsigned char>(bytes[header.size() + (y * 6 + x) * 3]);
  };
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) {
      EXPECT_EQ(pixel(x, y), 0);
      EXPECT_EQ(pixel(2 + x, y), 255);
      EXPECT_EQ(pixel(4 + x, y), 128);
    }
  }
  std::remove(path.c_str());
}

TEST(Ppm, RejectsOverfullGrid) {
  EXPECT_THROW(data::render_raster_grid(Tensor(5, 4), 2, 2, 2, temp_path("x.ppm"), 2), DomainError);
  EXPECT_THROW(data::render_raster_grid(Tensor(1, 5), 2, 2, 2, temp_path("x.ppm")), ShapeError);
}
