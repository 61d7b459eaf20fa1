#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cdtm/dtm.hpp"
#include "cdtm/dtm_io.hpp"
#include "cdtm/error.hpp"
#include "support.hpp"

using namespace cdtm;
using cdtm::test::plane_grid;

namespace {

// Reference intersection: fine fixed-step march then bisection, written
// independently of raycast.
Vec3 march_oracle(const TerrainGrid& g, const Vec3& p, const Vec3& d) {
  const Vec3 u = d.normalized();
  const double step = 0.05;
  double prev = 0.0;
  for (double t = step;; t += step) {
    const Vec3 x = p + t * u;
    if (!g.contains(x.x(), x.y())) throw std::runtime_error("oracle left the grid");
    if (x.z() <= height_at(g, x.x(), x.y())) {
      double lo = prev, hi = t;
      for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        const Vec3 m = p + mid * u;
        (m.z() > height_at(g, m.x(), m.y()) ? lo : hi) = mid;
      }
      return p + hi * u;
    }
    prev = t;
  }
}

}  // namespace

TEST(Dtm, NodeCoordinatesAndExtent) {
  Eigen::MatrixXd h(3, 4);
  h << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const TerrainGrid g(Vec2(100, 200), 10.0, h);
  EXPECT_DOUBLE_EQ(g.x_max(), 130.0);
  EXPECT_DOUBLE_EQ(g.y_max(), 220.0);
  EXPECT_DOUBLE_EQ(height_at(g, 110, 200), 2.0);
  EXPECT_DOUBLE_EQ(height_at(g, 100, 220), 9.0);
  EXPECT_DOUBLE_EQ(height_at(g, 105, 205), (1 + 2 + 5 + 6) / 4.0);
  EXPECT_DOUBLE_EQ(height_at(g, 130, 220), 12.0);
  EXPECT_THROW(height_at(g, 99.9, 205), Error);
  EXPECT_THROW(TerrainGrid(Vec2::Zero(), 0.0, h), Error);
}

TEST(Dtm, PlaneReproducedExactly) {
  const TerrainGrid g = plane_grid(20, 25, 30.0, 12.0, 0.2, -0.15);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(0, g.x_max()), y(0, g.y_max());
  for (int i = 0; i < 200; ++i) {
    const double px = x(rng), py = y(rng);
    EXPECT_NEAR(height_at(g, px, py), 12.0 + 0.2 * px - 0.15 * py, 1e-10);
    EXPECT_LT((normal_at(g, px, py) - Vec3(-0.2, 0.15, 1.0)).norm(), 1e-12);
  }
}

TEST(Dtm, BilinearWeightsReproduceHeight) {
  const TerrainGrid g = fractal_terrain(33, 33, 30.0, 300.0, 4);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, g.x_max());
  for (int i = 0; i < 100; ++i) {
    const double px = u(rng), py = u(rng);
    const NodeWeights w = bilinear_weights(g, px, py);
    double sum = 0.0, h = 0.0;
    for (int k = 0; k < 4; ++k) {
      sum += w.w[std::size_t(k)];
      const Eigen::Index n = w.node[std::size_t(k)];
      h += w.w[std::size_t(k)] * g.heights()(n / g.cols(), n % g.cols());
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
    EXPECT_NEAR(h, height_at(g, px, py), 1e-9);
  }
}

TEST(Dtm, NormalMatchesFiniteDifferences) {
  const TerrainGrid g = fractal_terrain(33, 33, 30.0, 300.0, 9);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1, g.x_max() - 1);
  const double e = 1e-4;
  for (int i = 0; i < 100; ++i) {
    const double px = u(rng), py = u(rng);
    // stay clear of cell edges where the patch has kinks
    const double fx = std::fmod(px, 30.0), fy = std::fmod(py, 30.0);
    if (fx < 0.01 || fx > 29.99 || fy < 0.01 || fy > 29.99) continue;
    const double dhdx = (height_at(g, px + e, py) - height_at(g, px - e, py)) / (2 * e);
    const double dhdy = (height_at(g, px, py + e) - height_at(g, px, py - e)) / (2 * e);
    EXPECT_LT((normal_at(g, px, py) - Vec3(-dhdx, -dhdy, 1.0)).norm(), 1e-6);
  }
}

TEST(Dtm, RaycastPlaneAnalytic) {
  const TerrainGrid g = plane_grid(50, 50, 30.0, 100.0, 0.1, 0.05);
  const Vec3 p(700, 700, 800), d(0.2, -0.1, -1.0);
  const SurfacePoint hit = raycast(g, p, d);
  // p.z + t d.z = 100 + 0.1 (p.x + t d.x) + 0.05 (p.y + t d.y)
  const double t = (100 + 0.1 * p.x() + 0.05 * p.y() - p.z()) / (d.z() - 0.1 * d.x() - 0.05 * d.y());
  EXPECT_LT((hit.g - (p + t * d)).norm(), 1e-8);
  EXPECT_LT((hit.n - Vec3(-0.1, -0.05, 1.0)).norm(), 1e-12);
}

TEST(Dtm, RaycastMatchesDenseMarch) {
  const TerrainGrid g = fractal_terrain(65, 65, 30.0, 300.0, 11);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> c(600, 1300), t(-0.5, 0.5);
  int compared = 0;
  for (int i = 0; i < 40; ++i) {
    const Vec3 p(c(rng), c(rng), 700.0);
    const Vec3 d(t(rng), t(rng), -1.0);
    const Vec3 ref = march_oracle(g, p, d);
    const SurfacePoint hit = raycast(g, p, d);
    // the coarse march may skip a ridge thinner than its step; the oracle
    // would then find a nearer hit
    if ((hit.g - ref).norm() < 1.0) {
      EXPECT_LT((hit.g - ref).norm(), 1e-6);
      EXPECT_NEAR(hit.g.z(), height_at(g, hit.g.x(), hit.g.y()), 1e-6);
      ++compared;
    }
  }
  EXPECT_GE(compared, 38);
}

TEST(Dtm, RaycastErrors) {
  const TerrainGrid g = plane_grid(10, 10, 30.0, 0.0, 0.0, 0.0);
  EXPECT_THROW(raycast(g, Vec3(-10, 10, 100), Vec3(0, 0, -1)), Error);
  EXPECT_THROW(raycast(g, Vec3(100, 100, 100), Vec3(0, 0, 1)), Error);
  EXPECT_THROW(raycast(g, Vec3(100, 100, -5), Vec3(0, 0, -1)), Error);
  EXPECT_THROW(raycast(g, Vec3(100, 100, 100), Vec3::Zero()), Error);
}

TEST(Dtm, FractalRangeAndDeterminism) {
  const TerrainGrid a = fractal_terrain(101, 101, 30.0, 300.0, 7);
  EXPECT_EQ(a.rows(), 101);
  EXPECT_EQ(a.cols(), 101);
  EXPECT_NEAR(a.min_height(), 0.0, 1e-12);
  EXPECT_NEAR(a.max_height(), 300.0, 1e-9);
  EXPECT_TRUE(a == fractal_terrain(101, 101, 30.0, 300.0, 7));
  EXPECT_FALSE(a == fractal_terrain(101, 101, 30.0, 300.0, 8));
  const TerrainGrid flat = fractal_terrain(20, 30, 30.0, 0.0, 7);
  EXPECT_EQ(flat.max_height(), flat.min_height());
}

TEST(Dtm, SynthTilesWithContinuousSeams) {
  const TerrainGrid cell = fractal_terrain(17, 21, 30.0, 100.0, 2);
  const TerrainGrid t = synth_terrain(cell, 3, 2, 1.0);
  EXPECT_EQ(t.rows(), 2 * 16 + 1);
  EXPECT_EQ(t.cols(), 3 * 20 + 1);
  // second clone is mirrored: its first column repeats the cell's last one
  for (Eigen::Index r = 0; r < cell.rows(); ++r) {
    EXPECT_EQ(t.heights()(r, 20), cell.heights()(r, 20));
    EXPECT_EQ(t.heights()(r, 21), cell.heights()(r, 19));
  }
  const TerrainGrid s = synth_terrain(cell, 1, 1, 2.0);
  EXPECT_NEAR(s.max_height() - s.min_height(), 200.0, 1e-9);
  EXPECT_NEAR(s.mean_height(), cell.mean_height(), 1e-9);
}

TEST(Dtm, ResampleKeepsSurface) {
  const TerrainGrid g = plane_grid(31, 31, 30.0, 5.0, 0.3, -0.1);
  const TerrainGrid r = resample(g, 10.0);
  EXPECT_DOUBLE_EQ(r.spacing(), 10.0);
  EXPECT_EQ(r.cols(), 91);
  EXPECT_NEAR(height_at(r, 123.0, 456.0), 5.0 + 0.3 * 123.0 - 0.1 * 456.0, 1e-9);
}

TEST(Dtm, HeightNoiseSigma) {
  EXPECT_DOUBLE_EQ(height_noise_sigma(30.0), 2.4);
  EXPECT_DOUBLE_EQ(height_noise_sigma(100.0), 8.0);
}

TEST(DtmIo, AscRoundTrip) {
  const TerrainGrid g(Vec2(1000.5, -250.25), 12.5, fractal_terrain(9, 13, 12.5, 55.0, 3).heights());
  std::stringstream ss;
  write_asc(ss, g);
  const TerrainGrid back = read_asc(ss);
  EXPECT_TRUE(back == g);
}

TEST(DtmIo, AscHeaderVariantsAndRowOrder) {
  std::istringstream corner(
      "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n1 2\n3 4\n");
  const TerrainGrid a = read_asc(corner);
  EXPECT_DOUBLE_EQ(a.origin().x(), 5.0);
  // the first data row is the northernmost
  EXPECT_DOUBLE_EQ(height_at(a, 5, 15), 1.0);
  EXPECT_DOUBLE_EQ(height_at(a, 15, 5), 4.0);
  std::istringstream centre(
      "ncols 2\nnrows 2\nxllcenter 0\nyllcenter 0\ncellsize 10\n1 2\n3 4\n");
  EXPECT_DOUBLE_EQ(read_asc(centre).origin().x(), 0.0);
}

TEST(DtmIo, AscErrors) {
  std::istringstream nodata(
      "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\nNODATA_value -9999\n1 -9999\n3 4\n");
  try {
    read_asc(nodata);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
  std::istringstream short_data("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n1 2\n3\n");
  EXPECT_THROW(read_asc(short_data), Error);
  std::istringstream no_size("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\n1 2\n3 4\n");
  EXPECT_THROW(read_asc(no_size), Error);
  EXPECT_THROW(load_asc("/nonexistent/terrain.asc"), Error);
}
