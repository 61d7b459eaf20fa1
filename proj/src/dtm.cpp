#include "cdtm/dtm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cdtm/error.hpp"

namespace cdtm {

namespace {

struct CellCoords {
  Eigen::Index col;
  Eigen::Index row;
  double u;  // fractional x within the cell
  double v;  // fractional y within the cell
};

CellCoords locate(const TerrainGrid& grid, double x, double y) {
  if (!grid.contains(x, y)) throw Error(ErrorCode::OutOfExtent, "query outside terrain extent");
  const double fx = (x - grid.x_min()) / grid.spacing();
  const double fy = (y - grid.y_min()) / grid.spacing();
  const auto col = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fx)), 0, grid.cols() - 2);
  const auto row = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fy)), 0, grid.rows() - 2);
  return {col, row, fx - static_cast<double>(col), fy - static_cast<double>(row)};
}

}  // namespace

TerrainGrid::TerrainGrid(Vec2 origin, double spacing, Eigen::MatrixXd heights)
    : origin_(std::move(origin)), spacing_(spacing), heights_(std::move(heights)) {
  if (!(spacing_ > 0.0) || !std::isfinite(spacing_)) {
    throw Error(ErrorCode::InvalidArgument, "grid spacing must be positive");
  }
  if (heights_.rows() < 2 || heights_.cols() < 2) {
    throw Error(ErrorCode::InvalidArgument, "terrain grid needs at least 2x2 nodes");
  }
  if (!heights_.allFinite() || !origin_.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "terrain grid has non-finite values");
  }
}

bool TerrainGrid::contains(double x, double y) const {
  return x >= x_min() && x <= x_max() && y >= y_min() && y <= y_max();
}

bool operator==(const TerrainGrid& a, const TerrainGrid& b) {
  return a.origin_ == b.origin_ && a.spacing_ == b.spacing_ && a.heights_.rows() == b.heights_.rows() &&
         a.heights_.cols() == b.heights_.cols() && a.heights_ == b.heights_;
}

double height_at(const TerrainGrid& grid, double x, double y) {
  const CellCoords c = locate(grid, x, y);
  const auto& h = grid.heights();
  const double h00 = h(c.row, c.col), h10 = h(c.row, c.col + 1);
  const double h01 = h(c.row + 1, c.col), h11 = h(c.row + 1, c.col + 1);
  return (1 - c.u) * (1 - c.v) * h00 + c.u * (1 - c.v) * h10 + (1 - c.u) * c.v * h01 + c.u * c.v * h11;
}

NodeWeights bilinear_weights(const TerrainGrid& grid, double x, double y) {
  const CellCoords c = locate(grid, x, y);
  const Eigen::Index base = c.row * grid.cols() + c.col;
  return {{base, base + 1, base + grid.cols(), base + grid.cols() + 1},
          {(1 - c.u) * (1 - c.v), c.u * (1 - c.v), (1 - c.u) * c.v, c.u * c.v}};
}

Vec3 normal_at(const TerrainGrid& grid, double x, double y) {
  const CellCoords c = locate(grid, x, y);
  const auto& h = grid.heights();
  const double h00 = h(c.row, c.col), h10 = h(c.row, c.col + 1);
  const double h01 = h(c.row + 1, c.col), h11 = h(c.row + 1, c.col + 1);
  const double dhdx = ((1 - c.v) * (h10 - h00) + c.v * (h11 - h01)) / grid.spacing();
  const double dhdy = ((1 - c.u) * (h01 - h00) + c.u * (h11 - h10)) / grid.spacing();
  return Vec3(-dhdx, -dhdy, 1.0);
}

SurfacePoint raycast(const TerrainGrid& grid, const Vec3& p, const Vec3& d) {
  if (!grid.contains(p.x(), p.y())) throw Error(ErrorCode::OutOfExtent, "ray starts outside terrain extent");
  const double len = d.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw Error(ErrorCode::InvalidArgument, "zero ray direction");
  const Vec3 dir = d / len;

  auto gap = [&](double lambda) {
    const Vec3 x = p + lambda * dir;
    return x.z() - height_at(grid, x.x(), x.y());
  };
  if (!(gap(0.0) > 0.0)) throw Error(ErrorCode::InvalidArgument, "ray starts below the terrain");

  // Distance along the ray at which it leaves the horizontal extent.
  double exit = std::numeric_limits<double>::infinity();
  auto clip = [&exit](double pos, double lo, double hi, double step) {
    if (step > 0.0) exit = std::min(exit, (hi - pos) / step);
    if (step < 0.0) exit = std::min(exit, (lo - pos) / step);
  };
  clip(p.x(), grid.x_min(), grid.x_max(), dir.x());
  clip(p.y(), grid.y_min(), grid.y_max(), dir.y());
  exit *= 1.0 - 1e-12;
  if (dir.z() >= 0.0) {
    // Rising or level ray: it cannot get lower than its start.
    const double room = p.z() - grid.max_height();
    if (room > 0.0) throw Error(ErrorCode::NoIntersection, "ray does not descend to the terrain");
  } else {
    exit = std::min(exit, (p.z() - grid.min_height()) / -dir.z() * (1.0 + 1e-12) + 1e-9);
  }
  if (!std::isfinite(exit)) throw Error(ErrorCode::NoIntersection, "ray never meets the terrain");

  const double step = grid.spacing() / 4.0;
  double lo = 0.0;
  double hi = 0.0;
  bool bracketed = false;
  while (lo < exit) {
    hi = std::min(lo + step, exit);
    const Vec3 x = p + hi * dir;
    if (!grid.contains(x.x(), x.y())) break;
    if (gap(hi) <= 0.0) {
      bracketed = true;
      break;
    }
    lo = hi;
  }
  if (!bracketed) throw Error(ErrorCode::NoIntersection, "ray leaves the terrain extent");

  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (gap(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const Vec3 g = p + hi * dir;
  return {g, normal_at(grid, g.x(), g.y())};
}

TerrainGrid scale_amplitude(const TerrainGrid& grid, double amplitude_scale) {
  if (!(amplitude_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "amplitude scale must be positive");
  const double mean = grid.mean_height();
  Eigen::MatrixXd h = (grid.heights().array() - mean) * amplitude_scale + mean;
  return TerrainGrid(grid.origin(), grid.spacing(), std::move(h));
}

TerrainGrid synth_terrain(const TerrainGrid& cell, int clones_x, int clones_y, double amplitude_scale) {
  if (clones_x < 1 || clones_y < 1) throw Error(ErrorCode::InvalidArgument, "clone counts must be >= 1");
  const Eigen::Index cr = cell.rows(), cc = cell.cols();
  const Eigen::Index rows = clones_y * (cr - 1) + 1;
  const Eigen::Index cols = clones_x * (cc - 1) + 1;
  Eigen::MatrixXd h(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index ty = std::min<Eigen::Index>(r / (cr - 1), clones_y - 1);
    const Eigen::Index lr = r - ty * (cr - 1);
    const Eigen::Index sr = (ty % 2 == 0) ? lr : (cr - 1 - lr);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index tx = std::min<Eigen::Index>(c / (cc - 1), clones_x - 1);
      const Eigen::Index lc = c - tx * (cc - 1);
      const Eigen::Index sc = (tx % 2 == 0) ? lc : (cc - 1 - lc);
      h(r, c) = cell.heights()(sr, sc);
    }
  }
  TerrainGrid tiled(cell.origin(), cell.spacing(), std::move(h));
  return amplitude_scale == 1.0 ? tiled : scale_amplitude(tiled, amplitude_scale);
}

TerrainGrid fractal_terrain(int rows, int cols, double spacing, double elevation_range, std::uint64_t seed,
                            double roughness) {
  if (rows < 2 || cols < 2) throw Error(ErrorCode::InvalidArgument, "terrain needs at least 2x2 nodes");
  if (!(elevation_range >= 0.0)) throw Error(ErrorCode::InvalidArgument, "elevation range must be >= 0");
  if (!(roughness > 0.0 && roughness < 1.0)) throw Error(ErrorCode::InvalidArgument, "roughness must lie in (0, 1)");

  int size = 2;
  while (size + 1 < std::max(rows, cols)) size *= 2;
  const int n = size + 1;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double amp = 1.0;
  h(0, 0) = unit(rng);
  h(0, size) = unit(rng);
  h(size, 0) = unit(rng);
  h(size, size) = unit(rng);

  for (int half = size / 2; half >= 1; half /= 2) {
    const int step = 2 * half;
    // Diamond: cell centres.
    for (int r = half; r < n; r += step) {
      for (int c = half; c < n; c += step) {
        const double avg = 0.25 * (h(r - half, c - half) + h(r - half, c + half) + h(r + half, c - half) +
                                   h(r + half, c + half));
        h(r, c) = avg + amp * unit(rng);
      }
    }
    // Square: edge midpoints.
    for (int r = 0; r < n; r += half) {
      for (int c = (r / half) % 2 == 0 ? half : 0; c < n; c += step) {
        double sum = 0.0;
        int count = 0;
        if (r >= half) { sum += h(r - half, c); ++count; }
        if (r + half < n) { sum += h(r + half, c); ++count; }
        if (c >= half) { sum += h(r, c - half); ++count; }
        if (c + half < n) { sum += h(r, c + half); ++count; }
        h(r, c) = sum / count + amp * unit(rng);
      }
    }
    amp *= roughness;
  }

  Eigen::MatrixXd out = h.topLeftCorner(rows, cols);
  const double lo = out.minCoeff(), hi = out.maxCoeff();
  if (elevation_range == 0.0 || hi - lo <= 0.0) {
    out.setZero();
  } else {
    out = (out.array() - lo) * (elevation_range / (hi - lo));
  }
  return TerrainGrid(Vec2::Zero(), spacing, std::move(out));
}

TerrainGrid resample(const TerrainGrid& grid, double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be positive");
  const double width = grid.x_max() - grid.x_min();
  const double height = grid.y_max() - grid.y_min();
  const auto cols = static_cast<Eigen::Index>(std::floor(width / spacing + 1e-9)) + 1;
  const auto rows = static_cast<Eigen::Index>(std::floor(height / spacing + 1e-9)) + 1;
  if (rows < 2 || cols < 2) throw Error(ErrorCode::InvalidArgument, "spacing larger than terrain extent");
  Eigen::MatrixXd h(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double x = std::min(grid.x_min() + static_cast<double>(c) * spacing, grid.x_max());
      const double y = std::min(grid.y_min() + static_cast<double>(r) * spacing, grid.y_max());
      h(r, c) = height_at(grid, x, y);
    }
  }
  return TerrainGrid(grid.origin(), spacing, std::move(h));
}

double height_noise_sigma(double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be positive");
  return 0.08 * spacing;
}

}  // namespace cdtm
