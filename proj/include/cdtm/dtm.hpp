#pragma once

// Regular-grid digital terrain map.
//
// Nodes sit at (origin.x + c * spacing, origin.y + r * spacing) for
// row r in [0, rows) and column c in [0, cols); heights(r, c) is the terrain
// height at that node. Between nodes the surface is the bilinear patch of
// the enclosing cell.

#include <array>
#include <cstdint>

#include <Eigen/Core>

#include "cdtm/geom.hpp"

namespace cdtm {

class TerrainGrid {
 public:
  TerrainGrid(Vec2 origin, double spacing, Eigen::MatrixXd heights);

  const Vec2& origin() const { return origin_; }
  double spacing() const { return spacing_; }
  const Eigen::MatrixXd& heights() const { return heights_; }
  Eigen::Index rows() const { return heights_.rows(); }
  Eigen::Index cols() const { return heights_.cols(); }

  double x_min() const { return origin_.x(); }
  double y_min() const { return origin_.y(); }
  double x_max() const { return origin_.x() + static_cast<double>(cols() - 1) * spacing_; }
  double y_max() const { return origin_.y() + static_cast<double>(rows() - 1) * spacing_; }

  bool contains(double x, double y) const;

  double min_height() const { return heights_.minCoeff(); }
  double max_height() const { return heights_.maxCoeff(); }
  double mean_height() const { return heights_.mean(); }

  friend bool operator==(const TerrainGrid& a, const TerrainGrid& b);

 private:
  Vec2 origin_;
  double spacing_;
  Eigen::MatrixXd heights_;
};

/// Point on the interpolated surface and its tangent-plane normal.
struct SurfacePoint {
  Vec3 g;
  Vec3 n;  // (-dh/dx, -dh/dy, 1)
};

/// Bilinear height. Throws OutOfExtent outside the grid.
double height_at(const TerrainGrid& grid, double x, double y);

/// Nodes of the cell enclosing (x, y) and their bilinear weights, so that
/// height_at(x, y) = sum_k w[k] * heights()(node[k]). Nodes are flattened as
/// row * cols + col. Throws OutOfExtent.
struct NodeWeights {
  std::array<Eigen::Index, 4> node;
  std::array<double, 4> w;
};
NodeWeights bilinear_weights(const TerrainGrid& grid, double x, double y);

/// (-dh/dx, -dh/dy, 1) of the bilinear patch at (x, y).
Vec3 normal_at(const TerrainGrid& grid, double x, double y);

/// First intersection of p + lambda d (lambda > 0) with the surface.
///
/// Marches with a step of spacing/4 along the ray until the height of the
/// ray drops below the surface, then bisects the bracket 60 times. Thin
/// ridges narrower than the march step can be skipped, which is the
/// "missed the near hill" behaviour ray tracing exhibits in practice.
///
/// Throws OutOfExtent when p lies outside the grid, NoIntersection when the
/// ray leaves the grid without meeting the surface, InvalidArgument when p
/// is below the surface or d is zero.
SurfacePoint raycast(const TerrainGrid& grid, const Vec3& p, const Vec3& d);

/// Tiles `cell` clones_x by clones_y times, mirroring alternate clones so
/// seams are continuous (neighbouring clones share their seam row/column),
/// then scales heights about their mean by amplitude_scale.
TerrainGrid synth_terrain(const TerrainGrid& cell, int clones_x, int clones_y,
                          double amplitude_scale);

/// Diamond-square terrain cropped to rows x cols and rescaled so that
/// max - min equals elevation_range exactly (min at 0). Origin at (0, 0).
/// `roughness` is the amplitude ratio between successive octaves; smaller
/// values give smoother hills.
TerrainGrid fractal_terrain(int rows, int cols, double spacing, double elevation_range,
                            std::uint64_t seed, double roughness = 0.55);

/// Resamples the bilinear surface of `grid` on a new square lattice with the
/// given spacing covering the same origin and (at most) the same extent.
TerrainGrid resample(const TerrainGrid& grid, double spacing);

/// Returns a copy with every node height scaled about the mean.
TerrainGrid scale_amplitude(const TerrainGrid& grid, double amplitude_scale);

/// Height standard deviation of a DTM with the given grid spacing:
/// 0.08 * spacing (2.4 m at 30 m).
double height_noise_sigma(double spacing);

}  // namespace cdtm
