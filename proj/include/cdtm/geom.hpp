#pragma once

// Frame conventions, Euler angles and the two matrix operators every
// constraint and Jacobian is built from.
//
// A pose (p, R) maps camera coordinates to world coordinates:
//     w = R * c + p
// and a rigid motion (p12, R12) maps first-camera coordinates to
// second-camera coordinates:
//     c2 = R12 * c1 + p12
//
// Euler convention: R = X(phi) * Y(theta) * Z(psi), where X, Y, Z are the
// frame (passive) elementary rotations
//
//     X(a) = [1 0 0; 0 c s; 0 -s c]
//     Y(a) = [c 0 -s; 0 1 0; s 0 c]
//     Z(a) = [c s 0; -s c 0; 0 0 1]
//
// so that R(0,2) = -sin(theta), R(1,2)/R(2,2) = tan(phi) and
// R(0,1)/R(0,0) = tan(psi). Extraction inverts exactly these three relations.

#include <array>

#include <Eigen/Core>

namespace cdtm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct EulerAngles {
  double phi = 0.0;    // roll
  double theta = 0.0;  // pitch
  double psi = 0.0;    // yaw
};

/// Orthonormal 3x3 matrix with det +1.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Validates orthonormality and orientation to `tol`.
  explicit Rotation(const Mat3& m, double tol = 1e-9);

  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }
  Rotation transpose() const;

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  friend Rotation operator*(const Rotation& a, const Rotation& b);

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

/// Homogeneous image ray at unit focal length; z is always exactly 1.
class ImageRay {
 public:
  ImageRay() : q_(0.0, 0.0, 1.0) {}
  ImageRay(double x, double y);

  /// Projects a camera-frame direction onto the z = 1 plane.
  static ImageRay from_direction(const Vec3& d);

  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  const Vec3& vec() const { return q_; }

 private:
  Vec3 q_;
};

struct Pose {
  Vec3 p = Vec3::Zero();
  Rotation r;
};

struct RigidMotion {
  Vec3 p12 = Vec3::Zero();
  Rotation r12;
};

Rotation rotation_from_euler(const EulerAngles& a);

/// Throws GimbalLock when |R(0,2)| >= 1 - 1e-9.
EulerAngles euler_from_rotation(const Rotation& r);

/// Partial derivatives dR/dphi, dR/dtheta, dR/dpsi of rotation_from_euler.
std::array<Mat3, 3> euler_derivatives(const EulerAngles& a);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// I - u s^T / (s^T u). Throws DegenerateProjector when s^T u vanishes
/// relative to |s||u|.
Mat3 projector(const Vec3& u, const Vec3& s);

/// Orthogonal projector P(u, u) = I - u u^T / (u^T u).
Mat3 projector(const Vec3& u);

/// q1 n^T / (n^T r1 q1). Throws RayParallelToPlane when |n^T r1 q1| < 1e-9.
Mat3 l_operator(const Vec3& q1, const Vec3& n, const Rotation& r1);
Mat3 l_operator(const ImageRay& q1, const Vec3& n, const Rotation& r1);

/// p2 = p1 - R1 R12^T p12, R2 = R1 R12^T.
Pose compose_second_pose(const Pose& pose1, const RigidMotion& motion);

/// World point to the camera's image plane. Throws BehindCamera when the
/// camera-frame depth is not above 1e-6.
ImageRay project_to_image(const Pose& pose, const Vec3& g);

/// Camera-frame coordinates of a world point: R^T (g - p).
Vec3 to_camera(const Pose& pose, const Vec3& g);

}  // namespace cdtm
