#include "cdtm/geom.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "cdtm/error.hpp"

namespace cdtm {

namespace {

constexpr double kGimbalMargin = 1e-9;

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0,
       0, c, s,
       0, -s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, -s,
       0, 1, 0,
       s, 0, c;
  return m;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, s, 0,
       -s, c, 0,
       0, 0, 1;
  return m;
}

Mat3 d_rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 0, 0, 0,
       0, -s, c,
       0, -c, -s;
  return m;
}

Mat3 d_rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, 0, -c,
       0, 0, 0,
       c, 0, -s;
  return m;
}

Mat3 d_rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, c, 0,
       -c, -s, 0,
       0, 0, 0;
  return m;
}

}  // namespace

Rotation::Rotation(const Mat3& m, double tol) : m_(m) {
  if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, "rotation has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (ortho > tol || std::abs(det - 1.0) > tol) {
    throw Error(ErrorCode::InvalidArgument, "matrix is not a proper rotation");
  }
}

Rotation Rotation::transpose() const { return Rotation(m_.transpose(), Unchecked{}); }

Rotation operator*(const Rotation& a, const Rotation& b) {
  return Rotation(a.m_ * b.m_, Rotation::Unchecked{});
}

ImageRay::ImageRay(double x, double y) : q_(x, y, 1.0) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw Error(ErrorCode::InvalidArgument, "image ray has non-finite components");
  }
}

ImageRay ImageRay::from_direction(const Vec3& d) {
  if (!(std::abs(d.z()) > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "direction has zero z-component");
  }
  return ImageRay(d.x() / d.z(), d.y() / d.z());
}

Rotation rotation_from_euler(const EulerAngles& a) {
  return Rotation(rot_x(a.phi) * rot_y(a.theta) * rot_z(a.psi));
}

EulerAngles euler_from_rotation(const Rotation& r) {
  const Mat3& m = r.matrix();
  if (std::abs(m(0, 2)) >= 1.0 - kGimbalMargin) {
    throw Error(ErrorCode::GimbalLock, "pitch at +-90 degrees, roll and yaw are not separable");
  }
  EulerAngles a;
  a.phi = std::atan2(m(1, 2), m(2, 2));
  a.theta = std::asin(-m(0, 2));
  a.psi = std::atan2(m(0, 1), m(0, 0));
  return a;
}

std::array<Mat3, 3> euler_derivatives(const EulerAngles& a) {
  const Mat3 x = rot_x(a.phi), y = rot_y(a.theta), z = rot_z(a.psi);
  return {d_rot_x(a.phi) * y * z, x * d_rot_y(a.theta) * z, x * y * d_rot_z(a.psi)};
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

Mat3 projector(const Vec3& u, const Vec3& s) {
  const double su = s.dot(u);
  if (!(std::abs(su) > 1e-12 * s.norm() * u.norm())) {
    throw Error(ErrorCode::DegenerateProjector, "projector with s^T u = 0");
  }
  return Mat3::Identity() - u * s.transpose() / su;
}

Mat3 projector(const Vec3& u) { return projector(u, u); }

Mat3 l_operator(const Vec3& q1, const Vec3& n, const Rotation& r1) {
  const double denom = n.dot(r1 * q1);
  if (!(std::abs(denom) >= 1e-9)) {
    throw Error(ErrorCode::RayParallelToPlane, "feature ray parallel to the terrain tangent plane");
  }
  return q1 * n.transpose() / denom;
}

Mat3 l_operator(const ImageRay& q1, const Vec3& n, const Rotation& r1) {
  return l_operator(q1.vec(), n, r1);
}

Pose compose_second_pose(const Pose& pose1, const RigidMotion& motion) {
  const Rotation r2 = pose1.r * motion.r12.transpose();
  return Pose{pose1.p - r2 * motion.p12, r2};
}

Vec3 to_camera(const Pose& pose, const Vec3& g) { return pose.r.matrix().transpose() * (g - pose.p); }

ImageRay project_to_image(const Pose& pose, const Vec3& g) {
  const Vec3 c = to_camera(pose, g);
  if (!(c.z() > 1e-6)) throw Error(ErrorCode::BehindCamera, "point is behind the camera");
  return ImageRay(c.x() / c.z(), c.y() / c.z());
}

}  // namespace cdtm
