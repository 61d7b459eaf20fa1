#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "cdtm/error.hpp"
#include "cdtm/geom.hpp"
#include "support.hpp"

using namespace cdtm;

namespace {

Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a);
  return m;
}
Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, -std::sin(a), 0, 1, 0, std::sin(a), 0, std::cos(a);
  return m;
}
Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

EulerAngles random_angles(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-3.0, 3.0), t(-1.4, 1.4);
  return {a(rng), t(rng), a(rng)};
}

}  // namespace

TEST(Geom, EulerMatchesElementaryProduct) {
  const EulerAngles e{0.3, -0.2, 1.1};
  const Mat3 expect = rot_x(e.phi) * rot_y(e.theta) * rot_z(e.psi);
  EXPECT_LT((rotation_from_euler(e).matrix() - expect).norm(), 1e-15);
  EXPECT_NEAR(rotation_from_euler(e).matrix()(0, 2), -std::sin(e.theta), 1e-15);
}

TEST(Geom, EulerRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const EulerAngles e = random_angles(rng);
    const EulerAngles back = euler_from_rotation(rotation_from_euler(e));
    EXPECT_NEAR(back.phi, e.phi, 1e-12);
    EXPECT_NEAR(back.theta, e.theta, 1e-12);
    EXPECT_NEAR(back.psi, e.psi, 1e-12);
  }
}

TEST(Geom, GimbalLockThrows) {
  try {
    euler_from_rotation(rotation_from_euler({0.1, M_PI / 2, 0.2}));
    FAIL() << "expected GimbalLock";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GimbalLock);
  }
}

TEST(Geom, EulerDerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const EulerAngles e = random_angles(rng);
    const auto d = euler_derivatives(e);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      EulerAngles ep = e, em = e;
      (k == 0 ? ep.phi : k == 1 ? ep.theta : ep.psi) += h;
      (k == 0 ? em.phi : k == 1 ? em.theta : em.psi) -= h;
      const Mat3 fd = (rotation_from_euler(ep).matrix() - rotation_from_euler(em).matrix()) / (2 * h);
      EXPECT_LT((d[std::size_t(k)] - fd).norm(), 1e-8);
    }
  }
}

TEST(Geom, RotationRejectsNonOrthonormal) {
  Mat3 m = Mat3::Identity();
  m(0, 1) = 0.01;
  EXPECT_THROW(Rotation{m}, Error);
  EXPECT_THROW(Rotation{Mat3(-Mat3::Identity())}, Error);
}

TEST(Geom, WrapAngle) {
  EXPECT_DOUBLE_EQ(wrap_angle(0.5), 0.5);
  EXPECT_NEAR(wrap_angle(2 * M_PI + 0.5), 0.5, 1e-15);
  EXPECT_NEAR(wrap_angle(-M_PI), M_PI, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * M_PI), M_PI, 1e-12);
}

TEST(Geom, ProjectorAnnihilatesAndIsIdempotent) {
  const Vec3 u(0.2, -0.4, 1.0), s(0.5, 0.1, 0.9);
  const Mat3 p = projector(u, s);
  EXPECT_LT((p * u).norm(), 1e-15);
  EXPECT_LT((s.transpose() * p).norm(), 1e-15);
  EXPECT_LT((p * p - p).norm(), 1e-14);
  const Mat3 o = projector(u);
  EXPECT_LT((o - o.transpose()).norm(), 1e-15);
  Eigen::JacobiSVD<Mat3> svd(o);
  EXPECT_NEAR(svd.singularValues()(0), 1.0, 1e-14);
  EXPECT_NEAR(svd.singularValues()(1), 1.0, 1e-14);
  EXPECT_NEAR(svd.singularValues()(2), 0.0, 1e-14);
}

TEST(Geom, ProjectorDegenerateThrows) {
  EXPECT_THROW(projector(Vec3(1, 0, 0), Vec3(0, 1, 0)), Error);
}

TEST(Geom, LOperatorPutsRayPointOnPlane) {
  // p1 + R1 L (G - p1) lies on the plane through G with normal N.
  const Rotation r1 = rotation_from_euler({0.05, -0.03, 0.7});
  const Vec3 p1(10, -20, 500), g(40, 80, 30), n(0.1, -0.2, 1.0);
  const Vec3 q1(0.12, -0.3, 1.0);
  const Vec3 w = p1 + r1.matrix() * l_operator(q1, n, r1) * (g - p1);
  EXPECT_NEAR(n.dot(w - g), 0.0, 1e-9);
  // and along the ray
  EXPECT_LT((r1.matrix() * q1).normalized().cross((w - p1).normalized()).norm(), 1e-12);
}

TEST(Geom, LOperatorParallelRayThrows) {
  EXPECT_THROW(l_operator(Vec3(1, 0, 1), Vec3(1, 0, -1), Rotation::identity()), Error);
}

TEST(Geom, SecondPoseTransportsPoints) {
  const Pose pose1{Vec3(1, 2, 500), rotation_from_euler({0.02, 0.03, 0.4})};
  const RigidMotion m{Vec3(-30, 12, 4), rotation_from_euler({0.1, -0.05, 0.08})};
  const Pose pose2 = compose_second_pose(pose1, m);
  for (const Vec3& w : {Vec3(0, 0, 0), Vec3(100, -50, 20), Vec3(-300, 200, 80)}) {
    const Vec3 c2 = m.r12.matrix() * to_camera(pose1, w) + m.p12;
    EXPECT_LT((c2 - to_camera(pose2, w)).norm(), 1e-10);
  }
}

TEST(Geom, ProjectionAndBehindCamera) {
  const Pose down{Vec3(0, 0, 500), Rotation::identity()};
  // identity orientation looks along +z, so a point below is behind it
  EXPECT_THROW(project_to_image(down, Vec3(0, 0, 0)), Error);
  const ImageRay q = project_to_image(down, Vec3(50, -100, 1000));
  EXPECT_DOUBLE_EQ(q.x(), 0.1);
  EXPECT_DOUBLE_EQ(q.y(), -0.2);
  EXPECT_EQ(q.vec().z(), 1.0);
  EXPECT_THROW(ImageRay::from_direction(Vec3(1, 1, 0)), Error);
}
