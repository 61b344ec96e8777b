#ifndef LPMAP_GEOM_H_
#define LPMAP_GEOM_H_

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lpmap/types.h"

namespace lpmap {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

inline const Vector3 kUnitX = Vector3::UnitX();
inline const Vector3 kUnitY = Vector3::UnitY();
inline const Vector3 kUnitZ = Vector3::UnitZ();

// Directions closer than this to +-x have no (alpha, beta) chart.
inline constexpr double kSingularTolerance = 1e-6;
// Jacobians are refused when |beta| is within this margin of pi/2.
inline constexpr double kJacobianBetaMargin = 1e-4;

// Rigid transform in SE(3); maps points from the child frame to the parent
// frame: p_parent = rotation * p_child + translation.
template <typename Scalar>
struct BasicRigidPose {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  static BasicRigidPose Identity() { return {}; }

  Vec3<Scalar> operator*(const Vec3<Scalar>& p) const {
    return rotation * p + translation;
  }
  BasicRigidPose operator*(const BasicRigidPose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
  BasicRigidPose Inverse() const {
    Mat3<Scalar> rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

using RigidPose = BasicRigidPose<double>;

// Minimal line block <alpha, beta, x, y>.
template <typename Scalar>
struct BasicLineParam {
  Scalar alpha{0};
  Scalar beta{0};
  Scalar x{0};
  Scalar y{0};
};

// Minimal plane block <alpha, beta, d>.
template <typename Scalar>
struct BasicPlaneParam {
  Scalar alpha{0};
  Scalar beta{0};
  Scalar d{0};
};

// `point` is the foot of the perpendicular from the origin.
template <typename Scalar>
struct BasicPointNormalLine {
  Vec3<Scalar> normal;
  Vec3<Scalar> point;
};

// The plane {p : normal . p = offset}.
template <typename Scalar>
struct BasicPointNormalPlane {
  Vec3<Scalar> normal;
  Scalar offset{0};
};

using LineParam = BasicLineParam<double>;
using PlaneParam = BasicPlaneParam<double>;
using PointNormalLine = BasicPointNormalLine<double>;
using PointNormalPlane = BasicPointNormalPlane<double>;

template <typename Scalar>
Mat3<Scalar> Hat(const Vec3<Scalar>& v) {
  Mat3<Scalar> m;
  m << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(),
      Scalar(0);
  return m;
}

// The 2-DoF rotation R(alpha, beta) that carries u_z onto a line direction
// or plane normal.
template <typename Scalar>
Mat3<Scalar> Rot2Dof(Scalar alpha, Scalar beta) {
  using std::cos;
  using std::sin;
  const Scalar ca = cos(alpha), sa = sin(alpha);
  const Scalar cb = cos(beta), sb = sin(beta);
  Mat3<Scalar> r;
  r << cb, Scalar(0), -sb,  //
      sa * sb, ca, sa * cb,  //
      ca * sb, -sa, ca * cb;
  return r;
}

template <typename Scalar>
BasicPointNormalLine<Scalar> LineToPointNormal(
    const BasicLineParam<Scalar>& lp) {
  const Mat3<Scalar> r = Rot2Dof(lp.alpha, lp.beta);
  return {r.col(2), r.col(0) * lp.x + r.col(1) * lp.y};
}

template <typename Scalar>
BasicPointNormalPlane<Scalar> PlaneToPointNormal(
    const BasicPlaneParam<Scalar>& pp) {
  return {Rot2Dof(pp.alpha, pp.beta).col(2), pp.d};
}

// (I - n n^T)(T p - q); invariant to where q sits on the line.
template <typename Scalar>
Vec3<Scalar> PointToLineResidual(const BasicRigidPose<Scalar>& pose,
                                 const Vec3<Scalar>& p_local,
                                 const BasicPointNormalLine<Scalar>& line) {
  const Vec3<Scalar> e = pose * p_local - line.point;
  return e - line.normal * line.normal.dot(e);
}

// Signed distance n^T (T p - d n).
template <typename Scalar>
Scalar PointToPlaneResidual(const BasicRigidPose<Scalar>& pose,
                            const Vec3<Scalar>& p_local,
                            const BasicPointNormalPlane<Scalar>& plane) {
  return plane.normal.dot(pose * p_local - plane.normal * plane.offset);
}

// Flips `n` into the half space n_z >= 0 (ties broken on n_y, then n_x).
Vector3 CanonicalDirection(const Vector3& n);

// Throws kSingularDirection when |n_x| > 1 - kSingularTolerance.
LineParam PointNormalToLine(const Vector3& n, const Vector3& q);
PlaneParam PointNormalToPlane(const Vector3& n, double d);

double WrapAngle(double a);
// Brings alpha into (-pi, pi] and beta into [-pi/2, pi/2] without moving the
// represented line or plane.
LineParam NormalizeChart(const LineParam& lp);
PlaneParam NormalizeChart(const PlaneParam& pp);

Matrix3 So3Exp(const Vector3& omega);
// Quaternion-based, so the angle-pi case is well defined.
Vector3 So3Log(const Matrix3& r);
Matrix3 RightJacobianInverse(const Vector3& phi);
Matrix3 ProjectToRotation(const Matrix3& m);

// (rotation log, translation).
Vector6 Se3Log(const RigidPose& pose);

// Right-multiplied local perturbation; delta = (omega, v):
// R <- R Exp(omega), t <- t + R v.
RigidPose Retract(const RigidPose& pose, const Vector6& delta);

RigidPose PoseFromYawTranslation(double yaw, const Vector3& t);

struct LineJacobians {
  Vector3 residual;
  Eigen::Matrix<double, 3, 6> d_pose;
  Eigen::Matrix<double, 3, 4> d_landmark;
};

struct PlaneJacobians {
  double residual = 0;
  Eigen::Matrix<double, 1, 6> d_pose;
  Eigen::Matrix<double, 1, 3> d_landmark;
};

LineJacobians LineResidualJacobian(const RigidPose& pose, const Vector3& p_local,
                                   const LineParam& lp);
PlaneJacobians PlaneResidualJacobian(const RigidPose& pose,
                                     const Vector3& p_local,
                                     const PlaneParam& pp);

}  // namespace lpmap

#endif  // LPMAP_GEOM_H_
