#include "lpmap/geom.h"

#include <Eigen/SVD>

namespace lpmap {
namespace {

constexpr double kPi = std::numbers::pi;

void CheckChart(const Vector3& n) {
  if (std::abs(n.x()) > 1.0 - kSingularTolerance) {
    throw Error(ErrorCode::kSingularDirection,
                "direction within chart tolerance of +-u_x");
  }
}

// dR/dalpha and dR/dbeta of Rot2Dof.
void Rot2DofDerivatives(double alpha, double beta, Matrix3* d_alpha,
                        Matrix3* d_beta) {
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double cb = std::cos(beta), sb = std::sin(beta);
  *d_alpha << 0, 0, 0,           //
      ca * sb, -sa, ca * cb,     //
      -sa * sb, -ca, -sa * cb;
  *d_beta << -sb, 0, -cb,        //
      sa * cb, 0, -sa * sb,      //
      ca * cb, 0, -ca * sb;
}

void CheckJacobianChart(double beta) {
  if (std::abs(beta) > kPi / 2 - kJacobianBetaMargin) {
    throw Error(ErrorCode::kSingularDirection,
                "beta too close to +-pi/2 for a Jacobian");
  }
}

}  // namespace

Vector3 CanonicalDirection(const Vector3& n) {
  constexpr double kTie = 1e-6;
  double key = n.z();
  if (std::abs(key) <= kTie) key = std::abs(n.y()) > kTie ? n.y() : n.x();
  return key < 0 ? Vector3(-n) : n;
}

LineParam PointNormalToLine(const Vector3& n_in, const Vector3& q) {
  const Vector3 n = CanonicalDirection(n_in.normalized());
  CheckChart(n);
  LineParam lp;
  lp.beta = std::asin(std::clamp(-n.x(), -1.0, 1.0));
  lp.alpha = std::atan2(n.y(), n.z());
  const Vector3 c = q - n * n.dot(q);
  const Vector3 local = Rot2Dof(lp.alpha, lp.beta).transpose() * c;
  lp.x = local.x();
  lp.y = local.y();
  return lp;
}

PlaneParam PointNormalToPlane(const Vector3& n_in, double d) {
  const Vector3 unit = n_in.normalized();
  const Vector3 n = CanonicalDirection(unit);
  if (n.dot(unit) < 0) d = -d;
  CheckChart(n);
  PlaneParam pp;
  pp.beta = std::asin(std::clamp(-n.x(), -1.0, 1.0));
  pp.alpha = std::atan2(n.y(), n.z());
  pp.d = d;
  return pp;
}

double WrapAngle(double a) {
  a = std::remainder(a, 2 * kPi);
  if (a <= -kPi) a += 2 * kPi;
  return a;
}

// (alpha, beta, x, y) and (alpha + pi, pi - beta, -x, -y) describe the same
// line; planes keep d under the same reflection.
LineParam NormalizeChart(const LineParam& lp) {
  LineParam out = lp;
  out.beta = WrapAngle(out.beta);
  if (out.beta > kPi / 2 || out.beta < -kPi / 2) {
    out.beta = (out.beta > 0 ? kPi : -kPi) - out.beta;
    out.alpha += kPi;
    out.x = -out.x;
    out.y = -out.y;
  }
  out.alpha = WrapAngle(out.alpha);
  return out;
}

PlaneParam NormalizeChart(const PlaneParam& pp) {
  PlaneParam out = pp;
  out.beta = WrapAngle(out.beta);
  if (out.beta > kPi / 2 || out.beta < -kPi / 2) {
    out.beta = (out.beta > 0 ? kPi : -kPi) - out.beta;
    out.alpha += kPi;
  }
  out.alpha = WrapAngle(out.alpha);
  return out;
}

Matrix3 So3Exp(const Vector3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Matrix3::Identity() + Hat(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vector3 So3Log(const Matrix3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1;
  const Vector3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v / q.w();
  return v * (2.0 * std::atan2(s, q.w()) / s);
}

Matrix3 RightJacobianInverse(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 k = Hat(phi);
  double coeff;
  if (theta < 1e-5) {
    coeff = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coeff = 1.0 / (theta * theta) -
            (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Matrix3::Identity() + 0.5 * k + coeff * k * k;
}

Matrix3 ProjectToRotation(const Matrix3& m) {
  Eigen::JacobiSVD<Matrix3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Matrix3 u = svd.matrixU();
    u.col(2) *= -1;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Vector6 Se3Log(const RigidPose& pose) {
  Vector6 out;
  out << So3Log(pose.rotation), pose.translation;
  return out;
}

RigidPose Retract(const RigidPose& pose, const Vector6& delta) {
  RigidPose out;
  out.rotation = pose.rotation * So3Exp(delta.head<3>());
  out.translation = pose.translation + pose.rotation * delta.tail<3>();
  return out;
}

RigidPose PoseFromYawTranslation(double yaw, const Vector3& t) {
  return {Eigen::AngleAxisd(yaw, kUnitZ).toRotationMatrix(), t};
}

LineJacobians LineResidualJacobian(const RigidPose& pose, const Vector3& p_local,
                                   const LineParam& lp) {
  CheckJacobianChart(lp.beta);
  const Matrix3 r = Rot2Dof(lp.alpha, lp.beta);
  Matrix3 dr_alpha, dr_beta;
  Rot2DofDerivatives(lp.alpha, lp.beta, &dr_alpha, &dr_beta);

  const Vector3 n = r.col(2);
  const Vector3 offset(lp.x, lp.y, 0.0);
  const Vector3 c = r * offset;
  const Vector3 w = pose * p_local;
  const Vector3 e = w - c;
  const Matrix3 proj = Matrix3::Identity() - n * n.transpose();

  LineJacobians out;
  out.residual = proj * e;

  const Matrix3* dr[2] = {&dr_alpha, &dr_beta};
  for (int k = 0; k < 2; ++k) {
    const Vector3 dn = dr[k]->col(2);
    const Vector3 dc = *dr[k] * offset;
    out.d_landmark.col(k) =
        -(dn * n.dot(e) + n * dn.dot(e)) - proj * dc;
  }
  out.d_landmark.col(2) = -proj * r.col(0);
  out.d_landmark.col(3) = -proj * r.col(1);

  out.d_pose.leftCols<3>() = -proj * pose.rotation * Hat<double>(p_local);
  out.d_pose.rightCols<3>() = proj * pose.rotation;
  return out;
}

PlaneJacobians PlaneResidualJacobian(const RigidPose& pose,
                                     const Vector3& p_local,
                                     const PlaneParam& pp) {
  CheckJacobianChart(pp.beta);
  const Matrix3 r = Rot2Dof(pp.alpha, pp.beta);
  Matrix3 dr_alpha, dr_beta;
  Rot2DofDerivatives(pp.alpha, pp.beta, &dr_alpha, &dr_beta);

  const Vector3 n = r.col(2);
  const Vector3 w = pose * p_local;

  PlaneJacobians out;
  out.residual = n.dot(w - n * pp.d);
  // n^T dn = 0 on the unit sphere, so only the w term survives.
  out.d_landmark(0) = dr_alpha.col(2).dot(w);
  out.d_landmark(1) = dr_beta.col(2).dot(w);
  out.d_landmark(2) = -1.0;
  out.d_pose.leftCols<3>() = -n.transpose() * pose.rotation * Hat<double>(p_local);
  out.d_pose.rightCols<3>() = n.transpose() * pose.rotation;
  return out;
}

}  // namespace lpmap
