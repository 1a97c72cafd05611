#pragma once

// Rigid transforms, pinhole projection and two-view triangulation.
//
// Conventions: image x to the right, y down; camera z looks forward.
// A CameraPose stores the world->camera rotation R and the camera center c,
// so a world point p maps into the camera as R * (p - c).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

#include "stereo_traj/errors.hpp"

namespace stereo_traj {

using Point3 = Eigen::Vector3d;
using Pixel = Eigen::Vector2d;
using Vector6 = Eigen::Matrix<double, 6, 1>;

inline constexpr double kDepthEpsilon = 1e-6;
inline constexpr double kRayAngleEpsilon = 1e-4;
inline constexpr double kRotationTolerance = 1e-9;

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

/// Proper rotation stored as a 3x3 orthonormal matrix with determinant +1.
class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Validates orthonormality and handedness to within `tolerance`.
  static Rotation from_matrix(const Eigen::Matrix3d& m,
                              double tolerance = kRotationTolerance) {
    if (!m.allFinite()) throw InvalidRotation("non-finite entries");
    const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    const double det = m.determinant();
    if (ortho > tolerance || std::abs(det - 1.0) > tolerance) {
      throw InvalidRotation("matrix is not a proper rotation (|RtR-I|=" +
                            std::to_string(ortho) +
                            ", det=" + std::to_string(det) + ")");
    }
    return Rotation(m);
  }

  /// Nearest proper rotation in the Frobenius sense (polar decomposition).
  static Rotation nearest(const Eigen::Matrix3d& m) {
    if (!m.allFinite()) throw InvalidRotation("non-finite entries");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return Rotation(u * v.transpose());
  }

  /// Exponential map so(3) -> SO(3) (Rodrigues).
  static Rotation exp(const Eigen::Vector3d& omega) {
    const double theta = omega.norm();
    const Eigen::Matrix3d w = skew(omega);
    if (theta < 1e-8) {
      return Rotation(Eigen::Matrix3d::Identity() + w + 0.5 * w * w);
    }
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    return Rotation(Eigen::Matrix3d::Identity() + a * w + b * w * w);
  }

  static Rotation about_axis(const Eigen::Vector3d& axis, double angle) {
    return exp(axis.normalized() * angle);
  }

  Eigen::Vector3d log() const {
    const Eigen::AngleAxisd aa(m_);
    return aa.axis() * aa.angle();
  }

  /// Rotation angle of this * other^T, radians.
  double angle_to(const Rotation& other) const {
    const double c = 0.5 * ((m_ * other.m_.transpose()).trace() - 1.0);
    return std::acos(std::clamp(c, -1.0, 1.0));
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  Rotation transpose() const { return Rotation(m_.transpose()); }
  Rotation orthonormalized() const { return nearest(m_); }

  Rotation operator*(const Rotation& rhs) const { return Rotation(m_ * rhs.m_); }
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return m_ * v; }

  friend bool operator==(const Rotation& a, const Rotation& b) {
    return a.m_ == b.m_;
  }

 private:
  explicit Rotation(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

struct CameraPose {
  Rotation rotation;  // world -> camera
  Point3 center = Point3::Zero();

  /// Camera-frame translation t such that p_cam = R p + t.
  Eigen::Vector3d translation() const { return -(rotation * center); }

  static CameraPose from_rotation_translation(const Rotation& r,
                                              const Eigen::Vector3d& t) {
    return CameraPose{r, -(r.transpose() * t)};
  }

  friend bool operator==(const CameraPose& a, const CameraPose& b) {
    return a.rotation == b.rotation && a.center == b.center;
  }
};

struct PinholeIntrinsics {
  double focal_x = 1.0;
  double focal_y = 1.0;
  double principal_x = 0.0;
  double principal_y = 0.0;

  bool valid() const {
    return std::isfinite(focal_x) && std::isfinite(focal_y) &&
           std::isfinite(principal_x) && std::isfinite(principal_y) &&
           focal_x > 0.0 && focal_y > 0.0;
  }

  /// Normalized viewing direction (z = 1) of a pixel.
  Eigen::Vector3d unproject(const Pixel& px) const {
    return {(px.x() - principal_x) / focal_x, (px.y() - principal_y) / focal_y,
            1.0};
  }

  friend bool operator==(const PinholeIntrinsics&,
                         const PinholeIntrinsics&) = default;
};

inline Point3 world_to_camera(const CameraPose& pose, const Point3& p) {
  return pose.rotation * (p - pose.center);
}

inline Point3 camera_to_world(const CameraPose& pose, const Point3& p_cam) {
  return pose.center + pose.rotation.transpose() * p_cam;
}

inline Pixel project(const PinholeIntrinsics& intr, const Point3& p_cam) {
  if (!(p_cam.z() > kDepthEpsilon)) {
    throw PointBehindCamera("depth " + std::to_string(p_cam.z()));
  }
  return {intr.focal_x * p_cam.x() / p_cam.z() + intr.principal_x,
          intr.focal_y * p_cam.y() / p_cam.z() + intr.principal_y};
}

/// Midpoint of the common perpendicular of the two viewing rays.
inline Point3 triangulate_two_view(const CameraPose& pose_a,
                                   const CameraPose& pose_b,
                                   const PinholeIntrinsics& intr,
                                   const Pixel& pix_a, const Pixel& pix_b) {
  const Eigen::Vector3d da =
      (pose_a.rotation.transpose() * intr.unproject(pix_a)).normalized();
  const Eigen::Vector3d db =
      (pose_b.rotation.transpose() * intr.unproject(pix_b)).normalized();
  const double angle = std::atan2(da.cross(db).norm(), da.dot(db));
  if ((pose_a.center - pose_b.center).norm() <= kDepthEpsilon ||
      angle <= kRayAngleEpsilon) {
    throw DegenerateBaseline("ray angle " + std::to_string(angle) + " rad");
  }
  // Minimize |ca + s da - cb - t db|^2 over (s, t).
  const Eigen::Vector3d w = pose_a.center - pose_b.center;
  const double b = da.dot(db);
  const double d = da.dot(w);
  const double e = db.dot(w);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double t = (e - b * d) / denom;
  return 0.5 * ((pose_a.center + s * da) + (pose_b.center + t * db));
}

/// Left-multiplicative increment: [R | t] <- [exp(omega) | v] * [R | t],
/// with delta = (omega, v). Keeps R on SO(3) exactly.
inline CameraPose retract(const CameraPose& pose, const Vector6& delta) {
  const Rotation dr = Rotation::exp(delta.head<3>());
  const Rotation r = (dr * pose.rotation).orthonormalized();
  const Eigen::Vector3d t = dr * pose.translation() + delta.tail<3>();
  return CameraPose::from_rotation_translation(r, t);
}

}  // namespace stereo_traj
