#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace flowsplat {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;

// Near plane and projected-covariance floor shared by the whole pipeline.
inline constexpr double kZNear = 0.01;          // world units
inline constexpr double kBlurFloor = 0.3;       // px^2, added to both eigenvalues

// One scene primitive. Scale is stored directly (not log-space) and kept
// strictly positive by the optimizer's constraint projection; the quaternion
// is (w, x, y, z) and renormalized after every step.
struct Gaussian3D {
    Vector3d mu0 = Vector3d::Zero();           // canonical center, world units
    Vector3d scale = Vector3d::Ones();         // per-axis stddev, > 0
    Vector4d rotation{1.0, 0.0, 0.0, 0.0};     // unit quaternion (w, x, y, z)
    Vector3d color = Vector3d::Zero();         // RGB in [0, 1]
    double opacity = 1.0;                      // in [0, 1]
};

// Pinhole camera, world -> camera convention X_c = R * x + T, +Z in front.
struct CameraModel {
    Matrix3d K = Matrix3d::Identity();
    Matrix3d R = Matrix3d::Identity();
    Vector3d T = Vector3d::Zero();
    int width = 0;
    int height = 0;

    double fx() const { return K(0, 0); }
    double fy() const { return K(1, 1); }
    double cx() const { return K(0, 2); }
    double cy() const { return K(1, 2); }
};

struct CanonicalScene {
    std::vector<Gaussian3D> gaussians;         // order is identity
    Vector3d background = Vector3d::Zero();

    int size() const { return static_cast<int>(gaussians.size()); }

    // Max distance of any canonical center from their centroid; used to set
    // length scales (learning rates, split sizes, jitter magnitudes).
    double extent() const;
};

Matrix3d quaternion_to_rotation(const Vector4d& q);

// Sigma = R_q * diag(scale)^2 * R_q^T. Symmetric positive definite whenever
// the Gaussian invariants hold.
Matrix3d covariance_of(const Gaussian3D& g);

struct ProjectedPoint {
    Vector2d pixel;
    double depth;                              // camera-space Z
};

// K * (R x + T) with homogeneous normalization. Returns nullopt when the
// point is at or behind the near plane; callers cull the Gaussian from the
// view in that case.
std::optional<ProjectedPoint> project_point(const CameraModel& cam, const Vector3d& x);

// Affine (EWA) projection of the 3D covariance to pixel space at center
// mu_t, with kBlurFloor added to both eigenvalues: J W Sigma W^T J^T + floor*I.
std::optional<Matrix2d> project_covariance(const CameraModel& cam, const Gaussian3D& g,
                                           const Vector3d& mu_t);

// Jacobian of the pixel projection w.r.t. the world point (2x3), used by the
// rasterizer backward pass and the EKF observation linearization.
std::optional<Eigen::Matrix<double, 2, 3>> projection_jacobian(const CameraModel& cam,
                                                               const Vector3d& x);

// Inverse of project_point at a fixed depth: R^T (K^{-1} (px, py, 1)^T z - T).
// Throws NonPositiveDepth when z <= 0.
Vector3d unproject_pixel(const CameraModel& cam, const Vector2d& p, double z);

// Scene / camera JSON files (schemas shared with the synthetic dataset).
std::string scene_to_json(const CanonicalScene& scene);
CanonicalScene scene_from_json(const std::string& text);
void save_scene(const CanonicalScene& scene, const std::string& path);
CanonicalScene load_scene(const std::string& path);

std::string cameras_to_json(const std::vector<CameraModel>& cams);
std::vector<CameraModel> cameras_from_json(const std::string& text);
void save_cameras(const std::vector<CameraModel>& cams, const std::string& path);
std::vector<CameraModel> load_cameras(const std::string& path);

} // namespace flowsplat
