#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowsplat/deformation.hpp"
#include "flowsplat/losses.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat {

// Trajectory source for the refinement pass. The trainer adapts the learned
// deformation field; tests drive analytic or perturbed trajectories. `index`
// identifies the Gaussian so a model may carry per-track state (e.g. jitter);
// the map must stay smooth in x for fixed index.
class MotionModel {
   public:
    virtual ~MotionModel() = default;
    virtual Vector3d warp(int index, const Vector3d& x, double t) const = 0;
};

class FieldMotionModel final : public MotionModel {
   public:
    explicit FieldMotionModel(const DeformationField& field) : field_(&field) {}
    Vector3d warp(int, const Vector3d& x, double t) const override {
        return field_->deform(x, t);
    }

   private:
    const DeformationField* field_;
};

struct NoiseModel {
    Matrix3d process = 1e-4 * Matrix3d::Identity();      // Q, world units^2
    Matrix2d observation = 0.5 * Matrix2d::Identity();   // Rn, px^2
};

struct EKFOptions {
    NoiseModel noise;
    double rel_tol = 0.01;     // surface-filter depth slack
    double fd_delta = 1e-3;    // finite-difference step, world units
    double cond_max = 1e8;     // transition Jacobian conditioning limit
};

// Per-Gaussian filter state (single observation stream).
struct EKFTrack {
    Vector3d x = Vector3d::Zero();      // current center estimate
    Matrix3d P = Matrix3d::Zero();      // state covariance
    Vector2d p0 = Vector2d::Zero();     // projected pixel at frame 0
    Vector2d z_accum = Vector2d::Zero();// sum of past observations (px)
    bool visible = true;                // last surface-filter outcome
    Vector3d mu0 = Vector3d::Zero();    // canonical anchor
};

// Central finite differences of x -> warp(index, x, t).
Matrix3d motion_jacobian(const MotionModel& model, int index, const Vector3d& x,
                         double t, double delta);

// Transition Jacobian J_{Phi_t} * J_{Phi_{t_prev}}^{-1} anchored at mu0;
// nullopt when the previous-stamp Jacobian is too ill-conditioned (callers
// fall back to the identity transition and log).
std::optional<Matrix3d> jacobian_f(const MotionModel& model, int index,
                                   const Vector3d& mu0, TimeStamp t_prev, TimeStamp t,
                                   double delta, double cond_max = 1e8);

// Predicted flow observation for a Gaussian sitting at x at stamp t: the
// projected displacement over one frame, using the track's nominal step.
// nullopt when x is behind the camera at either stamp.
std::optional<Vector2d> observe_h(const Vector3d& x, const MotionModel& model,
                                  int index, const Vector3d& mu0, TimeStamp t,
                                  const CameraModel& cam);

// Central finite differences of observe_h in x.
std::optional<Eigen::Matrix<double, 2, 3>> jacobian_h(const Vector3d& x,
                                                      const MotionModel& model, int index,
                                                      const Vector3d& mu0, TimeStamp t,
                                                      const CameraModel& cam, double delta);

// Symmetrize and clamp negative eigenvalues to zero.
Matrix3d psd_floor(const Matrix3d& p);
double min_eigenvalue(const Matrix3d& p);

struct ForecastResult {
    Vector3d x_f;
    Matrix3d p_f;
    bool identity_fallback = false;
};
ForecastResult ekf_forecast(const EKFTrack& track, const MotionModel& model, int index,
                            TimeStamp t_prev, TimeStamp t, const EKFOptions& opts);

// Linear-algebra core of the assimilation: K = P J_h^T (J_h P J_h^T + Rn)^-1,
// x+ = x_f + K (z - h), P+ = (I - K J_h) P. singular_innovation is set (and
// the forecast returned unchanged) when the innovation covariance is not
// invertible.
struct UpdateResult {
    Vector3d x;
    Matrix3d p;
    bool singular_innovation = false;
};
UpdateResult ekf_gain_update(const Vector3d& x_f, const Matrix3d& p_f, const Vector2d& z,
                             const Vector2d& h_val, const Eigen::Matrix<double, 2, 3>& j_h,
                             const Matrix2d& rn);

struct FlowSample {
    Vector2d z = Vector2d::Zero();
    bool out_of_bounds = false;
};
// z_k = F(p0 + z_accum), bilinear with border clamp.
FlowSample locate_flow(const FlowField& flow, const Vector2d& p0, const Vector2d& z_accum);

// Visibility of each deformed center against the rendered depth map: visible
// iff camera depth <= depth(pixel) * (1 + rel_tol). Off-image or
// behind-camera centers are invisible; +inf depth pixels pass.
std::vector<uint8_t> surface_filter(const std::vector<Vector3d>& positions,
                                    const CameraModel& cam, const ImageScalar& depth_map,
                                    double rel_tol);

struct TrackLog {
    int singular_jacobian = 0;
    int singular_innovation = 0;
    int skipped_invisible = 0;
    int out_of_bounds = 0;
    int behind_camera = 0;
};

// One full filter step t_prev -> t against a single camera's flow map
// (the flow from t_prev to t) and the depth map at t_prev.
EKFTrack ekf_step(const EKFTrack& track, const MotionModel& model, int index,
                  TimeStamp t_prev, TimeStamp t, const CameraModel& cam,
                  const FlowField& flow, const ImageScalar& depth_map,
                  const EKFOptions& opts, TrackLog* log = nullptr);

struct RefineResult {
    std::vector<std::vector<Vector3d>> positions; // [gaussian][frame]
    std::vector<std::vector<uint8_t>> assimilated; // any-camera update applied
    std::vector<TrackLog> logs;
};

// Post-processing refinement over all Gaussians and frames. flows[c][k] is
// the flow k -> k+1 for camera c (k in 0..n_frames-2); depths[c][k] the
// rendered depth at frame k. Frame 0 is pinned to the nominal position.
RefineResult refine_trajectories(const CanonicalScene& scene, const MotionModel& model,
                                 const std::vector<CameraModel>& cameras,
                                 const std::vector<std::vector<FlowField>>& flows,
                                 const std::vector<std::vector<ImageScalar>>& depths,
                                 int n_frames, const EKFOptions& opts);

std::string trajectories_to_jsonl(const RefineResult& result);

} // namespace flowsplat
