#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowsplat/scene.hpp"

namespace flowsplat {

// Normalized time in [0, 1]; frame_dt = 1 / (n_frames - 1).
struct TimeStamp {
    double t = 0.0;
    double frame_dt = 1.0;

    TimeStamp next() const { return {t + frame_dt, frame_dt}; }
    TimeStamp prev() const { return {t - frame_dt, frame_dt}; }
    static TimeStamp frame(int k, int n_frames) {
        const double dt = n_frames > 1 ? 1.0 / (n_frames - 1) : 1.0;
        return {k * dt, dt};
    }
};

// Small MLP displacement field D(x, t): sine/cosine positional encoding of
// the spatial input (6 bands) and time (4 bands), two tanh hidden layers of
// width 64, linear 3-vector output. The final layer is scaled down at
// initialization so the field starts near the identity map.
class DeformationField {
   public:
    static constexpr int kSpaceBands = 6;
    static constexpr int kTimeBands = 4;
    static constexpr int kHidden = 64;
    static constexpr int kInputDim = 3 * 2 * kSpaceBands + 2 * kTimeBands;

    explicit DeformationField(uint64_t seed = 0);

    int parameter_count() const { return static_cast<int>(weights_.size()); }
    std::vector<double>& weights() { return weights_; }
    const std::vector<double>& weights() const { return weights_; }

    Vector3d displacement(const Vector3d& x, double t) const;
    Vector3d deform(const Vector3d& mu0, double t) const {
        return mu0 + displacement(mu0, t);
    }

    // Reverse-mode step for one evaluation point: accumulates dL/dweights
    // into param_grad (length parameter_count) given dL/d(displacement), and
    // returns dL/dx. param_grad may be null when only the input gradient is
    // needed.
    Vector3d backward(const Vector3d& x, double t, const Vector3d& d_out,
                      double* param_grad) const;

    void save(const std::string& path) const;
    static DeformationField load(const std::string& path);

   private:
    // Layout: W1 (64 x in), b1, W2 (64 x 64), b2, W3 (3 x 64), b3.
    std::vector<double> weights_;

    struct Trace;
    void forward_trace(const Vector3d& x, double t, Trace& trace) const;
};

// Projected one-frame displacement of a Gaussian center: the v_i composited
// by the velocity channel. `to` is the stamp defining where the step points
// (t.next() for forward flow, t.prev() for the backward field used by the
// warp loss). Returns nullopt when the center is behind the camera at either
// stamp.
std::optional<Vector2d> gaussian_velocity_2d(const DeformationField& field,
                                             const Gaussian3D& g, TimeStamp t,
                                             TimeStamp to, const CameraModel& cam);

// Central finite differences of Phi_t(x) = x + D(x, t) w.r.t. x.
Matrix3d deformation_jacobian(const DeformationField& field, const Vector3d& mu0,
                              double t, double delta);

} // namespace flowsplat
