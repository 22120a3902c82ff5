#pragma once

#include <optional>
#include <vector>

#include "flowsplat/deformation.hpp"
#include "flowsplat/grid.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat {

// Compositing conventions inherited from the splatting lineage: opacity
// clamp, contribution skip threshold, and early termination once the
// transmittance is spent.
struct RenderOptions {
    double alpha_clamp = 0.99;
    double alpha_skip = 1.0 / 255.0;
    double transmittance_min = 1e-4;
    double cull_sigmas = 3.0; // bounding-box cull radius, in projected sigmas
};

// View-space record of one visible Gaussian for a single pass.
struct GaussianView {
    int index = -1;               // position in the scene list
    Vector2d center_px = Vector2d::Zero();
    Matrix2d cov2d = Matrix2d::Identity();
    Matrix2d cov2d_inv = Matrix2d::Identity();
    double depth = 0.0;           // camera-space Z
    Vector2d velocity = Vector2d::Zero(); // px / frame
    bool velocity_valid = true;   // false: behind camera at the paired stamp
    Vector3d color = Vector3d::Zero();
    double opacity = 0.0;
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0; // pixel bbox, half-open
};

struct RenderBuffers {
    ImageRGB color;
    ImageVec2 velocity;
    ImageScalar depth;            // alpha-weighted mean depth; +inf where alpha == 0
    ImageScalar alpha;
    std::vector<GaussianView> visible; // sorted by (depth, index)
    Vector3d background = Vector3d::Zero();
    RenderOptions options;
};

// Gradients w.r.t. the view-space quantities, aligned with buffers.visible.
struct GaussianViewGrad {
    Vector3d d_color = Vector3d::Zero();
    double d_opacity = 0.0;
    Vector2d d_center_px = Vector2d::Zero();
    Matrix2d d_cov2d = Matrix2d::Zero();
    Vector2d d_velocity = Vector2d::Zero();
};

struct RenderGradients {
    std::vector<GaussianViewGrad> per_visible;
};

// Per-pixel upstream gradients; empty grids mean "no gradient on this
// channel".
struct UpstreamGradients {
    ImageRGB d_color;
    ImageVec2 d_velocity;
    ImageScalar d_alpha;
};

// Gradients w.r.t. the scene parameters and the deformation field weights.
struct SceneGrads {
    std::vector<Vector3d> d_mu0;
    std::vector<Vector3d> d_scale;
    std::vector<Vector4d> d_rotation;
    std::vector<Vector3d> d_color;
    std::vector<double> d_opacity;
    std::vector<double> d_field;

    void resize(int n_gaussians, int n_field_params);
    void set_zero();
};

// Forward pass with explicit per-Gaussian positions and 2D velocities; the
// synthetic oracle and the velocity-injection tests drive this directly.
// velocities[i] may be nullopt to mark "behind camera at the paired stamp"
// (renders as zero velocity, flagged).
RenderBuffers render_explicit(const CanonicalScene& scene,
                              const std::vector<Vector3d>& positions,
                              const std::vector<std::optional<Vector2d>>& velocities,
                              const CameraModel& cam,
                              const RenderOptions& opts = {});

// Field-driven pass: positions deform(mu0, t); velocity of each Gaussian is
// its projected displacement from stamp t to `velocity_to`.
RenderBuffers render(const CanonicalScene& scene, const DeformationField& field,
                     TimeStamp t, TimeStamp velocity_to, const CameraModel& cam,
                     const RenderOptions& opts = {});

// Exact reverse of the compositing recurrence. Throws ShapeMismatch when a
// non-empty upstream grid disagrees with the buffer shape.
RenderGradients render_backward(const RenderBuffers& buffers,
                                const UpstreamGradients& upstream);

// Chains view-space gradients through projection, covariance projection and
// the deformation field back to scene parameters. Accumulates into `out`.
void chain_to_scene(const RenderGradients& grads, const RenderBuffers& buffers,
                    const CanonicalScene& scene, const DeformationField& field,
                    TimeStamp t, TimeStamp velocity_to, const CameraModel& cam,
                    SceneGrads& out);

// Compositing of one pixel's depth-ordered contribution list; exposed so
// tests can compare it against the brute-force blending sums.
struct PixelContribution {
    double alpha;      // post-clamp
    Vector3d color;
    Vector2d velocity;
    double depth;
};
struct PixelResult {
    Vector3d color = Vector3d::Zero(); // without background term
    Vector2d velocity = Vector2d::Zero();
    double depth_accum = 0.0;
    double alpha = 0.0;
    double transmittance = 1.0;
};
PixelResult composite_pixel(const std::vector<PixelContribution>& contribs,
                            const RenderOptions& opts);

} // namespace flowsplat
