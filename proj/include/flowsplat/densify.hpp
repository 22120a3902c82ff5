#pragma once

#include <string>
#include <vector>

#include "flowsplat/deformation.hpp"
#include "flowsplat/losses.hpp"
#include "flowsplat/rng.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat {

struct FADConfig {
    bool enabled = true;
    int cadence = 500;            // optimizer iterations between events
    double percentile = 95.0;     // threshold percentile within the dynamic mask
    double fps_ratio = 0.05;      // keep ceil(ratio * N) candidates
    int k = 4;                    // kNN neighbor count
    double radius_scale = 3.0;    // multiplier on the neighbor's 3-sigma extent
    int max_new_per_event = 512;
    double opacity_floor = 0.1;   // applied to accepted Gaussians
    bool use_warp_map = false;    // union the warp-loss map into selection
};

struct PixelIndex {
    int x = 0;
    int y = 0;
};

// Audit record of one densification event.
struct DensifyEvent {
    double t = 0.0;
    std::vector<PixelIndex> selected_pixels;
    std::vector<Vector3d> lifted_points;
    std::vector<Vector3d> sampled_points;
    std::vector<Gaussian3D> accepted; // canonical space
    std::vector<PixelIndex> accepted_source; // originating pixel per accepted
    std::vector<double> accepted_reproj_px;  // reprojection residual at accept time
    int rejected_invalid_depth = 0;
    int rejected_radius_gate = 0;
    int rejected_cap = 0;
    int non_contractive = 0;
};

std::string densify_event_to_json(const DensifyEvent& event);

// Magnitude of the central-difference spatial gradient (border pixels use
// one-sided differences); realizes the gradient map used for selection.
ImageScalar spatial_gradient_magnitude(const ImageScalar& map);

// Pixels inside the mask whose loss and gradient both exceed their
// within-mask percentile thresholds.
std::vector<PixelIndex> select_pixels(const ImageScalar& loss_map,
                                      const ImageScalar& grad_map,
                                      const DynamicMask& mask, const FADConfig& cfg);

// Lifts pixels through the rendered depth map; pixels with the +inf sentinel
// (alpha == 0) or non-positive depth are skipped and counted.
std::vector<Vector3d> lift_pixels(const std::vector<PixelIndex>& pixels,
                                  const ImageScalar& depth_map, const CameraModel& cam,
                                  int* rejected_count = nullptr,
                                  std::vector<int>* kept_pixels = nullptr);

// Greedy max-min subsampling to ceil(ratio * N) points. The first pick is
// index 0; every later pick maximizes the min distance to the chosen set,
// ties broken by lowest index.
std::vector<int> farthest_point_sample(const std::vector<Vector3d>& points, double ratio);

// Radius-gated kNN attribute interpolation: for each candidate, the k nearest
// deformed Gaussians within each neighbor's gate radius contribute inverse-
// distance-weighted attributes; candidates with no surviving neighbor are
// rejected (entry absent from the result, counted).
std::vector<Gaussian3D> interpolate_attributes(const std::vector<Vector3d>& candidates,
                                               const std::vector<Vector3d>& deformed_positions,
                                               const CanonicalScene& scene, int k,
                                               double radius_scale,
                                               int* rejected_count = nullptr,
                                               std::vector<int>* kept_candidates = nullptr);

// Inverts the deformation by fixed-point iteration x <- g - D(x, t), 5
// rounds, keeping the best iterate. non_contractive counts Gaussians whose
// residual failed to shrink monotonically.
std::vector<Gaussian3D> to_canonical(const std::vector<Gaussian3D>& at_t,
                                     const DeformationField& field, double t,
                                     int* non_contractive = nullptr);

struct ConventionalDensifyConfig {
    double grad_threshold = 2e-4;       // mean pixel-space positional gradient
    double split_scale_fraction = 0.01; // of scene extent
    double opacity_floor = 0.005;
    double split_scale_shrink = 1.6;
    int max_gaussians = 20000;
};

struct ConventionalDensifyStats {
    int cloned = 0;
    int split = 0;
    int pruned = 0;
    // For each Gaussian in the updated scene: index of the pre-update
    // Gaussian whose optimizer state it inherits, or -1 for fresh entries.
    std::vector<int> parent_of;
};

// Classic clone / split / prune on accumulated positional gradients. The
// accumulator must be aligned with the scene order; rng drives split child
// placement.
ConventionalDensifyStats conventional_densify_and_prune(
    CanonicalScene& scene, const std::vector<double>& mean_positional_grad,
    const ConventionalDensifyConfig& cfg, double scene_extent, Rng& rng);

// Full FAD pipeline for one event; accepted Gaussians are appended to the
// scene with the opacity floor applied.
DensifyEvent run_fad(CanonicalScene& scene, const DeformationField& field, double t,
                     const CameraModel& cam, const ImageScalar& loss_map,
                     const DynamicMask& mask, const ImageScalar& depth_map,
                     const FADConfig& cfg, const ImageScalar* warp_map = nullptr);

} // namespace flowsplat
