#pragma once

#include <utility>
#include <vector>

#include "flowsplat/grid.hpp"

namespace flowsplat {

// Dense 2D motion field in px/frame, forward convention: the pixel at stamp
// t maps to pixel + flow at t + dt. Invalid pixels (occlusion events, file
// markers) are excluded from every loss mean.
struct FlowField {
    ImageVec2 data;
    ImageBool valid;

    FlowField() = default;
    explicit FlowField(ImageVec2 d)
        : data(std::move(d)), valid(data.width(), data.height(), 1) {}
    FlowField(ImageVec2 d, ImageBool v) : data(std::move(d)), valid(std::move(v)) {}
};

struct DynamicMask {
    ImageBool mask;
};

struct LossReport {
    double photometric = 0.0;
    double win = 0.0;
    double warp = 0.0;
    double dyn = 0.0;
    double total = 0.0;
    ImageScalar win_map;   // per-pixel L_win at the window's first stamp
    ImageScalar warp_map;  // per-pixel warp error on the comparison grid
};

// Mean absolute difference over all pixels and channels.
double loss_photometric(const ImageRGB& rendered, const ImageRGB& truth);

// Windowed velocity error: mean (over frames) of the per-frame masked
// component means. The returned map is the per-pixel error at the first
// stamp, zero where invalid. Empty means are defined as 0.
std::pair<double, ImageScalar> loss_win(const std::vector<ImageVec2>& rendered_flows,
                                        const std::vector<FlowField>& truth_flows,
                                        int tau);

// Backward warp: output(p) = bilinear(src, p + flow(p)), border-clamped.
// oob_mask (optional) marks pixels whose sample point left the image.
ImageRGB warp_image(const ImageRGB& src, const ImageVec2& flow,
                    ImageBool* oob_mask = nullptr);

// Warping consistency: `back_velocity` lives on the comparison grid and
// points to the stamp `rendered_source` was rendered at; the warped source
// is compared against `truth_target` on that same grid. Out-of-bounds
// samples are excluded from the mean.
std::pair<double, ImageScalar> loss_warp(const ImageRGB& rendered_source,
                                         const ImageVec2& back_velocity,
                                         const ImageRGB& truth_target);

// L1 restricted to mask-true pixels; 0 when the mask is empty.
double loss_dyn(const ImageRGB& rendered, const ImageRGB& truth,
                const DynamicMask& mask);

// Reverse-mode counterparts; each accumulates scale * dLoss/d(input).
void loss_photometric_backward(const ImageRGB& rendered, const ImageRGB& truth,
                               double scale, ImageRGB& d_rendered);
void loss_win_backward(const std::vector<ImageVec2>& rendered_flows,
                       const std::vector<FlowField>& truth_flows, double scale,
                       std::vector<ImageVec2>& d_flows);
void loss_warp_backward(const ImageRGB& rendered_source, const ImageVec2& back_velocity,
                        const ImageRGB& truth_target, double scale,
                        ImageRGB& d_source, ImageVec2& d_velocity);
void loss_dyn_backward(const ImageRGB& rendered, const ImageRGB& truth,
                       const DynamicMask& mask, double scale, ImageRGB& d_rendered);

} // namespace flowsplat
