#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowsplat/dataset.hpp"
#include "flowsplat/deformation.hpp"
#include "flowsplat/grid.hpp"
#include "flowsplat/losses.hpp"

namespace flowsplat {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) over [0,1] images, capped at 99 dB when MSE < 1e-10.
double psnr(const ImageRGB& a, const ImageRGB& b);

// PSNR over mask-true pixels; nullopt (reported "n/a") when the mask is empty.
std::optional<double> dpsnr(const ImageRGB& a, const ImageRGB& b, const ImageBool& mask);

// Single-scale SSIM: 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
// channel-averaged, evaluated where the window fits entirely.
double ssim(const ImageRGB& a, const ImageRGB& b);

// Mean endpoint error over valid pixels; nullopt when everything is invalid.
std::optional<double> velocity_epe(const ImageVec2& rendered, const FlowField& truth);

struct FrameEval {
    int frame = 0;
    int camera = 0;
    double psnr = 0.0;
    std::optional<double> dpsnr;
    double ssim = 0.0;
    std::optional<double> epe;
};

struct EvalReport {
    double psnr = 0.0;
    std::optional<double> dpsnr;
    double ssim = 0.0;
    std::optional<double> velocity_epe;
    std::vector<FrameEval> frames;
};

// Renders every frame of the listed cameras from (scene, field) and compares
// against the dataset ground truth. Rendered images are quantized to 8 bits
// before comparison so a perfect reproduction scores exactly at the cap.
EvalReport evaluate_scene(const CanonicalScene& scene, const DeformationField& field,
                          const Dataset& dataset, const std::vector<int>& cameras);

std::string eval_report_to_json(const EvalReport& report);

} // namespace flowsplat
