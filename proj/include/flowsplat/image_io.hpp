#pragma once

#include <string>

#include "flowsplat/grid.hpp"

namespace flowsplat {

// Binary PPM (P6, 8-bit). Values are clamped to [0, 1] and quantized with
// round-to-nearest on write; reads map back to [0, 1].
void save_ppm(const ImageRGB& img, const std::string& path);
ImageRGB load_ppm(const std::string& path);

// Binary PGM (P5, 8-bit) boolean masks; > 127 reads as true.
void save_pgm_mask(const ImageBool& mask, const std::string& path);
ImageBool load_pgm_mask(const std::string& path);

// Middlebury .flo: "PIEH", width i32, height i32, then row-major interleaved
// (u, v) float32, all little-endian.
void save_flo(const ImageVec2& flow, const std::string& path);
ImageVec2 load_flo(const std::string& path);

// 8-bit quantization helpers shared by the writers and the evaluation path.
uint8_t quantize_channel(double v);
ImageRGB quantize_image(const ImageRGB& img);

// Standard optical-flow false coloring: zero flow is white, hue follows the
// flow angle around the published 55-entry color wheel. max_magnitude <= 0
// autoscales to the field's maximum.
ImageRGB flow_to_color(const ImageVec2& flow, double max_magnitude = 0.0);

// The color for a single flow vector with magnitude pre-normalized to [0, 1].
Eigen::Vector3d flow_wheel_color(double u, double v);

} // namespace flowsplat
