#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowsplat/losses.hpp"
#include "flowsplat/oracle.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat {

// On-disk layout (shared by synthetic export and real-data ingestion):
//   <dir>/scene.json, cameras.json, motion.json, meta.json
//   <dir>/cam_%02d/frame_%04d.ppm          frames 0 .. n-1
//   <dir>/cam_%02d/flow_%04d.flo           frames 0 .. n-2 (t -> t+1)
//   <dir>/cam_%02d/mask_%04d.pgm           frames 0 .. n-1
// Invalid flow pixels use the Middlebury unknown-flow sentinel (1e10).
inline constexpr double kUnknownFlow = 1e10;
inline constexpr double kUnknownFlowThreshold = 1e9;

struct Dataset {
    CanonicalScene scene;
    std::vector<CameraModel> cameras;
    int n_frames = 0;
    std::optional<MotionSpec> motion;
    std::vector<std::vector<ImageRGB>> images; // [camera][frame]
    std::vector<std::vector<FlowField>> flows; // [camera][frame 0..n-2]
    std::vector<std::vector<DynamicMask>> masks;

    int width() const { return cameras.empty() ? 0 : cameras.front().width; }
    int height() const { return cameras.empty() ? 0 : cameras.front().height; }
};

// Generates and writes the full synthetic dataset for a recipe.
void write_synthetic_dataset(const SceneRecipe& recipe, const std::string& dir);

Dataset load_dataset(const std::string& dir);

void save_flow_field(const FlowField& flow, const std::string& path);
FlowField load_flow_field(const std::string& path);

} // namespace flowsplat
