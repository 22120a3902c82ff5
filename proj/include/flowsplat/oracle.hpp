#pragma once

#include <string>
#include <vector>

#include "flowsplat/losses.hpp"
#include "flowsplat/rasterizer.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat {

// Analytic per-group motion; positions are closed-form in the (real-valued)
// frame index, C1 in time.
struct Motion {
    enum class Type { kStatic, kLinear, kCircular, kScaling };
    Type type = Type::kStatic;
    Vector3d velocity = Vector3d::Zero(); // linear, world units / frame
    Vector3d center = Vector3d::Zero();   // circular / scaling pivot
    Vector3d axis = Vector3d::UnitZ();    // circular
    double omega = 0.0;                   // rad / frame
    double rate = 0.0;                    // scaling, fraction / frame

    bool is_static() const { return type == Type::kStatic; }
};

struct MotionGroup {
    Motion motion;
    std::vector<int> indices; // Gaussian indices, disjoint across groups
};

struct MotionSpec {
    std::vector<MotionGroup> groups;

    // Group owning a Gaussian; -1 treated as static.
    int group_of(int gaussian_index) const;
    bool is_dynamic(int gaussian_index) const;
};

Vector3d oracle_position(const MotionSpec& spec, int gaussian_index,
                         const Vector3d& mu0, double frame);

struct GroupRecipe {
    std::string name;
    int count = 0;
    std::string layout = "random"; // grid | ring | random
    Vector3d center = Vector3d::Zero();
    Vector3d size = Vector3d::Ones(); // box extents; ring: x=radius, y=band, z=height jitter
    Vector2d scale_range{0.05, 0.1};
    Vector2d opacity_range{0.8, 0.95};
    Vector3d color_lo = Vector3d::Zero();
    Vector3d color_hi = Vector3d::Ones();
    Motion motion;
};

struct RigRecipe {
    int cameras = 4;
    double radius = 4.0;
    double height = 0.0;
    double fov_deg = 45.0;
    double arc_deg = 360.0; // angular spread of the ring
    Vector3d look_at = Vector3d::Zero();
};

struct SceneRecipe {
    uint64_t seed = 0;
    int width = 64;
    int height = 64;
    int n_frames = 2;
    Vector3d background = Vector3d::Zero();
    RigRecipe rig;
    std::vector<GroupRecipe> groups;
};

std::string recipe_to_json(const SceneRecipe& recipe);
SceneRecipe recipe_from_json(const std::string& text);
SceneRecipe load_recipe(const std::string& path);

struct GeneratedScene {
    CanonicalScene scene;
    MotionSpec spec;
    std::vector<CameraModel> cameras;
};

// Deterministic scene generation; throws DataError on an empty recipe.
GeneratedScene make_scene(const SceneRecipe& recipe);

// Ground-truth flow for frame -> frame + 1: per pixel, the projected
// displacement of the frontmost covering Gaussian; invalid where the front
// identity changes between the stamps.
FlowField oracle_flow(const CanonicalScene& scene, const MotionSpec& spec,
                      const CameraModel& cam, int frame,
                      const RenderOptions& opts = {});

// True where the frontmost covering Gaussian belongs to a non-static group.
DynamicMask oracle_mask(const CanonicalScene& scene, const MotionSpec& spec,
                        const CameraModel& cam, int frame,
                        const RenderOptions& opts = {});

// Renders the ground-truth image/buffers at a frame by evaluating the
// analytic motion instead of a deformation field.
RenderBuffers oracle_render(const CanonicalScene& scene, const MotionSpec& spec,
                            const CameraModel& cam, int frame,
                            const RenderOptions& opts = {});

// MotionSpec JSON (motion.json in exported datasets).
std::string motion_to_json(const MotionSpec& spec);
MotionSpec motion_from_json(const std::string& text);

} // namespace flowsplat
