#include "flowsplat/oracle.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "flowsplat/error.hpp"
#include "flowsplat/parallel.hpp"
#include "flowsplat/rng.hpp"

namespace flowsplat {

using nlohmann::json;

int MotionSpec::group_of(int gaussian_index) const {
    for (size_t g = 0; g < groups.size(); ++g)
        for (int idx : groups[g].indices)
            if (idx == gaussian_index) return static_cast<int>(g);
    return -1;
}

bool MotionSpec::is_dynamic(int gaussian_index) const {
    const int g = group_of(gaussian_index);
    return g >= 0 && !groups[g].motion.is_static();
}

Vector3d oracle_position(const MotionSpec& spec, int gaussian_index,
                         const Vector3d& mu0, double frame) {
    const int g = spec.group_of(gaussian_index);
    if (g < 0) return mu0;
    const Motion& m = spec.groups[g].motion;
    switch (m.type) {
        case Motion::Type::kStatic:
            return mu0;
        case Motion::Type::kLinear:
            return mu0 + frame * m.velocity;
        case Motion::Type::kCircular: {
            const Eigen::AngleAxisd rot(m.omega * frame, m.axis.normalized());
            return m.center + rot * (mu0 - m.center);
        }
        case Motion::Type::kScaling: {
            const double factor = std::exp(frame * std::log1p(m.rate));
            return m.center + factor * (mu0 - m.center);
        }
    }
    return mu0;
}

namespace {

// Projected footprint of one Gaussian at one frame, for front-surface tests.
struct Footprint {
    int index;
    Vector2d center;
    Matrix2d cov_inv;
    double depth;
    double opacity;
    int x0, x1, y0, y1;
};

std::vector<Footprint> project_frame(const CanonicalScene& scene, const MotionSpec& spec,
                                     const CameraModel& cam, double frame,
                                     const RenderOptions& opts) {
    std::vector<Footprint> fps;
    for (int i = 0; i < scene.size(); ++i) {
        const Vector3d pos = oracle_position(spec, i, scene.gaussians[i].mu0, frame);
        const auto projected = project_point(cam, pos);
        if (!projected) continue;
        const auto cov = project_covariance(cam, scene.gaussians[i], pos);
        if (!cov) continue;
        Footprint fp;
        fp.index = i;
        fp.center = projected->pixel;
        fp.cov_inv = cov->inverse();
        fp.depth = projected->depth;
        fp.opacity = scene.gaussians[i].opacity;
        const double rx = opts.cull_sigmas * std::sqrt((*cov)(0, 0));
        const double ry = opts.cull_sigmas * std::sqrt((*cov)(1, 1));
        fp.x0 = std::max(0, static_cast<int>(std::ceil(fp.center.x() - rx)));
        fp.x1 = std::min(cam.width, static_cast<int>(std::floor(fp.center.x() + rx)) + 1);
        fp.y0 = std::max(0, static_cast<int>(std::ceil(fp.center.y() - ry)));
        fp.y1 = std::min(cam.height, static_cast<int>(std::floor(fp.center.y() + ry)) + 1);
        if (fp.x0 < fp.x1 && fp.y0 < fp.y1) fps.push_back(fp);
    }
    return fps;
}

// Frontmost covering Gaussian per pixel (-1 when uncovered); "covering"
// matches the rasterizer's contribution rule (bbox plus alpha threshold).
Grid<int> front_map(const std::vector<Footprint>& fps, const CameraModel& cam,
                    const RenderOptions& opts) {
    Grid<int> front(cam.width, cam.height, -1);
    ImageScalar best_depth(cam.width, cam.height,
                           std::numeric_limits<double>::infinity());
    for (const auto& fp : fps) {
        for (int y = fp.y0; y < fp.y1; ++y) {
            for (int x = fp.x0; x < fp.x1; ++x) {
                const Vector2d d(x - fp.center.x(), y - fp.center.y());
                const double alpha = fp.opacity * std::exp(-0.5 * d.dot(fp.cov_inv * d));
                if (alpha < opts.alpha_skip) continue;
                if (fp.depth < best_depth.at(x, y)) {
                    best_depth.at(x, y) = fp.depth;
                    front.at(x, y) = fp.index;
                }
            }
        }
    }
    return front;
}

} // namespace

FlowField oracle_flow(const CanonicalScene& scene, const MotionSpec& spec,
                      const CameraModel& cam, int frame, const RenderOptions& opts) {
    const auto fps_now = project_frame(scene, spec, cam, frame, opts);
    const auto fps_next = project_frame(scene, spec, cam, frame + 1, opts);
    const Grid<int> front_now = front_map(fps_now, cam, opts);
    const Grid<int> front_next = front_map(fps_next, cam, opts);

    FlowField flow(ImageVec2(cam.width, cam.height, Vector2d::Zero()));
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const int id = front_now.at(x, y);
            flow.valid.at(x, y) = (id == front_next.at(x, y)) ? 1 : 0;
            if (id < 0) continue;
            const Vector3d p0 = oracle_position(spec, id, scene.gaussians[id].mu0, frame);
            const Vector3d p1 =
                oracle_position(spec, id, scene.gaussians[id].mu0, frame + 1);
            const auto a = project_point(cam, p0);
            const auto b = project_point(cam, p1);
            if (a && b)
                flow.data.at(x, y) = b->pixel - a->pixel;
            else
                flow.valid.at(x, y) = 0;
        }
    }
    return flow;
}

DynamicMask oracle_mask(const CanonicalScene& scene, const MotionSpec& spec,
                        const CameraModel& cam, int frame, const RenderOptions& opts) {
    const auto fps = project_frame(scene, spec, cam, frame, opts);
    const Grid<int> front = front_map(fps, cam, opts);
    DynamicMask mask;
    mask.mask = ImageBool(cam.width, cam.height, 0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const int id = front.at(x, y);
            if (id >= 0 && spec.is_dynamic(id)) mask.mask.at(x, y) = 1;
        }
    return mask;
}

RenderBuffers oracle_render(const CanonicalScene& scene, const MotionSpec& spec,
                            const CameraModel& cam, int frame,
                            const RenderOptions& opts) {
    const int n = scene.size();
    std::vector<Vector3d> positions(n);
    std::vector<std::optional<Vector2d>> velocities(n);
    for (int i = 0; i < n; ++i) {
        positions[i] = oracle_position(spec, i, scene.gaussians[i].mu0, frame);
        velocities[i] = std::nullopt;
        const auto a = project_point(cam, positions[i]);
        if (!a) continue;
        const auto b = project_point(
            cam, oracle_position(spec, i, scene.gaussians[i].mu0, frame + 1.0));
        if (b) velocities[i] = Vector2d(b->pixel - a->pixel);
    }
    return render_explicit(scene, positions, velocities, cam, opts);
}

namespace {

json vec3_json(const Vector3d& v) { return json::array({v[0], v[1], v[2]}); }
Vector3d vec3_parse(const json& j) {
    return Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

json motion_json(const Motion& m) {
    json j;
    switch (m.type) {
        case Motion::Type::kStatic:
            j["type"] = "static";
            break;
        case Motion::Type::kLinear:
            j["type"] = "linear";
            j["velocity"] = vec3_json(m.velocity);
            break;
        case Motion::Type::kCircular:
            j["type"] = "circular";
            j["center"] = vec3_json(m.center);
            j["axis"] = vec3_json(m.axis);
            j["omega"] = m.omega;
            break;
        case Motion::Type::kScaling:
            j["type"] = "scaling";
            j["center"] = vec3_json(m.center);
            j["rate"] = m.rate;
            break;
    }
    return j;
}

Motion motion_parse(const json& j) {
    Motion m;
    const std::string type = j.at("type").get<std::string>();
    if (type == "static") {
        m.type = Motion::Type::kStatic;
    } else if (type == "linear") {
        m.type = Motion::Type::kLinear;
        m.velocity = vec3_parse(j.at("velocity"));
    } else if (type == "circular") {
        m.type = Motion::Type::kCircular;
        m.center = vec3_parse(j.at("center"));
        m.axis = vec3_parse(j.at("axis"));
        m.omega = j.at("omega").get<double>();
    } else if (type == "scaling") {
        m.type = Motion::Type::kScaling;
        m.center = vec3_parse(j.at("center"));
        m.rate = j.at("rate").get<double>();
    } else {
        throw DataError("unknown motion type: " + type);
    }
    return m;
}

} // namespace

std::string motion_to_json(const MotionSpec& spec) {
    json arr = json::array();
    for (const auto& group : spec.groups) {
        json g;
        g["motion"] = motion_json(group.motion);
        g["indices"] = group.indices;
        arr.push_back(g);
    }
    json doc;
    doc["groups"] = arr;
    return doc.dump(2) + "\n";
}

MotionSpec motion_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("motion json: ") + e.what());
    }
    MotionSpec spec;
    for (const auto& g : doc.at("groups")) {
        MotionGroup group;
        group.motion = motion_parse(g.at("motion"));
        group.indices = g.at("indices").get<std::vector<int>>();
        spec.groups.push_back(group);
    }
    return spec;
}

std::string recipe_to_json(const SceneRecipe& recipe) {
    json doc;
    doc["seed"] = recipe.seed;
    doc["width"] = recipe.width;
    doc["height"] = recipe.height;
    doc["n_frames"] = recipe.n_frames;
    doc["background"] = vec3_json(recipe.background);
    json rig;
    rig["cameras"] = recipe.rig.cameras;
    rig["radius"] = recipe.rig.radius;
    rig["height"] = recipe.rig.height;
    rig["fov_deg"] = recipe.rig.fov_deg;
    rig["arc_deg"] = recipe.rig.arc_deg;
    rig["look_at"] = vec3_json(recipe.rig.look_at);
    doc["rig"] = rig;
    json groups = json::array();
    for (const auto& g : recipe.groups) {
        json item;
        item["name"] = g.name;
        item["count"] = g.count;
        item["layout"] = g.layout;
        item["center"] = vec3_json(g.center);
        item["size"] = vec3_json(g.size);
        item["scale_range"] = json::array({g.scale_range[0], g.scale_range[1]});
        item["opacity_range"] = json::array({g.opacity_range[0], g.opacity_range[1]});
        item["color_lo"] = vec3_json(g.color_lo);
        item["color_hi"] = vec3_json(g.color_hi);
        item["motion"] = motion_json(g.motion);
        groups.push_back(item);
    }
    doc["groups"] = groups;
    return doc.dump(2) + "\n";
}

SceneRecipe recipe_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("recipe json: ") + e.what());
    }
    SceneRecipe recipe;
    recipe.seed = doc.at("seed").get<uint64_t>();
    recipe.width = doc.at("width").get<int>();
    recipe.height = doc.at("height").get<int>();
    recipe.n_frames = doc.at("n_frames").get<int>();
    recipe.background = vec3_parse(doc.at("background"));
    const json& rig = doc.at("rig");
    recipe.rig.cameras = rig.at("cameras").get<int>();
    recipe.rig.radius = rig.at("radius").get<double>();
    recipe.rig.height = rig.value("height", 0.0);
    recipe.rig.fov_deg = rig.at("fov_deg").get<double>();
    recipe.rig.arc_deg = rig.value("arc_deg", 360.0);
    recipe.rig.look_at = vec3_parse(rig.at("look_at"));
    for (const auto& item : doc.at("groups")) {
        GroupRecipe g;
        g.name = item.value("name", std::string());
        g.count = item.at("count").get<int>();
        g.layout = item.at("layout").get<std::string>();
        g.center = vec3_parse(item.at("center"));
        g.size = vec3_parse(item.at("size"));
        g.scale_range = Vector2d(item.at("scale_range").at(0).get<double>(),
                                 item.at("scale_range").at(1).get<double>());
        g.opacity_range = Vector2d(item.at("opacity_range").at(0).get<double>(),
                                   item.at("opacity_range").at(1).get<double>());
        g.color_lo = vec3_parse(item.at("color_lo"));
        g.color_hi = vec3_parse(item.at("color_hi"));
        g.motion = motion_parse(item.at("motion"));
        recipe.groups.push_back(g);
    }
    return recipe;
}

SceneRecipe load_recipe(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return recipe_from_json(text);
}

namespace {

std::vector<Vector3d> layout_positions(const GroupRecipe& g, Rng& rng) {
    std::vector<Vector3d> pts;
    pts.reserve(g.count);
    if (g.layout == "grid") {
        int dims = 0;
        for (int a = 0; a < 3; ++a) dims += g.size[a] > 0.0 ? 1 : 0;
        dims = std::max(dims, 1);
        const int per_axis = static_cast<int>(
            std::ceil(std::pow(static_cast<double>(g.count), 1.0 / dims)));
        int n[3];
        for (int a = 0; a < 3; ++a) n[a] = g.size[a] > 0.0 ? per_axis : 1;
        for (int iz = 0; iz < n[2] && static_cast<int>(pts.size()) < g.count; ++iz)
            for (int iy = 0; iy < n[1] && static_cast<int>(pts.size()) < g.count; ++iy)
                for (int ix = 0; ix < n[0] && static_cast<int>(pts.size()) < g.count; ++ix) {
                    Vector3d p = g.center;
                    const int idx[3] = {ix, iy, iz};
                    for (int a = 0; a < 3; ++a)
                        if (n[a] > 1)
                            p[a] += (static_cast<double>(idx[a]) / (n[a] - 1) - 0.5) *
                                    g.size[a];
                    pts.push_back(p);
                }
    } else if (g.layout == "ring") {
        for (int i = 0; i < g.count; ++i) {
            const double angle = 2.0 * std::numbers::pi * i / g.count;
            const double radius = g.size.x() + rng.uniform(-0.5, 0.5) * g.size.y();
            pts.push_back(g.center + Vector3d(radius * std::cos(angle),
                                              radius * std::sin(angle),
                                              rng.uniform(-0.5, 0.5) * g.size.z()));
        }
    } else { // random
        for (int i = 0; i < g.count; ++i) {
            Vector3d p = g.center;
            for (int a = 0; a < 3; ++a) p[a] += rng.uniform(-0.5, 0.5) * g.size[a];
            pts.push_back(p);
        }
    }
    return pts;
}

CameraModel make_rig_camera(const SceneRecipe& recipe, int index) {
    const RigRecipe& rig = recipe.rig;
    double angle = 0.0;
    if (rig.cameras > 1) {
        const double arc = rig.arc_deg * std::numbers::pi / 180.0;
        angle = -arc / 2.0 + arc * index / (rig.cameras - (rig.arc_deg >= 360.0 ? 0 : 1));
    }
    const Vector3d eye = rig.look_at + Vector3d(rig.radius * std::sin(angle), rig.height,
                                                -rig.radius * std::cos(angle));
    const Vector3d forward = (rig.look_at - eye).normalized();
    const Vector3d up(0.0, 1.0, 0.0);
    Vector3d right = up.cross(forward).normalized();
    const Vector3d down = forward.cross(right).normalized();

    CameraModel cam;
    cam.width = recipe.width;
    cam.height = recipe.height;
    const double f =
        (recipe.width / 2.0) / std::tan(rig.fov_deg * std::numbers::pi / 360.0);
    cam.K << f, 0, recipe.width / 2.0, 0, f, recipe.height / 2.0, 0, 0, 1;
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = forward.transpose();
    cam.T = -cam.R * eye;
    return cam;
}

} // namespace

GeneratedScene make_scene(const SceneRecipe& recipe) {
    if (recipe.groups.empty() || recipe.rig.cameras <= 0 || recipe.n_frames < 1 ||
        recipe.width <= 0 || recipe.height <= 0)
        throw DataError("make_scene: empty or invalid recipe");

    GeneratedScene out;
    out.scene.background = recipe.background;
    Rng rng(recipe.seed ^ 0x5ce11e00ull);

    for (const auto& g : recipe.groups) {
        Rng group_rng = rng.fork(out.spec.groups.size());
        MotionGroup motion_group;
        motion_group.motion = g.motion;
        for (const Vector3d& pos : layout_positions(g, group_rng)) {
            Gaussian3D gauss;
            gauss.mu0 = pos;
            for (int a = 0; a < 3; ++a)
                gauss.scale[a] = group_rng.uniform(g.scale_range[0], g.scale_range[1]);
            Vector4d q(group_rng.normal(), group_rng.normal(), group_rng.normal(),
                       group_rng.normal());
            gauss.rotation = q.normalized();
            for (int a = 0; a < 3; ++a)
                gauss.color[a] = group_rng.uniform(g.color_lo[a], g.color_hi[a]);
            gauss.opacity = group_rng.uniform(g.opacity_range[0], g.opacity_range[1]);
            motion_group.indices.push_back(out.scene.size());
            out.scene.gaussians.push_back(gauss);
        }
        out.spec.groups.push_back(motion_group);
    }

    for (int c = 0; c < recipe.rig.cameras; ++c)
        out.cameras.push_back(make_rig_camera(recipe, c));
    return out;
}

} // namespace flowsplat
