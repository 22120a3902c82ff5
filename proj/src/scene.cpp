#include "flowsplat/scene.hpp"

#include <fstream>
#include <json.hpp>

#include "flowsplat/error.hpp"

namespace flowsplat {

using nlohmann::json;

double CanonicalScene::extent() const {
    if (gaussians.empty()) return 0.0;
    Vector3d centroid = Vector3d::Zero();
    for (const auto& g : gaussians) centroid += g.mu0;
    centroid /= static_cast<double>(gaussians.size());
    double r = 0.0;
    for (const auto& g : gaussians) r = std::max(r, (g.mu0 - centroid).norm());
    return r;
}

Matrix3d quaternion_to_rotation(const Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Matrix3d covariance_of(const Gaussian3D& g) {
    const Matrix3d r = quaternion_to_rotation(g.rotation);
    const Matrix3d m = r * g.scale.asDiagonal();
    return m * m.transpose();
}

std::optional<ProjectedPoint> project_point(const CameraModel& cam, const Vector3d& x) {
    const Vector3d xc = cam.R * x + cam.T;
    if (xc.z() <= kZNear) return std::nullopt;
    return ProjectedPoint{
        Vector2d(cam.fx() * xc.x() / xc.z() + cam.cx(),
                 cam.fy() * xc.y() / xc.z() + cam.cy()),
        xc.z()};
}

std::optional<Matrix2d> project_covariance(const CameraModel& cam, const Gaussian3D& g,
                                           const Vector3d& mu_t) {
    const Vector3d xc = cam.R * mu_t + cam.T;
    if (xc.z() <= kZNear) return std::nullopt;
    Eigen::Matrix<double, 2, 3> j;
    const double inv_z = 1.0 / xc.z();
    j << cam.fx() * inv_z, 0.0, -cam.fx() * xc.x() * inv_z * inv_z,
         0.0, cam.fy() * inv_z, -cam.fy() * xc.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> u = j * cam.R;
    Matrix2d cov = u * covariance_of(g) * u.transpose();
    cov(0, 0) += kBlurFloor;
    cov(1, 1) += kBlurFloor;
    // exact symmetry keeps the inverse well behaved downstream
    cov(1, 0) = cov(0, 1) = 0.5 * (cov(0, 1) + cov(1, 0));
    return cov;
}

std::optional<Eigen::Matrix<double, 2, 3>> projection_jacobian(const CameraModel& cam,
                                                               const Vector3d& x) {
    const Vector3d xc = cam.R * x + cam.T;
    if (xc.z() <= kZNear) return std::nullopt;
    Eigen::Matrix<double, 2, 3> j;
    const double inv_z = 1.0 / xc.z();
    j << cam.fx() * inv_z, 0.0, -cam.fx() * xc.x() * inv_z * inv_z,
         0.0, cam.fy() * inv_z, -cam.fy() * xc.y() * inv_z * inv_z;
    return Eigen::Matrix<double, 2, 3>(j * cam.R);
}

Vector3d unproject_pixel(const CameraModel& cam, const Vector2d& p, double z) {
    if (z <= 0.0) throw NonPositiveDepth("unproject_pixel: depth must be > 0");
    const Vector3d ray((p.x() - cam.cx()) / cam.fx(), (p.y() - cam.cy()) / cam.fy(), 1.0);
    return cam.R.transpose() * (ray * z - cam.T);
}

namespace {

json vec_to_json(const Vector3d& v) { return json::array({v[0], v[1], v[2]}); }
json vec_to_json(const Vector4d& v) { return json::array({v[0], v[1], v[2], v[3]}); }

Vector3d vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-element array");
    return Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Vector4d vec4_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw DataError("expected a 4-element array");
    return Vector4d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                    j[3].get<double>());
}

json mat_to_json(const Matrix3d& m) {
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
    return a;
}

Matrix3d mat_from_json(const json& j) {
    if (!j.is_array() || j.size() != 9) throw DataError("expected a 9-element array");
    Matrix3d m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = j[3 * r + c].get<double>();
    return m;
}

} // namespace

std::string scene_to_json(const CanonicalScene& scene) {
    json doc;
    doc["background"] = vec_to_json(scene.background);
    json gs = json::array();
    for (const auto& g : scene.gaussians) {
        json item;
        item["mu0"] = vec_to_json(g.mu0);
        item["scale"] = vec_to_json(g.scale);
        item["rotation"] = vec_to_json(g.rotation);
        item["color"] = vec_to_json(g.color);
        item["opacity"] = g.opacity;
        gs.push_back(item);
    }
    doc["gaussians"] = gs;
    return doc.dump(2) + "\n";
}

CanonicalScene scene_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("scene json: ") + e.what());
    }
    CanonicalScene scene;
    scene.background = vec3_from_json(doc.at("background"));
    for (const auto& item : doc.at("gaussians")) {
        Gaussian3D g;
        g.mu0 = vec3_from_json(item.at("mu0"));
        g.scale = vec3_from_json(item.at("scale"));
        g.rotation = vec4_from_json(item.at("rotation"));
        g.color = vec3_from_json(item.at("color"));
        g.opacity = item.at("opacity").get<double>();
        scene.gaussians.push_back(g);
    }
    return scene;
}

void save_scene(const CanonicalScene& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << scene_to_json(scene);
}

CanonicalScene load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return scene_from_json(text);
}

std::string cameras_to_json(const std::vector<CameraModel>& cams) {
    json arr = json::array();
    for (const auto& cam : cams) {
        json item;
        item["K"] = mat_to_json(cam.K);
        item["R"] = mat_to_json(cam.R);
        item["T"] = vec_to_json(cam.T);
        item["width"] = cam.width;
        item["height"] = cam.height;
        arr.push_back(item);
    }
    return arr.dump(2) + "\n";
}

std::vector<CameraModel> cameras_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("cameras json: ") + e.what());
    }
    std::vector<CameraModel> cams;
    for (const auto& item : doc) {
        CameraModel cam;
        cam.K = mat_from_json(item.at("K"));
        cam.R = mat_from_json(item.at("R"));
        cam.T = vec3_from_json(item.at("T"));
        cam.width = item.at("width").get<int>();
        cam.height = item.at("height").get<int>();
        cams.push_back(cam);
    }
    return cams;
}

void save_cameras(const std::vector<CameraModel>& cams, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << cameras_to_json(cams);
}

std::vector<CameraModel> load_cameras(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return cameras_from_json(text);
}

} // namespace flowsplat
