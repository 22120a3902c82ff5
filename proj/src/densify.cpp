#include "flowsplat/densify.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "flowsplat/error.hpp"

namespace flowsplat {

using nlohmann::json;

std::string densify_event_to_json(const DensifyEvent& event) {
    json doc;
    doc["t"] = event.t;
    doc["n_selected"] = event.selected_pixels.size();
    doc["n_lifted"] = event.lifted_points.size();
    doc["n_sampled"] = event.sampled_points.size();
    doc["n_accepted"] = event.accepted.size();
    doc["rejected_invalid_depth"] = event.rejected_invalid_depth;
    doc["rejected_radius_gate"] = event.rejected_radius_gate;
    doc["rejected_cap"] = event.rejected_cap;
    doc["non_contractive"] = event.non_contractive;
    doc["reproj_px"] = event.accepted_reproj_px;
    json pixels = json::array();
    for (const auto& p : event.selected_pixels) pixels.push_back(json::array({p.x, p.y}));
    doc["selected_pixels"] = pixels;
    json accepted = json::array();
    for (const auto& g : event.accepted)
        accepted.push_back(json::array({g.mu0[0], g.mu0[1], g.mu0[2]}));
    doc["accepted_mu0"] = accepted;
    return doc.dump();
}

ImageScalar spatial_gradient_magnitude(const ImageScalar& map) {
    ImageScalar out(map.width(), map.height(), 0.0);
    const int w = map.width(), h = map.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
            const int yl = std::max(0, y - 1), yr = std::min(h - 1, y + 1);
            const double gx = (map.at(xr, y) - map.at(xl, y)) / (xr - xl == 0 ? 1 : xr - xl);
            const double gy = (map.at(x, yr) - map.at(x, yl)) / (yr - yl == 0 ? 1 : yr - yl);
            out.at(x, y) = std::hypot(gx, gy);
        }
    }
    return out;
}

namespace {

double masked_percentile(const ImageScalar& map, const DynamicMask& mask, double pct) {
    std::vector<double> values;
    for (size_t i = 0; i < map.data().size(); ++i)
        if (mask.mask.data()[i]) values.push_back(map.data()[i]);
    if (values.empty()) return std::numeric_limits<double>::infinity();
    std::sort(values.begin(), values.end());
    const double pos = pct / 100.0 * (values.size() - 1);
    return values[static_cast<size_t>(std::floor(pos))];
}

} // namespace

std::vector<PixelIndex> select_pixels(const ImageScalar& loss_map,
                                      const ImageScalar& grad_map,
                                      const DynamicMask& mask, const FADConfig& cfg) {
    require_same_shape(loss_map, grad_map, "select_pixels");
    require_same_shape(loss_map, mask.mask, "select_pixels");
    const double eps_loss = masked_percentile(loss_map, mask, cfg.percentile);
    const double eps_grad = masked_percentile(grad_map, mask, cfg.percentile);
    std::vector<PixelIndex> out;
    for (int y = 0; y < loss_map.height(); ++y)
        for (int x = 0; x < loss_map.width(); ++x) {
            if (!mask.mask.at(x, y)) continue;
            if (loss_map.at(x, y) > eps_loss && grad_map.at(x, y) > eps_grad)
                out.push_back({x, y});
        }
    return out;
}

std::vector<Vector3d> lift_pixels(const std::vector<PixelIndex>& pixels,
                                  const ImageScalar& depth_map, const CameraModel& cam,
                                  int* rejected_count, std::vector<int>* kept_pixels) {
    std::vector<Vector3d> points;
    int rejected = 0;
    for (size_t i = 0; i < pixels.size(); ++i) {
        const PixelIndex& p = pixels[i];
        const double z = depth_map.at(p.x, p.y);
        if (!std::isfinite(z) || z <= 0.0) {
            ++rejected;
            continue;
        }
        points.push_back(unproject_pixel(cam, Vector2d(p.x, p.y), z));
        if (kept_pixels) kept_pixels->push_back(static_cast<int>(i));
    }
    if (rejected_count) *rejected_count = rejected;
    return points;
}

std::vector<int> farthest_point_sample(const std::vector<Vector3d>& points, double ratio) {
    const int n = static_cast<int>(points.size());
    if (n == 0) return {};
    const int target = std::min(n, static_cast<int>(std::ceil(ratio * n)));
    std::vector<int> chosen;
    chosen.reserve(target);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());

    int current = 0; // lowest index first
    chosen.push_back(current);
    while (static_cast<int>(chosen.size()) < target) {
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < n; ++i) {
            min_dist[i] = std::min(min_dist[i], (points[i] - points[current]).norm());
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        chosen.push_back(current);
    }
    return chosen;
}

std::vector<Gaussian3D> interpolate_attributes(const std::vector<Vector3d>& candidates,
                                               const std::vector<Vector3d>& deformed_positions,
                                               const CanonicalScene& scene, int k,
                                               double radius_scale, int* rejected_count,
                                               std::vector<int>* kept_candidates) {
    const int n = static_cast<int>(deformed_positions.size());
    std::vector<Gaussian3D> out;
    int rejected = 0;
    for (size_t ci = 0; ci < candidates.size(); ++ci) {
        const Vector3d& candidate = candidates[ci];
        // k nearest deformed Gaussians, brute force (desk-scale scenes)
        std::vector<std::pair<double, int>> dists;
        dists.reserve(n);
        for (int i = 0; i < n; ++i)
            dists.emplace_back((deformed_positions[i] - candidate).norm(), i);
        const int kk = std::min(k, n);
        std::partial_sort(dists.begin(), dists.begin() + kk, dists.end());

        // gate on each neighbor's own spatial range
        std::vector<std::pair<double, int>> kept;
        for (int j = 0; j < kk; ++j) {
            const Gaussian3D& neighbor = scene.gaussians[dists[j].second];
            const double extent = 3.0 * neighbor.scale.mean();
            if (dists[j].first < radius_scale * extent) kept.push_back(dists[j]);
        }
        if (kept.empty()) {
            ++rejected;
            continue;
        }

        double weight_sum = 0.0;
        Gaussian3D blend;
        blend.mu0 = candidate; // position at time t; caller maps to canonical
        blend.scale.setZero();
        blend.rotation.setZero();
        blend.color.setZero();
        blend.opacity = 0.0;
        const Vector4d q_ref = scene.gaussians[kept.front().second].rotation;
        for (const auto& [dist, idx] : kept) {
            const Gaussian3D& nb = scene.gaussians[idx];
            const double w = 1.0 / (dist + 1e-9);
            weight_sum += w;
            blend.scale += w * nb.scale;
            blend.color += w * nb.color;
            blend.opacity += w * nb.opacity;
            Vector4d q = nb.rotation;
            if (q.dot(q_ref) < 0.0) q = -q; // hemisphere alignment
            blend.rotation += w * q;
        }
        blend.scale /= weight_sum;
        blend.color /= weight_sum;
        blend.opacity /= weight_sum;
        blend.rotation.normalize();
        out.push_back(blend);
        if (kept_candidates) kept_candidates->push_back(static_cast<int>(ci));
    }
    if (rejected_count) *rejected_count = rejected;
    return out;
}

std::vector<Gaussian3D> to_canonical(const std::vector<Gaussian3D>& at_t,
                                     const DeformationField& field, double t,
                                     int* non_contractive) {
    std::vector<Gaussian3D> out;
    out.reserve(at_t.size());
    int warnings = 0;
    for (const Gaussian3D& g : at_t) {
        const Vector3d target = g.mu0; // position at time t
        Vector3d x = target;
        Vector3d best = x;
        double best_residual = (field.deform(x, t) - target).norm();
        double prev_residual = best_residual;
        bool shrank = true;
        for (int iter = 0; iter < 5; ++iter) {
            x = target - field.displacement(x, t);
            const double residual = (field.deform(x, t) - target).norm();
            if (residual < best_residual) {
                best_residual = residual;
                best = x;
            }
            if (residual > prev_residual) shrank = false;
            prev_residual = residual;
        }
        if (!shrank) ++warnings;
        Gaussian3D canonical = g;
        canonical.mu0 = best;
        out.push_back(canonical);
    }
    if (non_contractive) *non_contractive = warnings;
    return out;
}

ConventionalDensifyStats conventional_densify_and_prune(
    CanonicalScene& scene, const std::vector<double>& mean_positional_grad,
    const ConventionalDensifyConfig& cfg, double scene_extent, Rng& rng) {
    if (mean_positional_grad.size() != scene.gaussians.size())
        throw ShapeMismatch("conventional_densify: accumulator misaligned with scene");
    const double split_size = cfg.split_scale_fraction * scene_extent;

    ConventionalDensifyStats stats;
    std::vector<Gaussian3D> next;
    next.reserve(scene.gaussians.size());
    int growth = 0;
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        const Gaussian3D& g = scene.gaussians[i];
        if (g.opacity < cfg.opacity_floor) {
            ++stats.pruned;
            continue;
        }
        const bool hot = mean_positional_grad[i] > cfg.grad_threshold;
        // bound the final size even if every remaining original is kept
        const bool can_grow = static_cast<int>(scene.gaussians.size()) + growth + 1 <=
                              cfg.max_gaussians;
        if (!hot || !can_grow) {
            next.push_back(g);
            stats.parent_of.push_back(static_cast<int>(i));
            continue;
        }
        if (g.scale.maxCoeff() < split_size) {
            next.push_back(g);
            stats.parent_of.push_back(static_cast<int>(i));
            next.push_back(g); // clone separates through optimization
            stats.parent_of.push_back(-1);
            ++stats.cloned;
            ++growth;
        } else {
            const Matrix3d rot = quaternion_to_rotation(g.rotation);
            for (int child = 0; child < 2; ++child) {
                Gaussian3D c = g;
                const Vector3d sample(rng.normal() * g.scale[0], rng.normal() * g.scale[1],
                                      rng.normal() * g.scale[2]);
                c.mu0 = g.mu0 + rot * sample;
                c.scale = g.scale / cfg.split_scale_shrink;
                next.push_back(c);
                stats.parent_of.push_back(-1);
            }
            ++stats.split;
            ++growth;
        }
    }
    scene.gaussians = std::move(next);
    return stats;
}

DensifyEvent run_fad(CanonicalScene& scene, const DeformationField& field, double t,
                     const CameraModel& cam, const ImageScalar& loss_map,
                     const DynamicMask& mask, const ImageScalar& depth_map,
                     const FADConfig& cfg, const ImageScalar* warp_map) {
    DensifyEvent event;
    event.t = t;

    const ImageScalar grad_map = spatial_gradient_magnitude(loss_map);
    event.selected_pixels = select_pixels(loss_map, grad_map, mask, cfg);
    if (cfg.use_warp_map && warp_map) {
        const ImageScalar warp_grad = spatial_gradient_magnitude(*warp_map);
        for (const auto& p : select_pixels(*warp_map, warp_grad, mask, cfg))
            event.selected_pixels.push_back(p);
    }
    if (event.selected_pixels.empty() || scene.gaussians.empty()) return event;

    std::vector<int> lifted_pixel_index;
    event.lifted_points = lift_pixels(event.selected_pixels, depth_map, cam,
                                      &event.rejected_invalid_depth, &lifted_pixel_index);
    if (event.lifted_points.empty()) return event;

    std::vector<int> sampled = farthest_point_sample(event.lifted_points, cfg.fps_ratio);
    if (static_cast<int>(sampled.size()) > cfg.max_new_per_event) {
        event.rejected_cap = static_cast<int>(sampled.size()) - cfg.max_new_per_event;
        sampled.resize(cfg.max_new_per_event);
    }
    std::vector<PixelIndex> sampled_pixels;
    for (int idx : sampled) {
        event.sampled_points.push_back(event.lifted_points[idx]);
        sampled_pixels.push_back(event.selected_pixels[lifted_pixel_index[idx]]);
    }

    std::vector<Vector3d> deformed(scene.gaussians.size());
    for (size_t i = 0; i < scene.gaussians.size(); ++i)
        deformed[i] = field.deform(scene.gaussians[i].mu0, t);

    std::vector<int> kept;
    const std::vector<Gaussian3D> at_t = interpolate_attributes(
        event.sampled_points, deformed, scene, cfg.k, cfg.radius_scale,
        &event.rejected_radius_gate, &kept);
    event.accepted = to_canonical(at_t, field, t, &event.non_contractive);
    for (size_t i = 0; i < event.accepted.size(); ++i) {
        Gaussian3D& g = event.accepted[i];
        g.opacity = std::max(g.opacity, cfg.opacity_floor);
        const PixelIndex src = sampled_pixels[kept[i]];
        event.accepted_source.push_back(src);
        const auto reproj = project_point(cam, field.deform(g.mu0, t));
        event.accepted_reproj_px.push_back(
            reproj ? (reproj->pixel - Vector2d(src.x, src.y)).norm()
                   : std::numeric_limits<double>::infinity());
        scene.gaussians.push_back(g);
    }
    return event;
}

} // namespace flowsplat
